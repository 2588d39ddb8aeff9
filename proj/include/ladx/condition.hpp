#pragma once

// Trainable condition encoder: turns a symbolic scene into M x d features
// that play the role of image features. Slot layout (M = 8):
//   slots 0..2  objects (sum of shape/color/size embeddings; null filler
//               when the object is absent)
//   slot  3     relation embedding (null filler when relation is none)
//   slots 4..7  null filler
// Slots carry content only; the consumer adds its own slot positions. A
// separate learned null embedding, broadcast to all slots, serves as the
// unconditional input for classifier-free guidance.

#include "ladx/nn/param.hpp"
#include "ladx/scene.hpp"

#include <string>

namespace ladx {

template <typename S>
class CondEncoder {
 public:
  static constexpr int kSlots = 8;

  nn::Param<S> shape_emb;  // 4 x d
  nn::Param<S> color_emb;  // 4 x d
  nn::Param<S> size_emb;   // 2 x d
  nn::Param<S> rel_emb;    // 4 x d (above, below, left-of, right-of)
  nn::Param<S> null_slot;  // 1 x d, filler for unused slots
  nn::Param<S> null_cond;  // 1 x d, CFG unconditional embedding

  void init(int dim, Rng& rng) {
    Rng r = rng.fork("cond-init");
    shape_emb.init_gaussian(4, dim, r, 0.02);
    color_emb.init_gaussian(4, dim, r, 0.02);
    size_emb.init_gaussian(2, dim, r, 0.02);
    rel_emb.init_gaussian(4, dim, r, 0.02);
    null_slot.init_gaussian(1, dim, r, 0.02);
    null_cond.init_gaussian(1, dim, r, 0.02);
  }

  int dim() const { return int(null_cond.w.cols()); }

  MatT<S> encode(const Scene& scene) const {
    MatT<S> feat(kSlots, dim());
    for (int slot = 0; slot < kSlots; ++slot) feat.row(slot) = null_slot.w.row(0);
    for (std::size_t i = 0; i < scene.objects.size() && i < 3; ++i) {
      const SceneObject& o = scene.objects[i];
      feat.row(Eigen::Index(i)) = shape_emb.w.row(int(o.shape)) +
                                  color_emb.w.row(int(o.color)) +
                                  size_emb.w.row(int(o.size));
    }
    if (scene.relation != Relation::none)
      feat.row(3) = rel_emb.w.row(int(scene.relation));
    return feat;
  }

  // The learned null embedding broadcast to all M slots.
  MatT<S> null_condition() const {
    return null_cond.w.row(0).replicate(kSlots, 1);
  }

  void backward(const Scene& scene, const MatT<S>& dfeat) {
    for (int slot = 0; slot < kSlots; ++slot) {
      const bool object_slot = slot < 3 && std::size_t(slot) < scene.objects.size();
      const bool relation_slot = slot == 3 && scene.relation != Relation::none;
      if (object_slot) {
        const SceneObject& o = scene.objects[std::size_t(slot)];
        if (shape_emb.trainable) shape_emb.g.row(int(o.shape)) += dfeat.row(slot);
        if (color_emb.trainable) color_emb.g.row(int(o.color)) += dfeat.row(slot);
        if (size_emb.trainable) size_emb.g.row(int(o.size)) += dfeat.row(slot);
      } else if (relation_slot) {
        if (rel_emb.trainable) rel_emb.g.row(int(scene.relation)) += dfeat.row(slot);
      } else {
        if (null_slot.trainable) null_slot.g.row(0) += dfeat.row(slot);
      }
    }
  }

  void backward_null(const MatT<S>& dfeat) {
    if (null_cond.trainable) null_cond.g.row(0) += dfeat.colwise().sum();
  }

  void visit(const std::string& prefix, const nn::ParamVisitor<S>& fn) {
    fn(prefix + ".shape_emb", shape_emb);
    fn(prefix + ".color_emb", color_emb);
    fn(prefix + ".size_emb", size_emb);
    fn(prefix + ".rel_emb", rel_emb);
    fn(prefix + ".null_slot", null_slot);
    fn(prefix + ".null_cond", null_cond);
  }
};

}  // namespace ladx
