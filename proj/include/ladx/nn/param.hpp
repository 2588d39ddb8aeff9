#pragma once

#include "ladx/common.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ladx::nn {

// A trainable matrix with its gradient accumulator. Gradient accumulation
// is skipped for frozen params so the optimizer and checksum tests can rely
// on them staying bit-identical.
template <typename S>
struct Param {
  MatT<S> w;
  MatT<S> g;
  bool trainable = true;

  void init_gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng, double std_dev) {
    w = MatT<S>(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) w(i, j) = S(rng.normal() * std_dev);
    g = MatT<S>::Zero(rows, cols);
  }

  void init_constant(Eigen::Index rows, Eigen::Index cols, S value) {
    w = MatT<S>::Constant(rows, cols, value);
    g = MatT<S>::Zero(rows, cols);
  }

  void zero_grad() { g.setZero(); }
  Eigen::Index count() const { return w.size(); }
};

template <typename S>
using ParamVisitor = std::function<void(const std::string&, Param<S>&)>;

// Flat, ordered view over a model's parameters. Registration order is fixed
// by the modules' visit() implementations, which keeps optimizer state and
// checkpoints stable across runs.
template <typename S>
class ParamRegistry {
 public:
  struct Item {
    std::string name;
    Param<S>* param;
  };

  void add(std::string name, Param<S>& p) {
    for (const auto& it : items_)
      if (it.name == name) throw std::invalid_argument("duplicate param name: " + name);
    items_.push_back({std::move(name), &p});
  }

  ParamVisitor<S> collector() {
    return [this](const std::string& name, Param<S>& p) { add(name, p); };
  }

  const std::vector<Item>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }

  Param<S>* find(const std::string& name) const {
    for (const auto& it : items_)
      if (it.name == name) return it.param;
    return nullptr;
  }

  std::int64_t total_params() const {
    std::int64_t n = 0;
    for (const auto& it : items_) n += it.param->count();
    return n;
  }

  void zero_grad() {
    for (auto& it : items_) it.param->zero_grad();
  }

  void set_trainable(bool flag) {
    for (auto& it : items_) it.param->trainable = flag;
  }

  void set_trainable_prefix(std::string_view prefix, bool flag) {
    for (auto& it : items_)
      if (it.name.rfind(prefix, 0) == 0) it.param->trainable = flag;
  }

 private:
  std::vector<Item> items_;
};

}  // namespace ladx::nn
