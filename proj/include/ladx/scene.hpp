#pragma once

// Synthetic scene grammar: deterministic corpus generator producing
// (scene, caption) pairs. Captions come from a fixed template so the
// grammar is a bijection -- every caption re-parses to its source scene.
//
// Caption shapes (token counts):
//   1 object : "there is a small red circle"                                (6)
//   2 objects: "a small red circle above a large blue square"               (9)
//              "a small red circle to the left of a large blue square"      (12)
//   3 objects: 2-object caption + "and a small green star"                  (14 or 17)

#include "ladx/common.hpp"
#include "ladx/vocab.hpp"

#include <json.hpp>

#include <array>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ladx {

enum class Shape { circle, square, triangle, star };
enum class Color { red, blue, green, yellow };
enum class ObjSize { small, large };
enum class Relation { above, below, left_of, right_of, none };

inline constexpr std::array<const char*, 4> kShapeNames = {"circle", "square", "triangle", "star"};
inline constexpr std::array<const char*, 4> kColorNames = {"red", "blue", "green", "yellow"};
inline constexpr std::array<const char*, 2> kSizeNames = {"small", "large"};
inline constexpr std::array<const char*, 5> kRelationNames = {"above", "below", "left-of", "right-of", "none"};

template <typename E, std::size_t N>
E enum_from_name(const std::string& name, const std::array<const char*, N>& names,
                 const char* what) {
  for (std::size_t i = 0; i < N; ++i)
    if (name == names[i]) return E(i);
  throw std::invalid_argument(std::string("unknown ") + what + ": " + name);
}

struct SceneObject {
  Shape shape = Shape::circle;
  Color color = Color::red;
  ObjSize size = ObjSize::small;

  bool operator==(const SceneObject&) const = default;
};

struct Scene {
  std::vector<SceneObject> objects;        // 1..3
  Relation relation = Relation::none;      // links objects[0] and [1] when >= 2

  bool operator==(const Scene&) const = default;
};

inline void validate(const Scene& scene) {
  if (scene.objects.empty() || scene.objects.size() > 3)
    throw std::invalid_argument("Scene: object count must be in [1, 3]");
  const bool single = scene.objects.size() == 1;
  if (single != (scene.relation == Relation::none))
    throw std::invalid_argument("Scene: relation must be none iff one object");
}

inline std::string object_phrase(const SceneObject& o) {
  std::string s = "a ";
  s += kSizeNames[std::size_t(o.size)];
  s += ' ';
  s += kColorNames[std::size_t(o.color)];
  s += ' ';
  s += kShapeNames[std::size_t(o.shape)];
  return s;
}

inline std::string relation_phrase(Relation r) {
  switch (r) {
    case Relation::above: return "above";
    case Relation::below: return "below";
    case Relation::left_of: return "to the left of";
    case Relation::right_of: return "to the right of";
    case Relation::none: break;
  }
  throw std::invalid_argument("relation_phrase: none has no surface form");
}

inline std::string render_caption(const Scene& scene) {
  validate(scene);
  if (scene.objects.size() == 1) return "there is " + object_phrase(scene.objects[0]);
  std::string s = object_phrase(scene.objects[0]) + ' ' + relation_phrase(scene.relation) +
                  ' ' + object_phrase(scene.objects[1]);
  if (scene.objects.size() == 3) s += " and " + object_phrase(scene.objects[2]);
  return s;
}

namespace detail {

class WordCursor {
 public:
  explicit WordCursor(std::vector<std::string> words) : words_(std::move(words)) {}
  const std::string& next(const char* what) {
    if (pos_ >= words_.size())
      throw std::invalid_argument(std::string("parse_caption: missing ") + what);
    return words_[pos_++];
  }
  void expect(const char* word) {
    if (next(word) != word)
      throw std::invalid_argument(std::string("parse_caption: expected '") + word + "'");
  }
  bool done() const { return pos_ == words_.size(); }
  bool peek_is(const char* word) const {
    return pos_ < words_.size() && words_[pos_] == word;
  }

 private:
  std::vector<std::string> words_;
  std::size_t pos_ = 0;
};

inline SceneObject parse_object(WordCursor& c) {
  c.expect("a");
  SceneObject o;
  o.size = enum_from_name<ObjSize>(c.next("size"), kSizeNames, "size");
  o.color = enum_from_name<Color>(c.next("color"), kColorNames, "color");
  o.shape = enum_from_name<Shape>(c.next("shape"), kShapeNames, "shape");
  return o;
}

inline Relation parse_relation(WordCursor& c) {
  const std::string& w = c.next("relation");
  if (w == "above") return Relation::above;
  if (w == "below") return Relation::below;
  if (w == "to") {
    c.expect("the");
    const std::string& side = c.next("side");
    c.expect("of");
    if (side == "left") return Relation::left_of;
    if (side == "right") return Relation::right_of;
    throw std::invalid_argument("parse_caption: bad side '" + side + "'");
  }
  throw std::invalid_argument("parse_caption: bad relation word '" + w + "'");
}

}  // namespace detail

// Inverse of render_caption; throws on anything outside the grammar.
inline Scene parse_caption(const std::string& caption) {
  detail::WordCursor c(split_words(caption));
  Scene scene;
  if (c.peek_is("there")) {
    c.expect("there");
    c.expect("is");
    scene.objects.push_back(detail::parse_object(c));
    scene.relation = Relation::none;
  } else {
    scene.objects.push_back(detail::parse_object(c));
    scene.relation = detail::parse_relation(c);
    scene.objects.push_back(detail::parse_object(c));
    if (c.peek_is("and")) {
      c.expect("and");
      scene.objects.push_back(detail::parse_object(c));
    }
  }
  if (!c.done()) throw std::invalid_argument("parse_caption: trailing words");
  validate(scene);
  return scene;
}

inline Scene sample_scene(Rng& rng) {
  Scene scene;
  const int n = rng.uniform_int(1, 3);
  for (int i = 0; i < n; ++i) {
    SceneObject o;
    o.shape = Shape(rng.uniform_int(0, 3));
    o.color = Color(rng.uniform_int(0, 3));
    o.size = ObjSize(rng.uniform_int(0, 1));
    scene.objects.push_back(o);
  }
  scene.relation = n == 1 ? Relation::none : Relation(rng.uniform_int(0, 3));
  return scene;
}

inline nlohmann::json scene_to_json(const Scene& scene) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : scene.objects) {
    objs.push_back({{"shape", kShapeNames[std::size_t(o.shape)]},
                    {"color", kColorNames[std::size_t(o.color)]},
                    {"size", kSizeNames[std::size_t(o.size)]}});
  }
  return {{"objects", objs}, {"relation", kRelationNames[std::size_t(scene.relation)]}};
}

inline Scene scene_from_json(const nlohmann::json& j) {
  Scene scene;
  for (const auto& jo : j.at("objects")) {
    SceneObject o;
    o.shape = enum_from_name<Shape>(jo.at("shape").get<std::string>(), kShapeNames, "shape");
    o.color = enum_from_name<Color>(jo.at("color").get<std::string>(), kColorNames, "color");
    o.size = enum_from_name<ObjSize>(jo.at("size").get<std::string>(), kSizeNames, "size");
    scene.objects.push_back(o);
  }
  scene.relation = enum_from_name<Relation>(j.at("relation").get<std::string>(),
                                            kRelationNames, "relation");
  validate(scene);
  return scene;
}

struct Example {
  Scene scene;
  std::string caption;
  std::string split;  // "train" | "val" | "test"
};

struct Corpus {
  std::vector<Example> examples;

  std::vector<Example> split(const std::string& name) const {
    std::vector<Example> out;
    for (const auto& e : examples)
      if (e.split == name) out.push_back(e);
    return out;
  }
};

// Splits are disjoint by scene identity: each caption hashes into exactly
// one split's region of [0, 1), and sampling rejects scenes outside the
// region being filled. Duplicates within a split are allowed.
inline Corpus generate_dataset(std::uint64_t seed, int n_train, int n_val, int n_test) {
  if (n_train < 1 || n_val < 1 || n_test < 1)
    throw std::invalid_argument("generate_dataset: split sizes must be >= 1");
  const double total = double(n_train) + double(n_val) + double(n_test);
  const double r_train = n_train / total;
  const double r_val = n_val / total;

  auto region_of = [&](const std::string& caption) {
    const double u = double(splitmix64(fnv1a(caption)) >> 11) * 0x1.0p-53;
    if (u < r_train) return 0;
    if (u < r_train + r_val) return 1;
    return 2;
  };

  Rng rng = Rng(seed).fork("scenegen");
  Corpus corpus;
  const std::array<std::pair<const char*, int>, 3> plan = {
      {{"train", n_train}, {"val", n_val}, {"test", n_test}}};
  for (int region = 0; region < 3; ++region) {
    const auto [name, count] = plan[std::size_t(region)];
    int accepted = 0;
    while (accepted < count) {
      Scene scene = sample_scene(rng);
      std::string caption = render_caption(scene);
      if (region_of(caption) != region) continue;
      corpus.examples.push_back({std::move(scene), std::move(caption), name});
      ++accepted;
    }
  }
  return corpus;
}

inline void save_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_jsonl: cannot write " + path);
  for (const auto& e : corpus.examples) {
    nlohmann::json j = {{"scene", scene_to_json(e.scene)},
                        {"caption", e.caption},
                        {"split", e.split}};
    out << j.dump() << "\n";
  }
}

inline Corpus load_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_jsonl: cannot read " + path);
  Corpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Example e;
    e.scene = scene_from_json(j.at("scene"));
    e.caption = j.at("caption").get<std::string>();
    e.split = j.at("split").get<std::string>();
    corpus.examples.push_back(std::move(e));
  }
  return corpus;
}

}  // namespace ladx
