#pragma once

// Versioned binary checkpoint: little-endian header with magic "LADX",
// format version and config digest, then named tensor blobs with shapes,
// and a trailing FNV-1a checksum over everything before it. Tensors keep
// their native scalar width so save -> load -> save is byte-identical.

#include "ladx/nn/optim.hpp"
#include "ladx/schedule.hpp"
#include "ladx/textlatent.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ladx {

inline constexpr char kCheckpointMagic[4] = {'L', 'A', 'D', 'X'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void put_bytes(const void* data, std::size_t n) {
    buf_.append(static_cast<const char*>(data), n);
  }
  void put_u8(std::uint8_t v) { put_bytes(&v, 1); }
  void put_u32(std::uint32_t v) { put_bytes(&v, 4); }
  void put_u64(std::uint64_t v) { put_bytes(&v, 8); }
  void put_i64(std::int64_t v) { put_bytes(&v, 8); }
  void put_f64(double v) { put_bytes(&v, 8); }
  void put_str(const std::string& s) {
    put_u64(s.size());
    put_bytes(s.data(), s.size());
  }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  void get_bytes(void* out, std::size_t n) {
    if (pos_ + n > data_.size())
      throw std::runtime_error("checkpoint: truncated file");
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t get_u8() { std::uint8_t v; get_bytes(&v, 1); return v; }
  std::uint32_t get_u32() { std::uint32_t v; get_bytes(&v, 4); return v; }
  std::uint64_t get_u64() { std::uint64_t v; get_bytes(&v, 8); return v; }
  std::int64_t get_i64() { std::int64_t v; get_bytes(&v, 8); return v; }
  double get_f64() { double v; get_bytes(&v, 8); return v; }
  std::string get_str() {
    const std::uint64_t n = get_u64();
    if (pos_ + n > data_.size())
      throw std::runtime_error("checkpoint: truncated file");
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

struct TensorBlob {
  std::string name;
  char dtype = 'f';  // 'f' float32, 'd' float64
  std::uint64_t rows = 0, cols = 0;
  std::string data;
};

template <typename S>
constexpr char dtype_char() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  return std::is_same_v<S, float> ? 'f' : 'd';
}

struct CheckpointData {
  std::uint64_t config_digest = 0;
  std::string config_text;
  std::string phase;  // "stage0" | "diffusion" | "ar"
  std::int64_t step = 0;
  std::int64_t total_plan_steps = 0;
  bool has_stats = false;
  LatentStats stats;
  ScheduleKind sched_kind = ScheduleKind::cosine;
  int sched_steps = 1000;
  double sched_s = 0.008;
  double sched_noise_factor = 1.0;
  std::vector<TensorBlob> tensors;

  template <typename S>
  void add_matrix(const std::string& name, const MatT<S>& m) {
    TensorBlob blob;
    blob.name = name;
    blob.dtype = dtype_char<S>();
    blob.rows = std::uint64_t(m.rows());
    blob.cols = std::uint64_t(m.cols());
    blob.data.assign(reinterpret_cast<const char*>(m.data()), sizeof(S) * m.size());
    tensors.push_back(std::move(blob));
  }

  const TensorBlob* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  template <typename S>
  MatT<S> get_matrix(const std::string& name) const {
    const TensorBlob* blob = find(name);
    if (!blob) throw std::runtime_error("checkpoint: missing tensor " + name);
    if (blob->dtype != dtype_char<S>())
      throw std::runtime_error("checkpoint: dtype mismatch for " + name);
    MatT<S> m(Eigen::Index(blob->rows), Eigen::Index(blob->cols));
    if (blob->data.size() != sizeof(S) * std::size_t(m.size()))
      throw std::runtime_error("checkpoint: corrupt tensor " + name);
    std::memcpy(m.data(), blob->data.data(), blob->data.size());
    return m;
  }
};

inline void save_checkpoint(const std::string& path, const CheckpointData& data) {
  detail::ByteWriter w;
  w.put_bytes(kCheckpointMagic, 4);
  w.put_u32(kCheckpointVersion);
  w.put_u64(data.config_digest);
  w.put_str(data.config_text);
  w.put_str(data.phase);
  w.put_i64(data.step);
  w.put_i64(data.total_plan_steps);
  w.put_u8(data.has_stats ? 1 : 0);
  if (data.has_stats) {
    w.put_u64(std::uint64_t(data.stats.mean.size()));
    for (Eigen::Index i = 0; i < data.stats.mean.size(); ++i) w.put_f64(data.stats.mean(i));
    for (Eigen::Index i = 0; i < data.stats.stdev.size(); ++i) w.put_f64(data.stats.stdev(i));
    w.put_f64(data.stats.epsilon);
    w.put_i64(data.stats.sample_count);
  }
  w.put_u8(std::uint8_t(data.sched_kind));
  w.put_u32(std::uint32_t(data.sched_steps));
  w.put_f64(data.sched_s);
  w.put_f64(data.sched_noise_factor);
  w.put_u64(data.tensors.size());
  for (const auto& t : data.tensors) {
    w.put_str(t.name);
    w.put_u8(std::uint8_t(t.dtype));
    w.put_u64(t.rows);
    w.put_u64(t.cols);
    w.put_bytes(t.data.data(), t.data.size());
  }
  Fnv1a checksum;
  checksum.update(w.buffer().data(), w.buffer().size());
  detail::ByteWriter tail;
  tail.put_u64(checksum.digest());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(w.buffer().data(), std::streamsize(w.buffer().size()));
  out.write(tail.buffer().data(), std::streamsize(tail.buffer().size()));
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.size() < 16) throw std::runtime_error("checkpoint: truncated file");

  const std::string payload = raw.substr(0, raw.size() - 8);
  Fnv1a checksum;
  checksum.update(payload.data(), payload.size());
  std::uint64_t stored = 0;
  std::memcpy(&stored, raw.data() + raw.size() - 8, 8);
  if (stored != checksum.digest())
    throw std::runtime_error("checkpoint: checksum failure (corrupt or truncated file)");

  detail::ByteReader r(payload);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic, not a LADX checkpoint");
  const std::uint32_t version = r.get_u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: version mismatch (file v" + std::to_string(version) +
                             ", expected v" + std::to_string(kCheckpointVersion) + ")");

  CheckpointData data;
  data.config_digest = r.get_u64();
  data.config_text = r.get_str();
  data.phase = r.get_str();
  data.step = r.get_i64();
  data.total_plan_steps = r.get_i64();
  data.has_stats = r.get_u8() != 0;
  if (data.has_stats) {
    const std::uint64_t d = r.get_u64();
    data.stats.mean.resize(Eigen::Index(d));
    data.stats.stdev.resize(Eigen::Index(d));
    for (std::uint64_t i = 0; i < d; ++i) data.stats.mean(Eigen::Index(i)) = r.get_f64();
    for (std::uint64_t i = 0; i < d; ++i) data.stats.stdev(Eigen::Index(i)) = r.get_f64();
    data.stats.epsilon = r.get_f64();
    data.stats.sample_count = r.get_i64();
  }
  data.sched_kind = ScheduleKind(r.get_u8());
  data.sched_steps = int(r.get_u32());
  data.sched_s = r.get_f64();
  data.sched_noise_factor = r.get_f64();
  const std::uint64_t count = r.get_u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorBlob t;
    t.name = r.get_str();
    t.dtype = char(r.get_u8());
    t.rows = r.get_u64();
    t.cols = r.get_u64();
    const std::size_t bytes =
        std::size_t(t.rows) * std::size_t(t.cols) * (t.dtype == 'f' ? 4 : 8);
    t.data.resize(bytes);
    r.get_bytes(t.data.data(), bytes);
    data.tensors.push_back(std::move(t));
  }
  return data;
}

// Registry helpers: parameters are stored as "param:<name>", Adam moments
// as "adam.m:<name>" / "adam.v:<name>" so resumption is bit-exact.
template <typename S>
void pack_params(const nn::ParamRegistry<S>& registry, CheckpointData& data) {
  for (const auto& item : registry.items())
    data.add_matrix<S>("param:" + item.name, item.param->w);
}

template <typename S>
void unpack_params(nn::ParamRegistry<S>& registry, const CheckpointData& data,
                   bool require_all = true) {
  for (const auto& item : registry.items()) {
    const TensorBlob* blob = data.find("param:" + item.name);
    if (!blob) {
      if (require_all)
        throw std::runtime_error("checkpoint: missing tensor param:" + item.name);
      continue;
    }
    item.param->w = data.get_matrix<S>("param:" + item.name);
    item.param->g = MatT<S>::Zero(item.param->w.rows(), item.param->w.cols());
  }
}

template <typename S>
void pack_adam(nn::AdamW<S>& opt, const nn::ParamRegistry<S>& registry, CheckpointData& data) {
  for (std::size_t i = 0; i < registry.size(); ++i) {
    data.add_matrix<S>("adam.m:" + registry.items()[i].name, opt.moment1(i));
    data.add_matrix<S>("adam.v:" + registry.items()[i].name, opt.moment2(i));
  }
}

template <typename S>
void unpack_adam(nn::AdamW<S>& opt, const nn::ParamRegistry<S>& registry,
                 const CheckpointData& data, std::int64_t step_count) {
  for (std::size_t i = 0; i < registry.size(); ++i) {
    opt.moment1(i) = data.get_matrix<S>("adam.m:" + registry.items()[i].name);
    opt.moment2(i) = data.get_matrix<S>("adam.v:" + registry.items()[i].name);
  }
  opt.set_step_count(step_count);
}

}  // namespace ladx
