#pragma once

// Evaluation and benchmarking: BLEU@4 plus token/length accuracy over a
// held-out split, and the forward-pass / latency sweep comparing parallel
// diffusion decoding against the token-by-token AR baseline.

#include "ladx/ar.hpp"
#include "ladx/bleu.hpp"
#include "ladx/sampler.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace ladx {

struct EvalReport {
  double bleu = 0.0;
  double token_accuracy = 0.0;
  double length_accuracy = 0.0;
  std::map<int, double> bleu_by_length;   // reference caption length -> BLEU
  std::map<int, int> count_by_length;
  double mean_forward_passes = 0.0;
  double mean_wall_ms = 0.0;
  double median_wall_ms = 0.0;
  int examples = 0;

  nlohmann::json to_json() const {
    nlohmann::json buckets = nlohmann::json::object();
    for (const auto& [len, b] : bleu_by_length)
      buckets[std::to_string(len)] = {{"bleu4", b},
                                      {"count", count_by_length.at(len)}};
    return {{"bleu4", bleu},
            {"token_accuracy", token_accuracy},
            {"length_accuracy", length_accuracy},
            {"per_length", buckets},
            {"mean_forward_passes", mean_forward_passes},
            {"mean_wall_ms", mean_wall_ms},
            {"median_wall_ms", median_wall_ms},
            {"examples", examples}};
  }
};

inline double median_of(std::vector<double> xs) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// Token accuracy compares positions 0..SEP of the reference (content words
// plus the boundary); length accuracy demands the exact PAD boundary, i.e.
// the same number of content tokens.
template <typename S>
EvalReport evaluate(const Sampler<S>& sampler, const std::vector<Example>& examples,
                    const SamplerConfig& base_cfg, const Vocabulary& vocab,
                    std::uint64_t eval_seed, int l_max) {
  if (examples.empty()) throw std::invalid_argument("evaluate: empty example set");
  const int n = int(examples.size());
  std::vector<SampleResult<S>> results(static_cast<std::size_t>(n));
  Rng seeder(eval_seed);

  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) seeds[std::size_t(i)] = seeder.fork("eval", std::uint64_t(i)).seed();

#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    SamplerConfig cfg = base_cfg;
    cfg.seed = seeds[std::size_t(i)];
    results[std::size_t(i)] = sampler.sample(examples[std::size_t(i)].scene, cfg);
  }

  EvalReport report;
  report.examples = n;
  std::vector<std::string> hyps;
  std::vector<std::vector<std::string>> refs;
  std::map<int, std::vector<std::size_t>> by_length;
  double token_hits = 0, token_total = 0;
  int length_hits = 0;
  double passes_sum = 0;
  std::vector<double> walls;

  for (int i = 0; i < n; ++i) {
    const auto& e = examples[std::size_t(i)];
    const auto& r = results[std::size_t(i)];
    hyps.push_back(r.caption);
    refs.push_back({e.caption});
    const TokenSeq ref = tokenize(e.caption, vocab, l_max);
    int sep_pos = 0;
    for (int p = 0; p < l_max; ++p)
      if (ref.ids[std::size_t(p)] == Vocabulary::kSep) { sep_pos = p; break; }
    for (int p = 0; p <= sep_pos; ++p) {
      token_total += 1.0;
      if (r.tokens.ids[std::size_t(p)] == ref.ids[std::size_t(p)]) token_hits += 1.0;
    }
    if (content_length(r.tokens) == content_length(ref)) ++length_hits;
    by_length[content_length(ref)].push_back(std::size_t(i));
    passes_sum += double(r.forward_passes);
    walls.push_back(r.wall_ms);
  }

  report.bleu = bleu4(hyps, refs);
  report.token_accuracy = token_total > 0 ? token_hits / token_total : 0.0;
  report.length_accuracy = double(length_hits) / double(n);
  for (const auto& [len, idx] : by_length) {
    std::vector<std::string> h;
    std::vector<std::vector<std::string>> rl;
    for (std::size_t i : idx) {
      h.push_back(hyps[i]);
      rl.push_back(refs[i]);
    }
    report.bleu_by_length[len] = bleu4(h, rl);
    report.count_by_length[len] = int(idx.size());
  }
  report.mean_forward_passes = passes_sum / double(n);
  report.mean_wall_ms = std::accumulate(walls.begin(), walls.end(), 0.0) / double(n);
  report.median_wall_ms = median_of(walls);
  return report;
}

struct BenchRow {
  std::string model;       // "diffusion" | "ar"
  int length_bucket = 0;
  double wall_ms = 0.0;    // median over the timed runs
  double forward_passes = 0.0;
  double bleu = 0.0;
};

// Scenes whose caption length falls in (lo, hi], sampled by rejection.
inline std::vector<Scene> scenes_for_length(int lo, int hi, int count, Rng rng) {
  std::vector<Scene> out;
  int guard = 0;
  while (int(out.size()) < count) {
    if (++guard > count * 10000)
      throw std::runtime_error("scenes_for_length: no scenes in bucket (" +
                               std::to_string(lo) + ", " + std::to_string(hi) + "]");
    Scene s = sample_scene(rng);
    const int len = int(split_words(render_caption(s)).size());
    if (len > lo && len <= hi) out.push_back(std::move(s));
  }
  return out;
}

// Per (model, bucket): median wall time over `timed` runs after `warmup`
// discarded runs, mean counted forward passes, and BLEU@4 of the timed
// generations against the template captions.
template <typename S>
std::vector<BenchRow> latency_sweep(const Sampler<S>& diff_sampler, const ArModel<S>& ar,
                                    const Vocabulary& vocab, const SamplerConfig& base_cfg,
                                    const std::vector<int>& buckets, int warmup, int timed,
                                    std::uint64_t seed) {
  if (warmup < 5 || timed < 20)
    throw std::invalid_argument("latency_sweep: need >= 5 warmup and >= 20 timed runs");
  std::vector<BenchRow> rows;
  Rng root(seed);
  int prev_cap = 0;
  for (int cap : buckets) {
    const auto scenes = scenes_for_length(prev_cap, cap, warmup + timed,
                                          root.fork("bench-scenes", std::uint64_t(cap)));
    for (const std::string& model : {std::string("diffusion"), std::string("ar")}) {
      std::vector<double> walls;
      std::vector<double> passes;
      std::vector<std::string> hyps;
      std::vector<std::vector<std::string>> refs;
      for (int i = 0; i < warmup + timed; ++i) {
        const Scene& scene = scenes[std::size_t(i)];
        std::string hyp;
        double wall = 0.0, pass_count = 0.0;
        if (model == "diffusion") {
          SamplerConfig cfg = base_cfg;
          cfg.seed = root.fork("bench-seed", std::uint64_t(cap * 1000 + i)).seed();
          const auto res = diff_sampler.sample(scene, cfg);
          hyp = res.caption;
          wall = res.wall_ms;
          pass_count = double(res.forward_passes);
        } else {
          const auto res = ar.greedy(scene, vocab);
          hyp = res.caption;
          wall = res.wall_ms;
          pass_count = double(res.passes);
        }
        if (i < warmup) continue;
        walls.push_back(wall);
        passes.push_back(pass_count);
        hyps.push_back(hyp);
        refs.push_back({render_caption(scene)});
      }
      BenchRow row;
      row.model = model;
      row.length_bucket = cap;
      row.wall_ms = median_of(walls);
      row.forward_passes =
          std::accumulate(passes.begin(), passes.end(), 0.0) / double(passes.size());
      row.bleu = bleu4(hyps, refs);
      rows.push_back(std::move(row));
    }
    prev_cap = cap;
  }
  return rows;
}

inline void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("bench: cannot write " + path);
  out << "model,length_bucket,mean_wall_ms,forward_passes,bleu4\n";
  for (const auto& r : rows)
    out << r.model << ',' << r.length_bucket << ',' << r.wall_ms << ','
        << r.forward_passes << ',' << r.bleu << "\n";
}

}  // namespace ladx
