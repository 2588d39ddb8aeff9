#pragma once

// Corpus BLEU@4: geometric mean of modified n-gram precisions (n <= 4,
// uniform weights) times the brevity penalty. No smoothing: a zero
// precision at any order zeroes the score.

#include "ladx/vocab.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ladx {

namespace detail {

using NgramCounts = std::map<std::vector<std::string>, std::int64_t>;

inline NgramCounts count_ngrams(const std::vector<std::string>& words, int n) {
  NgramCounts counts;
  if (int(words.size()) < n) return counts;
  for (std::size_t i = 0; i + std::size_t(n) <= words.size(); ++i)
    ++counts[std::vector<std::string>(words.begin() + long(i), words.begin() + long(i) + n)];
  return counts;
}

}  // namespace detail

inline double bleu4(const std::vector<std::string>& hypotheses,
                    const std::vector<std::vector<std::string>>& reference_lists) {
  if (hypotheses.empty()) throw std::invalid_argument("bleu4: empty corpus");
  if (hypotheses.size() != reference_lists.size())
    throw std::invalid_argument("bleu4: hypothesis/reference count mismatch");

  std::int64_t matches[4] = {0, 0, 0, 0};
  std::int64_t totals[4] = {0, 0, 0, 0};
  std::int64_t hyp_len = 0, ref_len = 0;

  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto hyp = split_words(hypotheses[s]);
    const auto& refs = reference_lists[s];
    if (refs.empty()) throw std::invalid_argument("bleu4: empty reference list");

    std::vector<std::vector<std::string>> ref_words;
    ref_words.reserve(refs.size());
    for (const auto& r : refs) ref_words.push_back(split_words(r));

    // Closest reference length; ties broken toward the shorter one.
    std::int64_t best = std::int64_t(ref_words[0].size());
    for (const auto& rw : ref_words) {
      const std::int64_t len = std::int64_t(rw.size());
      const std::int64_t d_new = std::llabs(len - std::int64_t(hyp.size()));
      const std::int64_t d_old = std::llabs(best - std::int64_t(hyp.size()));
      if (d_new < d_old || (d_new == d_old && len < best)) best = len;
    }
    hyp_len += std::int64_t(hyp.size());
    ref_len += best;

    for (int n = 1; n <= 4; ++n) {
      const auto hyp_counts = detail::count_ngrams(hyp, n);
      detail::NgramCounts ref_max;
      for (const auto& rw : ref_words)
        for (const auto& [gram, c] : detail::count_ngrams(rw, n))
          ref_max[gram] = std::max(ref_max[gram], c);
      for (const auto& [gram, c] : hyp_counts) {
        const auto it = ref_max.find(gram);
        matches[n - 1] += std::min(c, it == ref_max.end() ? 0 : it->second);
      }
      totals[n - 1] += std::max<std::int64_t>(0, std::int64_t(hyp.size()) - n + 1);
    }
  }

  if (hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (totals[n] == 0 || matches[n] == 0) return 0.0;
    log_sum += std::log(double(matches[n]) / double(totals[n]));
  }
  const double bp =
      hyp_len > ref_len ? 1.0 : std::exp(1.0 - double(ref_len) / double(hyp_len));
  return bp * std::exp(log_sum / 4.0);
}

inline double sentence_bleu4(const std::string& hypothesis, const std::string& reference) {
  return bleu4({hypothesis}, {{reference}});
}

}  // namespace ladx
