#include "seqlevel/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace seqlevel {

namespace {

using NgramCounts = std::map<TokenSeq, int>;

NgramCounts count_ngrams(Tokens seq, std::size_t n) {
  NgramCounts counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[TokenSeq(seq.begin() + i, seq.begin() + i + n)];
  return counts;
}

// Clipped matches: sum over hyp n-grams of min(hyp count, ref count).
int clipped_matches(const NgramCounts& ref, const NgramCounts& hyp) {
  int matches = 0;
  for (const auto& [gram, c] : hyp) {
    auto it = ref.find(gram);
    if (it != ref.end()) matches += std::min(c, it->second);
  }
  return matches;
}

int total_ngrams(std::size_t len, std::size_t n) { return len >= n ? static_cast<int>(len - n + 1) : 0; }

double brevity_penalty(double ref_len, double hyp_len) {
  if (hyp_len <= 0.0) return 0.0;
  return std::min(1.0, std::exp(1.0 - ref_len / hyp_len));
}

std::size_t lcs_length(Tokens a, Tokens b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double f1_from_overlap(double overlap, double ref_total, double hyp_total) {
  if (overlap <= 0.0) return 0.0;
  return 2.0 * overlap / (ref_total + hyp_total);
}

}  // namespace

MetricKind parse_metric(std::string_view name) {
  if (name == "bleu") return MetricKind::kBleu;
  if (name == "rouge1") return MetricKind::kRouge1;
  if (name == "rouge2") return MetricKind::kRouge2;
  if (name == "rougeL") return MetricKind::kRougeL;
  throw std::invalid_argument("unknown metric: " + std::string(name));
}

std::string metric_name(MetricKind kind) {
  switch (kind) {
    case MetricKind::kBleu: return "bleu";
    case MetricKind::kRouge1: return "rouge1";
    case MetricKind::kRouge2: return "rouge2";
    case MetricKind::kRougeL: return "rougeL";
  }
  return "?";
}

double sentence_bleu(Tokens ref, Tokens hyp, int max_order) {
  if (max_order < 1) throw std::invalid_argument("max_order must be positive");
  if (hyp.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_order; ++n) {
    const auto order = static_cast<std::size_t>(n);
    double matches = clipped_matches(count_ngrams(ref, order), count_ngrams(hyp, order));
    double total = total_ngrams(hyp.size(), order);
    if (n > 1) {
      matches += 1.0;
      total += 1.0;
    }
    if (matches <= 0.0) return 0.0;
    log_sum += std::log(matches / total);
  }
  const double bp = brevity_penalty(static_cast<double>(ref.size()), static_cast<double>(hyp.size()));
  return std::clamp(bp * std::exp(log_sum / max_order), 0.0, 1.0);
}

double corpus_bleu(const std::vector<TokenSeq>& refs, const std::vector<TokenSeq>& hyps, int max_order) {
  if (refs.size() != hyps.size())
    throw std::invalid_argument("corpus_bleu: " + std::to_string(refs.size()) + " refs vs " +
                                std::to_string(hyps.size()) + " hyps");
  std::vector<double> matches(max_order, 0.0), totals(max_order, 0.0);
  double ref_len = 0.0, hyp_len = 0.0;
  for (std::size_t k = 0; k < refs.size(); ++k) {
    ref_len += static_cast<double>(refs[k].size());
    hyp_len += static_cast<double>(hyps[k].size());
    for (int n = 1; n <= max_order; ++n) {
      const auto order = static_cast<std::size_t>(n);
      matches[n - 1] += clipped_matches(count_ngrams(refs[k], order), count_ngrams(hyps[k], order));
      totals[n - 1] += total_ngrams(hyps[k].size(), order);
    }
  }
  double log_sum = 0.0;
  for (int n = 0; n < max_order; ++n) {
    if (matches[n] <= 0.0 || totals[n] <= 0.0) return 0.0;
    log_sum += std::log(matches[n] / totals[n]);
  }
  return std::clamp(brevity_penalty(ref_len, hyp_len) * std::exp(log_sum / max_order), 0.0, 1.0);
}

double rouge(Tokens ref, Tokens hyp, MetricKind variant) {
  if (hyp.empty()) return 0.0;
  switch (variant) {
    case MetricKind::kRouge1:
    case MetricKind::kRouge2: {
      const std::size_t n = variant == MetricKind::kRouge1 ? 1 : 2;
      const double ref_total = total_ngrams(ref.size(), n);
      const double hyp_total = total_ngrams(hyp.size(), n);
      // too short to contain any n-gram: fall back to exact match
      if (ref_total == 0.0 || hyp_total == 0.0)
        return std::equal(ref.begin(), ref.end(), hyp.begin(), hyp.end()) ? 1.0 : 0.0;
      const double overlap = clipped_matches(count_ngrams(ref, n), count_ngrams(hyp, n));
      return f1_from_overlap(overlap, ref_total, hyp_total);
    }
    case MetricKind::kRougeL:
      return f1_from_overlap(static_cast<double>(lcs_length(ref, hyp)), static_cast<double>(ref.size()),
                             static_cast<double>(hyp.size()));
    case MetricKind::kBleu:
      break;
  }
  throw std::invalid_argument("rouge: not a ROUGE variant");
}

double metric_score(Tokens ref, Tokens hyp, MetricKind kind) {
  return kind == MetricKind::kBleu ? sentence_bleu(ref, hyp) : rouge(ref, hyp, kind);
}

double cost(Tokens ref, Tokens hyp, MetricKind kind) { return 1.0 - metric_score(ref, hyp, kind); }

std::vector<double> rescale_costs(std::span<const double> costs) {
  std::vector<double> out(costs.begin(), costs.end());
  if (out.size() < 2) return out;
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  const double min = *lo, range = *hi - *lo;
  for (auto& c : out) c = range > 0.0 ? (c - min) / range : 0.0;
  return out;
}

TokenSeq TokenInterner::intern(std::string_view line) {
  TokenSeq out;
  for (auto& tok : split_whitespace(line)) {
    auto [it, inserted] = ids_.try_emplace(std::move(tok), static_cast<TokenId>(ids_.size()));
    out.push_back(it->second);
  }
  return out;
}

}  // namespace seqlevel
