#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "seqlevel/generate.hpp"
#include "seqlevel/metrics.hpp"

namespace seqlevel {

enum class Objective { kTokNll, kTokLs, kSeqNll, kRisk, kMaxMargin, kMultiMargin, kSoftmaxMargin };
enum class Combine { kNone, kWeighted, kConstrained, kRandom };

Objective parse_objective(std::string_view name);  // toknll, tokls, seqnll, risk, ...
std::string objective_name(Objective o);
bool is_token_level(Objective o);

Combine parse_combine(std::string_view name);  // none, weighted, constrained, random
std::string combine_name(Combine c);

struct LossConfig {
  double epsilon = 0.1;  // label smoothing mass
  double alpha = 0.3;    // weight of the token loss in the weighted combination
  double beta = 1.0;     // margin scale
  MetricKind metric = MetricKind::kBleu;
  bool rescale_costs = false;

  void validate() const;
};

enum class Branch { kNone, kToken, kSequence };

// A loss value and its gradient coefficients. Token losses fill
// token_grads (dL/dlogits per reference step); sequence losses fill the
// per-candidate coefficients dL/da(u) and dL/ds(u) on the length-normalized
// aggregates. Combinations may fill both.
struct LossResult {
  double value = 0.0;
  std::vector<Eigen::VectorXd> token_grads;
  std::vector<double> d_avg_logprob;
  std::vector<double> d_avg_score;
  Branch branch = Branch::kNone;  // set by constrained and random combination

  bool has_token_part() const { return !token_grads.empty(); }
  bool has_sequence_part() const { return !d_avg_logprob.empty(); }
};

// -sum_i log p(t_i | t_<i, x). step_logits[i] are the logits at step i.
LossResult tok_nll(std::span<const Eigen::VectorXd> step_logits, std::span<const TokenId> targets);

// Cross-entropy against q(t_i) = 1 - eps, q(v) = eps / V for v != t_i.
// q sums to 1 - eps/V; the gradient is sum(q) * softmax - q.
LossResult tok_ls(std::span<const Eigen::VectorXd> step_logits, std::span<const TokenId> targets, double epsilon);

LossResult token_loss(Objective o, std::span<const Eigen::VectorXd> step_logits, std::span<const TokenId> targets,
                      const LossConfig& config);

// -a(u*) + log sum_u exp a(u). Needs at least two candidates.
LossResult seq_nll(const CandidateSet& set);

// sum_u cost_u softmax(a)_u
LossResult risk(const CandidateSet& set);

// max[0, beta(cost(u-hat) - cost(u*)) - s(u*) + s(u-hat)]; zero gradient at the kink.
LossResult max_margin(const CandidateSet& set, double beta);

// sum_u max[0, beta(cost_u - cost(u*)) - s(u*) + s(u)]
LossResult multi_margin(const CandidateSet& set, double beta);

// -a(u*) + log sum_u exp(a(u) + cost_u)
LossResult softmax_margin(const CandidateSet& set);

LossResult sequence_loss(Objective o, const CandidateSet& set, const LossConfig& config);

// alpha * token + (1 - alpha) * sequence, values and gradients alike.
LossResult weighted(const LossResult& tok, const LossResult& seq, double alpha);

// Sequence loss when tok.value <= baseline (inclusive), token loss otherwise.
LossResult constrained(const LossResult& tok, std::optional<double> tok_baseline_value, const LossResult& seq);

// Coin already flipped by the caller.
LossResult random_choice(const LossResult& tok, const LossResult& seq, bool pick_sequence);

// Numerically stable log(sum(exp(x))).
double log_sum_exp(std::span<const double> x);

}  // namespace seqlevel
