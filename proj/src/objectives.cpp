#include "seqlevel/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace seqlevel {

using Eigen::VectorXd;

namespace {

std::vector<double> softmax_weights(std::span<const double> x) {
  const double lse = log_sum_exp(x);
  std::vector<double> w(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) w[i] = std::exp(x[i] - lse);
  return w;
}

std::vector<double> avg_logprobs(const CandidateSet& set) {
  std::vector<double> a;
  a.reserve(set.size());
  for (const auto& m : set.members) a.push_back(m.avg_logprob);
  return a;
}

LossResult empty_sequence_result(std::size_t n) {
  LossResult r;
  r.d_avg_logprob.assign(n, 0.0);
  r.d_avg_score.assign(n, 0.0);
  return r;
}

void check_targets(std::span<const VectorXd> step_logits, std::span<const TokenId> targets) {
  if (targets.empty()) throw std::invalid_argument("token loss needs at least one target");
  if (step_logits.size() != targets.size())
    throw std::invalid_argument("token loss: " + std::to_string(step_logits.size()) + " steps for " +
                                std::to_string(targets.size()) + " targets");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= step_logits[i].size())
      throw std::out_of_range("target id " + std::to_string(targets[i]) + " out of range");
  }
}

}  // namespace

Objective parse_objective(std::string_view name) {
  if (name == "toknll") return Objective::kTokNll;
  if (name == "tokls") return Objective::kTokLs;
  if (name == "seqnll") return Objective::kSeqNll;
  if (name == "risk") return Objective::kRisk;
  if (name == "maxmargin") return Objective::kMaxMargin;
  if (name == "multimargin") return Objective::kMultiMargin;
  if (name == "softmaxmargin") return Objective::kSoftmaxMargin;
  throw std::invalid_argument("unknown objective: " + std::string(name));
}

std::string objective_name(Objective o) {
  switch (o) {
    case Objective::kTokNll: return "toknll";
    case Objective::kTokLs: return "tokls";
    case Objective::kSeqNll: return "seqnll";
    case Objective::kRisk: return "risk";
    case Objective::kMaxMargin: return "maxmargin";
    case Objective::kMultiMargin: return "multimargin";
    case Objective::kSoftmaxMargin: return "softmaxmargin";
  }
  return "?";
}

bool is_token_level(Objective o) { return o == Objective::kTokNll || o == Objective::kTokLs; }

Combine parse_combine(std::string_view name) {
  if (name == "none") return Combine::kNone;
  if (name == "weighted") return Combine::kWeighted;
  if (name == "constrained") return Combine::kConstrained;
  if (name == "random") return Combine::kRandom;
  throw std::invalid_argument("unknown combine mode: " + std::string(name));
}

std::string combine_name(Combine c) {
  switch (c) {
    case Combine::kNone: return "none";
    case Combine::kWeighted: return "weighted";
    case Combine::kConstrained: return "constrained";
    case Combine::kRandom: return "random";
  }
  return "?";
}

void LossConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must be in [0,1)");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must be in [0,1]");
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
}

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

LossResult tok_nll(std::span<const VectorXd> step_logits, std::span<const TokenId> targets) {
  return tok_ls(step_logits, targets, 0.0);
}

LossResult tok_ls(std::span<const VectorXd> step_logits, std::span<const TokenId> targets, double epsilon) {
  check_targets(step_logits, targets);
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must be in [0,1)");
  LossResult r;
  r.token_grads.reserve(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const VectorXd lp = log_softmax(step_logits[i]);
    const auto V = lp.size();
    const TokenId t = targets[i];
    const double off = epsilon / static_cast<double>(V);
    const double on = 1.0 - epsilon;
    double step_value = -on * lp[t];
    if (epsilon > 0.0) step_value -= off * (lp.sum() - lp[t]);
    r.value += step_value;

    const double mass = epsilon > 0.0 ? on + off * static_cast<double>(V - 1) : 1.0;
    VectorXd g = mass * lp.array().exp().matrix();
    if (epsilon > 0.0) g.array() -= off;
    g[t] -= epsilon > 0.0 ? on - off : on;
    r.token_grads.push_back(std::move(g));
  }
  return r;
}

LossResult token_loss(Objective o, std::span<const VectorXd> step_logits, std::span<const TokenId> targets,
                      const LossConfig& config) {
  switch (o) {
    case Objective::kTokNll: return tok_nll(step_logits, targets);
    case Objective::kTokLs: return tok_ls(step_logits, targets, config.epsilon);
    default: break;
  }
  throw std::invalid_argument(objective_name(o) + " is not a token-level objective");
}

LossResult seq_nll(const CandidateSet& set) {
  if (set.size() < 2) throw std::invalid_argument("degenerate partition");
  const auto a = avg_logprobs(set);
  const auto w = softmax_weights(a);
  LossResult r = empty_sequence_result(set.size());
  r.value = -a[set.pseudo_ref] + log_sum_exp(a);
  for (std::size_t u = 0; u < set.size(); ++u) r.d_avg_logprob[u] = w[u] - (u == set.pseudo_ref ? 1.0 : 0.0);
  return r;
}

LossResult risk(const CandidateSet& set) {
  if (set.size() == 0) throw std::invalid_argument("empty candidate set");
  const auto w = softmax_weights(avg_logprobs(set));
  LossResult r = empty_sequence_result(set.size());
  for (std::size_t u = 0; u < set.size(); ++u) r.value += set.members[u].cost * w[u];
  for (std::size_t u = 0; u < set.size(); ++u) r.d_avg_logprob[u] = w[u] * (set.members[u].cost - r.value);
  return r;
}

LossResult max_margin(const CandidateSet& set, double beta) {
  if (set.size() == 0) throw std::invalid_argument("empty candidate set");
  LossResult r = empty_sequence_result(set.size());
  const std::size_t best = set.model_best, ref = set.pseudo_ref;
  if (best == ref) return r;
  const auto& mb = set.members[best];
  const auto& mr = set.members[ref];
  const double hinge = beta * (mb.cost - mr.cost) - mr.avg_score + mb.avg_score;
  if (hinge > 0.0) {
    r.value = hinge;
    r.d_avg_score[ref] = -1.0;
    r.d_avg_score[best] = 1.0;
  }
  return r;
}

LossResult multi_margin(const CandidateSet& set, double beta) {
  if (set.size() == 0) throw std::invalid_argument("empty candidate set");
  LossResult r = empty_sequence_result(set.size());
  const std::size_t ref = set.pseudo_ref;
  const auto& mr = set.members[ref];
  for (std::size_t u = 0; u < set.size(); ++u) {
    if (u == ref) continue;
    const auto& mu = set.members[u];
    const double hinge = beta * (mu.cost - mr.cost) - mr.avg_score + mu.avg_score;
    if (hinge > 0.0) {
      r.value += hinge;
      r.d_avg_score[u] += 1.0;
      r.d_avg_score[ref] -= 1.0;
    }
  }
  return r;
}

LossResult softmax_margin(const CandidateSet& set) {
  if (set.size() == 0) throw std::invalid_argument("empty candidate set");
  std::vector<double> augmented;
  augmented.reserve(set.size());
  for (const auto& m : set.members) augmented.push_back(m.avg_logprob + m.cost);
  const auto w = softmax_weights(augmented);
  LossResult r = empty_sequence_result(set.size());
  r.value = -set.members[set.pseudo_ref].avg_logprob + log_sum_exp(augmented);
  for (std::size_t u = 0; u < set.size(); ++u) r.d_avg_logprob[u] = w[u] - (u == set.pseudo_ref ? 1.0 : 0.0);
  return r;
}

LossResult sequence_loss(Objective o, const CandidateSet& set, const LossConfig& config) {
  const CandidateSet& s = set;
  switch (o) {
    case Objective::kSeqNll: return seq_nll(s);
    case Objective::kRisk: return risk(s);
    case Objective::kMaxMargin: return max_margin(s, config.beta);
    case Objective::kMultiMargin: return multi_margin(s, config.beta);
    case Objective::kSoftmaxMargin: return softmax_margin(s);
    default: break;
  }
  throw std::invalid_argument(objective_name(o) + " is not a sequence-level objective");
}

LossResult weighted(const LossResult& tok, const LossResult& seq, double alpha) {
  LossResult r;
  r.value = alpha * tok.value + (1.0 - alpha) * seq.value;
  r.token_grads.reserve(tok.token_grads.size());
  for (const auto& g : tok.token_grads) r.token_grads.push_back(alpha * g);
  r.d_avg_logprob.reserve(seq.d_avg_logprob.size());
  for (double g : seq.d_avg_logprob) r.d_avg_logprob.push_back((1.0 - alpha) * g);
  r.d_avg_score.reserve(seq.d_avg_score.size());
  for (double g : seq.d_avg_score) r.d_avg_score.push_back((1.0 - alpha) * g);
  return r;
}

LossResult constrained(const LossResult& tok, std::optional<double> tok_baseline_value, const LossResult& seq) {
  if (!tok_baseline_value) throw std::invalid_argument("constrained combination needs a baseline token loss");
  LossResult r = tok.value <= *tok_baseline_value ? seq : tok;
  r.branch = tok.value <= *tok_baseline_value ? Branch::kSequence : Branch::kToken;
  return r;
}

LossResult random_choice(const LossResult& tok, const LossResult& seq, bool pick_sequence) {
  LossResult r = pick_sequence ? seq : tok;
  r.branch = pick_sequence ? Branch::kSequence : Branch::kToken;
  return r;
}

}  // namespace seqlevel
