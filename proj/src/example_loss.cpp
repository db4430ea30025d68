#include "seqlevel/example_loss.hpp"

#include <set>
#include <stdexcept>

namespace seqlevel {

using Eigen::VectorXd;

namespace {

std::vector<VectorXd> reference_log_probs(const ForwardPass& pass, std::size_t idx) {
  const auto& scored = pass.scored(idx);
  std::vector<VectorXd> out;
  out.reserve(scored.tokens.size());
  for (std::size_t i = 0; i < scored.tokens.size(); ++i) out.push_back(pass.step_log_probs(idx, i));
  return out;
}

}  // namespace

std::string ObjectiveSpec::describe() const {
  if (combine == Combine::kNone) return objective_name(objective);
  return combine_name(combine) + "(" + objective_name(token_objective) + "+" + objective_name(objective) + ")";
}

ExampleOutcome example_loss(const Params& params, const SentencePair& pair, const ObjectiveSpec& spec,
                            const ExampleContext& ctx, Gradients* grads) {
  if (spec.combine != Combine::kNone) {
    if (is_token_level(spec.objective))
      throw std::invalid_argument("combination needs a sequence-level objective, got " + objective_name(spec.objective));
    if (!is_token_level(spec.token_objective))
      throw std::invalid_argument("combination needs a token-level token_objective");
  }
  ForwardPass pass(params, pair.source, ctx.dropout);
  ExampleOutcome out;

  std::size_t ref_idx = 0;
  LossResult tok;
  if (spec.needs_token_part()) {
    ref_idx = pass.add(pair.target);
    const Objective which = spec.combine == Combine::kNone ? spec.objective : spec.token_objective;
    tok = token_loss(which, reference_log_probs(pass, ref_idx), pair.target, spec.loss);
    out.token_value = tok.value;
  }

  std::size_t first = pass.num_candidates();
  LossResult seq;
  if (spec.needs_candidates()) {
    if (ctx.candidates == nullptr || ctx.candidates->empty()) {
      out.skipped = true;
      return out;
    }
    std::set<TokenSeq> seen;
    std::vector<ScoredCandidate> scored;
    for (const auto& c : *ctx.candidates) {
      if (!seen.insert(c).second) continue;
      scored.push_back(pass.scored(pass.add(c)));
    }
    CandidateSet set = make_candidate_set(std::move(scored), pair.target, spec.loss.metric);
    if (spec.loss.rescale_costs) set = rescale_set_costs(std::move(set));
    if (spec.objective == Objective::kSeqNll && set.size() < 2) {
      out.skipped = true;
      return out;
    }
    seq = sequence_loss(spec.objective, set, spec.loss);
    out.set = std::move(set);
  }

  LossResult r;
  double tok_part = 0.0, seq_part = 0.0;
  switch (spec.combine) {
    case Combine::kNone:
      r = spec.needs_candidates() ? seq : tok;
      (spec.needs_candidates() ? seq_part : tok_part) = r.value;
      break;
    case Combine::kWeighted:
      r = weighted(tok, seq, spec.loss.alpha);
      tok_part = spec.loss.alpha * tok.value;
      seq_part = (1.0 - spec.loss.alpha) * seq.value;
      break;
    case Combine::kConstrained:
      r = constrained(tok, ctx.baseline_token_loss, seq);
      (r.branch == Branch::kSequence ? seq_part : tok_part) = r.value;
      break;
    case Combine::kRandom:
      r = random_choice(tok, seq, ctx.pick_sequence);
      (r.branch == Branch::kSequence ? seq_part : tok_part) = r.value;
      break;
  }
  out.value = r.value;
  out.branch = r.branch;
  out.scaled_value = ctx.token_scale * tok_part + ctx.sequence_scale * seq_part;
  if (grads == nullptr) return out;

  std::vector<std::vector<VectorXd>> dlogits(pass.num_candidates());
  if (r.has_token_part()) {
    auto& d = dlogits[ref_idx];
    d.reserve(r.token_grads.size());
    for (const auto& g : r.token_grads) d.push_back(ctx.token_scale * g);
  }
  if (r.has_sequence_part()) {
    for (std::size_t j = 0; j < r.d_avg_logprob.size(); ++j) {
      const double da = ctx.sequence_scale * r.d_avg_logprob[j];
      const double ds = ctx.sequence_scale * r.d_avg_score[j];
      if (da == 0.0 && ds == 0.0) continue;
      const auto& toks = pass.scored(first + j).tokens;
      auto& d = dlogits[first + j];
      d.reserve(toks.size());
      for (std::size_t i = 0; i < toks.size(); ++i)
        d.push_back(aggregate_to_logit_grad(pass.step_log_probs(first + j, i), toks[i], da, ds, toks.size()));
    }
  }
  pass.backward(dlogits, *grads);
  return out;
}

double reference_token_loss(const Params& params, const SentencePair& pair, Objective token_objective,
                            const LossConfig& config) {
  ForwardPass pass(params, pair.source);
  const std::size_t idx = pass.add(pair.target);
  return token_loss(token_objective, reference_log_probs(pass, idx), pair.target, config).value;
}

}  // namespace seqlevel
