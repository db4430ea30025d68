#pragma once

#include <optional>
#include <vector>

#include "seqlevel/model.hpp"
#include "seqlevel/objectives.hpp"

namespace seqlevel {

// Which loss a training example is scored with.
struct ObjectiveSpec {
  Objective token_objective = Objective::kTokLs;  // token part of combinations
  Objective objective = Objective::kRisk;         // main objective
  Combine combine = Combine::kNone;
  LossConfig loss;

  bool needs_candidates() const { return !is_token_level(objective); }
  bool needs_token_part() const { return is_token_level(objective) || combine != Combine::kNone; }
  std::string describe() const;
};

struct ExampleContext {
  const std::vector<TokenSeq>* candidates = nullptr;  // required for sequence objectives
  std::optional<double> baseline_token_loss;          // constrained combination
  bool pick_sequence = false;                         // random combination
  Dropout dropout;
  // Gradient multipliers for the token part (e.g. 1 / target tokens in the
  // batch) and the sequence part (e.g. 1 / sentences in the batch).
  double token_scale = 1.0;
  double sequence_scale = 1.0;
};

struct ExampleOutcome {
  double value = 0.0;  // unscaled loss (combinations included)
  double scaled_value = 0.0;  // token_scale * token part + sequence_scale * sequence part
  Branch branch = Branch::kNone;
  std::optional<double> token_value;  // unscaled token loss, when computed
  bool skipped = false;  // no usable candidate set
  std::optional<CandidateSet> set;
};

// Scores one example and, when grads is non-null, accumulates the scaled
// gradient. Sequence losses that need a non-trivial partition skip
// singleton sets.
ExampleOutcome example_loss(const Params& params, const SentencePair& pair, const ObjectiveSpec& spec,
                            const ExampleContext& ctx, Gradients* grads);

// Token loss of the reference alone (value only), e.g. for a frozen
// baseline in the constrained combination.
double reference_token_loss(const Params& params, const SentencePair& pair, Objective token_objective,
                            const LossConfig& config);

}  // namespace seqlevel
