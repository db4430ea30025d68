#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqlevel/checkpoint.hpp"
#include "seqlevel/config.hpp"
#include "seqlevel/corpus.hpp"

namespace seqlevel {

// Scales grads to max_norm when their global L2 norm exceeds it. Returns the
// norm before scaling. Throws on a non-finite norm.
double renorm_grads(Gradients& grads, double max_norm);

// v <- mu v - lr g;  params <- params + mu v - lr g
void nesterov_step(Params& params, Params& velocity, const Gradients& grads, double lr, double momentum);

double anneal(double lr, double factor);

// One row of the metric log. Metrics not computed for a row are NaN and
// written as empty cells.
struct LogRow {
  std::size_t epoch = 0;
  std::string phase;      // token | sequence
  std::string split;      // train | valid
  std::string objective;
  double loss = 0.0;
  double bleu, rouge1, rouge2, rougeL;
  double lr = 0.0;
  std::size_t skipped = 0;
  LogRow();
};

class MetricLog {
 public:
  static constexpr const char* kHeader = "epoch,phase,split,objective,loss,bleu,rouge1,rouge2,rougeL,lr,skipped";

  void add(const LogRow& row) { rows_.push_back(row); }
  const std::vector<LogRow>& rows() const { return rows_; }
  std::string to_csv() const;
  void write(const std::filesystem::path& path) const;
  static MetricLog parse_csv(std::istream& in);
  static MetricLog read(const std::filesystem::path& path);

 private:
  std::vector<LogRow> rows_;
};

struct EvalReport {
  double bleu = 0.0;  // corpus BLEU
  double rouge1 = 0.0, rouge2 = 0.0, rougeL = 0.0;  // sentence means
  std::size_t sentences = 0;
  std::vector<TokenSeq> hypotheses;  // eos stripped
};

// Beam-decodes every source and scores the best hypothesis against the
// reference. Throws on an empty set.
EvalReport evaluate(const Params& params, const std::vector<SentencePair>& pairs, std::size_t k, std::size_t max_len,
                    bool normalize);
EvalReport evaluate(const Params& params, const std::vector<SentencePair>& pairs, const TrainConfig& config);

struct TokenEval {
  double loss = 0.0;      // per target token
  double accuracy = 0.0;  // teacher-forced argmax over target tokens
};
TokenEval token_eval(const Params& params, const std::vector<SentencePair>& pairs, Objective token_objective,
                     const LossConfig& loss);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, Checkpoint last_good)
      : std::runtime_error(what), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const { return last_good_; }

 private:
  Checkpoint last_good_;
};

struct PhaseResult {
  Checkpoint last;  // after the final epoch
  Checkpoint best;  // best validation score (token loss, or BLEU in the sequence phase)
  std::size_t skipped = 0;
  std::size_t branch_sequence = 0;  // constrained/random: examples routed to the sequence loss
  std::size_t branch_token = 0;
  std::size_t generation_calls = 0;
};

struct TrainHooks {
  MetricLog* log = nullptr;
  std::function<void(const std::string&)> progress;  // one line per epoch
  // Called after every example in constrained mode with the applied branch
  // and whether the token loss was within the baseline.
  std::function<void(Branch applied, bool within_baseline)> on_constrained;
};

// Token-level phase from a fresh initialization.
PhaseResult train_token(const TrainConfig& config, std::uint64_t vocab_hash, std::size_t vocab_size,
                        const std::vector<SentencePair>& train, const std::vector<SentencePair>& valid,
                        const TrainHooks& hooks = {});

// Sequence-level phase from init. baseline is required for the constrained
// combination; cache for offline candidates (built from init when absent).
PhaseResult train_sequence(const TrainConfig& config, const Checkpoint& init, const std::vector<SentencePair>& train,
                           const std::vector<SentencePair>& valid, const Checkpoint* baseline = nullptr,
                           std::optional<CandidateCache> cache = std::nullopt, const TrainHooks& hooks = {});

}  // namespace seqlevel
