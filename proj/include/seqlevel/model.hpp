#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "seqlevel/corpus.hpp"
#include "seqlevel/rng.hpp"

namespace seqlevel {

// Candidates never exceed this many tokens (eos included).
inline constexpr std::size_t kMaxGenerationLength = 200;

struct ModelDims {
  std::size_t vocab = 0;
  std::size_t dim = 0;

  bool operator==(const ModelDims&) const = default;
};

enum class Tensor : int {
  kSrcEmbedding,   // d x V, column per token
  kTgtEmbedding,   // d x V
  kEncoderInput,   // 3d x d   GRU input weights, gates stacked [reset; update; candidate]
  kEncoderHidden,  // 3d x d
  kEncoderBias,    // 3d
  kDecoderInput,   // 3d x 2d  input is [previous embedding; previous attentional state]
  kDecoderHidden,  // 3d x d
  kDecoderBias,    // 3d
  kAttention,      // d x d    score_j = h . (W_a z_j)
  kCombine,        // d x 2d   attentional state = tanh(W_c [context; h] + b_c)
  kCombineBias,    // d
  kOutput,         // V x d    logits = W_o state + b_o
  kOutputBias,     // V
  kCount
};

inline constexpr std::size_t kNumTensors = static_cast<std::size_t>(Tensor::kCount);

std::string_view tensor_name(Tensor t);

// All model parameters in one flat, contiguous buffer. Gradients and
// optimizer state use the same type and layout.
class ParamVector {
 public:
  using MatrixMap = Eigen::Map<Eigen::MatrixXd>;
  using ConstMatrixMap = Eigen::Map<const Eigen::MatrixXd>;

  ParamVector() = default;
  explicit ParamVector(ModelDims dims);

  const ModelDims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }

  MatrixMap mat(Tensor t);
  ConstMatrixMap mat(Tensor t) const;
  std::pair<std::size_t, std::size_t> shape(Tensor t) const;
  std::size_t offset(Tensor t) const { return offsets_[static_cast<std::size_t>(t)]; }

  void set_zero();
  double squared_norm() const;
  bool all_finite() const;

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  static ParamVector random(ModelDims dims, std::uint64_t seed);

  bool operator==(const ParamVector& other) const { return dims_ == other.dims_ && data_ == other.data_; }

 private:
  ModelDims dims_;
  std::vector<double> data_;
  std::array<std::size_t, kNumTensors + 1> offsets_{};
};

using Params = ParamVector;
using Gradients = ParamVector;

struct ScoredCandidate {
  TokenSeq tokens;                    // eos-terminated
  std::vector<double> tok_scores;     // selected unnormalized logits
  std::vector<double> tok_logprobs;   // log-softmax of the selected token
  double avg_score = 0.0;             // s(u|x), length-normalized
  double avg_logprob = 0.0;           // a(u|x), length-normalized
  double metric = 0.0;
  double cost = 0.0;

  // Fills the aggregates from the per-token fields.
  void finalize();
};

struct EncoderStates {
  Eigen::MatrixXd states;  // d x m
  Eigen::MatrixXd keys;    // d x m, W_a z_j

  std::size_t length() const { return static_cast<std::size_t>(states.cols()); }
};

struct DecoderState {
  Eigen::VectorXd hidden;     // h_i
  Eigen::VectorXd feed;       // attentional state fed to the next step
  Eigen::VectorXd attention;  // weights over source positions
};

struct StepOutput {
  Eigen::VectorXd logits;
  DecoderState next;
};

EncoderStates encode(const Params& params, std::span<const TokenId> source);
DecoderState initial_state(const Params& params, const EncoderStates& enc);
StepOutput decoder_step(const Params& params, const DecoderState& state, TokenId prev_id,
                        const EncoderStates& enc);

// log-softmax of a logit vector, max-shifted.
Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits);

struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;

  bool active() const { return rate > 0.0 && rng != nullptr; }
};

namespace detail {
struct GruRecord {
  Eigen::VectorXd x, h_prev, r, z, n, un, h;
};
struct StepRecord {
  TokenId prev = kBos;
  Eigen::VectorXd emb_mask;   // empty when no dropout
  Eigen::VectorXd input;      // [embedding; previous feed]
  GruRecord gru;
  Eigen::VectorXd attention;
  Eigen::VectorXd context;
  Eigen::VectorXd feed;       // pre-dropout
  Eigen::VectorXd feed_mask;  // empty when no dropout
  Eigen::VectorXd log_probs;
};
}  // namespace detail

// Teacher-forced forward pass over one source and any number of candidate
// target sequences, recording what backward() needs. The encoder is run once
// and shared by all candidates.
class ForwardPass {
 public:
  ForwardPass(const Params& params, std::span<const TokenId> source, Dropout dropout = {});

  // Scores u (must be eos-terminated, at most kMaxGenerationLength tokens).
  std::size_t add(std::span<const TokenId> u);

  std::size_t num_candidates() const { return candidates_.size(); }
  const ScoredCandidate& scored(std::size_t i) const { return candidates_[i].scored; }
  ScoredCandidate& scored(std::size_t i) { return candidates_[i].scored; }
  // log-softmax vector at every step of candidate i.
  const Eigen::VectorXd& step_log_probs(std::size_t i, std::size_t step) const;
  const EncoderStates& encoder() const { return enc_; }

  // dlogits[c][i] is dL/dlogits at step i of candidate c; an empty inner
  // vector skips the candidate. Accumulates into grads.
  void backward(const std::vector<std::vector<Eigen::VectorXd>>& dlogits, Gradients& grads) const;

 private:
  struct Candidate {
    ScoredCandidate scored;
    std::vector<detail::StepRecord> steps;
  };

  const Params& params_;
  Dropout dropout_;
  TokenSeq source_;
  std::vector<detail::GruRecord> enc_records_;
  std::vector<Eigen::VectorXd> src_masks_;
  EncoderStates enc_;
  std::vector<Candidate> candidates_;
};

// Convenience wrapper: teacher-forced scoring of a single candidate.
ScoredCandidate score_sequence(const Params& params, std::span<const TokenId> source,
                               std::span<const TokenId> u);

// dL/dlogits for one step when L depends on the candidate through
// a(u) and s(u): (d_avg_logprob/n)(onehot - softmax) + (d_avg_score/n) onehot.
Eigen::VectorXd aggregate_to_logit_grad(const Eigen::VectorXd& log_probs, TokenId token, double d_avg_logprob,
                                        double d_avg_score, std::size_t length);

}  // namespace seqlevel
