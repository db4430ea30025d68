#include "seqlevel/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace seqlevel {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

std::pair<std::size_t, std::size_t> tensor_shape(Tensor t, const ModelDims& dims) {
  const std::size_t d = dims.dim, v = dims.vocab;
  switch (t) {
    case Tensor::kSrcEmbedding:
    case Tensor::kTgtEmbedding: return {d, v};
    case Tensor::kEncoderInput:
    case Tensor::kEncoderHidden: return {3 * d, d};
    case Tensor::kEncoderBias: return {3 * d, 1};
    case Tensor::kDecoderInput: return {3 * d, 2 * d};
    case Tensor::kDecoderHidden: return {3 * d, d};
    case Tensor::kDecoderBias: return {3 * d, 1};
    case Tensor::kAttention: return {d, d};
    case Tensor::kCombine: return {d, 2 * d};
    case Tensor::kCombineBias: return {d, 1};
    case Tensor::kOutput: return {v, d};
    case Tensor::kOutputBias: return {v, 1};
    case Tensor::kCount: break;
  }
  throw std::logic_error("bad tensor");
}

VectorXd sigmoid(const VectorXd& x) { return (1.0 + (-x.array()).exp()).inverse().matrix(); }

void gru_forward(const ParamVector::ConstMatrixMap& W, const ParamVector::ConstMatrixMap& U,
                 const ParamVector::ConstMatrixMap& b, const VectorXd& x, const VectorXd& h_prev,
                 detail::GruRecord& rec) {
  const Index d = h_prev.size();
  const VectorXd a = W * x + b.col(0);
  const VectorXd uh = U * h_prev;
  rec.x = x;
  rec.h_prev = h_prev;
  rec.r = sigmoid(a.segment(0, d) + uh.segment(0, d));
  rec.z = sigmoid(a.segment(d, d) + uh.segment(d, d));
  rec.un = uh.segment(2 * d, d);
  rec.n = (a.segment(2 * d, d) + rec.r.cwiseProduct(rec.un)).array().tanh().matrix();
  rec.h = (1.0 - rec.z.array()).matrix().cwiseProduct(rec.n) + rec.z.cwiseProduct(h_prev);
}

// Returns dL/dh_prev; writes dL/dx.
VectorXd gru_backward(const ParamVector::ConstMatrixMap& W, const ParamVector::ConstMatrixMap& U,
                      const detail::GruRecord& rec, const VectorXd& dh, ParamVector::MatrixMap dW,
                      ParamVector::MatrixMap dU, ParamVector::MatrixMap db, VectorXd& dx) {
  const Index d = dh.size();
  const VectorXd dn = dh.cwiseProduct((1.0 - rec.z.array()).matrix());
  const VectorXd dz = dh.cwiseProduct(rec.h_prev - rec.n);
  const VectorXd dn_pre = dn.cwiseProduct((1.0 - rec.n.array().square()).matrix());
  const VectorXd dr = dn_pre.cwiseProduct(rec.un);

  VectorXd da(3 * d), du(3 * d);
  da.segment(0, d) = dr.cwiseProduct((rec.r.array() * (1.0 - rec.r.array())).matrix());
  da.segment(d, d) = dz.cwiseProduct((rec.z.array() * (1.0 - rec.z.array())).matrix());
  da.segment(2 * d, d) = dn_pre;
  du.segment(0, 2 * d) = da.segment(0, 2 * d);
  du.segment(2 * d, d) = dn_pre.cwiseProduct(rec.r);

  dW.noalias() += da * rec.x.transpose();
  db.col(0) += da;
  dU.noalias() += du * rec.h_prev.transpose();
  dx = W.transpose() * da;
  VectorXd dh_prev = dh.cwiseProduct(rec.z);
  dh_prev.noalias() += U.transpose() * du;
  return dh_prev;
}

VectorXd dropout_mask(Index size, const Dropout& dropout) {
  VectorXd mask(size);
  const double keep = 1.0 - dropout.rate;
  for (Index i = 0; i < size; ++i) mask[i] = dropout.rng->uniform() < keep ? 1.0 / keep : 0.0;
  return mask;
}

// One decoder step shared by search (untraced callers) and teacher forcing.
void step_forward(const Params& p, TokenId prev, const VectorXd& hidden, const VectorXd& feed_prev,
                  const EncoderStates& enc, const Dropout& dropout, detail::StepRecord& rec) {
  const Index d = static_cast<Index>(p.dims().dim);
  if (prev < 0 || static_cast<std::size_t>(prev) >= p.dims().vocab)
    throw std::out_of_range("invalid id " + std::to_string(prev));
  rec.prev = prev;
  VectorXd g = p.mat(Tensor::kTgtEmbedding).col(prev);
  if (dropout.active()) {
    rec.emb_mask = dropout_mask(d, dropout);
    g = g.cwiseProduct(rec.emb_mask);
  }
  rec.input.resize(2 * d);
  rec.input << g, feed_prev;
  gru_forward(p.mat(Tensor::kDecoderInput), p.mat(Tensor::kDecoderHidden), p.mat(Tensor::kDecoderBias), rec.input,
              hidden, rec.gru);
  const VectorXd& h = rec.gru.h;

  VectorXd scores = enc.keys.transpose() * h;
  scores.array() -= scores.maxCoeff();
  rec.attention = scores.array().exp().matrix();
  rec.attention /= rec.attention.sum();
  rec.context = enc.states * rec.attention;

  VectorXd cat(2 * d);
  cat << rec.context, h;
  rec.feed = (p.mat(Tensor::kCombine) * cat + p.mat(Tensor::kCombineBias).col(0)).array().tanh().matrix();
  VectorXd out = rec.feed;
  if (dropout.active()) {
    rec.feed_mask = dropout_mask(d, dropout);
    out = out.cwiseProduct(rec.feed_mask);
  }
  rec.log_probs = p.mat(Tensor::kOutput) * out + p.mat(Tensor::kOutputBias).col(0);  // logits for now
}

}  // namespace

std::string_view tensor_name(Tensor t) {
  static constexpr std::array<std::string_view, kNumTensors> kNames = {
      "src_embedding", "tgt_embedding", "encoder_input", "encoder_hidden", "encoder_bias",
      "decoder_input", "decoder_hidden", "decoder_bias", "attention",      "combine",
      "combine_bias",  "output",        "output_bias"};
  return kNames.at(static_cast<std::size_t>(t));
}

ParamVector::ParamVector(ModelDims dims) : dims_(dims) {
  if (dims.vocab == 0 || dims.dim == 0) throw std::invalid_argument("model dims must be positive");
  offsets_[0] = 0;
  for (std::size_t t = 0; t < kNumTensors; ++t) {
    auto [r, c] = tensor_shape(static_cast<Tensor>(t), dims_);
    offsets_[t + 1] = offsets_[t] + r * c;
  }
  data_.assign(offsets_[kNumTensors], 0.0);
}

std::pair<std::size_t, std::size_t> ParamVector::shape(Tensor t) const { return tensor_shape(t, dims_); }

ParamVector::MatrixMap ParamVector::mat(Tensor t) {
  auto [r, c] = shape(t);
  return MatrixMap(data_.data() + offset(t), static_cast<Index>(r), static_cast<Index>(c));
}

ParamVector::ConstMatrixMap ParamVector::mat(Tensor t) const {
  auto [r, c] = shape(t);
  return ConstMatrixMap(data_.data() + offset(t), static_cast<Index>(r), static_cast<Index>(c));
}

void ParamVector::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

double ParamVector::squared_norm() const {
  return std::accumulate(data_.begin(), data_.end(), 0.0, [](double acc, double x) { return acc + x * x; });
}

bool ParamVector::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

ParamVector ParamVector::random(ModelDims dims, std::uint64_t seed) {
  ParamVector p(dims);
  Rng rng(seed);
  for (std::size_t t = 0; t < kNumTensors; ++t) {
    const auto tensor = static_cast<Tensor>(t);
    auto [rows, cols] = p.shape(tensor);
    if (cols == 1) continue;  // biases stay zero
    double fan_in = static_cast<double>(cols);
    if (tensor == Tensor::kSrcEmbedding || tensor == Tensor::kTgtEmbedding) fan_in = static_cast<double>(rows);
    const double scale = 1.0 / std::sqrt(fan_in);
    for (std::size_t i = p.offset(tensor); i < p.offset(tensor) + rows * cols; ++i)
      p.data_[i] = (2.0 * rng.uniform() - 1.0) * scale;
  }
  return p;
}

void ScoredCandidate::finalize() {
  const auto n = static_cast<double>(tokens.size());
  avg_score = std::accumulate(tok_scores.begin(), tok_scores.end(), 0.0) / n;
  avg_logprob = std::accumulate(tok_logprobs.begin(), tok_logprobs.end(), 0.0) / n;
}

VectorXd log_softmax(const VectorXd& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

EncoderStates encode(const Params& params, std::span<const TokenId> source) {
  ForwardPass pass(params, source);
  return pass.encoder();
}

DecoderState initial_state(const Params& params, const EncoderStates& enc) {
  const auto d = static_cast<Index>(params.dims().dim);
  return DecoderState{enc.states.col(enc.states.cols() - 1), VectorXd::Zero(d), VectorXd()};
}

StepOutput decoder_step(const Params& params, const DecoderState& state, TokenId prev_id, const EncoderStates& enc) {
  detail::StepRecord rec;
  step_forward(params, prev_id, state.hidden, state.feed, enc, Dropout{}, rec);
  return StepOutput{std::move(rec.log_probs), DecoderState{std::move(rec.gru.h), std::move(rec.feed),
                                                           std::move(rec.attention)}};
}

ForwardPass::ForwardPass(const Params& params, std::span<const TokenId> source, Dropout dropout)
    : params_(params), dropout_(dropout), source_(source.begin(), source.end()) {
  if (source_.empty()) throw std::invalid_argument("empty source sequence");
  const auto d = static_cast<Index>(params.dims().dim);
  const auto m = static_cast<Index>(source_.size());
  enc_.states.resize(d, m);
  enc_records_.resize(source_.size());
  if (dropout_.active()) src_masks_.resize(source_.size());

  VectorXd h = VectorXd::Zero(d);
  for (Index j = 0; j < m; ++j) {
    const TokenId id = source_[j];
    if (id < 0 || static_cast<std::size_t>(id) >= params.dims().vocab)
      throw std::out_of_range("invalid id " + std::to_string(id));
    VectorXd x = params.mat(Tensor::kSrcEmbedding).col(id);
    if (dropout_.active()) {
      src_masks_[j] = dropout_mask(d, dropout_);
      x = x.cwiseProduct(src_masks_[j]);
    }
    gru_forward(params.mat(Tensor::kEncoderInput), params.mat(Tensor::kEncoderHidden),
                params.mat(Tensor::kEncoderBias), x, h, enc_records_[j]);
    h = enc_records_[j].h;
    enc_.states.col(j) = h;
  }
  enc_.keys = params.mat(Tensor::kAttention) * enc_.states;
}

std::size_t ForwardPass::add(std::span<const TokenId> u) {
  if (u.empty() || u.back() != kEos) throw std::invalid_argument("candidate must be eos-terminated");
  if (u.size() > kMaxGenerationLength)
    throw std::invalid_argument("candidate longer than " + std::to_string(kMaxGenerationLength) + " tokens");

  Candidate cand;
  cand.scored.tokens.assign(u.begin(), u.end());
  cand.steps.resize(u.size());
  DecoderState state = initial_state(params_, enc_);
  TokenId prev = kBos;
  for (std::size_t i = 0; i < u.size(); ++i) {
    auto& rec = cand.steps[i];
    step_forward(params_, prev, state.hidden, state.feed, enc_, dropout_, rec);
    const TokenId tok = u[i];
    if (tok < 0 || static_cast<std::size_t>(tok) >= params_.dims().vocab)
      throw std::out_of_range("invalid id " + std::to_string(tok));
    const double selected = rec.log_probs[tok];
    rec.log_probs = log_softmax(rec.log_probs);
    cand.scored.tok_scores.push_back(selected);
    cand.scored.tok_logprobs.push_back(rec.log_probs[tok]);
    state.hidden = rec.gru.h;
    state.feed = rec.feed;
    prev = tok;
  }
  cand.scored.finalize();
  candidates_.push_back(std::move(cand));
  return candidates_.size() - 1;
}

const VectorXd& ForwardPass::step_log_probs(std::size_t i, std::size_t step) const {
  return candidates_.at(i).steps.at(step).log_probs;
}

void ForwardPass::backward(const std::vector<std::vector<VectorXd>>& dlogits, Gradients& grads) const {
  if (dlogits.size() != candidates_.size())
    throw std::invalid_argument("backward: expected coefficients for " + std::to_string(candidates_.size()) +
                                " candidates, got " + std::to_string(dlogits.size()));
  if (!(grads.dims() == params_.dims())) throw std::invalid_argument("backward: gradient shape mismatch");

  const auto& p = params_;
  const auto d = static_cast<Index>(p.dims().dim);
  const auto m = static_cast<Index>(source_.size());
  const auto V = static_cast<Index>(p.dims().vocab);
  MatrixXd dstates = MatrixXd::Zero(d, m);
  MatrixXd dkeys = MatrixXd::Zero(d, m);
  bool any = false;

  auto dOut = grads.mat(Tensor::kOutput);
  auto dOutB = grads.mat(Tensor::kOutputBias);
  auto dComb = grads.mat(Tensor::kCombine);
  auto dCombB = grads.mat(Tensor::kCombineBias);
  auto dTgt = grads.mat(Tensor::kTgtEmbedding);
  const auto Wo = p.mat(Tensor::kOutput);
  const auto Wc = p.mat(Tensor::kCombine);

  for (std::size_t c = 0; c < candidates_.size(); ++c) {
    const auto& coeffs = dlogits[c];
    if (coeffs.empty()) continue;
    const auto& steps = candidates_[c].steps;
    if (coeffs.size() != steps.size())
      throw std::invalid_argument("backward: candidate " + std::to_string(c) + " has " +
                                  std::to_string(steps.size()) + " steps but " + std::to_string(coeffs.size()) +
                                  " coefficient vectors");
    any = true;
    VectorXd dh_next = VectorXd::Zero(d);
    VectorXd dfeed_next = VectorXd::Zero(d);
    for (std::size_t i = steps.size(); i-- > 0;) {
      const auto& rec = steps[i];
      const VectorXd& dl = coeffs[i];
      if (dl.size() != V) throw std::invalid_argument("backward: logit gradient has wrong size");

      VectorXd out = rec.feed;
      if (rec.feed_mask.size() > 0) out = out.cwiseProduct(rec.feed_mask);
      dOut.noalias() += dl * out.transpose();
      dOutB.col(0) += dl;
      VectorXd dfeed = Wo.transpose() * dl;
      if (rec.feed_mask.size() > 0) dfeed = dfeed.cwiseProduct(rec.feed_mask);
      dfeed += dfeed_next;

      const VectorXd dpre = dfeed.cwiseProduct((1.0 - rec.feed.array().square()).matrix());
      VectorXd cat(2 * d);
      cat << rec.context, rec.gru.h;
      dComb.noalias() += dpre * cat.transpose();
      dCombB.col(0) += dpre;
      const VectorXd dcat = Wc.transpose() * dpre;
      const VectorXd dcontext = dcat.segment(0, d);
      VectorXd dh = dcat.segment(d, d) + dh_next;

      const VectorXd dalpha = enc_.states.transpose() * dcontext;
      dstates.noalias() += dcontext * rec.attention.transpose();
      const VectorXd dscores =
          rec.attention.cwiseProduct((dalpha.array() - rec.attention.dot(dalpha)).matrix());
      dkeys.noalias() += rec.gru.h * dscores.transpose();
      dh.noalias() += enc_.keys * dscores;

      VectorXd dinput;
      dh_next = gru_backward(p.mat(Tensor::kDecoderInput), p.mat(Tensor::kDecoderHidden), rec.gru, dh,
                             grads.mat(Tensor::kDecoderInput), grads.mat(Tensor::kDecoderHidden),
                             grads.mat(Tensor::kDecoderBias), dinput);
      VectorXd demb = dinput.segment(0, d);
      if (rec.emb_mask.size() > 0) demb = demb.cwiseProduct(rec.emb_mask);
      dTgt.col(rec.prev) += demb;
      dfeed_next = dinput.segment(d, d);
    }
    // h_0 is the last encoder state; the initial feed is a constant zero.
    dstates.col(m - 1) += dh_next;
  }
  if (!any) return;

  // keys = W_a * states
  grads.mat(Tensor::kAttention).noalias() += dkeys * enc_.states.transpose();
  dstates.noalias() += p.mat(Tensor::kAttention).transpose() * dkeys;

  auto dSrc = grads.mat(Tensor::kSrcEmbedding);
  VectorXd carry = VectorXd::Zero(d);
  for (Index j = m; j-- > 0;) {
    const VectorXd dz = dstates.col(j) + carry;
    VectorXd dx;
    carry = gru_backward(p.mat(Tensor::kEncoderInput), p.mat(Tensor::kEncoderHidden), enc_records_[j], dz,
                         grads.mat(Tensor::kEncoderInput), grads.mat(Tensor::kEncoderHidden),
                         grads.mat(Tensor::kEncoderBias), dx);
    if (!src_masks_.empty()) dx = dx.cwiseProduct(src_masks_[j]);
    dSrc.col(source_[j]) += dx;
  }
}

ScoredCandidate score_sequence(const Params& params, std::span<const TokenId> source, std::span<const TokenId> u) {
  ForwardPass pass(params, source);
  pass.add(u);
  return pass.scored(0);
}

VectorXd aggregate_to_logit_grad(const VectorXd& log_probs, TokenId token, double d_avg_logprob, double d_avg_score,
                                 std::size_t length) {
  const double inv_n = 1.0 / static_cast<double>(length);
  VectorXd g = (-d_avg_logprob * inv_n) * log_probs.array().exp().matrix();
  g[token] += (d_avg_logprob + d_avg_score) * inv_n;
  return g;
}

}  // namespace seqlevel
