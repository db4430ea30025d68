#include <cmath>

#include "doctest.h"
#include "seqlevel/gradcheck.hpp"
#include "support.hpp"

using namespace seqlevel;
using namespace seqlevel::testing;
using Eigen::VectorXd;

namespace {

const ModelDims kTiny{12, 6};

TokenSeq random_seq(Rng& rng, std::size_t vocab, std::size_t max_len) {
  TokenSeq s(1 + rng.uniform_int(max_len));
  for (auto& t : s) t = static_cast<TokenId>(kNumReserved + rng.uniform_int(vocab - kNumReserved));
  s.push_back(kEos);
  return s;
}

// Copies of ref with a few random substitutions, so candidate costs differ.
std::vector<TokenSeq> mutations(Rng& rng, const TokenSeq& ref, std::size_t vocab, std::size_t k) {
  std::vector<TokenSeq> out;
  for (std::size_t j = 0; j < k; ++j) {
    TokenSeq u = ref;
    const auto edits = rng.uniform_int(3);
    for (std::size_t e = 0; e < edits; ++e)
      u[rng.uniform_int(u.size() - 1)] = static_cast<TokenId>(kNumReserved + rng.uniform_int(vocab - kNumReserved));
    if (rng.uniform() < 0.3) u.insert(u.begin(), static_cast<TokenId>(kNumReserved + rng.uniform_int(vocab - kNumReserved)));
    out.push_back(u);
  }
  return out;
}

bool accurate(const GradCheckReport& r) {
  return r.max_resolved_rel_error <= 1e-4 && r.max_abs_error <= 1e-9 && r.resolved >= 100;
}

}  // namespace

TEST_CASE("parameter layout") {
  Params p(kTiny);
  const std::size_t d = 6, V = 12;
  const std::size_t expected = 2 * d * V + 2 * (3 * d * d + 3 * d * d + 3 * d) + 3 * d * d + d * d + 2 * d * d + d +
                               V * d + V;
  CHECK(p.size() == expected);
  CHECK(p.shape(Tensor::kOutput) == std::pair<std::size_t, std::size_t>{V, d});
  CHECK(p.shape(Tensor::kDecoderInput) == std::pair<std::size_t, std::size_t>{3 * d, 2 * d});
  p.mat(Tensor::kOutputBias)(3, 0) = 2.5;
  CHECK(p.flat()[p.offset(Tensor::kOutputBias) + 3] == 2.5);
  const auto r = Params::random(kTiny, 3);
  CHECK(r == Params::random(kTiny, 3));
  CHECK_FALSE(r == Params::random(kTiny, 4));
  CHECK(r.all_finite());
  CHECK(r.mat(Tensor::kEncoderBias).squaredNorm() == 0.0);
}

TEST_CASE("encoder") {
  const auto p = Params::random(kTiny, 1);
  const TokenSeq x{4, 5, 6};
  const auto e1 = encode(p, x);
  CHECK(e1.length() == 3);
  CHECK(e1.states == encode(p, x).states);
  const TokenSeq rev{6, 5, 4};
  CHECK((encode(p, rev).states.col(2) - e1.states.col(2)).norm() > 1e-6);
  CHECK(encode(p, TokenSeq{7}).length() == 1);
  CHECK_THROWS(encode(p, TokenSeq{}));
  CHECK_THROWS(encode(p, TokenSeq{4, 12}));
}

TEST_CASE("decoder step normalization") {
  const auto p = Params::random(kTiny, 2);
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const auto x = random_seq(rng, 12, 8);
    const auto enc = encode(p, x);
    auto state = initial_state(p, enc);
    for (TokenId prev : {kBos, TokenId{5}, TokenId{7}}) {
      const auto out = decoder_step(p, state, prev, enc);
      REQUIRE(out.logits.allFinite());
      REQUIRE(std::abs(out.next.attention.sum() - 1.0) <= 1e-6);
      REQUIRE(out.next.attention.minCoeff() >= 0.0);
      const VectorXd lp = log_softmax(out.logits);
      REQUIRE(std::abs(lp.array().exp().sum() - 1.0) <= 1e-6);
      const VectorXd shift = out.logits - lp;
      REQUIRE(shift.maxCoeff() - shift.minCoeff() <= 1e-9);
      state = out.next;
    }
  }
  const auto enc1 = encode(p, TokenSeq{4});
  CHECK(decoder_step(p, initial_state(p, enc1), kBos, enc1).next.attention[0] == 1.0);
}

TEST_CASE("score_sequence") {
  Params p = Params::random(ModelDims{4, 5}, 7);
  p.mat(Tensor::kOutput).setZero();
  p.mat(Tensor::kOutputBias).setZero();
  const auto c = score_sequence(p, TokenSeq{3, kEos}, TokenSeq{3, kEos});
  for (double lp : c.tok_logprobs) CHECK(lp == doctest::Approx(-std::log(4.0)).epsilon(1e-12));
  CHECK(c.avg_logprob == doctest::Approx(-std::log(4.0)).epsilon(1e-12));

  const auto q = Params::random(kTiny, 8);
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    const auto x = random_seq(rng, 12, 6), u = random_seq(rng, 12, 9);
    const auto s = score_sequence(q, x, u);
    double mean_lp = 0.0, mean_sc = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      mean_lp += s.tok_logprobs[i];
      mean_sc += s.tok_scores[i];
      REQUIRE(s.tok_logprobs[i] <= 0.0);
    }
    REQUIRE(std::abs(s.avg_logprob - mean_lp / static_cast<double>(u.size())) <= 1e-9);
    REQUIRE(std::abs(s.avg_score - mean_sc / static_cast<double>(u.size())) <= 1e-9);
    REQUIRE(std::exp(s.avg_logprob) > 0.0);
    REQUIRE(std::exp(s.avg_logprob) <= 1.0);
  }
  CHECK_THROWS(score_sequence(q, TokenSeq{4, kEos}, TokenSeq{4, 5}));
  CHECK_THROWS(score_sequence(q, TokenSeq{4, kEos}, TokenSeq(kMaxGenerationLength + 1, 4)));
}

TEST_CASE("backward linearity and zero upstream") {
  const auto p = Params::random(kTiny, 5);
  const TokenSeq x{4, 5, 6, kEos}, u{7, 8, kEos};
  ForwardPass pass(p, x);
  pass.add(u);
  Rng rng(3);
  std::vector<std::vector<VectorXd>> d(1), d2(1), zero(1);
  for (std::size_t i = 0; i < u.size(); ++i) {
    d[0].push_back(random_logits(rng, 12));
    d2[0].push_back(2.0 * d[0].back());
    zero[0].push_back(VectorXd::Zero(12));
  }
  Gradients g1(kTiny), g2(kTiny), g0(kTiny);
  pass.backward(d, g1);
  pass.backward(d2, g2);
  pass.backward(zero, g0);
  CHECK(g0.squared_norm() == 0.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i) worst = std::max(worst, std::abs(2.0 * g1.flat()[i] - g2.flat()[i]));
  CHECK(worst <= 1e-12);

  std::vector<std::vector<VectorXd>> bad(1);
  bad[0].push_back(VectorXd::Zero(12));
  CHECK_THROWS(pass.backward(bad, g1));
}

TEST_CASE("one-step token loss gradient reaches the output layer exactly") {
  const auto p = Params::random(kTiny, 6);
  const TokenSeq x{4, kEos}, u{kEos};
  ForwardPass pass(p, x);
  pass.add(u);
  const VectorXd probs = pass.step_log_probs(0, 0).array().exp();
  VectorXd d = probs;
  d[kEos] -= 1.0;
  Gradients g(kTiny);
  pass.backward({{d}}, g);
  // dL/db_o = softmax - onehot
  const auto gb = g.mat(Tensor::kOutputBias);
  for (Eigen::Index v = 0; v < 12; ++v) CHECK(gb(v, 0) == doctest::Approx(d[v]).epsilon(1e-12));
}

TEST_CASE("full-parameter gradient checks") {
  const auto p = Params::random(kTiny, 21);
  Rng rng(17);
  GradCheckOptions opts;
  opts.min_samples = 200;

  for (Objective o : {Objective::kTokNll, Objective::kTokLs, Objective::kSeqNll, Objective::kRisk,
                      Objective::kMaxMargin, Objective::kMultiMargin, Objective::kSoftmaxMargin}) {
    CAPTURE(objective_name(o));
    int checked = 0;
    for (int attempt = 0; checked < 2 && attempt < 50; ++attempt) {
      SentencePair pair{random_seq(rng, 12, 6), random_seq(rng, 12, 6)};
      const auto cands = mutations(rng, pair.target, 12, 3);
      ObjectiveSpec spec;
      spec.objective = o;
      ExampleContext ctx;
      ctx.candidates = &cands;
      const auto probe = example_loss(p, pair, spec, ctx, nullptr);
      if (probe.skipped) continue;
      if (probe.set) {
        const auto& m = probe.set->members;
        if (std::all_of(m.begin(), m.end(), [&](const auto& c) { return c.cost == m[0].cost; })) continue;
      }
      if (o == Objective::kMaxMargin || o == Objective::kMultiMargin) {
        if (probe.value <= 0.0 || kink_distance(*probe.set, 1.0, o == Objective::kMultiMargin) < 1e-3) continue;
      }
      opts.seed = static_cast<std::uint64_t>(attempt);
      const auto report = grad_check(p, pair, spec, ctx, opts);
      CHECK(report.checked == 200);
      CHECK(report.max_resolved_rel_error <= 1e-4);
      CHECK(report.resolved >= 100);
      CHECK(report.max_abs_error <= 1e-9);
      ++checked;
    }
    CHECK(checked == 2);
  }
}

TEST_CASE("combined objectives gradient checks") {
  const auto p = Params::random(kTiny, 22);
  Rng rng(18);
  SentencePair pair{random_seq(rng, 12, 5), random_seq(rng, 12, 5)};
  const auto cands = mutations(rng, pair.target, 12, 4);
  ObjectiveSpec spec;
  spec.objective = Objective::kRisk;
  ExampleContext ctx;
  ctx.candidates = &cands;
  ctx.token_scale = 1.0 / 6.0;
  ctx.sequence_scale = 0.5;

  spec.combine = Combine::kWeighted;
  CHECK(accurate(grad_check(p, pair, spec, ctx)));

  spec.combine = Combine::kConstrained;
  const double tok = reference_token_loss(p, pair, Objective::kTokLs, spec.loss);
  for (double baseline : {tok + 1.0, tok - 1.0}) {
    ctx.baseline_token_loss = baseline;
    const auto out = example_loss(p, pair, spec, ctx, nullptr);
    CHECK(out.branch == (baseline >= tok ? Branch::kSequence : Branch::kToken));
    CHECK(accurate(grad_check(p, pair, spec, ctx)));
  }
  ctx.baseline_token_loss.reset();
  CHECK_THROWS(example_loss(p, pair, spec, ctx, nullptr));
}

TEST_CASE("weighted with alpha one matches the token loss gradient") {
  const auto p = Params::random(kTiny, 23);
  Rng rng(19);
  SentencePair pair{random_seq(rng, 12, 5), random_seq(rng, 12, 5)};
  std::vector<TokenSeq> cands{random_seq(rng, 12, 5), random_seq(rng, 12, 5)};
  ObjectiveSpec weighted_spec;
  weighted_spec.combine = Combine::kWeighted;
  weighted_spec.loss.alpha = 1.0;
  ObjectiveSpec token_spec;
  token_spec.objective = Objective::kTokLs;
  ExampleContext ctx;
  ctx.candidates = &cands;
  Gradients gw(kTiny), gt(kTiny);
  const auto w = example_loss(p, pair, weighted_spec, ctx, &gw);
  const auto t = example_loss(p, pair, token_spec, ctx, &gt);
  CHECK(w.value == t.value);
  CHECK(gw == gt);
}

TEST_CASE("dropout masks are reproducible and change the loss") {
  const auto p = Params::random(kTiny, 24);
  const SentencePair pair{{4, 5, 6, kEos}, {4, 5, 6, kEos}};
  ObjectiveSpec spec;
  spec.objective = Objective::kTokNll;
  Rng r1(5), r2(5);
  ExampleContext c1, c2, plain;
  c1.dropout = Dropout{0.3, &r1};
  c2.dropout = Dropout{0.3, &r2};
  const double a = example_loss(p, pair, spec, c1, nullptr).value;
  CHECK(a == example_loss(p, pair, spec, c2, nullptr).value);
  CHECK(a != example_loss(p, pair, spec, plain, nullptr).value);
  CHECK_THROWS(grad_check(p, pair, spec, c1));
}
