#include <cmath>
#include <numeric>

#include "doctest.h"
#include "support.hpp"

using namespace seqlevel;
using namespace seqlevel::testing;
using Eigen::VectorXd;

namespace {

VectorXd logits_for_probs(std::initializer_list<double> probs) {
  VectorXd v(static_cast<Eigen::Index>(probs.size()));
  Eigen::Index i = 0;
  for (double p : probs) v[i++] = std::log(p);
  return v;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("tok_nll") {
  const std::vector<VectorXd> logits{logits_for_probs({0.5, 0.25, 0.25}), logits_for_probs({0.25, 0.25, 0.5})};
  const std::vector<TokenId> targets{0, 1};
  const auto r = tok_nll(logits, targets);
  CHECK(r.value == doctest::Approx(std::log(2.0) + std::log(4.0)).epsilon(1e-12));
  for (const auto& g : r.token_grads) CHECK(std::abs(g.sum()) < 1e-12);
  CHECK(r.token_grads[0][0] == doctest::Approx(-0.5));

  VectorXd sure = VectorXd::Constant(4, -50.0);
  sure[2] = 50.0;
  CHECK(tok_nll(std::vector<VectorXd>{sure}, std::vector<TokenId>{2}).value < 1e-12);
  CHECK_THROWS_AS(tok_nll(std::vector<VectorXd>{sure}, std::vector<TokenId>{4}), std::out_of_range);
  CHECK_THROWS(tok_nll(std::vector<VectorXd>{}, std::vector<TokenId>{}));
}

TEST_CASE("tok_ls") {
  const std::vector<VectorXd> uniform{VectorXd::Zero(4)};
  const std::vector<TokenId> t{1};
  const auto r = tok_ls(uniform, t, 0.1);
  CHECK(r.value == doctest::Approx(0.975 * std::log(4.0)).epsilon(1e-12));
  // literal rule: q(target) = 0.9, q(other) = 0.025; gradient = 0.975 softmax - q
  CHECK(r.token_grads[0][1] == doctest::Approx(0.975 * 0.25 - 0.9).epsilon(1e-12));
  CHECK(r.token_grads[0][0] == doctest::Approx(0.975 * 0.25 - 0.025).epsilon(1e-12));

  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<VectorXd> logits{random_logits(rng, 7), random_logits(rng, 7)};
    const std::vector<TokenId> tg{static_cast<TokenId>(rng.uniform_int(7)), static_cast<TokenId>(rng.uniform_int(7))};
    const auto a = tok_ls(logits, tg, 0.0), b = tok_nll(logits, tg);
    REQUIRE(std::abs(a.value - b.value) <= 1e-12);
    for (std::size_t i = 0; i < 2; ++i) REQUIRE((a.token_grads[i] - b.token_grads[i]).cwiseAbs().maxCoeff() <= 1e-12);
  }
  CHECK_THROWS(tok_ls(uniform, t, 1.0));
}

TEST_CASE("token loss gradients match finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t V = 3 + rng.uniform_int(18), n = 1 + rng.uniform_int(10);
    std::vector<VectorXd> logits;
    std::vector<TokenId> tg;
    for (std::size_t i = 0; i < n; ++i) {
      logits.push_back(random_logits(rng, V));
      tg.push_back(static_cast<TokenId>(rng.uniform_int(V)));
    }
    const double eps = trial % 2 ? 0.1 : 0.0;
    const auto r = tok_ls(logits, tg, eps);
    auto f = [&] { return tok_ls(logits, tg, eps).value; };
    for (std::size_t i = 0; i < n; ++i)
      for (Eigen::Index v = 0; v < static_cast<Eigen::Index>(V); ++v)
        REQUIRE(rel_err(r.token_grads[i][v], central_difference(f, logits[i][v])) <= 1e-4);
  }
}

TEST_CASE("seq_nll") {
  const auto set = make_set({std::log(3.0), 0.0}, {0, 0}, {0.0, 1.0});
  const auto r = seq_nll(set);
  CHECK(r.value == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-12));
  CHECK(std::abs(sum(r.d_avg_logprob)) < 1e-12);
  CHECK(seq_nll(make_set({0.0, -60.0}, {0, 0}, {0.0, 1.0})).value < 1e-12);
  CHECK_THROWS_WITH(seq_nll(make_set({0.0}, {0.0}, {0.0})), "degenerate partition");
}

TEST_CASE("risk") {
  CHECK(risk(make_set({-1.0, -1.0}, {0, 0}, {0.2, 0.4})).value == doctest::Approx(0.3).epsilon(1e-12));
  const auto r = risk(make_set({std::log(3.0), 0.0}, {0, 0}, {0.0, 1.0}));
  CHECK(r.value == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(r.d_avg_logprob[0] == doctest::Approx(-0.1875).epsilon(1e-12));
  CHECK(r.d_avg_logprob[1] == doctest::Approx(0.1875).epsilon(1e-12));
  const auto flat = risk(make_set({-0.3, -2.0, -1.0}, {0, 0, 0}, {0.6, 0.6, 0.6}));
  CHECK(flat.value == doctest::Approx(0.6).epsilon(1e-12));
  for (double g : flat.d_avg_logprob) CHECK(std::abs(g) < 1e-15);
}

TEST_CASE("max_margin and multi_margin") {
  // u* = index 0 (cost 0.1), u-hat = index 1 (score 0.7)
  const auto set = make_set({0, 0}, {0.5, 0.7}, {0.1, 0.4});
  const auto r = max_margin(set, 1.0);
  CHECK(r.value == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.d_avg_score[0] == -1.0);
  CHECK(r.d_avg_score[1] == 1.0);
  CHECK(multi_margin(set, 1.0).value == r.value);

  const auto same = make_set({0, 0}, {0.9, 0.7}, {0.1, 0.4});
  CHECK(max_margin(same, 1.0).value == 0.0);

  const auto inactive = make_set({0, 0}, {5.0, 0.7}, {0.1, 0.4});
  CHECK(multi_margin(inactive, 1.0).value == 0.0);

  // three candidates: u* = 0; hinges 0.3 - 0.5 + 0.7 = 0.5, 0.2 - 0.5 + 0.4 = 0.1
  const auto three = make_set({0, 0, 0}, {0.5, 0.7, 0.4}, {0.1, 0.4, 0.3});
  const auto m = multi_margin(three, 1.0);
  CHECK(m.value == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(m.d_avg_score == std::vector<double>{-2.0, 1.0, 1.0});

  CHECK(multi_margin(make_set({0}, {1}, {0.5}), 1.0).value == 0.0);
  CHECK(max_margin(make_set({0}, {1}, {0.5}), 1.0).value == 0.0);
}

TEST_CASE("softmax_margin") {
  const auto r = softmax_margin(make_set({std::log(3.0), 0.0}, {0, 0}, {0.0, 1.0}));
  CHECK(r.value == doctest::Approx(std::log((3.0 + std::exp(1.0)) / 3.0)).epsilon(1e-12));
  CHECK(std::abs(sum(r.d_avg_logprob)) < 1e-12);
}

TEST_CASE("combinations") {
  LossResult tok, seq;
  tok.value = 1.0;
  tok.token_grads = {VectorXd::Ones(3)};
  seq.value = 2.0;
  seq.d_avg_logprob = {0.5, -0.5};
  seq.d_avg_score = {0.0, 0.0};
  CHECK(weighted(tok, seq, 0.3).value == doctest::Approx(1.7).epsilon(1e-12));
  CHECK(weighted(tok, seq, 1.0).value == 1.0);
  CHECK(weighted(tok, seq, 0.0).value == 2.0);
  CHECK(weighted(tok, seq, 0.3).token_grads[0][0] == doctest::Approx(0.3));
  CHECK(weighted(tok, seq, 0.3).d_avg_logprob[0] == doctest::Approx(0.35));

  CHECK(constrained(tok, 1.2, seq).branch == Branch::kSequence);
  CHECK(constrained(tok, 1.0, seq).branch == Branch::kSequence);
  tok.value = 1.3;
  CHECK(constrained(tok, 1.2, seq).branch == Branch::kToken);
  CHECK(constrained(tok, 1.2, seq).value == 1.3);
  CHECK_THROWS(constrained(tok, std::nullopt, seq));

  CHECK(random_choice(tok, seq, true).value == 2.0);
  CHECK(random_choice(tok, seq, false).branch == Branch::kToken);
}

TEST_CASE("sequence loss gradients match finite differences on the aggregates") {
  Rng rng(2024);
  const std::size_t sizes[] = {2, 5, 16};
  for (Objective o : {Objective::kSeqNll, Objective::kRisk, Objective::kMaxMargin, Objective::kMultiMargin,
                      Objective::kSoftmaxMargin}) {
    CAPTURE(objective_name(o));
    LossConfig config;
    config.beta = 0.5 + rng.uniform();
    int done = 0;
    while (done < 100) {
      const std::size_t k = sizes[done % 3];
      auto a = random_vec(rng, k, -3.0, 0.0), s = random_vec(rng, k, -2.0, 2.0);
      const auto c = random_vec(rng, k, 0.0, 1.0);
      const auto set0 = make_set(a, s, c);
      const bool hinge = o == Objective::kMaxMargin || o == Objective::kMultiMargin;
      if (hinge && kink_distance(set0, config.beta, o == Objective::kMultiMargin) < 1e-3) continue;
      const auto r = sequence_loss(o, set0, config);
      auto f = [&] { return sequence_loss(o, make_set(a, s, c), config).value; };
      for (std::size_t u = 0; u < k; ++u) {
        REQUIRE(rel_err(r.d_avg_logprob[u], central_difference(f, a[u])) <= 1e-4);
        REQUIRE(rel_err(r.d_avg_score[u], central_difference(f, s[u])) <= 1e-4);
      }
      if (o == Objective::kSeqNll || o == Objective::kRisk || o == Objective::kSoftmaxMargin)
        REQUIRE(std::abs(sum(r.d_avg_logprob)) <= 1e-9);
      ++done;
    }
  }
}

TEST_CASE("risk properties") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.uniform_int(15);
    auto a = random_vec(rng, k, -4.0, 0.0);
    auto c = random_vec(rng, k, 0.0, 1.0);
    const auto zeros = std::vector<double>(k, 0.0);
    const auto base = risk(make_set(a, zeros, c));
    REQUIRE(base.value >= *std::min_element(c.begin(), c.end()) - 1e-12);
    REQUIRE(base.value <= *std::max_element(c.begin(), c.end()) + 1e-12);

    auto shifted_a = a;
    for (auto& x : shifted_a) x += 1.7;
    REQUIRE(risk(make_set(shifted_a, zeros, c)).value == doctest::Approx(base.value).epsilon(1e-12));

    auto shifted_c = c;
    for (auto& x : shifted_c) x += 0.25;
    const auto moved = risk(make_set(a, zeros, shifted_c));
    REQUIRE(moved.value == doctest::Approx(base.value + 0.25).epsilon(1e-12));
    for (std::size_t u = 0; u < k; ++u) REQUIRE(std::abs(moved.d_avg_logprob[u] - base.d_avg_logprob[u]) <= 1e-12);
  }
}

TEST_CASE("reduction identities") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + rng.uniform_int(15);
    const auto a = random_vec(rng, k, -4.0, 0.0), s = random_vec(rng, k, -2.0, 2.0);
    const auto c = random_vec(rng, k, 0.0, 1.0);
    const auto zero_cost = make_set(a, s, std::vector<double>(k, 0.0));
    REQUIRE(std::abs(softmax_margin(zero_cost).value - seq_nll(zero_cost).value) <= 1e-12);

    const auto full = make_set(a, s, c);
    if (full.pseudo_ref != full.model_best) {
      const std::size_t keep[] = {full.model_best, full.pseudo_ref};
      std::vector<double> a2, s2, c2;
      for (std::size_t i : keep) {
        a2.push_back(a[i]);
        s2.push_back(s[i]);
        c2.push_back(c[i]);
      }
      const auto pair = make_set(a2, s2, c2);
      REQUIRE(std::abs(multi_margin(pair, 1.3).value - max_margin(pair, 1.3).value) <= 1e-12);
    }
  }
}

TEST_CASE("names round trip") {
  for (Objective o : {Objective::kTokNll, Objective::kTokLs, Objective::kSeqNll, Objective::kRisk,
                      Objective::kMaxMargin, Objective::kMultiMargin, Objective::kSoftmaxMargin})
    CHECK(parse_objective(objective_name(o)) == o);
  for (Combine c : {Combine::kNone, Combine::kWeighted, Combine::kConstrained, Combine::kRandom})
    CHECK(parse_combine(combine_name(c)) == c);
  CHECK_THROWS(parse_objective("reinforce"));
  LossConfig bad;
  bad.beta = 0.0;
  CHECK_THROWS(bad.validate());
}
