#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "seqlevel/metrics.hpp"
#include "seqlevel/rng.hpp"

using namespace seqlevel;

namespace {

struct Fixture {
  std::string ref, hyp, metric;
  double expected;
};

std::vector<Fixture> load_fixtures() {
  std::ifstream in(std::string(SEQLEVEL_TEST_DATA) + "/metric_fixtures.tsv");
  REQUIRE(in.good());
  std::vector<Fixture> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::istringstream row(line);
    Fixture f;
    std::string value;
    std::getline(row, f.ref, '\t');
    std::getline(row, f.hyp, '\t');
    std::getline(row, f.metric, '\t');
    std::getline(row, value, '\t');
    f.expected = std::stod(value);
    out.push_back(f);
  }
  return out;
}

double score_strings(const std::string& ref, const std::string& hyp, MetricKind kind) {
  TokenInterner interner;
  const auto r = interner.intern(ref);
  const auto h = interner.intern(hyp);
  return metric_score(r, h, kind);
}

}  // namespace

TEST_CASE("golden fixtures") {
  const auto fixtures = load_fixtures();
  REQUIRE(fixtures.size() >= 20);
  for (const auto& f : fixtures) {
    CAPTURE(f.ref);
    CAPTURE(f.hyp);
    CAPTURE(f.metric);
    CHECK(std::abs(score_strings(f.ref, f.hyp, parse_metric(f.metric)) - f.expected) <= 1e-6);
  }
}

TEST_CASE("sentence BLEU worked example") {
  // matches 4/5 unigrams, 2/4 bigrams, 1/3 trigrams, 0/2 4-grams; smoothed 4/5, 3/5, 2/4, 1/3
  const double expected = std::pow(0.8 * 0.6 * 0.5 * (1.0 / 3.0), 0.25);
  CHECK(score_strings("a b c d e", "a b c x e", MetricKind::kBleu) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(score_strings("a b c d e", "a b c d e", MetricKind::kBleu) == 1.0);
  TokenInterner in;
  const auto r = in.intern("a b c d e");
  const auto h = in.intern("a b c x e");
  CHECK(cost(r, h, MetricKind::kBleu) == doctest::Approx(1.0 - expected).epsilon(1e-12));
}

TEST_CASE("sentence BLEU without 4-gram matches stays positive") {
  CHECK(score_strings("a b c d e f", "a b x c d y", MetricKind::kBleu) > 0.0);
}

TEST_CASE("empty hypothesis") {
  const TokenSeq ref{4, 5, 6};
  const TokenSeq empty;
  CHECK(sentence_bleu(ref, empty) == 0.0);
  CHECK(cost(ref, empty, MetricKind::kBleu) == 1.0);
  for (auto kind : {MetricKind::kRouge1, MetricKind::kRouge2, MetricKind::kRougeL}) CHECK(rouge(ref, empty, kind) == 0.0);
}

TEST_CASE("ROUGE worked examples") {
  CHECK(score_strings("a b c d", "a c d", MetricKind::kRougeL) == doctest::Approx(6.0 / 7.0).epsilon(1e-12));
  CHECK(score_strings("a b c", "c b a", MetricKind::kRouge1) == 1.0);
  CHECK(score_strings("a b c", "c b a", MetricKind::kRouge2) == 0.0);
  for (auto kind : {MetricKind::kRouge1, MetricKind::kRouge2, MetricKind::kRougeL})
    CHECK(score_strings("x y z w", "x y z w", kind) == 1.0);
}

TEST_CASE("corpus BLEU") {
  TokenInterner in;
  const auto r = in.intern("a b c d e");
  const auto h = in.intern("a b c x e");
  CHECK(corpus_bleu({r}, {r}) == 1.0);
  CHECK(corpus_bleu({r}, {h}) == 0.0);
  CHECK_THROWS(corpus_bleu({r, r}, {h}));

  // aggregate counts: precisions 1 at every order, c = 5, r = 8
  const auto r2 = in.intern("x y z");
  CHECK(corpus_bleu({r, r2}, {r, TokenSeq{}}) == doctest::Approx(std::exp(1.0 - 8.0 / 5.0)).epsilon(1e-12));
}

TEST_CASE("metric properties on random sentences") {
  Rng rng(42);
  auto random_seq = [&](std::size_t vocab) {
    TokenSeq s(1 + rng.uniform_int(12));
    for (auto& t : s) t = static_cast<TokenId>(4 + rng.uniform_int(vocab));
    return s;
  };
  for (int trial = 0; trial < 500; ++trial) {
    const TokenSeq ref = random_seq(6), hyp = random_seq(6);
    // permute ids: 4..9 -> reversed
    TokenSeq pref = ref, phyp = hyp;
    for (auto* s : {&pref, &phyp})
      for (auto& t : *s) t = static_cast<TokenId>(13 - t);
    for (auto kind : {MetricKind::kBleu, MetricKind::kRouge1, MetricKind::kRouge2, MetricKind::kRougeL}) {
      const double v = metric_score(ref, hyp, kind);
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
      REQUIRE(metric_score(ref, ref, kind) == doctest::Approx(1.0).epsilon(1e-12));
      REQUIRE(metric_score(pref, phyp, kind) == v);
      REQUIRE(cost(ref, hyp, kind) == doctest::Approx(1.0 - v).epsilon(1e-15));
    }
  }
}

TEST_CASE("rescale_costs") {
  const std::vector<double> c{0.2, 0.4, 0.6};
  const auto r = rescale_costs(c);
  CHECK(r[0] == doctest::Approx(0.0));
  CHECK(r[1] == doctest::Approx(0.5));
  CHECK(r[2] == doctest::Approx(1.0));
  CHECK(rescale_costs(std::vector<double>{0.3, 0.3}) == std::vector<double>{0.0, 0.0});
  CHECK(rescale_costs(std::vector<double>{0.7}) == std::vector<double>{0.7});

  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> costs(2 + rng.uniform_int(8));
    for (auto& x : costs) x = rng.uniform();
    const auto out = rescale_costs(costs);
    for (std::size_t i = 0; i < costs.size(); ++i)
      for (std::size_t j = 0; j < costs.size(); ++j)
        if (costs[i] < costs[j]) REQUIRE(out[i] < out[j]);
  }
}

TEST_CASE("metric names") {
  for (auto kind : {MetricKind::kBleu, MetricKind::kRouge1, MetricKind::kRouge2, MetricKind::kRougeL})
    CHECK(parse_metric(metric_name(kind)) == kind);
  CHECK_THROWS(parse_metric("meteor"));
}
