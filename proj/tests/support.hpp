#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "seqlevel/generate.hpp"
#include "seqlevel/objectives.hpp"
#include "seqlevel/rng.hpp"

namespace seqlevel::testing {

// A candidate set built straight from aggregate values, bypassing the model.
inline CandidateSet make_set(const std::vector<double>& a, const std::vector<double>& s,
                             const std::vector<double>& costs) {
  CandidateSet set;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ScoredCandidate c;
    c.tokens = {static_cast<TokenId>(kNumReserved + i), kEos};
    c.avg_logprob = a[i];
    c.avg_score = s[i];
    c.cost = costs[i];
    c.metric = 1.0 - costs[i];
    set.members.push_back(c);
  }
  set.select();
  return set;
}

inline std::vector<double> random_vec(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return v;
}

inline Eigen::VectorXd random_logits(Rng& rng, std::size_t v, double scale = 2.0) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(v));
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = scale * rng.normal();
  return x;
}

// Central difference of f at x[i].
inline double central_difference(const std::function<double()>& f, double& xi, double h = 1e-5) {
  const double saved = xi;
  xi = saved + h;
  const double plus = f();
  xi = saved - h;
  const double minus = f();
  xi = saved;
  return (plus - minus) / (2.0 * h);
}

inline double rel_err(double a, double n) { return std::abs(a - n) / std::max(1e-8, std::abs(a) + std::abs(n)); }

// Smallest distance of any hinge argument from zero, and of the top model
// score from the runner-up, so finite differences stay on one side of every kink.
inline double kink_distance(const CandidateSet& set, double beta, bool multi) {
  double d = 1e9;
  const auto& m = set.members;
  const auto& star = m[set.pseudo_ref];
  if (multi) {
    for (std::size_t u = 0; u < m.size(); ++u) {
      if (u == set.pseudo_ref) continue;
      d = std::min(d, std::abs(beta * (m[u].cost - star.cost) - star.avg_score + m[u].avg_score));
    }
    return d;
  }
  const auto& hat = m[set.model_best];
  if (set.model_best != set.pseudo_ref)
    d = std::min(d, std::abs(beta * (hat.cost - star.cost) - star.avg_score + hat.avg_score));
  for (std::size_t u = 0; u < m.size(); ++u)
    if (u != set.model_best) d = std::min(d, hat.avg_score - m[u].avg_score);
  return d;
}

}  // namespace seqlevel::testing
