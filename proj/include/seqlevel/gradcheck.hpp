#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "seqlevel/example_loss.hpp"

namespace seqlevel {

struct GradCheckOptions {
  double step = 1e-5;            // central difference step
  std::size_t min_samples = 200; // coordinates checked (all of them if fewer exist)
  std::uint64_t seed = 0;
  // Coordinates with |analytic| + |numeric| below this are reported through
  // max_abs_error only; central differences cannot resolve them relatively.
  double resolve_floor = 1e-6;
};

struct GradCheckReport {
  double max_rel_error = 0.0;           // over every checked coordinate
  double max_resolved_rel_error = 0.0;  // over coordinates above resolve_floor
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::size_t resolved = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// |a - n| / max(1e-8, |a| + |n|)
double relative_error(double analytic, double numeric);

// Central differences of f at x on a random subset of coordinates, compared
// with the supplied analytic gradient. x is perturbed in place and restored.
GradCheckReport check_gradient(const std::function<double()>& f, std::span<double> x,
                               std::span<const double> analytic, const GradCheckOptions& options);

// Checks example_loss gradients w.r.t. the model parameters.
GradCheckReport grad_check(const Params& params, const SentencePair& pair, const ObjectiveSpec& spec,
                           const ExampleContext& ctx, const GradCheckOptions& options = {});

}  // namespace seqlevel
