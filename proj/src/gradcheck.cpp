#include "seqlevel/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace seqlevel {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradCheckReport check_gradient(const std::function<double()>& f, std::span<double> x,
                               std::span<const double> analytic, const GradCheckOptions& options) {
  if (x.size() != analytic.size()) throw std::invalid_argument("check_gradient: size mismatch");
  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (coords.size() > options.min_samples) {
    Rng rng(options.seed);
    rng.shuffle(coords);
    coords.resize(options.min_samples);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckReport report;
  for (std::size_t i : coords) {
    const double saved = x[i];
    x[i] = saved + options.step;
    const double plus = f();
    x[i] = saved - options.step;
    const double minus = f();
    x[i] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) throw std::runtime_error("grad_check: non-finite loss");
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double err = relative_error(analytic[i], numeric);
    ++report.checked;
    report.max_abs_error = std::max(report.max_abs_error, std::abs(analytic[i] - numeric));
    if (std::abs(analytic[i]) + std::abs(numeric) >= options.resolve_floor) {
      ++report.resolved;
      report.max_resolved_rel_error = std::max(report.max_resolved_rel_error, err);
    }
    if (err > report.max_rel_error || report.checked == 1) {
      report.max_rel_error = err;
      report.worst_index = i;
      report.worst_analytic = analytic[i];
      report.worst_numeric = numeric;
    }
  }
  return report;
}

GradCheckReport grad_check(const Params& params, const SentencePair& pair, const ObjectiveSpec& spec,
                           const ExampleContext& ctx, const GradCheckOptions& options) {
  if (ctx.dropout.active()) throw std::invalid_argument("grad_check needs a deterministic forward pass");
  Params work = params;
  Gradients grads(params.dims());
  const auto base = example_loss(work, pair, spec, ctx, &grads);
  if (!std::isfinite(base.scaled_value)) throw std::runtime_error("grad_check: non-finite loss");
  if (base.skipped) throw std::invalid_argument("grad_check: example was skipped");
  auto f = [&]() { return example_loss(work, pair, spec, ctx, nullptr).scaled_value; };
  return check_gradient(f, work.flat(), grads.flat(), options);
}

}  // namespace seqlevel
