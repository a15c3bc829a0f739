#include "credtx/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "credtx/errors.hpp"

namespace credtx {

namespace {
double evaluate(const Objective& f, bool with_grads) {
  const double v = f(with_grads);
  if (!std::isfinite(v)) throw NumericError("gradient_check: objective returned a non-finite value");
  return v;
}
}  // namespace

GradCheckResult gradient_check(std::span<Parameter> params, const Objective& f,
                               const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw ConfigError("gradient_check step must be positive");
  if (!(options.denom_floor > 0.0)) throw ConfigError("gradient_check denom_floor must be positive");

  zero_grads(params);
  evaluate(f, true);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad);

  std::mt19937_64 rng(options.seed);
  GradCheckResult result;
  const double h = options.step;
  const double floor = options.denom_floor;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& value = params[pi].value;
    std::vector<std::size_t> coords(value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.coords_per_param > 0 && options.coords_per_param < coords.size()) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.coords_per_param);
    }
    for (std::size_t idx : coords) {
      const double saved = value[idx];
      auto central = [&](double step) {
        value[idx] = saved + step;
        const double up = evaluate(f, false);
        value[idx] = saved - step;
        const double down = evaluate(f, false);
        value[idx] = saved;
        return (up - down) / (2.0 * step);
      };
      const double fd = central(h);
      if (options.skip_kinks) {
        const double fine = central(h / 4.0);
        const double gap = std::abs(fd - fine) / std::max(floor, std::abs(fd) + std::abs(fine));
        if (gap > 1e-3) {
          ++result.coords_skipped;
          continue;
        }
      }
      const double an = analytic[pi][idx];
      const double rel = std::abs(an - fd) / std::max(floor, std::abs(an) + std::abs(fd));
      ++result.coords_checked;
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = pi;
        result.worst_index = idx;
        result.worst_analytic = an;
        result.worst_numeric = fd;
      }
    }
  }
  return result;
}

}  // namespace credtx
