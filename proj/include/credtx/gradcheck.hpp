#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "credtx/tensor.hpp"

namespace credtx {

// Scalar objective over a parameter set. When `with_grads` is true the
// objective must accumulate dL/dvalue into every Parameter::grad (grads are
// zeroed by the caller beforehand).
using Objective = std::function<double(bool with_grads)>;

struct GradCheckOptions {
  double step = 1e-5;
  std::uint64_t seed = 0;
  // Coordinates probed per parameter; 0 probes every coordinate.
  std::size_t coords_per_param = 0;
  // Denominator floor of the relative error. Central differences carry about
  // 1e-11 of roundoff for O(1) losses, so gradients much smaller than this
  // floor are effectively compared in absolute terms.
  double denom_floor = 1e-6;
  // When set, a coordinate whose central differences at h and h/4 disagree by
  // more than 1e-3 (relative) is treated as sitting on a kink (relu, maxpool
  // argmax switch) and skipped instead of scored.
  bool skip_kinks = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares analytic gradients with central finite differences:
//   |analytic - fd| / max(denom_floor, |analytic| + |fd|), maximised over probes.
// Parameter values are restored before returning.
GradCheckResult gradient_check(std::span<Parameter> params, const Objective& f,
                               const GradCheckOptions& options = {});

}  // namespace credtx
