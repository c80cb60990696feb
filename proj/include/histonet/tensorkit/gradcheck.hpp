#pragma once

#include <functional>
#include <span>

#include "histonet/tensorkit/graph.hpp"
#include "histonet/tensorkit/tensor.hpp"

namespace histonet::tk {

/// Scalar function of one tensor, built on the supplied graph.
using ScalarFn = std::function<Tensor(Graph&, const Tensor&)>;

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares the autodiff gradient of `fn` at `point` with central
/// differences of step h. Per coordinate the error is
/// |a - n| / max(1e-12, |a| + |n|, scale_floor * max_j(|a_j| + |n_j|)).
/// A positive scale_floor keeps coordinates whose gradient sits at the
/// finite-difference noise level from dominating. The point's values are
/// restored on exit. Throws NumericError if fn evaluates to NaN.
GradcheckResult gradcheck(const ScalarFn& fn, Tensor point, double h = 1e-5,
                          double scale_floor = 0.0);

/// As above with several steps. Per coordinate the estimate closest to the
/// analytic gradient counts, so a step that straddles a ReLU kink or one that
/// drowns in rounding noise does not fail the check on its own.
GradcheckResult gradcheck(const ScalarFn& fn, Tensor point, std::span<const double> steps,
                          double scale_floor = 0.0);

}  // namespace histonet::tk
