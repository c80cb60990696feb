#include "histonet/tensorkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "histonet/errors.hpp"

namespace histonet::tk {

namespace {

double evaluate(const ScalarFn& fn, const Tensor& point) {
  Graph g;
  const double v = fn(g, point).item();
  if (std::isnan(v)) {
    throw NumericError("gradcheck: function returned NaN");
  }
  return v;
}

}  // namespace

GradcheckResult gradcheck(const ScalarFn& fn, Tensor point, double h, double scale_floor) {
  const double steps[] = {h};
  return gradcheck(fn, std::move(point), steps, scale_floor);
}

GradcheckResult gradcheck(const ScalarFn& fn, Tensor point, std::span<const double> steps,
                          double scale_floor) {
  if (steps.empty() || std::any_of(steps.begin(), steps.end(), [](double h) { return !(h > 0.0); })) {
    throw ConfigError("gradcheck: steps must be positive");
  }
  const bool had_flag = point.requires_grad();
  point.set_requires_grad(true);
  point.zero_grad();

  std::vector<double> analytic;
  {
    Graph g;
    Tensor y = fn(g, point);
    if (std::isnan(y.item())) {
      throw NumericError("gradcheck: function returned NaN");
    }
    g.backward(y);
    const auto grad = std::as_const(point).grad();
    analytic.assign(point.size(), 0.0);
    if (!grad.empty()) {
      analytic.assign(grad.begin(), grad.end());
    }
  }

  // Finite differences run without recording. Per coordinate the step whose
  // estimate lies closest to the analytic value is kept.
  point.set_requires_grad(false);
  std::vector<double> numeric(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    for (std::size_t k = 0; k < steps.size(); ++k) {
      const double h = steps[k];
      point[i] = saved + h;
      const double fp = evaluate(fn, point);
      point[i] = saved - h;
      const double fm = evaluate(fn, point);
      point[i] = saved;
      const double n = (fp - fm) / (2.0 * h);
      if (k == 0 || std::abs(n - analytic[i]) < std::abs(numeric[i] - analytic[i])) numeric[i] = n;
    }
  }
  double scale = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    scale = std::max(scale, std::abs(analytic[i]) + std::abs(numeric[i]));
  }
  const double floor = std::max(1e-12, scale_floor * scale);
  GradcheckResult result;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double err = std::abs(a - n) / std::max(floor, std::abs(a) + std::abs(n));
    if (i == 0 || err > result.max_rel_error) {
      result = {err, i, a, n};
    }
  }
  point.set_requires_grad(had_flag);
  point.zero_grad();
  return result;
}

}  // namespace histonet::tk
