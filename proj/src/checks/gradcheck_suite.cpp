#include "histonet/checks/gradcheck_suite.hpp"

#include <functional>
#include <span>

#include "histonet/losses/losses.hpp"
#include "histonet/model/histonet.hpp"
#include "histonet/scenegen/generator.hpp"
#include "histonet/targets/targets.hpp"
#include "histonet/tensorkit/gradcheck.hpp"
#include "histonet/tensorkit/ops.hpp"

namespace histonet::checks {

namespace {

using tk::Graph;
using tk::Shape;
using tk::Tensor;
namespace ops = tk::ops;

constexpr double kOpSteps[] = {1e-5};

// Values in +-[0.1, 1]: far enough from 0 that no finite-difference step
// crosses a ReLU or |x| kink.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) {
    v = rng.uniform(0.1, 1.0) * (rng.bernoulli(0.5) ? 1.0 : -1.0);
  }
  return t;
}

Tensor positive(Shape shape, Rng& rng, double lo = 0.2, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Contracts an arbitrary output with fixed random coefficients so that every
// output element contributes to the checked scalar.
struct Projector {
  Tensor weight;
  Tensor bias{Shape{1}};

  Projector(std::size_t n, Rng& rng) : weight(Shape{1, n}) {
    for (double& v : weight.values()) v = rng.uniform(-1.0, 1.0);
  }
  Tensor operator()(Graph& g, const Tensor& y) const {
    return ops::dense(g, ops::flatten(g, y), weight, bias);
  }
};

class Suite {
 public:
  Suite(double tol, std::uint64_t seed) : tol_(tol), rng_(seed) {}

  void check(const std::string& name, const tk::ScalarFn& fn, Tensor point,
             std::span<const double> steps = kOpSteps, double scale_floor = 0.0) {
    const tk::GradcheckResult r = tk::gradcheck(fn, std::move(point), steps, scale_floor);
    out_.push_back({name, r.max_rel_error, r.analytic, r.numeric, r.max_rel_error < tol_});
  }

  // Checks `op` with respect to its single tensor input.
  void unary(const std::string& name, const std::function<Tensor(Graph&, const Tensor&)>& op,
             Tensor point) {
    Graph probe;
    const std::size_t n = op(probe, point).size();
    const Projector proj(n, rng_);
    check(name, [op, proj](Graph& g, const Tensor& x) { return proj(g, op(g, x)); }, std::move(point));
  }

  Rng& rng() { return rng_; }
  std::vector<GradcheckEntry> take() { return std::move(out_); }

 private:
  double tol_;
  Rng rng_;
  std::vector<GradcheckEntry> out_;
};

void op_checks(Suite& s) {
  Rng& rng = s.rng();
  const Tensor image = away_from_zero({2, 5, 6}, rng);
  const Tensor kernel = away_from_zero({3, 2, 3, 3}, rng);
  const Tensor bias = away_from_zero({3}, rng);
  for (std::size_t pad : {std::size_t{0}, std::size_t{1}}) {
    const std::string tag = "conv2d(pad=" + std::to_string(pad) + ")";
    s.unary(tag + " input", [=](Graph& g, const Tensor& x) { return ops::conv2d(g, x, kernel, bias, pad); },
            image.clone());
    s.unary(tag + " kernel", [=](Graph& g, const Tensor& k) { return ops::conv2d(g, image, k, bias, pad); },
            kernel.clone());
    s.unary(tag + " bias", [=](Graph& g, const Tensor& b) { return ops::conv2d(g, image, kernel, b, pad); },
            bias.clone());
  }
  const Tensor k1 = away_from_zero({4, 2, 1, 1}, rng);
  const Tensor b1 = away_from_zero({4}, rng);
  s.unary("conv2d 1x1 kernel", [=](Graph& g, const Tensor& k) { return ops::conv2d(g, image, k, b1, 0); },
          k1.clone());
  s.unary("pad2d", [](Graph& g, const Tensor& x) { return ops::pad2d(g, x, 2); }, image.clone());
  s.unary("leaky_relu", [](Graph& g, const Tensor& x) { return ops::leaky_relu(g, x, 0.01); },
          away_from_zero({3, 4, 4}, rng));
  s.unary("softplus", [](Graph& g, const Tensor& x) { return ops::softplus(g, x); },
          away_from_zero({17}, rng));
  s.unary("sigmoid", [](Graph& g, const Tensor& x) { return ops::sigmoid(g, x); },
          away_from_zero({11}, rng));
  s.unary("max_pool2d", [](Graph& g, const Tensor& x) { return ops::max_pool2d(g, x, 2); },
          away_from_zero({2, 6, 4}, rng));

  const Tensor vec = away_from_zero({7}, rng);
  const Tensor w = away_from_zero({5, 7}, rng);
  const Tensor wb = away_from_zero({5}, rng);
  s.unary("dense input", [=](Graph& g, const Tensor& x) { return ops::dense(g, x, w, wb); }, vec.clone());
  s.unary("dense weight", [=](Graph& g, const Tensor& m) { return ops::dense(g, vec, m, wb); }, w.clone());
  s.unary("dense bias", [=](Graph& g, const Tensor& b) { return ops::dense(g, vec, w, b); }, wb.clone());

  const Tensor other = away_from_zero({3, 5, 6}, rng);
  s.unary("concat_channels", [=](Graph& g, const Tensor& x) { return ops::concat_channels(g, x, other); },
          image.clone());
  s.unary("slice_channels", [](Graph& g, const Tensor& x) { return ops::slice_channels(g, x, 1, 3); },
          away_from_zero({4, 3, 3}, rng));
  const Tensor tail = away_from_zero({3}, rng);
  s.unary("concat",
          [=](Graph& g, const Tensor& x) {
            const Tensor parts[] = {x, tail};
            return ops::concat(g, parts);
          },
          vec.clone());
  s.unary("dropout(train)",
          [](Graph& g, const Tensor& x) {
            Rng mask_rng(99);  // same mask on every evaluation
            return ops::dropout(g, x, 0.4, true, mask_rng);
          },
          away_from_zero({20}, rng));
  const Tensor addend = away_from_zero({2, 5, 6}, rng);
  s.unary("add", [=](Graph& g, const Tensor& x) { return ops::add(g, x, addend); }, image.clone());
  s.unary("flatten", [](Graph& g, const Tensor& x) { return ops::flatten(g, x); }, image.clone());
  s.check("sum", [](Graph& g, const Tensor& x) { return ops::sum(g, x); }, image.clone());
  const Tensor t2 = Tensor::scalar(0.7);
  s.check("weighted_sum",
          [=](Graph& g, const Tensor& x) {
            const Tensor terms[] = {x, t2};
            const double coeffs[] = {0.5, 0.2};
            return ops::weighted_sum(g, terms, coeffs);
          },
          Tensor::scalar(1.3));
  const Tensor target = away_from_zero({2, 5, 6}, rng);
  s.check("squared_error", [=](Graph& g, const Tensor& x) { return ops::squared_error(g, x, target); },
          image.clone());
}

void loss_checks(Suite& s) {
  Rng& rng = s.rng();
  // Targets are integers, predictions non-integers: no |P - T| kink is
  // within reach of the finite-difference step.
  Tensor map_target({1, 6, 6});
  for (double& v : map_target.values()) v = static_cast<double>(rng.index(3));
  Tensor map_pred = positive({1, 6, 6}, rng);
  for (double& v : map_pred.values()) v += 0.05;
  s.check("loss_count",
          [=](Graph& g, const Tensor& p) { return losses::loss_count(g, p, map_target); },
          map_pred.clone());

  const Tensor hist_target = Tensor::vector({3, 0, 1, 2, 0, 0, 1, 4});
  const Tensor hist_pred = positive({8}, rng, 0.1, 3.0);
  s.check("loss_kl",
          [=](Graph& g, const Tensor& p) { return losses::loss_kl(g, p, hist_target); },
          hist_pred.clone());
  const std::vector<double> w = targets::bin_weights(targets::bin_edges(32.0, 8));
  s.check("loss_weighted_l1",
          [=](Graph& g, const Tensor& p) { return losses::loss_weighted_l1(g, p, hist_target, w); },
          hist_pred.clone());

  losses::TrainingTargets t;
  t.count_map = map_target;
  t.hist = hist_target;
  t.hist2 = Tensor::vector({4, 7});
  t.hist4 = Tensor::vector({3, 3, 1, 4});
  t.weights = w;
  t.weights2 = targets::bin_weights(targets::bin_edges(32.0, 2));
  t.weights4 = targets::bin_weights(targets::bin_edges(32.0, 4));
  const Tensor h2 = positive({2}, rng, 0.5, 6.0);
  const Tensor h4 = positive({4}, rng, 0.5, 4.0);
  auto output = [&](const Tensor& map, const Tensor& hist, bool dsn) {
    model::ModelOutput o{map, hist, std::nullopt, std::nullopt};
    if (dsn) {
      o.hist2 = h2;
      o.hist4 = h4;
    }
    return o;
  };
  s.check("loss_total wrt map",
          [=](Graph& g, const Tensor& p) { return losses::loss_total(g, output(p, hist_pred, false), t).total; },
          map_pred.clone());
  s.check("loss_total wrt hist",
          [=](Graph& g, const Tensor& p) { return losses::loss_total(g, output(map_pred, p, false), t).total; },
          hist_pred.clone());
  s.check("loss_total_dsn wrt hist",
          [=](Graph& g, const Tensor& p) { return losses::loss_total_dsn(g, output(map_pred, p, true), t).total; },
          hist_pred.clone());
  s.check("loss_total_dsn wrt hist2",
          [=](Graph& g, const Tensor& p) {
            model::ModelOutput o = output(map_pred, hist_pred, true);
            o.hist2 = p;
            return losses::loss_total_dsn(g, o, t).total;
          },
          h2.clone());
  s.check("loss_total_dsn wrt hist4",
          [=](Graph& g, const Tensor& p) {
            model::ModelOutput o = output(map_pred, hist_pred, true);
            o.hist4 = p;
            return losses::loss_total_dsn(g, o, t).total;
          },
          h4.clone());
}

// The model loss sums hundreds of map cells, so central differences carry
// absolute noise near eps * |L| / h (about 1e-12 here). Errors are measured
// against at least 0.1% of each tensor's largest gradient.
constexpr double kModelScaleFloor = 1e-3;
constexpr double kTargetOffset = 1e-3;
// Steps for the model: large enough to clear rounding noise, small enough
// that some step misses every activation kink.
constexpr double kModelSteps[] = {1e-4, 3e-5, 1e-5};

void model_checks(Suite& s) {
  Rng& rng = s.rng();
  model::ModelConfig mc = model::tiny_config();
  mc.dsn = true;
  model::HistoNet net(mc, rng.next_u64());
  // Random non-zero biases move padded-border activations off the ReLU kink.
  for (model::Parameter& p : net.parameters()) {
    if (p.name.ends_with(".bias")) {
      for (double& v : p.tensor.values()) v = rng.uniform(0.05, 0.3) * (rng.bernoulli(0.5) ? 1 : -1);
    }
  }
  scene::GenConfig gc;
  gc.width = gc.height = mc.input_size;
  gc.count = {3.0, 1.0, 1.0, 6.0};
  gc.area = {6.0, 3.0, 2.0, 18.0};
  const scene::Scene sc = scene::sample_scene(gc, rng.next_u64());
  const scene::Image image = scene::rasterize(sc, gc);
  losses::TrainingTargets t = losses::make_targets(sc, mc.receptive_field, 32.0, mc.bins);
  // Targets = current outputs +- kTargetOffset per entry. The loss stays small, which
  // keeps finite-difference noise low, and no |P - T| kink is reachable.
  {
    Graph g;
    Rng dropout_rng(7);
    const model::ModelOutput o = net.forward(g, image, true, dropout_rng);
    auto near = [&](const Tensor& from, Tensor& to) {
      for (std::size_t i = 0; i < from.size(); ++i) {
        to[i] = from[i] + (rng.bernoulli(0.5) ? kTargetOffset : -kTargetOffset);
      }
    };
    near(o.count_map, t.count_map);
    near(o.hist, t.hist);
    near(*o.hist2, t.hist2);
    near(*o.hist4, t.hist4);
  }

  for (model::Parameter& p : net.parameters()) {
    s.check("model(tiny, dsn) " + p.name,
            [&net, &image, &t](Graph& g, const Tensor&) {
              Rng dropout_rng(7);  // fixed dropout mask
              return losses::loss_total_dsn(g, net.forward(g, image, true, dropout_rng), t).total;
            },
            p.tensor, kModelSteps, kModelScaleFloor);
  }
}

}  // namespace

std::vector<GradcheckEntry> run_gradcheck_suite(double tolerance, std::uint64_t seed) {
  Suite s(tolerance, seed);
  op_checks(s);
  loss_checks(s);
  model_checks(s);
  return s.take();
}

}  // namespace histonet::checks
