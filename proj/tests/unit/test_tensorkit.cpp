#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "histonet/errors.hpp"
#include "histonet/tensorkit/checkpoint.hpp"
#include "histonet/tensorkit/gradcheck.hpp"
#include "histonet/tensorkit/graph.hpp"
#include "histonet/tensorkit/ops.hpp"
#include "histonet/tensorkit/optim.hpp"
#include "histonet/tensorkit/rng.hpp"
#include "histonet/tensorkit/tensor.hpp"

using namespace histonet;
using tk::Graph;
using tk::Tensor;
namespace ops = tk::ops;

namespace {

Tensor random_tensor(tk::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Naive cross-correlation with zero padding.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& k, const Tensor& b, int pad) {
  const int cin = static_cast<int>(x.dim(0)), h = static_cast<int>(x.dim(1)),
            w = static_cast<int>(x.dim(2));
  const int cout = static_cast<int>(k.dim(0)), kh = static_cast<int>(k.dim(2)),
            kw = static_cast<int>(k.dim(3));
  const int ho = h + 2 * pad - kh + 1, wo = w + 2 * pad - kw + 1;
  std::vector<double> out;
  for (int o = 0; o < cout; ++o) {
    for (int y = 0; y < ho; ++y) {
      for (int xx = 0; xx < wo; ++xx) {
        double s = b[o];
        for (int c = 0; c < cin; ++c) {
          for (int dy = 0; dy < kh; ++dy) {
            for (int dx = 0; dx < kw; ++dx) {
              const int iy = y + dy - pad, ix = xx + dx - pad;
              if (iy < 0 || ix < 0 || iy >= h || ix >= w) continue;
              s += x.at(c, iy, ix) * k[((o * cin + c) * kh + dy) * kw + dx];
            }
          }
        }
        out.push_back(s);
      }
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape and values agree") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
    const Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t.rank() == 2);
  }

  TEST_CASE("clone does not share storage") {
    Tensor a = Tensor::vector({1, 2, 3});
    Tensor b = a.clone();
    b[0] = 9;
    CHECK(a[0] == 1);
    CHECK_FALSE(a.shares_storage_with(b));
  }

  TEST_CASE("grad has the shape of values") {
    Tensor a = Tensor::vector({1, 2, 3});
    a.set_requires_grad(true);
    Graph g;
    g.backward(ops::sum(g, a));
    CHECK(a.grad().size() == a.size());
  }

  TEST_CASE("backward twice is an error") {
    Tensor a = Tensor::vector({1, 2});
    a.set_requires_grad(true);
    Graph g;
    const Tensor s = ops::sum(g, a);
    g.backward(s);
    CHECK_THROWS(g.backward(s));
  }

  TEST_CASE("backward visits nodes in reverse order") {
    // y = sum(leaky(x) + x): the add node must run before leaky's.
    Tensor x = Tensor::vector({-2.0, 3.0});
    x.set_requires_grad(true);
    Graph g;
    const Tensor y = ops::sum(g, ops::add(g, ops::leaky_relu(g, x, 0.1), x));
    g.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(1.1));
    CHECK(x.grad()[1] == doctest::Approx(2.0));
  }
}

TEST_SUITE("conv2d") {
  TEST_CASE("scaling identity") {
    Graph g;
    const Tensor y = ops::conv2d(g, Tensor({1, 3, 3}, 1.0), Tensor({1, 1, 1, 1}, 2.0),
                                 Tensor({1}, 0.0), 0);
    CHECK(y.shape() == tk::Shape{1, 3, 3});
    for (double v : y.values()) CHECK(v == 2.0);
  }

  TEST_CASE("ones kernel with padding sums the neighbourhood") {
    Rng rng(1);
    const Tensor x = random_tensor({1, 5, 5}, rng);
    Graph g;
    const Tensor y = ops::conv2d(g, x, Tensor({1, 1, 3, 3}, 1.0), Tensor({1}, 0.0), 1);
    double s = 0.0;
    for (int dy = 1; dy <= 3; ++dy) {
      for (int dx = 1; dx <= 3; ++dx) s += x.at(0, dy, dx);
    }
    CHECK(y.at(0, 2, 2) == doctest::Approx(s).epsilon(1e-12));
  }

  TEST_CASE("zero kernel gives the bias") {
    Rng rng(2);
    Graph g;
    const Tensor y = ops::conv2d(g, random_tensor({2, 4, 4}, rng), Tensor({3, 2, 3, 3}, 0.0),
                                 Tensor::vector({0.5, -1.0, 2.0}), 1);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < 16; ++i) CHECK(y[c * 16 + i] == (c == 0 ? 0.5 : c == 1 ? -1.0 : 2.0));
    }
  }

  TEST_CASE("matches the nested-loop oracle") {
    Rng rng(3);
    for (int pad : {0, 1, 2}) {
      for (int k : {1, 3}) {
        const Tensor x = random_tensor({3, 6, 5}, rng);
        const Tensor kernel = random_tensor({4, 3, static_cast<std::size_t>(k), static_cast<std::size_t>(k)}, rng);
        const Tensor b = random_tensor({4}, rng);
        Graph g;
        const Tensor y = ops::conv2d(g, x, kernel, b, static_cast<std::size_t>(pad));
        const std::vector<double> want = conv_oracle(x, kernel, b, pad);
        REQUIRE(y.size() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(std::abs(y[i] - want[i]) < 1e-12);
      }
    }
  }

  TEST_CASE("channel mismatch is a dimension error") {
    Graph g;
    CHECK_THROWS_AS(ops::conv2d(g, Tensor({2, 4, 4}), Tensor({1, 3, 3, 3}), Tensor({1}), 1),
                    DimensionError);
  }
}

TEST_SUITE("activations") {
  TEST_CASE("leaky relu values and slopes") {
    Graph g;
    const Tensor y = ops::leaky_relu(g, Tensor::vector({-1, 0, 2}), 0.1);
    CHECK(y[0] == doctest::Approx(-0.1));
    CHECK(y[1] == 0.0);
    CHECK(y[2] == 2.0);
    const Tensor r = ops::leaky_relu(g, Tensor::vector({-1, 2}), 0.0);
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 2.0);

    Tensor x = Tensor::vector({3.0, -3.0});
    x.set_requires_grad(true);
    Graph g2;
    g2.backward(ops::sum(g2, ops::leaky_relu(g2, x, 0.1)));
    CHECK(x.grad()[0] == 1.0);
    CHECK(x.grad()[1] == doctest::Approx(0.1));
  }

  TEST_CASE("softplus and sigmoid are finite for large inputs") {
    Graph g;
    const Tensor x = Tensor::vector({-800, -1, 0, 1, 800});
    const Tensor sp = ops::softplus(g, x), sg = ops::sigmoid(g, x);
    for (double v : sp.values()) CHECK(std::isfinite(v));
    for (double v : sg.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(sp[4] == doctest::Approx(800.0));
  }
}

TEST_SUITE("max_pool2d") {
  TEST_CASE("2x2 window") {
    Graph g;
    const Tensor y = ops::max_pool2d(g, Tensor({1, 2, 2}, std::vector<double>{1, 2, 3, 4}), 2);
    CHECK(y.size() == 1);
    CHECK(y[0] == 4.0);
  }

  TEST_CASE("ties route the gradient to the first cell") {
    Tensor x({1, 4, 4}, 1.0);
    x.set_requires_grad(true);
    Graph g;
    const Tensor y = ops::max_pool2d(g, x, 2);
    for (double v : y.values()) CHECK(v == 1.0);
    g.backward(ops::sum(g, y));
    for (std::size_t yy = 0; yy < 4; ++yy) {
      for (std::size_t xx = 0; xx < 4; ++xx) {
        CHECK(x.grad()[yy * 4 + xx] == ((yy % 2 == 0 && xx % 2 == 0) ? 1.0 : 0.0));
      }
    }
  }

  TEST_CASE("matches brute-force windows") {
    Rng rng(4);
    const Tensor x = random_tensor({2, 4, 4}, rng);
    Graph g;
    const Tensor y = ops::max_pool2d(g, x, 2);
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t oy = 0; oy < 2; ++oy) {
        for (std::size_t ox = 0; ox < 2; ++ox) {
          double m = -1e300;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) m = std::max(m, x.at(c, 2 * oy + dy, 2 * ox + dx));
          }
          CHECK(y.at(c, oy, ox) == m);
        }
      }
    }
  }

  TEST_CASE("indivisible size is a dimension error") {
    Graph g;
    CHECK_THROWS_AS(ops::max_pool2d(g, Tensor({1, 5, 4}), 2), DimensionError);
  }
}

TEST_SUITE("dense") {
  TEST_CASE("identity weight") {
    Graph g;
    const Tensor y = ops::dense(g, Tensor::vector({1, -2, 3}),
                                Tensor({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1}),
                                Tensor({3}, 0.0));
    CHECK(y[0] == 1);
    CHECK(y[1] == -2);
    CHECK(y[2] == 3);
  }

  TEST_CASE("row sum") {
    Graph g;
    const Tensor y = ops::dense(g, Tensor::vector({2, 3}), Tensor({1, 2}, std::vector<double>{1, 1}),
                                Tensor({1}, 0.0));
    CHECK(y[0] == 5);
  }

  TEST_CASE("matches naive matmul") {
    Rng rng(5);
    const Tensor x = random_tensor({4}, rng), w = random_tensor({3, 4}, rng), b = random_tensor({3}, rng);
    Graph g;
    const Tensor y = ops::dense(g, x, w, b);
    for (std::size_t i = 0; i < 3; ++i) {
      double s = b[i];
      for (std::size_t j = 0; j < 4; ++j) s += w[i * 4 + j] * x[j];
      CHECK(std::abs(y[i] - s) < 1e-12);
    }
  }
}

TEST_SUITE("channels") {
  TEST_CASE("concat then slice round-trips") {
    Rng rng(6);
    const Tensor a = random_tensor({1, 2, 2}, rng), b = random_tensor({1, 2, 2}, rng);
    Graph g;
    const Tensor c = ops::concat_channels(g, a, b);
    CHECK(c.shape() == tk::Shape{2, 2, 2});
    const Tensor a2 = ops::slice_channels(g, c, 0, 1), b2 = ops::slice_channels(g, c, 1, 2);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(a2[i] == a[i]);
      CHECK(b2[i] == b[i]);
    }
  }

  TEST_CASE("gradient of the sum is ones into both inputs") {
    Tensor a({1, 2, 2}, 0.3), b({2, 2, 2}, -0.2);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Graph g;
    g.backward(ops::sum(g, ops::concat_channels(g, a, b)));
    for (double v : a.grad()) CHECK(v == 1.0);
    for (double v : b.grad()) CHECK(v == 1.0);
  }
}

TEST_SUITE("dropout") {
  TEST_CASE("identity when p = 0 or not training") {
    Rng rng(7);
    const Tensor x = random_tensor({10}, rng);
    Graph g;
    const Tensor a = ops::dropout(g, x, 0.0, true, rng);
    const Tensor b = ops::dropout(g, x, 0.5, false, rng);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(a[i] == x[i]);
      CHECK(b[i] == x[i]);
    }
  }

  TEST_CASE("keep rate over a million draws") {
    Rng rng(8);
    Graph g;
    const Tensor y = ops::dropout(g, Tensor({1000000}, 1.0), 0.5, true, rng);
    std::size_t kept = 0;
    for (double v : y.values()) kept += v != 0.0;
    const double rate = static_cast<double>(kept) / 1e6;
    CHECK(rate > 0.495);
    CHECK(rate < 0.505);
  }

  TEST_CASE("rate outside [0, 1) is a config error") {
    Rng rng(9);
    Graph g;
    CHECK_THROWS_AS(ops::dropout(g, Tensor({3}), 1.0, true, rng), ConfigError);
  }
}

TEST_SUITE("init and optimizer") {
  TEST_CASE("xavier bound, mean and variance") {
    Rng rng(10);
    const Tensor small = tk::xavier_init({3, 3}, 3, 3, rng);
    for (double v : small.values()) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
    const Tensor t = tk::xavier_init({100000}, 3, 3, rng);
    double mean = 0.0, sq = 0.0;
    for (double v : t.values()) mean += v;
    mean /= 1e5;
    for (double v : t.values()) sq += (v - mean) * (v - mean);
    const double var = sq / 1e5;
    CHECK(std::abs(mean) < 0.01);
    CHECK(var == doctest::Approx(1.0 / 3.0).epsilon(0.05));
  }

  TEST_CASE("zero gradient leaves parameters and counts the step") {
    std::vector<Tensor> p = {Tensor::vector({1.0, -2.0})};
    p[0].set_requires_grad(true);
    p[0].zero_grad();
    tk::AdamState s({}, p);
    tk::adam_step(p, s);
    CHECK(s.t == 1);
    CHECK(p[0][0] == 1.0);
    CHECK(p[0][1] == -2.0);
  }

  TEST_CASE("first step moves by lr against the gradient sign") {
    std::vector<Tensor> p = {Tensor::vector({0.5, 0.5})};
    p[0].set_requires_grad(true);
    p[0].zero_grad();
    p[0].grad()[0] = 1.0;
    p[0].grad()[1] = -1.0;
    tk::AdamState s({.lr = 0.001}, p);
    tk::adam_step(p, s);
    CHECK(p[0][0] - 0.5 == doctest::Approx(-0.001).epsilon(1e-6));
    CHECK(p[0][1] - 0.5 == doctest::Approx(0.001).epsilon(1e-6));
  }

  TEST_CASE("lr = 0 is the identity") {
    Rng rng(11);
    std::vector<Tensor> p = {random_tensor({5}, rng)};
    const Tensor before = p[0].clone();
    p[0].set_requires_grad(true);
    p[0].zero_grad();
    for (double& v : p[0].grad()) v = rng.uniform(-1, 1);
    tk::AdamState s({.lr = 0.0}, p);
    tk::adam_step(p, s);
    for (std::size_t i = 0; i < 5; ++i) CHECK(p[0][i] == before[i]);
  }

  TEST_CASE("non-finite gradient is rejected before any update") {
    std::vector<Tensor> p = {Tensor::vector({1.0, 1.0})};
    p[0].set_requires_grad(true);
    p[0].zero_grad();
    p[0].grad()[1] = std::nan("");
    tk::AdamState s({}, p);
    CHECK_THROWS_AS(tk::adam_step(p, s), NumericError);
    CHECK(p[0][0] == 1.0);
  }

  TEST_CASE("seeded streams are reproducible") {
    Rng a(42), b(42);
    const Tensor x = tk::xavier_init({50}, 5, 5, a), y = tk::xavier_init({50}, 5, 5, b);
    for (std::size_t i = 0; i < 50; ++i) CHECK(x[i] == y[i]);
    Graph g;
    const Tensor m1 = ops::dropout(g, Tensor({50}, 1.0), 0.3, true, a);
    const Tensor m2 = ops::dropout(g, Tensor({50}, 1.0), 0.3, true, b);
    for (std::size_t i = 0; i < 50; ++i) CHECK(m1[i] == m2[i]);
  }
}

TEST_SUITE("gradcheck") {
  TEST_CASE("sum of squares") {
    Rng rng(12);
    const tk::GradcheckResult r = tk::gradcheck(
        [](Graph& g, const Tensor& x) { return ops::squared_error(g, x, Tensor(x.shape(), 0.0)); },
        random_tensor({6}, rng), 1e-5);
    CHECK(r.max_rel_error < 1e-6);
  }

  TEST_CASE("linear function is exact") {
    const Tensor w = Tensor::vector({0.5, -1.5, 2.0});
    const tk::GradcheckResult r = tk::gradcheck(
        [w](Graph& g, const Tensor& x) { return ops::dense(g, x, w.reshaped({1, 3}), Tensor({1}, 0.0)); },
        Tensor::vector({0.25, 0.5, -0.75}), 1e-5);
    CHECK(r.max_rel_error < 1e-10);
  }

  TEST_CASE("conv, relu, dense chain matches finite differences") {
    Rng rng(13);
    const Tensor k = random_tensor({2, 1, 3, 3}, rng), b = random_tensor({2}, rng, 0.1, 0.3);
    const Tensor w = random_tensor({1, 32}, rng), wb = random_tensor({1}, rng);
    const tk::GradcheckResult r = tk::gradcheck(
        [=](Graph& g, const Tensor& x) {
          const Tensor h = ops::leaky_relu(g, ops::conv2d(g, x, k, b, 1), 0.01);
          return ops::dense(g, ops::flatten(g, h), w, wb);
        },
        random_tensor({1, 4, 4}, rng, 0.1, 1.0));
    CHECK(r.max_rel_error < 1e-4);
  }

  TEST_CASE("a wrong gradient is detected") {
    // Custom op whose backward is off by 1%.
    const tk::ScalarFn fn = [](Graph& g, const Tensor& x) {
      Tensor out = Tensor::scalar(x[0] * x[0]);
      g.record({x}, out, [x = x, out]() mutable {
        x.grad()[0] += std::as_const(out).grad()[0] * 2.02 * x[0];
      });
      return out;
    };
    CHECK(tk::gradcheck(fn, Tensor::vector({0.7}), 1e-5).max_rel_error > 1e-3);
    const double steps[] = {1e-3, 1e-4, 1e-5};
    CHECK(tk::gradcheck(fn, Tensor::vector({0.7}), steps).max_rel_error > 1e-3);
  }

  TEST_CASE("point values are restored") {
    Tensor p = Tensor::vector({0.3, 0.4});
    tk::gradcheck([](Graph& g, const Tensor& x) { return ops::sum(g, x); }, p);
    CHECK(p[0] == 0.3);
    CHECK(p[1] == 0.4);
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("encode and decode round-trip bit-exactly") {
    Rng rng(14);
    const std::vector<tk::NamedTensor> in = {{"a.weight", random_tensor({2, 3}, rng)},
                                             {"b", Tensor::vector({1e-300, -0.0, 1.0 / 3.0})}};
    const std::vector<tk::NamedTensor> out = tk::decode_checkpoint(tk::encode_checkpoint(in));
    REQUIRE(out.size() == 2);
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(out[k].name == in[k].name);
      CHECK(out[k].tensor.shape() == in[k].tensor.shape());
      for (std::size_t i = 0; i < in[k].tensor.size(); ++i) CHECK(out[k].tensor[i] == in[k].tensor[i]);
    }
  }

  TEST_CASE("truncated bytes are a data error") {
    const std::vector<tk::NamedTensor> in = {{"x", Tensor::vector({1, 2, 3})}};
    std::string bytes = tk::encode_checkpoint(in);
    bytes.resize(bytes.size() - 3);
    CHECK_THROWS_AS(tk::decode_checkpoint(bytes), DataError);
  }
}
