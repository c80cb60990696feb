#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "histonet/errors.hpp"
#include "histonet/scenegen/dataset_io.hpp"
#include "histonet/scenegen/generator.hpp"
#include "histonet/train/trainer.hpp"

using namespace histonet;
using train::TrainConfig;

namespace {

struct TinyData {
  scene::Dataset ds;
  train::TrainSet set() const { return {ds.scenes, ds.images, 16.0}; }
};

TinyData tiny_data(std::size_t n, std::uint64_t seed) {
  return {scene::generate_dataset(scene::desk_config(16), n, seed)};
}

std::vector<tk::Tensor> snapshot(const model::HistoNet& net) {
  std::vector<tk::Tensor> out;
  for (const model::Parameter& p : net.parameters()) out.push_back(p.tensor.clone());
  return out;
}

bool same(const tk::Tensor& a, const tk::Tensor& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("subsets") {
  TEST_CASE("smaller fractions are prefixes of larger ones") {
    const auto q = train::nested_subset(100, 0.25, 7);
    const auto h = train::nested_subset(100, 0.5, 7);
    const auto f = train::nested_subset(100, 1.0, 7);
    CHECK(q.size() == 25);
    CHECK(h.size() == 50);
    CHECK(f.size() == 100);
    CHECK(std::equal(q.begin(), q.end(), h.begin()));
    CHECK(std::equal(h.begin(), h.end(), f.begin()));
    CHECK(std::set<std::size_t>(f.begin(), f.end()).size() == 100);
    CHECK(train::nested_subset(100, 0.5, 7) == h);
    CHECK(train::nested_subset(100, 0.5, 8) != h);
  }

  TEST_CASE("fraction outside (0, 1] is rejected") {
    CHECK_THROWS_AS(train::nested_subset(10, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(train::nested_subset(10, 1.5, 1), ConfigError);
  }

  TEST_CASE("validation split holds out the tail") {
    const auto [tr, val] = train::split_validation(10, 0.2);
    CHECK(tr.size() == 8);
    CHECK(val == std::vector<std::size_t>{8, 9});
    CHECK(train::split_validation(10, 0.0).second.empty());
  }
}

TEST_SUITE("trainer") {
  TEST_CASE("invalid configs") {
    TrainConfig c;
    c.lr_final = 0.0;
    CHECK_THROWS_AS(train::Trainer{c}, ConfigError);
    c = TrainConfig{};
    c.lr_final = 1.5;
    CHECK_THROWS_AS(train::Trainer{c}, ConfigError);
    c = TrainConfig{};
    c.batch = 0;
    CHECK_THROWS_AS(train::Trainer{c}, ConfigError);
    CHECK(train::to_json(TrainConfig{}).contains("lr_final"));
  }

  TEST_CASE("loss decreases on a few fixed scenes") {
    const TinyData d = tiny_data(4, 3);
    model::HistoNet net(model::tiny_config(), 1);
    const double before = train::mean_loss(net, d.set()).l_total;
    TrainConfig c;
    c.steps = 150;
    c.batch = 4;
    c.lr = 3e-3;
    c.augment = false;
    c.seed = 2;
    train::Trainer(c).fit(net, d.set());
    const double after = train::mean_loss(net, d.set()).l_total;
    MESSAGE("loss " << before << " -> " << after);
    CHECK(after < 0.5 * before);
  }

  TEST_CASE("same seed, bit-identical weights and logs") {
    const TinyData d = tiny_data(6, 4);
    TrainConfig c;
    c.epochs = 2;
    c.batch = 2;
    c.seed = 9;
    model::HistoNet a(model::tiny_config(), 5), b(model::tiny_config(), 5);
    const auto la = train::Trainer(c).fit(a, d.set());
    const auto lb = train::Trainer(c).fit(b, d.set());
    REQUIRE(la.size() == 2);
    CHECK(la.back().to_json() == lb.back().to_json());
    CHECK(la.back().steps == 6);
    const auto sa = snapshot(a), sb = snapshot(b);
    for (std::size_t k = 0; k < sa.size(); ++k) CHECK(same(sa[k], sb[k]));
  }

  TEST_CASE("frozen groups keep their initial values") {
    const TinyData d = tiny_data(4, 5);
    model::ModelConfig mc = model::tiny_config();
    mc.dsn = true;
    model::HistoNet net(mc, 6);
    const auto init = snapshot(net);
    TrainConfig c;
    c.steps = 5;
    c.objective = train::Objective::count;
    c.trainable = {model::ParamGroup::count_branch};
    train::Trainer(c).fit(net, d.set());
    bool count_moved = false;
    for (std::size_t k = 0; k < init.size(); ++k) {
      const model::Parameter& p = net.parameters()[k];
      if (p.group == model::ParamGroup::count_branch) {
        count_moved = count_moved || !same(p.tensor, init[k]);
      } else {
        CHECK_MESSAGE(same(p.tensor, init[k]), p.name);
      }
    }
    CHECK(count_moved);
  }

  TEST_CASE("validation losses are reported per epoch") {
    const TinyData d = tiny_data(6, 6);
    const train::TrainSet tr{std::span(d.ds.scenes).first(4), std::span(d.ds.images).first(4), 16.0};
    const train::TrainSet val{std::span(d.ds.scenes).last(2), std::span(d.ds.images).last(2), 16.0};
    model::HistoNet net(model::tiny_config(), 7);
    TrainConfig c;
    c.epochs = 2;
    int calls = 0;
    const auto logs = train::Trainer(c).fit(net, tr, &val, [&](const train::EpochLog&) { ++calls; });
    CHECK(calls == 2);
    for (const train::EpochLog& l : logs) {
      REQUIRE(l.val.has_value());
      CHECK(std::isfinite(l.val->l_total));
      CHECK(l.to_json().contains("val"));
    }
  }

  TEST_CASE("empty training set is a data error") {
    model::HistoNet net(model::tiny_config(), 1);
    CHECK_THROWS_AS(train::Trainer(TrainConfig{}).fit(net, train::TrainSet{}), DataError);
  }
}
