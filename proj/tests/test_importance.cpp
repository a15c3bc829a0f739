#include "doctest.h"

#include <cmath>

#include "credtx/errors.hpp"
#include "credtx/importance.hpp"
#include "credtx/io.hpp"
#include "credtx/training.hpp"

using namespace credtx;

namespace {

SplitFrames prepared(const std::string& preset, std::size_t n, std::size_t f, std::uint64_t seed) {
  const auto data = synth_generate(n, f, seed, synth_preset(preset, f));
  const auto raw = split(data.frame, SplitSpec{0.7, 0.15, 0.15, seed, true});
  return preprocess(raw, fit_preprocessor(raw.train, {}));
}

ModelConfig tiny() {
  ModelConfig c;
  c.d_embed = 4;
  c.conv.channels = 8;
  c.attn.d_model = 8;
  c.attn.n_heads = 2;
  c.attn.n_blocks = 1;
  c.ffn_dim = 8;
  c.mlp_hidden = {8};
  return c;
}

TrainConfig quick() {
  TrainConfig t;
  t.epochs = 6;
  t.batch_size = 32;
  t.learning_rate = 3e-3;
  t.early_stop.reset();
  return t;
}

double spread(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST_CASE("a feature the model cannot see has zero importance") {
  const auto z = prepared("linear", 5000, 6, 1);
  const auto cfg = tiny();
  auto ps = init_params(cfg, 6, 3);
  // Zero the embedding of feature 4: its token no longer depends on its value.
  auto& e = ps.at("embed.weight").value;
  for (std::size_t d = 0; d < cfg.d_embed; ++d) e(4, d) = 0.0;
  const CreditModel model(cfg, 6);
  ImportanceOptions opt;
  opt.repeats = 2;
  const auto rep = permutation_importance(model, ps, z.train, opt);
  for (const auto& entry : rep.entries) {
    if (entry.feature == "f4") {
      CHECK(std::abs(entry.mean_drop) < 0.01);
      CHECK(entry.mean_drop == 0.0);
    }
  }
}

TEST_CASE("the dominant generator feature ranks first") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto z = prepared("strong-single", 1500, 6, seed);
    auto m = tiny();
    m.seed = seed;
    auto t = quick();
    t.seed = seed;
    const auto r = train(m, t, z);
    const CreditModel model(m, 6);
    ImportanceOptions opt;
    opt.seed = seed;
    opt.repeats = 3;
    const auto rep = permutation_importance(model, r.params, z.test, opt);
    CAPTURE(seed);
    CHECK(rep.entries.front().feature == "f0");
    CHECK(rep.entries.front().index == 0);
    CHECK(rep.entries.front().mean_drop > 0.1);
  }
}

TEST_CASE("more repeats keep the ranking and tighten the estimate") {
  const auto z = prepared("linear", 1500, 6, 11);
  const auto m = tiny();
  const auto r = train(m, quick(), z);
  const CreditModel model(m, 6);

  std::vector<double> at1, at10;
  for (std::uint64_t s = 0; s < 6; ++s) {
    ImportanceOptions one;
    one.seed = s;
    one.repeats = 1;
    ImportanceOptions ten = one;
    ten.repeats = 10;
    const auto a = permutation_importance(model, r.params, z.test, one);
    const auto b = permutation_importance(model, r.params, z.test, ten);
    CHECK(a.entries.front().feature == "f0");
    CHECK(b.entries.front().feature == "f0");
    CHECK(a.entries.front().std_drop == 0.0);
    CHECK(b.entries.front().drops.size() == 10);
    // Track a weaker feature whose drop is noisier.
    for (const auto& e : a.entries)
      if (e.feature == "f4") at1.push_back(e.mean_drop);
    for (const auto& e : b.entries)
      if (e.feature == "f4") at10.push_back(e.mean_drop);
  }
  CHECK(spread(at10) < spread(at1));
}

TEST_CASE("importance is deterministic and validated") {
  const auto z = prepared("linear", 400, 6, 12);
  const auto m = tiny();
  const auto ps = init_params(m, 6, 1);
  const CreditModel model(m, 6);
  for (auto metric : {ImportanceMetric::auc, ImportanceMetric::acc, ImportanceMetric::ks}) {
    ImportanceOptions opt;
    opt.metric = metric;
    const auto a = permutation_importance(model, ps, z.test, opt);
    const auto b = permutation_importance(model, ps, z.test, opt);
    CHECK(json(a).dump() == json(b).dump());
    CHECK(a.entries.size() == 6);
    for (std::size_t i = 1; i < a.entries.size(); ++i) CHECK(a.entries[i - 1].mean_drop >= a.entries[i].mean_drop);
  }
  ImportanceOptions zero;
  zero.repeats = 0;
  CHECK_THROWS_AS(permutation_importance(model, ps, z.test, zero), ConfigError);
  const auto raw = synth_generate(200, 6, 1, synth_preset("linear", 6)).frame;
  CHECK_THROWS_AS(permutation_importance(model, ps, raw), ConfigError);
  CHECK_THROWS_AS(parse_importance_metric("f1"), ConfigError);
}

TEST_CASE("baseline, per-column drops and ranking are consistent") {
  const auto z = prepared("linear", 600, 6, 13);
  const auto m = tiny();
  const auto ps = init_params(m, 6, 4);
  const CreditModel model(m, 6);
  ImportanceOptions opt;
  opt.repeats = 3;
  opt.seed = 21;
  const auto rep = permutation_importance(model, ps, z.test, opt);

  // Baseline is the metric on the untouched frame, bit for bit.
  CHECK(rep.baseline == score_metric(opt.metric, predict_frame(model, ps, z.test), z.test.y, opt.threshold));

  // Each column's drops do not depend on which other columns were shuffled.
  for (const auto& e : rep.entries) {
    const auto alone = feature_importance(model, ps, z.test, e.index, rep.baseline, opt);
    CHECK(alone.drops == e.drops);
    CHECK(alone.mean_drop == e.mean_drop);
  }

  // The ranking is a permutation of the feature set with names tied to indices.
  std::vector<bool> seen(6, false);
  for (const auto& e : rep.entries) {
    REQUIRE(e.index < 6);
    CHECK_FALSE(seen[e.index]);
    seen[e.index] = true;
    CHECK(e.feature == z.test.feature_names[e.index]);
  }
}
