#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "hfgan/training.hpp"

using namespace hfgan;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("hfgan_test_training_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ModelConfig tiny_model(Variant variant = Variant::full) {
  ModelConfig m;
  m.n_modalities = 4;
  m.image_size = 32;
  m.base_channels = 4;
  m.latent_channels = 8;
  m.downsample_factor = 4;
  m.token_dim = 8;
  m.n_heads = 2;
  m.patch_size = 2;
  m.mlp_ratio = 2;
  m.disc_channels = {4, 4, 4, 4};
  m.variant = variant;
  m.seed = 3;
  return m;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.epochs = 2;
  t.batch_size = 4;
  t.lr_g = 1e-3;
  t.lr_d = 1e-3;
  t.warmup_fraction = 0.1;
  t.seed = 11;
  return t;
}

std::vector<SliceRecord> phantom_slices(int subjects, Index k) {
  PhantomOptions o;
  o.seed = 5;
  o.n_subjects = subjects;
  o.size = 32;
  o.depth = 6;
  std::vector<SliceRecord> out;
  for (const auto& v : generate_phantoms(o))
    for (auto& r : extract_slices(v, SlicePolicy::center_k(k))) out.push_back(std::move(r));
  return out;
}

std::vector<std::string> names() { return phantom_modality_names(4); }

template <typename S>
std::vector<S> flat_parameters(const ParameterStore<S>& store) {
  std::vector<S> out;
  for (const auto& [name, p] : store.entries())
    for (Index i = 0; i < p.size(); ++i) out.push_back(p.value()[i]);
  return out;
}

}  // namespace

TEST_CASE("learning-rate schedule endpoints") {
  CHECK(lr_schedule(0, 100, 10, 1e-3) == 0.0);
  CHECK(lr_schedule(5, 100, 10, 1e-3) == doctest::Approx(5e-4));
  CHECK(lr_schedule(10, 100, 10, 1e-3) == doctest::Approx(1e-3));
  CHECK(lr_schedule(55, 100, 10, 1e-3) == doctest::Approx(5e-4));
  CHECK(lr_schedule(100, 100, 10, 1e-3) == 0.0);
  CHECK(lr_schedule(0, 10, 0, 2.0) == 2.0);
  for (long s = 11; s < 100; ++s) CHECK(lr_schedule(s, 100, 10, 1.0) < lr_schedule(s - 1, 100, 10, 1.0));
  CHECK_THROWS_AS(lr_schedule(0, 10, 10, 1.0), ParameterError);
  CHECK_THROWS_AS(lr_schedule(11, 10, 1, 1.0), ParameterError);
}

TEST_CASE("Adam matches the closed-form moment update on a quadratic") {
  ParameterStore<double> store;
  auto w = store.create("w", {3});
  const double a[3] = {1.0, 4.0, 0.5};
  w.mutable_value().array() << 1.0, -2.0, 0.3;
  Adam<double> opt(store, 0.9, 0.999, 1e-8);
  auto step = [&](double lr) {
    opt.zero_grad();
    Var<double> coef(Tensor<double>(Shape{3}, Array1<double>((Array1<double>(3) << a[0], a[1], a[2]).finished())));
    backward(scale(sum(mul(coef, mul(w, w))), 0.5));
    opt.step(lr);
  };
  double x[3] = {1.0, -2.0, 0.3}, m[3] = {0, 0, 0}, v[3] = {0, 0, 0};
  for (int t = 1; t <= 3; ++t) {
    step(0.01);
    for (int i = 0; i < 3; ++i) {
      const double g = a[i] * x[i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      x[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
    for (int i = 0; i < 3; ++i) CHECK(w.value()[i] == doctest::Approx(x[i]).epsilon(1e-12));
  }
  // The first step moves every coordinate by lr against the gradient sign.
  ParameterStore<double> s2;
  auto u = s2.create("u", {1});
  u.mutable_value()[0] = 5.0;
  Adam<double> o2(s2);
  backward(scale(mul(u, u), 0.5));
  o2.step(0.1);
  CHECK(u.value()[0] == doctest::Approx(4.9).epsilon(1e-9));
}

TEST_CASE("curriculum sampler invariants over 10k batches") {
  Rng rng(1);
  long hard = 0, total = 0;
  std::set<int> easy_sizes;
  std::vector<long> target_counts(4, 0);
  for (int b = 0; b < 10000; ++b) {
    auto batch = sample_scenario_batch(8, 4, rng);
    REQUIRE(batch.size() == 8u);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& s = batch[i];
      s.validate();
      CHECK(s.hard == (i < 4));
      if (s.hard) {
        ++hard;
        CHECK(s.available.count() == 1);
        CHECK(s.cycle_available.count() == 1);
      } else {
        easy_sizes.insert(s.available.count());
        CHECK(s.cycle_available.count() == 3);
      }
      ++target_counts[static_cast<std::size_t>(s.target)];
      ++total;
    }
  }
  CHECK(hard * 2 == total);
  CHECK(easy_sizes == std::set<int>{2, 3});
  for (long c : target_counts) CHECK(std::abs(static_cast<double>(c) / total - 0.25) < 0.01);

  Rng r1(9), r2(9);
  auto b1 = sample_scenario_batch(6, 5, r1), b2 = sample_scenario_batch(6, 5, r2);
  for (std::size_t i = 0; i < b1.size(); ++i) {
    CHECK(b1[i].available == b2[i].available);
    CHECK(b1[i].target == b2[i].target);
    CHECK(b1[i].cycle_source == b2[i].cycle_source);
  }
  CHECK_THROWS_AS(sample_scenario_batch(7, 4, rng), ParameterError);
  CHECK_THROWS_AS(sample_scenario_batch(4, 2, rng), ParameterError);
}

TEST_CASE("epoch queue enqueues every slice once per target") {
  Trainer<float> trainer(tiny_model(), tiny_train(), phantom_slices(2, 3), names());
  auto q = trainer.epoch_queue();
  CHECK(q.size() == 24u);
  std::set<std::pair<std::size_t, int>> seen;
  for (const auto& e : q) seen.insert({e.record, e.target});
  CHECK(seen.size() == 24u);
  auto batches = trainer.epoch_batches();
  CHECK(static_cast<long>(batches.size()) == trainer.steps_per_epoch());
  for (const auto& b : batches) {
    long hard = 0;
    for (const auto& s : b) {
      s.scenario.validate();
      hard += s.scenario.hard;
    }
    CHECK(hard * 2 == static_cast<long>(b.size()));
  }
  CHECK(trainer.total_steps() == 2 * 6);
  CHECK(trainer.warmup_steps() == 1);
}

TEST_CASE("first step is finite and updates are isolated") {
  Trainer<float> trainer(tiny_model(), tiny_train(), phantom_slices(2, 2), names());
  auto batches = trainer.epoch_batches();
  auto& gp = trainer.generator().parameters();
  auto& dp = trainer.discriminator().parameters();

  // Step 0 runs at lr 0 under warmup; take a step past it first.
  auto r0 = trainer.train_step(batches[0]);
  for (const auto& [name, value] : r0.terms()) CHECK_MESSAGE(std::isfinite(value), name);
  CHECK(r0.adv_d > 0.0);
  CHECK(r0.cyc > 0.0);

  const auto g0 = flat_parameters(gp), d0 = flat_parameters(dp);
  trainer.train_step(batches[1], StepOptions{false, true});
  CHECK(flat_parameters(gp) == g0);
  const auto d1 = flat_parameters(dp);
  CHECK(d1 != d0);
  trainer.train_step(batches[2], StepOptions{true, false});
  CHECK(flat_parameters(dp) == d1);
  CHECK(flat_parameters(gp) != g0);
}

TEST_CASE("zero adversarial weights leave the discriminator untouched") {
  TrainConfig t = tiny_train();
  t.weights = LossWeights{10, 0, 0, 0, 0, 0, 0};
  Trainer<float> trainer(tiny_model(), t, phantom_slices(2, 2), names());
  const auto d0 = flat_parameters(trainer.discriminator().parameters());
  for (const auto& b : trainer.epoch_batches()) {
    auto r = trainer.train_step(b);
    CHECK(r.adv_d == 0.0);
    CHECK(r.cyc == 0.0);
    CHECK(r.total_g == doctest::Approx(10.0 * r.rec));
  }
  CHECK(flat_parameters(trainer.discriminator().parameters()) == d0);
}

TEST_CASE("L1-only training reduces the loss on a 2-subject overfit") {
  TrainConfig t = tiny_train();
  t.weights = LossWeights{1, 0, 0, 0, 0, 0, 0};
  t.total_steps = 50;
  t.warmup_fraction = 0.0;
  t.lr_g = 3e-3;
  Trainer<float> trainer(tiny_model(), t, phantom_slices(2, 2), names());
  std::vector<double> losses;
  while (!trainer.finished())
    for (const auto& r : trainer.run_epoch()) losses.push_back(r.rec);
  REQUIRE(losses.size() == 50u);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += losses[static_cast<std::size_t>(i)];
    tail += losses[losses.size() - 1 - static_cast<std::size_t>(i)];
  }
  CHECK(tail < 0.8 * head);
}

TEST_CASE("checkpoint round trip is bit-identical") {
  const auto dir = scratch_dir("roundtrip");
  Trainer<double> a(tiny_model(), tiny_train(), phantom_slices(2, 2), names());
  a.run_epoch();
  a.save_checkpoint(dir / "a.ckpt");

  Trainer<double> b(tiny_model(), tiny_train(), phantom_slices(2, 2), names());
  b.restore(Checkpoint::load(dir / "a.ckpt"));
  CHECK(flat_parameters(b.generator().parameters()) == flat_parameters(a.generator().parameters()));
  CHECK(flat_parameters(b.discriminator().parameters()) == flat_parameters(a.discriminator().parameters()));
  CHECK(b.state().step == a.state().step);

  const auto& rec = a.records()[0];
  std::vector<Var<double>> x;
  for (const auto& img : rec.images) x.push_back(constant(img.cast<double>()));
  auto mask = AvailabilityMask::parse("1100");
  NoGradGuard ng;
  CHECK(a.generator().synthesize(x, mask, 3).image.value() == b.generator().synthesize(x, mask, 3).image.value());

  auto loaded = load_model<double>(dir / "a.ckpt");
  CHECK(loaded.modalities == names());
  CHECK(loaded.generator->synthesize(x, mask, 2).image.value() == a.generator().synthesize(x, mask, 2).image.value());

  // Float archives keep float bits.
  Trainer<float> f(tiny_model(), tiny_train(), phantom_slices(2, 2), names());
  f.save_checkpoint(dir / "f.ckpt");
  auto lf = load_model<float>(dir / "f.ckpt");
  CHECK(flat_parameters(lf.generator->parameters()) == flat_parameters(f.generator().parameters()));

  TrainConfig other = tiny_train();
  other.lr_g = 5e-4;
  Trainer<double> c(tiny_model(), other, phantom_slices(2, 2), names());
  CHECK_THROWS_AS(c.restore(Checkpoint::load(dir / "a.ckpt")), LoadError);
  CHECK_THROWS_AS(Checkpoint::load(dir / "missing.ckpt"), LoadError);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(Checkpoint::load(dir / "junk.ckpt"), LoadError);
}

TEST_CASE("resuming from an epoch checkpoint reproduces the next epoch") {
  const auto dir = scratch_dir("resume");
  TrainConfig t = tiny_train();
  t.epochs = 3;
  Trainer<double> straight(tiny_model(), t, phantom_slices(2, 2), names());
  straight.run_epoch();
  straight.save_checkpoint(dir / "e1.ckpt");
  const auto expected = straight.run_epoch();

  Trainer<double> resumed(tiny_model(), t, phantom_slices(2, 2), names());
  resumed.restore(Checkpoint::load(dir / "e1.ckpt"));
  CHECK(resumed.state().epoch == 1);
  const auto got = resumed.run_epoch();
  REQUIRE(got.size() == expected.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    const auto e = expected[i].terms(), g = got[i].terms();
    for (std::size_t k = 0; k < e.size(); ++k) CHECK(std::abs(e[k].second - g[k].second) < 1e-4);
  }
}

TEST_CASE("train writes one metrics row per step per term and epoch checkpoints") {
  const auto dir = scratch_dir("run");
  Trainer<float> trainer(tiny_model(), tiny_train(), phantom_slices(2, 2), names());
  train(trainer, dir);
  std::ifstream in(dir / "metrics.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,term,value");
  long rows = 0;
  std::set<long> steps;
  while (std::getline(in, line)) {
    ++rows;
    steps.insert(std::stol(split(line, ',')[0]));
  }
  CHECK(rows == trainer.total_steps() * 9);
  CHECK(static_cast<long>(steps.size()) == trainer.total_steps());
  CHECK(fs::exists(dir / "checkpoints" / "epoch_001.ckpt"));
  CHECK(fs::exists(dir / "checkpoints" / "epoch_002.ckpt"));
  CHECK(fs::exists(dir / "checkpoints" / "latest.ckpt"));
  CHECK(Checkpoint::load(dir / "checkpoints" / "latest.ckpt").get("step") == std::to_string(trainer.total_steps()));
}

TEST_CASE("non-finite losses halve the learning rate once, then abort with a snapshot") {
  const auto dir = scratch_dir("nonfinite");
  TrainConfig t = tiny_train();
  t.epochs = 10;
  Trainer<float> trainer(tiny_model(), t, phantom_slices(2, 2), names());
  trainer.set_snapshot_path(dir / "snap.ckpt");
  trainer.generator().parameters().at("decoder.output.bias").mutable_value()[0] = std::nanf("");
  auto batches = trainer.epoch_batches();
  for (int i = 0; i < 3; ++i) CHECK_FALSE(std::isfinite(trainer.train_step(batches[0]).total_g));
  CHECK(trainer.state().lr_halved);
  CHECK(trainer.state().lr_scale == 0.5);
  trainer.train_step(batches[0]);
  trainer.train_step(batches[0]);
  CHECK_THROWS_AS(trainer.train_step(batches[0]), NonFiniteError);
  CHECK(fs::exists(dir / "snap.ckpt"));
}

TEST_CASE("ablation variants change the parameter budget by their component share") {
  const auto full = count_parameters(tiny_model());
  const auto no_caff = count_parameters(tiny_model(Variant::no_caff));
  const auto no_enc_m = count_parameters(tiny_model(Variant::no_enc_m));
  const auto no_enc_c = count_parameters(tiny_model(Variant::no_enc_c));
  CHECK(full.total == full.encoder + full.fusion + full.infuser + full.decoder);
  // Five attention blocks of two size-3 conv1d layers plus the 2c -> c projection,
  // replaced by a c -> c projection.
  const Index c = 8;
  CHECK(full.total - no_caff.total == 5 * 2 * (3 + 1) + (2 * c * c + c) - (c * c + c));
  CHECK(no_caff.encoder == full.encoder);

  Generator<float> g(tiny_model());
  const Index specific = g.parameters().count("encoder.specific");
  const Index complementary = g.parameters().count("encoder.complementary");
  CHECK(full.encoder - no_enc_m.encoder == specific);
  CHECK(full.encoder - no_enc_c.encoder == complementary);
}

TEST_CASE("config entries round trip and reject unknown keys") {
  ModelConfig m = tiny_model(Variant::no_enc_c);
  m.intensity = IntensityMode::median;
  TrainConfig t = tiny_train();
  t.weights.lambda3 = 0.125;
  ModelConfig m2;
  TrainConfig t2;
  for (const auto& [k, v] : config_entries(m, t)) apply_config_entry(m2, t2, k, v);
  CHECK(config_entries(m2, t2) == config_entries(m, t));
  CHECK(config_hash(m2, t2) == config_hash(m, t));
  t2.lr_d = 2e-5;
  CHECK(config_hash(m2, t2) != config_hash(m, t));
  CHECK_THROWS_AS(apply_config_entry(m2, t2, "learning_rate", "1"), ParameterError);
  CHECK_THROWS_AS(apply_config_entry(m2, t2, "epochs", "ten"), ParameterError);
  CHECK_THROWS_AS(apply_config_entry(m2, t2, "variant", "no-encoder"), ParameterError);
  apply_config_entry(m2, t2, "seed", "42");
  CHECK(m2.seed == 42u);
  CHECK(t2.seed == 42u);
}

TEST_CASE("intensity priors per mode") {
  SliceRecord r;
  r.priors = {0.1f, std::nanf(""), -0.2f};
  const std::vector<float> means{0.5f, 0.6f, 0.7f};
  CHECK_FALSE(select_prior(IntensityMode::off, r, 0, means).has_value());
  CHECK(*select_prior(IntensityMode::median, r, 0, means) == 0.1f);
  CHECK(*select_prior(IntensityMode::median, r, 1, means) == 0.6f);
  CHECK(*select_prior(IntensityMode::dataset_mean, r, 2, means) == 0.7f);
  CHECK_THROWS_AS(select_prior(IntensityMode::dataset_mean, r, 2, {}), PriorError);

  auto slices = phantom_slices(3, 2);
  const auto pm = dataset_prior_means(slices, 4);
  // One vote per subject: slices 0, 2 and 4 start the three subjects.
  const float expected = (slices[0].priors[1] + slices[2].priors[1] + slices[4].priors[1]) / 3.0f;
  CHECK(pm[1] == doctest::Approx(expected).epsilon(1e-6));
}
