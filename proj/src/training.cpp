#include "hfgan/training.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace hfgan {

// ---------------------------------------------------------------------------
// Scenario sampling

void ScenarioSample::validate() const {
  const int n = available.size();
  if (cycle_available.size() != n) throw ContractError("scenario masks differ in length");
  if (target < 0 || target >= n || cycle_source < 0 || cycle_source >= n)
    throw ContractError("scenario modality out of range");
  if (available[target]) throw ContractError("target " + std::to_string(target) + " is available in AS");
  if (!available[cycle_source]) throw ContractError("cycle source is not available in AS");
  if (!cycle_available[target]) throw ContractError("target is missing from hat AS");
  if (cycle_available[cycle_source]) throw ContractError("cycle source is present in hat AS");
  if (hard) {
    if (available.count() != 1 || cycle_available.count() != 1)
      throw ContractError("hard scenario needs one input and a one-hot hat AS");
  } else if (available.count() < 2 || cycle_available.count() != n - 1) {
    throw ContractError("easy scenario needs at least two inputs and |hat AS| = N-1");
  }
}

ScenarioSample sample_scenario(int n_modalities, int target, bool hard, Rng& rng) {
  if (n_modalities < 3)
    throw ParameterError("curriculum sampling needs N >= 3: with N = " + std::to_string(n_modalities) +
                         " no easy scenario has two inputs and a missing target");
  if (target < 0 || target >= n_modalities) throw IndexError("target " + std::to_string(target) + " out of range");
  std::vector<int> others;
  for (int i = 0; i < n_modalities; ++i)
    if (i != target) others.push_back(i);
  // Partial Fisher-Yates: the first k entries form a uniform k-subset.
  const int k = hard ? 1 : 2 + uniform_int(rng, n_modalities - 2);
  for (int i = 0; i < k; ++i) {
    const int j = i + uniform_int(rng, static_cast<int>(others.size()) - i);
    std::swap(others[static_cast<std::size_t>(i)], others[static_cast<std::size_t>(j)]);
  }
  ScenarioSample s;
  s.hard = hard;
  s.target = target;
  s.available = AvailabilityMask(std::vector<std::uint8_t>(static_cast<std::size_t>(n_modalities), 0));
  for (int i = 0; i < k; ++i) s.available.set(others[static_cast<std::size_t>(i)], true);
  s.cycle_source = others[static_cast<std::size_t>(uniform_int(rng, k))];
  s.cycle_available = cycle_mask(n_modalities, target, s.cycle_source, hard);
  return s;
}

std::vector<ScenarioSample> sample_scenario_batch(int batch_size, int n_modalities, Rng& rng) {
  if (batch_size <= 0 || batch_size % 2 != 0)
    throw ParameterError("batch size must be positive and even, got " + std::to_string(batch_size));
  if (n_modalities < 3) sample_scenario(n_modalities, 0, true, rng);  // throws
  std::vector<ScenarioSample> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i)
    batch.push_back(sample_scenario(n_modalities, uniform_int(rng, n_modalities), i < batch_size / 2, rng));
  return batch;
}

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (epochs <= 0) throw ParameterError("epochs must be positive");
  if (batch_size <= 0 || batch_size % 2 != 0)
    throw ParameterError("batch size must be positive and even, got " + std::to_string(batch_size));
  if (!(lr_g >= 0.0) || !(lr_d >= 0.0)) throw ParameterError("learning rates must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ParameterError("Adam betas must lie in [0, 1)");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ParameterError("warmup fraction must lie in [0, 1)");
  if (total_steps < 0) throw ParameterError("total_steps must be non-negative");
  if (checkpoint_every <= 0) throw ParameterError("checkpoint_every must be positive");
  weights.validate();
}

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T v{};
  auto res = std::from_chars(value.data(), value.data() + value.size(), v);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size())
    throw ParameterError("invalid value '" + value + "' for " + key);
  return v;
}

std::string join_indices(const std::vector<Index>& v) {
  std::vector<std::string> parts;
  for (Index x : v) parts.push_back(std::to_string(x));
  return join(parts, ',');
}

}  // namespace

std::vector<std::pair<std::string, std::string>> config_entries(const ModelConfig& m, const TrainConfig& t) {
  return {
      {"n_modalities", std::to_string(m.n_modalities)},
      {"image_size", std::to_string(m.image_size)},
      {"base_channels", std::to_string(m.base_channels)},
      {"latent_channels", std::to_string(m.latent_channels)},
      {"downsample_factor", std::to_string(m.downsample_factor)},
      {"token_dim", std::to_string(m.token_dim)},
      {"n_heads", std::to_string(m.n_heads)},
      {"patch_size", std::to_string(m.patch_size)},
      {"mlp_ratio", std::to_string(m.mlp_ratio)},
      {"disc_channels", join_indices(m.disc_channels)},
      {"variant", to_string(m.variant)},
      {"ie", to_string(m.intensity)},
      {"seed", std::to_string(t.seed)},
      {"init_seed", std::to_string(m.seed)},
      {"epochs", std::to_string(t.epochs)},
      {"batch_size", std::to_string(t.batch_size)},
      {"lr_g", format_double(t.lr_g)},
      {"lr_d", format_double(t.lr_d)},
      {"beta1", format_double(t.beta1)},
      {"beta2", format_double(t.beta2)},
      {"warmup_fraction", format_double(t.warmup_fraction)},
      {"total_steps", std::to_string(t.total_steps)},
      {"checkpoint_every", std::to_string(t.checkpoint_every)},
      {"alpha", format_double(t.weights.alpha)},
      {"beta", format_double(t.weights.beta)},
      {"gamma", format_double(t.weights.gamma)},
      {"lambda1", format_double(t.weights.lambda1)},
      {"lambda2", format_double(t.weights.lambda2)},
      {"lambda3", format_double(t.weights.lambda3)},
      {"lambda4", format_double(t.weights.lambda4)},
  };
}

void apply_config_entry(ModelConfig& m, TrainConfig& t, const std::string& key, const std::string& value) {
  auto idx = [&] { return static_cast<Index>(parse_number<long>(key, value)); };
  auto dbl = [&] { return parse_number<double>(key, value); };
  if (key == "n_modalities") m.n_modalities = parse_number<int>(key, value);
  else if (key == "image_size") m.image_size = idx();
  else if (key == "base_channels") m.base_channels = idx();
  else if (key == "latent_channels") m.latent_channels = idx();
  else if (key == "downsample_factor") m.downsample_factor = idx();
  else if (key == "token_dim") m.token_dim = idx();
  else if (key == "n_heads") m.n_heads = idx();
  else if (key == "patch_size") m.patch_size = idx();
  else if (key == "mlp_ratio") m.mlp_ratio = idx();
  else if (key == "disc_channels") {
    m.disc_channels.clear();
    for (const auto& part : split(value, ',')) m.disc_channels.push_back(parse_number<long>(key, part));
  } else if (key == "variant") m.variant = parse_variant(value);
  else if (key == "ie") m.intensity = parse_intensity_mode(value);
  else if (key == "init_seed") m.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "seed") {
    t.seed = parse_number<std::uint64_t>(key, value);
    m.seed = t.seed;
  } else if (key == "epochs") t.epochs = parse_number<int>(key, value);
  else if (key == "batch_size") t.batch_size = parse_number<int>(key, value);
  else if (key == "lr_g") t.lr_g = dbl();
  else if (key == "lr_d") t.lr_d = dbl();
  else if (key == "beta1") t.beta1 = dbl();
  else if (key == "beta2") t.beta2 = dbl();
  else if (key == "warmup_fraction") t.warmup_fraction = dbl();
  else if (key == "total_steps") t.total_steps = parse_number<long>(key, value);
  else if (key == "checkpoint_every") t.checkpoint_every = parse_number<int>(key, value);
  else if (key == "alpha") t.weights.alpha = dbl();
  else if (key == "beta") t.weights.beta = dbl();
  else if (key == "gamma") t.weights.gamma = dbl();
  else if (key == "lambda1") t.weights.lambda1 = dbl();
  else if (key == "lambda2") t.weights.lambda2 = dbl();
  else if (key == "lambda3") t.weights.lambda3 = dbl();
  else if (key == "lambda4") t.weights.lambda4 = dbl();
  else throw ParameterError("unknown config key '" + key + "'");
}

void read_checkpoint_config(const Checkpoint& ck, ModelConfig& model, TrainConfig& train) {
  for (const auto& [key, value] : ck.manifest())
    if (key.rfind("config.", 0) == 0) apply_config_entry(model, train, key.substr(7), value);
}

std::uint64_t config_hash(const ModelConfig& model, const TrainConfig& train) {
  std::string text;
  for (const auto& [k, v] : config_entries(model, train)) text += k + "=" + v + "\n";
  return fnv1a(text);
}

// ---------------------------------------------------------------------------
// Priors

std::optional<float> select_prior(IntensityMode mode, const SliceRecord& record, int t,
                                  const std::vector<float>& dataset_means) {
  if (mode == IntensityMode::off) return std::nullopt;
  const auto ti = static_cast<std::size_t>(t);
  if (mode == IntensityMode::median && ti < record.priors.size() && std::isfinite(record.priors[ti]))
    return record.priors[ti];
  if (ti >= dataset_means.size() || !std::isfinite(dataset_means[ti]))
    throw PriorError("no intensity prior available for modality " + std::to_string(t));
  return dataset_means[ti];
}

std::vector<float> dataset_prior_means(const std::vector<SliceRecord>& records, int n_modalities) {
  std::vector<float> out(static_cast<std::size_t>(n_modalities), std::nanf(""));
  for (int i = 0; i < n_modalities; ++i) {
    std::vector<float> medians;
    std::string last_subject;
    bool first = true;
    for (const auto& r : records) {
      if (!first && r.subject_id == last_subject) continue;
      first = false;
      last_subject = r.subject_id;
      const auto ii = static_cast<std::size_t>(i);
      if (ii < r.priors.size() && std::isfinite(r.priors[ii])) medians.push_back(r.priors[ii]);
    }
    if (!medians.empty()) out[static_cast<std::size_t>(i)] = dataset_mean_prior(medians).value;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

namespace {

template <typename S>
Var<S> image_var(const Image& img) {
  if constexpr (std::is_same_v<S, float>)
    return constant(img);
  else
    return constant(img.template cast<S>());
}

template <typename S>
std::optional<S> as_prior(std::optional<float> p) {
  if (!p) return std::nullopt;
  return static_cast<S>(*p);
}

}  // namespace

template <typename S>
Trainer<S>::Trainer(const ModelConfig& model, const TrainConfig& train, std::vector<SliceRecord> records,
                    std::vector<std::string> modality_names)
    : model_(model), train_(train), records_(std::move(records)), modality_names_(std::move(modality_names)) {
  model_.validate();
  train_.validate();
  if (records_.empty()) throw ParameterError("training set is empty");
  if (static_cast<int>(modality_names_.size()) != model_.n_modalities)
    throw ParameterError("expected " + std::to_string(model_.n_modalities) + " modality names, got " +
                         std::to_string(modality_names_.size()));
  for (const auto& r : records_) {
    if (r.n_modalities() != model_.n_modalities)
      throw ShapeError("slice " + r.subject_id + ":" + std::to_string(r.slice_index) + " has " +
                       std::to_string(r.n_modalities()) + " modalities, model expects " +
                       std::to_string(model_.n_modalities));
    for (const auto& img : r.images)
      if (img.shape() != Shape{model_.image_size, model_.image_size})
        throw ShapeError("slice " + r.subject_id + " has shape " + shape_string(img.shape()) + ", model expects " +
                         std::to_string(model_.image_size) + "x" + std::to_string(model_.image_size));
  }
  // Curriculum sampling is impossible below three modalities.
  if (model_.n_modalities < 3) sample_scenario(model_.n_modalities, 0, true, rng_);
  prior_means_ = dataset_prior_means(records_, model_.n_modalities);
  if (model_.intensity == IntensityMode::dataset_mean)
    for (float p : prior_means_)
      if (!std::isfinite(p)) throw PriorError("dataset-mean intensity encoding needs priors for every modality");
  generator_ = std::make_unique<Generator<S>>(model_);
  discriminator_ = std::make_unique<Discriminator<S>>(model_);
  opt_g_ = Adam<S>(generator_->parameters(), train_.beta1, train_.beta2);
  opt_d_ = Adam<S>(discriminator_->parameters(), train_.beta1, train_.beta2);
  rng_.seed(train_.seed);
}

template <typename S>
std::vector<QueueEntry> Trainer<S>::epoch_queue() {
  std::vector<QueueEntry> q;
  q.reserve(records_.size() * static_cast<std::size_t>(model_.n_modalities));
  for (std::size_t r = 0; r < records_.size(); ++r)
    for (int t = 0; t < model_.n_modalities; ++t) q.push_back({r, t});
  for (std::size_t i = q.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng_, static_cast<int>(i)));
    std::swap(q[i - 1], q[j]);
  }
  return q;
}

template <typename S>
std::vector<std::vector<TrainingSample>> Trainer<S>::epoch_batches() {
  const auto queue = epoch_queue();
  const auto b = static_cast<std::size_t>(train_.batch_size);
  std::vector<std::vector<TrainingSample>> batches;
  for (std::size_t start = 0; start < queue.size(); start += b) {
    std::size_t n = std::min(b, queue.size() - start);
    n -= n % 2;
    if (n == 0) break;
    std::vector<TrainingSample> batch;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& e = queue[start + i];
      batch.push_back({e.record, sample_scenario(model_.n_modalities, e.target, i < n / 2, rng_)});
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

template <typename S>
long Trainer<S>::steps_per_epoch() const {
  const long q = static_cast<long>(records_.size()) * model_.n_modalities;
  const long b = train_.batch_size;
  const long rem = q % b;
  return q / b + (rem >= 2 ? 1 : 0);
}

template <typename S>
long Trainer<S>::total_steps() const {
  return train_.total_steps > 0 ? train_.total_steps : static_cast<long>(train_.epochs) * steps_per_epoch();
}

template <typename S>
long Trainer<S>::warmup_steps() const {
  return static_cast<long>(std::floor(train_.warmup_fraction * static_cast<double>(total_steps())));
}

template <typename S>
bool Trainer<S>::discriminator_active() const {
  const auto& w = train_.weights;
  return w.lambda1 > 0 || w.lambda2 > 0 || w.lambda3 > 0 || w.lambda4 > 0;
}

template <typename S>
bool Trainer<S>::cycle_active() const {
  return train_.weights.beta > 0 || train_.weights.gamma > 0;
}

template <typename S>
LossReport Trainer<S>::train_step(const std::vector<TrainingSample>& batch, StepOptions options) {
  if (batch.empty()) throw ParameterError("empty training batch");
  const auto& w = train_.weights;
  const bool with_d = discriminator_active();
  const bool with_cycle = cycle_active();
  const S inv_b = S(1) / static_cast<S>(batch.size());
  Generator<S>& g = *generator_;
  Discriminator<S>& d = *discriminator_;
  opt_g_.zero_grad();
  opt_d_.zero_grad();

  LossReport sum;
  bool finite = true;
  for (const auto& sample : batch) {
    const ScenarioSample& sc = sample.scenario;
    const SliceRecord& rec = records_.at(sample.record);
    const int t = sc.target, c = sc.cycle_source;
    std::vector<Var<S>> real, inputs;
    for (int i = 0; i < model_.n_modalities; ++i) {
      real.push_back(image_var<S>(rec.images[static_cast<std::size_t>(i)]));
      inputs.push_back(sc.available[i] ? real.back() : constant(Tensor<S>(real.back().shape())));
    }
    const auto out = g.synthesize(inputs, sc.available, t, as_prior<S>(select_prior(model_.intensity, rec, t, prior_means_)));
    const Var<S> rec_loss = reconstruction_loss(real[static_cast<std::size_t>(t)], out.image);
    std::vector<Var<S>> g_terms{scale(rec_loss, S(w.alpha))};
    LossReport r;
    r.rec = rec_loss.item();
    if (with_cycle) {
      const auto hat = cycle_inputs(real, sc.cycle_available, t, out.image);
      const auto out2 = g.synthesize(hat, sc.cycle_available, c,
                                     as_prior<S>(select_prior(model_.intensity, rec, c, prior_means_)));
      const Var<S> cyc = reconstruction_loss(real[static_cast<std::size_t>(c)], out2.image);
      const Var<S> sim = similarity_loss(out.z, out2.z);
      r.cyc = cyc.item();
      r.sim = sim.item();
      g_terms.push_back(scale(cyc, S(w.gamma)));
      g_terms.push_back(scale(sim, S(w.beta)));
    }
    if (with_d) {
      {
        FreezeGuard<S> frozen(d.parameters());
        const auto fake = d(out.image);
        const Var<S> adv_g = generator_adversarial(fake.patch_logits);
        const Var<S> cls_g = classification_loss(fake.class_logits, t);
        r.adv_g = adv_g.item();
        r.cls_fake = cls_g.item();
        g_terms.push_back(scale(adv_g, S(w.lambda1)));
        g_terms.push_back(scale(cls_g, S(w.lambda2)));
        const Var<S> g_loss = scale(sum_all<S>(g_terms), inv_b);
        if (!std::isfinite(g_loss.item())) finite = false;
        // Backward runs inside the guard so no gradient reaches D.
        if (finite && options.update_generator) backward(g_loss);
      }
      const auto real_out = d(real[static_cast<std::size_t>(t)]);
      const auto fake_out = d(detach(out.image));
      const Var<S> adv_d = discriminator_adversarial(real_out.patch_logits, fake_out.patch_logits);
      const Var<S> cls_real = classification_loss(real_out.class_logits, t);
      const Var<S> cls_fake = classification_loss(fake_out.class_logits, t);
      r.adv_d = adv_d.item();
      r.cls_real = cls_real.item();
      const Var<S> d_loss = scale(weighted_discriminator_loss(adv_d, cls_real, cls_fake, w), inv_b);
      if (!std::isfinite(d_loss.item())) finite = false;
      if (finite && options.update_discriminator) backward(d_loss);
    } else {
      const Var<S> g_loss = scale(sum_all<S>(g_terms), inv_b);
      if (!std::isfinite(g_loss.item())) finite = false;
      if (finite && options.update_generator) backward(g_loss);
    }
    sum.rec += r.rec;
    sum.cyc += r.cyc;
    sum.sim += r.sim;
    sum.adv_g += r.adv_g;
    sum.adv_d += r.adv_d;
    sum.cls_real += r.cls_real;
    sum.cls_fake += r.cls_fake;
    if (!finite) break;
  }
  const double n = static_cast<double>(batch.size());
  LossReport report{sum.rec / n, sum.cyc / n, sum.sim / n, sum.adv_g / n, sum.adv_d / n, sum.cls_real / n,
                    sum.cls_fake / n, 0, 0};
  report.total_g = total_generator_loss(report, w);
  report.total_d = total_discriminator_loss(report, w);
  if (!finite) {
    report.total_g = report.total_d = std::nan("");
    opt_g_.zero_grad();
    opt_d_.zero_grad();
    ++state_.nonfinite_streak;
    ++state_.step;
    if (state_.nonfinite_streak >= 3) {
      if (!state_.lr_halved) {
        state_.lr_halved = true;
        state_.lr_scale *= 0.5;
        state_.nonfinite_streak = 0;
      } else {
        if (!snapshot_path_.empty()) save_checkpoint(snapshot_path_);
        throw NonFiniteError("non-finite loss on " + std::to_string(state_.nonfinite_streak) +
                             " consecutive steps after halving the learning rate (step " +
                             std::to_string(state_.step) + ")" +
                             (snapshot_path_.empty() ? std::string() : "; snapshot at " + snapshot_path_.string()));
      }
    }
    return report;
  }
  state_.nonfinite_streak = 0;
  const long total = total_steps();
  const long step = std::min(state_.step, total);
  if (with_d && options.update_discriminator)
    opt_d_.step(lr_schedule(step, total, warmup_steps(), train_.lr_d) * state_.lr_scale);
  if (options.update_generator) opt_g_.step(lr_schedule(step, total, warmup_steps(), train_.lr_g) * state_.lr_scale);
  opt_g_.zero_grad();
  opt_d_.zero_grad();
  ++state_.step;
  return report;
}

template <typename S>
std::vector<LossReport> Trainer<S>::run_epoch(const StepCallback& on_step) {
  std::vector<LossReport> reports;
  for (const auto& batch : epoch_batches()) {
    if (finished()) break;
    reports.push_back(train_step(batch));
    if (on_step) on_step(state_.step, reports.back());
  }
  ++state_.epoch;
  return reports;
}

namespace {

std::string join_floats(const std::vector<float>& v) {
  std::vector<std::string> parts;
  for (float x : v) parts.push_back(format_float(x));
  return join(parts, ',');
}

std::vector<float> parse_floats(const std::string& text) {
  std::vector<float> out;
  if (text.empty()) return out;
  for (const auto& part : split(text, ',')) {
    if (part == "nan") {
      out.push_back(std::nanf(""));
      continue;
    }
    float v = 0;
    auto res = std::from_chars(part.data(), part.data() + part.size(), v);
    if (res.ec != std::errc()) throw LoadError("invalid float list '" + text + "'");
    out.push_back(v);
  }
  return out;
}

template <typename S>
void put_moments(Checkpoint& ck, const std::string& prefix, const Adam<S>& opt) {
  for (const auto& [name, m] : opt.first_moments()) ck.put_tensor(prefix + ".m/" + name, m);
  for (const auto& [name, v] : opt.second_moments()) ck.put_tensor(prefix + ".v/" + name, v);
}

template <typename S>
void load_moments(const Checkpoint& ck, const std::string& prefix, Adam<S>& opt) {
  for (auto& [name, m] : opt.first_moments()) m = ck.tensor<S>(prefix + ".m/" + name);
  for (auto& [name, v] : opt.second_moments()) v = ck.tensor<S>(prefix + ".v/" + name);
}

}  // namespace

template <typename S>
Checkpoint Trainer<S>::checkpoint() const {
  Checkpoint ck;
  ck.set("format", "hfgan-checkpoint-1");
  ck.set("dtype", sizeof(S) == 4 ? "float32" : "float64");
  for (const auto& [k, v] : config_entries(model_, train_)) ck.set("config." + k, v);
  ck.set("config_hash", std::to_string(config_hash(model_, train_)));
  ck.set("variant", to_string(model_.variant));
  ck.set("ie", to_string(model_.intensity));
  ck.set("modalities", join(modality_names_, ','));
  ck.set("prior_means", join_floats(prior_means_));
  ck.set("step", std::to_string(state_.step));
  ck.set("epoch", std::to_string(state_.epoch));
  ck.set("nonfinite_streak", std::to_string(state_.nonfinite_streak));
  ck.set("lr_halved", state_.lr_halved ? "1" : "0");
  ck.set("lr_scale", format_double(state_.lr_scale));
  ck.set("adam_g_steps", std::to_string(opt_g_.steps()));
  ck.set("adam_d_steps", std::to_string(opt_d_.steps()));
  std::ostringstream rng_text;
  rng_text << rng_;
  ck.set("rng", rng_text.str());
  ck.put_store("generator/", generator_->parameters());
  ck.put_store("discriminator/", discriminator_->parameters());
  put_moments(ck, "adam_g", opt_g_);
  put_moments(ck, "adam_d", opt_d_);
  return ck;
}

template <typename S>
void Trainer<S>::restore(const Checkpoint& ck) {
  const std::string expected = std::to_string(config_hash(model_, train_));
  if (ck.get("config_hash") != expected)
    throw LoadError("checkpoint config hash " + ck.get("config_hash") + " does not match the run config (" + expected +
                    ")");
  ck.load_store("generator/", generator_->parameters());
  ck.load_store("discriminator/", discriminator_->parameters());
  load_moments(ck, "adam_g", opt_g_);
  load_moments(ck, "adam_d", opt_d_);
  opt_g_.set_steps(parse_number<long>("adam_g_steps", ck.get("adam_g_steps")));
  opt_d_.set_steps(parse_number<long>("adam_d_steps", ck.get("adam_d_steps")));
  state_.step = parse_number<long>("step", ck.get("step"));
  state_.epoch = parse_number<int>("epoch", ck.get("epoch"));
  state_.nonfinite_streak = parse_number<int>("nonfinite_streak", ck.get("nonfinite_streak"));
  state_.lr_halved = ck.get("lr_halved") == "1";
  state_.lr_scale = parse_number<double>("lr_scale", ck.get("lr_scale"));
  prior_means_ = parse_floats(ck.get("prior_means"));
  std::istringstream rng_text(ck.get("rng"));
  rng_text >> rng_;
  if (!rng_text) throw LoadError("checkpoint RNG state is malformed");
}

// ---------------------------------------------------------------------------
// Epoch loop and metrics

MetricsLog::MetricsLog(const std::filesystem::path& path) : path_(path) {
  if (!std::filesystem::exists(path_)) {
    std::ofstream out(path_);
    if (!out) throw IoError("cannot create metrics log " + path_.string());
    out << "step,term,value\n";
  }
}

void MetricsLog::log(long step, const LossReport& report) {
  std::ofstream out(path_, std::ios::app);
  for (const auto& [term, value] : report.terms()) out << step << ',' << term << ',' << format_double(value) << '\n';
  if (!out) throw IoError("cannot append to metrics log " + path_.string());
}

template <typename S>
void train(Trainer<S>& trainer, const std::filesystem::path& run_dir, const typename Trainer<S>::StepCallback& on_step) {
  const auto ckpt_dir = run_dir / "checkpoints";
  std::filesystem::create_directories(ckpt_dir);
  trainer.set_snapshot_path(ckpt_dir / "nonfinite.ckpt");
  MetricsLog log(run_dir / "metrics.csv");
  while (!trainer.finished()) {
    trainer.run_epoch([&](long step, const LossReport& r) {
      log.log(step, r);
      if (on_step) on_step(step, r);
    });
    const int epoch = trainer.state().epoch;
    if (epoch % trainer.train_config().checkpoint_every == 0 || trainer.finished()) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch);
      const Checkpoint ck = trainer.checkpoint();
      ck.save(ckpt_dir / name);
      ck.save(ckpt_dir / "latest.ckpt");
    }
  }
}

template <typename S>
LoadedModel<S> load_model(const std::filesystem::path& checkpoint_path) {
  const Checkpoint ck = Checkpoint::load(checkpoint_path);
  LoadedModel<S> m;
  TrainConfig unused;
  read_checkpoint_config(ck, m.config, unused);
  m.config.validate();
  m.modalities = split(ck.get("modalities"), ',');
  m.prior_means = parse_floats(ck.get("prior_means"));
  m.generator = std::make_unique<Generator<S>>(m.config);
  ck.load_store("generator/", m.generator->parameters());
  return m;
}

ParameterCounts count_parameters(const ModelConfig& config) {
  Generator<float> g(config);
  const auto& store = g.parameters();
  ParameterCounts c;
  c.encoder = store.count("encoder.");
  c.fusion = store.count("fusion.");
  c.infuser = store.count("infuser.");
  c.decoder = store.count("decoder.");
  c.total = store.count();
  return c;
}

template class Trainer<float>;
template class Trainer<double>;
template void train(Trainer<float>&, const std::filesystem::path&, const Trainer<float>::StepCallback&);
template void train(Trainer<double>&, const std::filesystem::path&, const Trainer<double>::StepCallback&);
template LoadedModel<float> load_model(const std::filesystem::path&);
template LoadedModel<double> load_model(const std::filesystem::path&);

}  // namespace hfgan
