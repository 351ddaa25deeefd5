// Acceptance suite. `hfgan_acceptance <k>` runs criterion k (1..8) and prints
// one PASS/FAIL line; `hfgan_acceptance all` runs every criterion in order.
// Progress goes to stderr.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numeric>
#include <set>
#include <sstream>

#include "gradcheck.hpp"
#include "hfgan/evaluation.hpp"
#include "hfgan/training.hpp"

#ifndef HFGAN_UNIT_TESTS
#define HFGAN_UNIT_TESTS ""
#endif

using namespace hfgan;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, a);
  return buf;
}

void progress(const std::string& text) { std::cerr << "  " << text << std::endl; }

std::vector<SliceRecord> slices_of(const std::vector<MultisequenceVolume>& vols, const SlicePolicy& policy) {
  std::vector<SliceRecord> out;
  for (const auto& v : vols)
    for (auto& r : extract_slices(v, policy)) out.push_back(std::move(r));
  return out;
}

/// Small model at 32x32: c = 64 latent channels, C = 64 token width, L = 4.
ModelConfig small_model() {
  ModelConfig m;
  m.image_size = 32;
  m.base_channels = 16;
  m.latent_channels = 64;
  m.token_dim = 64;
  m.n_heads = 4;
  m.patch_size = 1;
  m.mlp_ratio = 2;
  m.disc_channels = {16, 32, 64, 128};
  return m;
}

bool report_finite(const LossReport& r) {
  for (const auto& [name, value] : r.terms())
    if (!std::isfinite(value)) return false;
  return true;
}

/// Trains to completion; returns false if any step reported a non-finite loss.
bool train_to_end(Trainer<float>& trainer, const std::string& tag) {
  bool finite = true;
  const long total = trainer.total_steps();
  const long every = std::max(1L, total / 5);
  while (!trainer.finished()) {
    trainer.run_epoch([&](long step, const LossReport& r) {
      finite = finite && report_finite(r);
      if (step % every == 0) progress(tag + " step " + std::to_string(step) + "/" + std::to_string(total) +
                                      " rec=" + fmt("%.4f", r.rec));
    });
  }
  return finite && trainer.state().nonfinite_streak == 0 && !trainer.state().lr_halved;
}

// ---------------------------------------------------------------------------
// 1. Invariant suite

double direct_ssim(const Image& a, const Image& b, const SSIMParams& p) {
  const auto g = gaussian_window(p.window, p.sigma);
  const double c1 = std::pow(p.k1 * p.data_range, 2), c2 = std::pow(p.k2 * p.data_range, 2);
  const Index h = a.dim(0), w = a.dim(1), n = p.window;
  double total = 0.0;
  long count = 0;
  for (Index y = 0; y + n <= h; ++y)
    for (Index x = 0; x + n <= w; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j) {
          const double wt = g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)];
          const double va = a[(y + i) * w + x + j], vb = b[(y + i) * w + x + j];
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

/// Central differences on a random sample of parameter coordinates.
double sampled_grad_error(ParameterStore<double>& store, const std::function<Var<double>()>& loss, Rng& rng,
                          int samples) {
  store.zero_grad();
  backward(loss());
  double max_err = 0.0, max_num = 0.0;
  const auto& entries = store.entries();
  for (int s = 0; s < samples; ++s) {
    Var<double> p = entries[static_cast<std::size_t>(uniform_int(rng, static_cast<Index>(entries.size())))].second;
    auto& x = p.mutable_value().array();
    const Index i = uniform_int(rng, x.size());
    const double analytic = p.has_grad() ? p.grad()[i] : 0.0;
    const double saved = x[i], h = 1e-6;
    double plus, minus;
    {
      NoGradGuard ng;
      x[i] = saved + h;
      plus = loss().item();
      x[i] = saved - h;
      minus = loss().item();
      x[i] = saved;
    }
    const double numeric = (plus - minus) / (2 * h);
    max_err = std::max(max_err, std::abs(numeric - analytic));
    max_num = std::max(max_num, std::abs(numeric));
  }
  return max_err / std::max(max_num, 1e-8);
}

Outcome criterion_1() {
  const auto start = Clock::now();
  std::vector<std::string> failures;

  // The unit suites hold every module's invariants and properties.
  int suites = 0;
  for (const auto& path : split(HFGAN_UNIT_TESTS, '|')) {
    if (path.empty()) continue;
    ++suites;
    progress("unit suite " + fs::path(path).filename().string());
    const std::string cmd = "\"" + path + "\" > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) failures.push_back(fs::path(path).filename().string());
  }
  if (suites == 0) failures.push_back("no unit suites configured");

  // Headline tolerances, rechecked here.
  Rng rng(11);
  double softmax_err = 0.0;
  {
    Tensor<double> x(Shape{6, 9});
    for (Index i = 0; i < x.size(); ++i) x[i] = 8.0 * standard_normal(rng);
    const Tensor<double> s = softmax(constant(x), 1).value();
    for (Index r = 0; r < 6; ++r) {
      double row = 0.0;
      for (Index c = 0; c < 9; ++c) row += s[r * 9 + c];
      softmax_err = std::max(softmax_err, std::abs(row - 1.0));
    }
  }
  if (softmax_err > 1e-6) failures.push_back("softmax normalization " + fmt("%.3g", softmax_err));

  double attention_err = 0.0;
  {
    Tensor<double> q(Shape{16, 32}), k(Shape{16, 32});
    for (Index i = 0; i < q.size(); ++i) q[i] = 3.0 * standard_normal(rng), k[i] = 3.0 * standard_normal(rng);
    for (const auto& probs : attention_probabilities(q, k, 4))
      attention_err = std::max(attention_err, (probs.rowwise().sum().array() - 1.0).abs().maxCoeff());
  }
  if (attention_err > 1e-6) failures.push_back("attention row sums " + fmt("%.3g", attention_err));

  double psnr_err = 0.0, ssim_err = 0.0;
  {
    Image a(Shape{24, 24}), b(Shape{24, 24});
    for (Index i = 0; i < a.size(); ++i) {
      a[i] = static_cast<float>(uniform(rng, -1, 1));
      b[i] = static_cast<float>(std::clamp(a[i] + 0.2 * standard_normal(rng), -1.0, 1.0));
    }
    double mse = 0.0;
    for (Index i = 0; i < a.size(); ++i) mse += std::pow(static_cast<double>(a[i]) - b[i], 2);
    mse /= static_cast<double>(a.size());
    psnr_err = std::abs(psnr(a, b) - 10.0 * std::log10(4.0 / mse));
    ssim_err = std::abs(ssim(a, b) - direct_ssim(a, b, SSIMParams{}));
  }
  if (psnr_err > 1e-9) failures.push_back("PSNR oracle " + fmt("%.3g", psnr_err));
  if (ssim_err > 1e-6) failures.push_back("SSIM oracle " + fmt("%.3g", ssim_err));

  double grad_g = 0.0, grad_d = 0.0;
  {
    ModelConfig m;
    m.image_size = 32;
    m.base_channels = 4;
    m.latent_channels = 8;
    m.token_dim = 8;
    m.n_heads = 2;
    m.patch_size = 2;
    m.mlp_ratio = 2;
    m.disc_channels = {4, 4, 4, 4};
    m.intensity = IntensityMode::median;
    Generator<double> g(m);
    Discriminator<double> d(m);
    std::vector<Var<double>> x;
    for (int i = 0; i < 4; ++i) {
      Tensor<double> img(Shape{32, 32});
      for (Index j = 0; j < img.size(); ++j) img[j] = uniform(rng, -1, 1);
      x.push_back(constant(img));
    }
    x[3] = constant(Tensor<double>(Shape{32, 32}));
    const auto mask = AvailabilityMask::parse("1110");
    const Var<double> target = constant(x[1].value());
    grad_g = sampled_grad_error(
        g.parameters(),
        [&] {
          const auto out = g.synthesize(x, mask, 3, 0.2);
          return add(reconstruction_loss(target, out.image), similarity_loss(out.z, out.z_t));
        },
        rng, 60);
    grad_d = sampled_grad_error(
        d.parameters(),
        [&] {
          const auto real = d(x[0]);
          const auto fake = d(x[2]);
          return add(discriminator_adversarial(real.patch_logits, fake.patch_logits),
                     classification_loss(real.class_logits, 0));
        },
        rng, 60);
  }
  if (grad_g > 1e-3) failures.push_back("generator gradient " + fmt("%.3g", grad_g));
  if (grad_d > 1e-3) failures.push_back("discriminator gradient " + fmt("%.3g", grad_d));

  const double elapsed = seconds_since(start);
  if (elapsed > 300.0) failures.push_back("runtime " + fmt("%.0f s", elapsed));
  std::string detail = std::to_string(suites) + " unit suites; softmax " + fmt("%.1e", softmax_err) + ", attention " +
                       fmt("%.1e", attention_err) + ", PSNR " + fmt("%.1e", psnr_err) + ", SSIM " +
                       fmt("%.1e", ssim_err) + ", grad G/D " + fmt("%.1e", grad_g) + "/" + fmt("%.1e", grad_d) + "; " +
                       fmt("%.0f s", elapsed);
  if (!failures.empty()) detail += "; failed: " + join(failures, ',');
  return {failures.empty(), detail};
}

// ---------------------------------------------------------------------------
// 2. Scenario enumeration

Outcome criterion_2() {
  const int c4 = count_input_cases(4), p4 = static_cast<int>(enumerate_scenarios(4).size());
  const int c3 = count_input_cases(3), p3 = static_cast<int>(enumerate_scenarios(3).size());
  std::set<std::pair<unsigned, int>> unique;
  for (const auto& s : enumerate_scenarios(4)) unique.insert({s.available.to_bits(), s.target});
  const bool ok = c4 == 14 && p4 == 28 && c3 == 6 && p3 == 9 && unique.size() == 28;
  return {ok, "N=4: " + std::to_string(c4) + " cases, " + std::to_string(p4) + " pairs; N=3: " + std::to_string(c3) +
                  " cases, " + std::to_string(p3) + " pairs"};
}

// ---------------------------------------------------------------------------
// 3. Overfit smoke

Outcome criterion_3() {
  const auto start = Clock::now();
  PhantomOptions po;
  po.seed = 3;
  po.n_subjects = 2;
  po.size = 32;
  po.depth = 8;
  auto records = slices_of(generate_phantoms(po), SlicePolicy::center_k(4));

  ModelConfig model = small_model();
  TrainConfig train;
  train.batch_size = 16;
  train.lr_g = 3e-3;
  train.total_steps = 300;
  train.epochs = 1000;
  train.seed = 3;
  train.weights = LossWeights{1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
  Trainer<float> trainer(model, train, std::move(records), phantom_modality_names(4));
  std::vector<double> rec;
  while (!trainer.finished())
    trainer.run_epoch([&](long step, const LossReport& r) {
      rec.push_back(r.rec);
      if (step % 50 == 0) progress("step " + std::to_string(step) + " rec=" + fmt("%.4f", r.rec));
    });
  // Per-step losses vary with the sampled scenario, so both ends are window means.
  auto window_mean = [&](std::size_t from, std::size_t to) {
    double s = 0.0;
    for (std::size_t i = from; i < to; ++i) s += rec[i];
    return s / static_cast<double>(to - from);
  };
  const double baseline = window_mean(4, 14);  // steps 5..14, centred on step 10
  const double final = window_mean(rec.size() - 10, rec.size());
  const double reduction = 1.0 - final / baseline;
  return {rec.size() == 300 && reduction >= 0.8,
          "L1 " + fmt("%.4f", baseline) + " (steps 5-14) -> " + fmt("%.4f", final) + " (last 10), reduction " +
              fmt("%.1f%%", 100 * reduction) + " (need >= 80%); " + fmt("%.0f s", seconds_since(start))};
}

// ---------------------------------------------------------------------------
// 4. Full-objective smoke

Outcome criterion_4() {
  const auto start = Clock::now();
  PhantomOptions po;
  po.seed = 40;
  po.n_subjects = 20;
  po.depth = 48;
  auto train_records = slices_of(generate_phantoms(po), SlicePolicy::brain_threshold(2000));
  PhantomOptions vo = po;
  vo.seed = 41;
  vo.n_subjects = 4;
  const auto val_records = slices_of(generate_phantoms(vo), SlicePolicy::brain_threshold(2000));
  const auto names = phantom_modality_names(4);
  const auto baseline_model = mean_image_synthesizer(train_records, 4);

  ModelConfig model;  // default architecture at 64x64
  TrainConfig train;  // default loss weights
  train.epochs = 3;
  train.batch_size = 2;
  train.lr_g = 1.5e-3;
  train.lr_d = 1.5e-4;
  train.seed = 40;
  progress(std::to_string(train_records.size()) + " training slices, " + std::to_string(val_records.size()) +
           " validation slices");
  Trainer<float> trainer(model, train, std::move(train_records), names);
  bool finite = false;
  try {
    finite = train_to_end(trainer, "full objective");
  } catch (const NonFiniteError& e) {
    return {false, std::string("aborted: ") + e.what()};
  }
  const auto ours = evaluate_model(generator_synthesizer(trainer.generator(), trainer.prior_means()), val_records,
                                   names);
  const auto base = evaluate_model(baseline_model, val_records, names);
  const double p_model = ours.groups.back().psnr_mean, p_base = base.groups.back().psnr_mean;
  return {finite && p_model >= p_base + 5.0,
          std::string(finite ? "all losses finite" : "non-finite losses") + "; validation PSNR " +
              fmt("%.2f", p_model) + " dB vs mean-image baseline " + fmt("%.2f", p_base) + " dB (need +5); " +
              std::to_string(trainer.state().step) + " steps, " + fmt("%.0f s", seconds_since(start))};
}

// ---------------------------------------------------------------------------
// 5. Ablation direction

/// Lesion-region PSNR of one trained generator, averaged over test slices
/// with at least `min_pixels` lesion pixels. `all` covers every scenario;
/// `complementary` covers only the scenarios whose inputs are exactly T1 and
/// T2, where the core and the rim are each visible in one input and the full
/// lesion can only be recovered by combining them.
struct LesionScores {
  double all = 0.0;
  double complementary = 0.0;
};

LesionScores lesion_psnr(const Generator<float>& g, const std::vector<float>& prior_means,
                         const std::vector<SliceRecord>& test, Index min_pixels) {
  const auto synth = generator_synthesizer(g, prior_means);
  double total[2] = {0.0, 0.0};
  long count[2] = {0, 0};
  for (const auto& r : test) {
    LabelImage lesion(r.labels->shape());
    Index n = 0;
    for (Index i = 0; i < lesion.size(); ++i) {
      lesion[i] = (*r.labels)[i] == kLesionCore || (*r.labels)[i] == kLesionRim;
      n += lesion[i];
    }
    if (n < min_pixels) continue;
    for (const auto& sc : enumerate_scenarios(r.n_modalities())) {
      const Image y = synth(r, sc.available, sc.target);
      const double p = std::min(masked_psnr(y, r.images[static_cast<std::size_t>(sc.target)], lesion), kPsnrCap);
      total[0] += p;
      ++count[0];
      if (sc.available.to_bits() == 0b11u) {
        total[1] += p;
        ++count[1];
      }
    }
  }
  if (count[1] == 0) throw InsufficientDataError("no test slice contains a lesion");
  return {total[0] / static_cast<double>(count[0]), total[1] / static_cast<double>(count[1])};
}

Outcome criterion_5() {
  const auto start = Clock::now();
  PhantomOptions po;
  po.seed = 50;
  po.n_subjects = 12;
  po.size = 32;
  po.depth = 12;
  po.lesion_probability = 1.0;
  const SlicePolicy policy = SlicePolicy::brain_threshold(300);
  const auto train_records = slices_of(generate_phantoms(po), policy);
  PhantomOptions to = po;
  to.seed = 51;
  to.n_subjects = 4;
  const auto test_records = slices_of(generate_phantoms(to), policy);
  progress(std::to_string(train_records.size()) + " training slices, " + std::to_string(test_records.size()) +
           " test slices");

  const std::vector<Variant> variants{Variant::full, Variant::no_enc_c, Variant::no_caff};
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<LesionScores> mean(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v) {
    for (const auto seed : seeds) {
      ModelConfig model = small_model();
      model.variant = variants[v];
      model.seed = seed;
      TrainConfig train;
      train.epochs = 30;
      train.batch_size = 8;
      train.lr_g = 5e-4;
      train.lr_d = 5e-5;
      train.seed = seed;
      Trainer<float> trainer(model, train, train_records, phantom_modality_names(4));
      const std::string tag = to_string(variants[v]) + " seed " + std::to_string(seed);
      train_to_end(trainer, tag);
      const LesionScores s = lesion_psnr(trainer.generator(), trainer.prior_means(), test_records, 10);
      progress(tag + " lesion PSNR T1+T2 inputs " + fmt("%.3f", s.complementary) + ", all scenarios " +
               fmt("%.3f", s.all));
      mean[v].all += s.all / static_cast<double>(seeds.size());
      mean[v].complementary += s.complementary / static_cast<double>(seeds.size());
    }
  }
  const bool ok = mean[0].complementary > mean[1].complementary && mean[0].complementary > mean[2].complementary;
  std::string detail = "lesion-region PSNR with T1+T2 inputs over 3 seeds:";
  for (std::size_t v = 0; v < variants.size(); ++v)
    detail += std::string(v ? "," : "") + " " + to_string(variants[v]) + " " + fmt("%.3f", mean[v].complementary);
  detail += " dB (all scenarios:";
  for (std::size_t v = 0; v < variants.size(); ++v)
    detail += std::string(v ? "," : "") + " " + fmt("%.3f", mean[v].all);
  return {ok, detail + " dB); " + fmt("%.0f s", seconds_since(start))};
}

// ---------------------------------------------------------------------------
// 6. Intensity-encoding consistency

/// Averages over test volumes and targets, with all other modalities given.
/// `drift` is the variance along the volume of the per-slice mean
/// brain-region error. `bias` is the absolute mean of that error over the
/// whole volume, the slice-independent offset that the priors target.
struct DriftScores {
  double drift = 0.0;
  double bias = 0.0;
};

DriftScores mean_drift(const Generator<float>& g, const std::vector<float>& prior_means,
                       const std::vector<MultisequenceVolume>& test, const SlicePolicy& policy) {
  const auto synth = generator_synthesizer(g, prior_means);
  DriftScores total;
  int count = 0;
  for (const auto& vol : test) {
    const auto slices = extract_slices(vol, policy);
    for (int t = 0; t < vol.n_modalities(); ++t) {
      AvailabilityMask available = AvailabilityMask::all(vol.n_modalities());
      available.set(t, false);
      std::vector<Image> synthesized, truth;
      std::vector<LabelImage> masks;
      double error = 0.0;
      long pixels = 0;
      for (const auto& r : slices) {
        synthesized.push_back(synth(r, available, t));
        truth.push_back(r.images[static_cast<std::size_t>(t)]);
        LabelImage brain(r.labels->shape());
        for (Index i = 0; i < brain.size(); ++i) {
          brain[i] = (*r.labels)[i] >= kGrayMatter;
          if (brain[i]) {
            error += synthesized.back()[i] - truth.back()[i];
            ++pixels;
          }
        }
        masks.push_back(std::move(brain));
      }
      total.drift += slice_intensity_drift(synthesized, truth, masks);
      total.bias += std::abs(error / static_cast<double>(pixels));
      ++count;
    }
  }
  return {total.drift / count, total.bias / count};
}

Outcome criterion_6() {
  const auto start = Clock::now();
  PhantomOptions po;
  po.seed = 60;
  po.n_subjects = 12;
  po.size = 32;
  po.depth = 12;
  po.gain_jitter = 0.3;
  const SlicePolicy policy = SlicePolicy::brain_threshold(300);
  const auto train_records = slices_of(generate_phantoms(po), policy);
  PhantomOptions to = po;
  to.seed = 61;
  to.n_subjects = 6;
  const auto test_volumes = generate_phantoms(to);

  DriftScores scores[2];
  const IntensityMode modes[2] = {IntensityMode::median, IntensityMode::off};
  for (int m = 0; m < 2; ++m) {
    ModelConfig model = small_model();
    model.intensity = modes[m];
    model.seed = 6;
    TrainConfig train;
    train.epochs = 6;
    train.batch_size = 8;
    train.lr_g = 5e-4;
    train.lr_d = 5e-5;
    train.seed = 6;
    Trainer<float> trainer(model, train, train_records, phantom_modality_names(4));
    train_to_end(trainer, "ie=" + to_string(modes[m]));
    scores[m] = mean_drift(trainer.generator(), trainer.prior_means(), test_volumes, policy);
    progress("ie=" + to_string(modes[m]) + " drift " + fmt("%.3e", scores[m].drift) + " bias " +
             fmt("%.4f", scores[m].bias));
  }
  return {scores[0].drift < scores[1].drift,
          "slice intensity drift with median priors " + fmt("%.3e", scores[0].drift) + " vs without " +
              fmt("%.3e", scores[1].drift) + " (volume bias " + fmt("%.4f", scores[0].bias) + " vs " +
              fmt("%.4f", scores[1].bias) + "); " + fmt("%.0f s", seconds_since(start))};
}

// ---------------------------------------------------------------------------
// 7. Wilcoxon correctness

/// Two-sided p of the signed-rank statistic by enumerating all 2^n sign flips.
double enumeration_p(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] != y[i]) d.push_back(x[i] - y[i]);
  const std::size_t n = d.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return std::abs(d[a]) < std::abs(d[b]); });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  double total = 0.0, observed = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += rank[i];
    if (d[i] > 0) observed += rank[i];
  }
  const double center = total / 2.0, dev = std::abs(observed - center);
  long extreme = 0;
  const long cases = 1L << n;
  for (long mask = 0; mask < cases; ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1L << i)) w += rank[i];
    if (std::abs(w - center) >= dev - 1e-9) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(cases);
}

Outcome criterion_7() {
  Rng rng(7);
  double max_exact_err = 0.0;
  int cases = 0;
  for (int n = 6; n <= 12; ++n)
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> x(static_cast<std::size_t>(n)), y(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        // Half the repetitions draw from a coarse grid to force tied ranks.
        const double shift = 0.3 * rep / 20.0;
        x[static_cast<std::size_t>(i)] = rep % 2 ? std::round(4 * standard_normal(rng)) / 4 : standard_normal(rng);
        y[static_cast<std::size_t>(i)] =
            rep % 2 ? std::round(4 * (standard_normal(rng) + shift)) / 4 : standard_normal(rng) + shift;
      }
      int nonzero = 0;
      for (int i = 0; i < n; ++i) nonzero += x[static_cast<std::size_t>(i)] != y[static_cast<std::size_t>(i)];
      if (nonzero < 6) continue;
      const auto r = wilcoxon_signed_rank(x, y, WilcoxonMethod::exact);
      max_exact_err = std::max(max_exact_err, std::abs(r.p_value - enumeration_p(x, y)));
      ++cases;
    }

  bool small_rejected = false;
  try {
    wilcoxon_signed_rank({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0}, WilcoxonMethod::exact);
  } catch (const InsufficientDataError&) {
    small_rejected = true;
  }

  double max_normal_err = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> x(20), y(20);
    for (int i = 0; i < 20; ++i) {
      x[static_cast<std::size_t>(i)] = standard_normal(rng);
      y[static_cast<std::size_t>(i)] = standard_normal(rng) + 0.6 * rep / 50.0;
    }
    const double pe = wilcoxon_signed_rank(x, y, WilcoxonMethod::exact).p_value;
    const double pn = wilcoxon_signed_rank(x, y, WilcoxonMethod::normal).p_value;
    max_normal_err = std::max(max_normal_err, std::abs(pe - pn));
  }
  const bool ok = max_exact_err <= 1e-12 && small_rejected && max_normal_err <= 0.01;
  return {ok, "exact vs 2^n enumeration over " + std::to_string(cases) + " samples (n = 6..12): max |dp| " +
                  fmt("%.2e", max_exact_err) + "; n < 6 rejected: " + (small_rejected ? "yes" : "no") +
                  "; normal vs exact at n = 20: max |dp| " + fmt("%.4f", max_normal_err) + " (need <= 0.01)"};
}

// ---------------------------------------------------------------------------
// 8. Imputation round trip

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome criterion_8() {
  const fs::path root = fs::temp_directory_path() / "hfgan_acceptance_impute";
  fs::remove_all(root);
  const fs::path in = root / "in", out = root / "out";
  PhantomOptions po;
  po.seed = 80;
  po.n_subjects = 8;
  po.size = 32;
  po.depth = 6;
  generate_phantom_dataset(po, in);
  const auto manifest = read_manifest(in);
  const int n = static_cast<int>(manifest.modalities.size());

  // Random nonempty proper subsets of modalities stay on disk.
  Rng rng(8);
  int removed = 0;
  for (const auto& s : manifest.subjects) {
    const unsigned keep = 1 + static_cast<unsigned>(uniform_int(rng, (1 << n) - 2));
    for (int m = 0; m < n; ++m)
      if (!(keep & (1u << m))) {
        fs::remove(in / s / (manifest.modalities[static_cast<std::size_t>(m)] + ".f32"));
        fs::remove(in / s / (manifest.modalities[static_cast<std::size_t>(m)] + ".hdr"));
        ++removed;
      }
  }
  ModelConfig model = small_model();
  model.intensity = IntensityMode::median;
  Generator<float> g(model);
  const auto summary = impute_dataset(g, std::vector<float>(static_cast<std::size_t>(n), 0.0f), in, out);

  std::vector<std::string> failures;
  if (summary.synthesized_volumes != removed) failures.push_back("synthesized count");
  const auto vols = load_dataset(out);
  if (vols.size() != manifest.subjects.size()) failures.push_back("subject count");
  for (const auto& v : vols) {
    try {
      v.validate();
    } catch (const Error& e) {
      failures.push_back(v.subject_id + ": " + e.what());
    }
    if (v.available.count() != n) failures.push_back(v.subject_id + " incomplete");
    for (const auto& vol : v.volumes)
      if (!vol.array().allFinite() || vol.array().minCoeff() < -1.0f || vol.array().maxCoeff() > 1.0f)
        failures.push_back(v.subject_id + " intensity range");
    if (!v.labels || !v.voxel_mask) failures.push_back(v.subject_id + " lost labels or mask");
  }
  int identical = 0;
  for (const auto& s : manifest.subjects)
    for (const auto& m : manifest.modalities)
      for (const char* ext : {".f32", ".hdr"}) {
        const fs::path src = in / s / (m + ext);
        if (!fs::exists(src)) continue;
        if (file_bytes(src) == file_bytes(out / s / (m + ext)))
          ++identical;
        else
          failures.push_back(s + "/" + m + ext + " differs");
      }
  fs::remove_all(root);
  std::string detail = std::to_string(summary.subjects) + " subjects, " + std::to_string(removed) +
                       " missing volumes synthesized, " + std::to_string(identical / 2) +
                       " available volumes bit-identical";
  if (!failures.empty()) detail += "; failed: " + join(failures, ',');
  return {failures.empty(), detail};
}

const std::vector<std::pair<std::string, Outcome (*)()>>& criteria() {
  static const std::vector<std::pair<std::string, Outcome (*)()>> list{
      {"invariant suite", criterion_1},       {"scenario enumeration", criterion_2},
      {"overfit smoke", criterion_3},         {"full-objective smoke", criterion_4},
      {"ablation direction", criterion_5},    {"intensity-encoding consistency", criterion_6},
      {"Wilcoxon correctness", criterion_7},  {"imputation round trip", criterion_8},
  };
  return list;
}

bool run(int k) {
  const auto& [name, fn] = criteria().at(static_cast<std::size_t>(k - 1));
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << k << " (" << name << "): " << o.detail << std::endl;
  return o.pass;
}

}  // namespace

int main(int argc, char** argv) {
  const int count = static_cast<int>(criteria().size());
  if (argc != 2) {
    std::cerr << "usage: " << argv[0] << " <1.." << count << "|all>\n";
    return 2;
  }
  const std::string arg = argv[1];
  if (arg == "all") {
    bool ok = true;
    for (int k = 1; k <= count; ++k) ok = run(k) && ok;
    return ok ? 0 : 1;
  }
  int k = 0;
  try {
    k = std::stoi(arg);
  } catch (const std::exception&) {
  }
  if (k < 1 || k > count) {
    std::cerr << "unknown criterion '" << arg << "'\n";
    return 2;
  }
  return run(k) ? 0 : 1;
}
