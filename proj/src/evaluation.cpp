#include "hfgan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "hfgan/training.hpp"

namespace hfgan {

// ---------------------------------------------------------------------------
// Scenarios

std::vector<Scenario> enumerate_scenarios(int n) {
  if (n < 2 || n > 16) throw ParameterError("scenario enumeration needs 2 <= N <= 16, got " + std::to_string(n));
  std::vector<Scenario> out;
  const unsigned full = (1u << n) - 1u;
  for (unsigned bits = 1; bits < full; ++bits) {
    const auto mask = AvailabilityMask::from_bits(bits, n);
    for (int t : mask.missing()) out.push_back({mask, t});
  }
  return out;
}

int count_input_cases(int n) {
  if (n < 2 || n > 16) throw ParameterError("scenario enumeration needs 2 <= N <= 16, got " + std::to_string(n));
  return (1 << n) - 2;
}

// ---------------------------------------------------------------------------
// PSNR

namespace {

void require_same_shape(const Image& a, const Image& b) {
  if (a.shape() != b.shape())
    throw ShapeError("image shapes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

double psnr_from_mse(double mse, double data_range) {
  if (!(data_range > 0.0)) throw ParameterError("data range must be positive");
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

}  // namespace

double psnr(const Image& a, const Image& b, double data_range) {
  require_same_shape(a, b);
  double acc = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return psnr_from_mse(acc / static_cast<double>(a.size()), data_range);
}

double masked_psnr(const Image& a, const Image& b, const LabelImage& include, double data_range) {
  require_same_shape(a, b);
  if (include.shape() != a.shape()) throw ShapeError("region mask shape differs from the image");
  double acc = 0.0;
  Index n = 0;
  for (Index i = 0; i < a.size(); ++i) {
    if (!include[i]) continue;
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
    ++n;
  }
  if (n == 0) throw InsufficientDataError("region mask selects no pixels");
  return psnr_from_mse(acc / static_cast<double>(n), data_range);
}

double masked_l1(const Image& a, const Image& b, const LabelImage& include) {
  require_same_shape(a, b);
  if (include.shape() != a.shape()) throw ShapeError("region mask shape differs from the image");
  double acc = 0.0;
  Index n = 0;
  for (Index i = 0; i < a.size(); ++i) {
    if (!include[i]) continue;
    acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
    ++n;
  }
  if (n == 0) throw InsufficientDataError("region mask selects no pixels");
  return acc / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// SSIM

void SSIMParams::validate() const {
  if (window < 1 || window % 2 == 0) throw ParameterError("SSIM window must be a positive odd size");
  if (!(sigma > 0.0)) throw ParameterError("SSIM sigma must be positive");
  if (!(k1 > 0.0) || !(k2 > 0.0)) throw ParameterError("SSIM constants K1 and K2 must be positive");
  if (!(data_range > 0.0)) throw ParameterError("SSIM data range must be positive");
}

std::vector<double> gaussian_window(Index size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const double c = static_cast<double>(size - 1) / 2.0;
  for (Index i = 0; i < size; ++i) {
    const double x = static_cast<double>(i) - c;
    w[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * sigma * sigma));
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  return w;
}

namespace {

using Plane = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Valid-mode separable filtering: rows first, then columns.
Plane filter_valid(const Plane& x, const std::vector<double>& w) {
  const Index k = static_cast<Index>(w.size());
  const Index oh = x.rows() - k + 1, ow = x.cols() - k + 1;
  Plane rows = Plane::Zero(x.rows(), ow);
  for (Index j = 0; j < k; ++j) rows += w[static_cast<std::size_t>(j)] * x.middleCols(j, ow);
  Plane out = Plane::Zero(oh, ow);
  for (Index i = 0; i < k; ++i) out += w[static_cast<std::size_t>(i)] * rows.middleRows(i, oh);
  return out;
}

Plane to_plane(const Image& img) {
  Plane p(img.dim(0), img.dim(1));
  for (Index y = 0; y < img.dim(0); ++y)
    for (Index x = 0; x < img.dim(1); ++x) p(y, x) = img.at(y, x);
  return p;
}

}  // namespace

double ssim(const Image& a, const Image& b, const SSIMParams& params) {
  params.validate();
  require_same_shape(a, b);
  if (a.rank() != 2) throw ShapeError("SSIM expects 2D images");
  if (a.dim(0) < params.window || a.dim(1) < params.window)
    throw ShapeError("image " + shape_string(a.shape()) + " is smaller than the " + std::to_string(params.window) +
                     "x" + std::to_string(params.window) + " SSIM window");
  const auto w = gaussian_window(params.window, params.sigma);
  const Plane pa = to_plane(a), pb = to_plane(b);
  const Plane mu_a = filter_valid(pa, w), mu_b = filter_valid(pb, w);
  const Plane s_aa = filter_valid(pa * pa, w) - mu_a * mu_a;
  const Plane s_bb = filter_valid(pb * pb, w) - mu_b * mu_b;
  const Plane s_ab = filter_valid(pa * pb, w) - mu_a * mu_b;
  const double c1 = std::pow(params.k1 * params.data_range, 2), c2 = std::pow(params.k2 * params.data_range, 2);
  const Plane map = ((2.0 * mu_a * mu_b + c1) * (2.0 * s_ab + c2)) /
                    ((mu_a * mu_a + mu_b * mu_b + c1) * (s_aa + s_bb + c2));
  return map.mean();
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y,
                                    WilcoxonMethod method) {
  if (x.size() != y.size())
    throw ShapeError("paired samples differ in length (" + std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()) + ")");
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] != y[i]) d.push_back(x[i] - y[i]);
  const int n = static_cast<int>(d.size());
  if (n < 6)
    throw InsufficientDataError("Wilcoxon test needs at least 6 nonzero differences, got " + std::to_string(n));

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) { return std::abs(d[i]) < std::abs(d[j]); });
  // Doubled mid-ranks stay integral.
  std::vector<long> rank2(static_cast<std::size_t>(n));
  double tie_term = 0.0;
  for (int start = 0; start < n;) {
    int end = start + 1;
    while (end < n && std::abs(d[order[end]]) == std::abs(d[order[start]])) ++end;
    const long r2 = (start + 1) + end;  // 2 * mean of ranks start+1..end
    for (int k = start; k < end; ++k) rank2[static_cast<std::size_t>(order[k])] = r2;
    const double t = end - start;
    tie_term += t * t * t - t;
    start = end;
  }
  long w2_plus = 0, w2_total = 0;
  for (int i = 0; i < n; ++i) {
    w2_total += rank2[static_cast<std::size_t>(i)];
    if (d[static_cast<std::size_t>(i)] > 0) w2_plus += rank2[static_cast<std::size_t>(i)];
  }
  WilcoxonResult r;
  r.n = n;
  r.w_plus = w2_plus / 2.0;
  r.statistic = std::min(w2_plus, w2_total - w2_plus) / 2.0;
  r.exact = method == WilcoxonMethod::exact || (method == WilcoxonMethod::automatic && n <= 25);

  if (r.exact) {
    if (n > 60) throw ParameterError("exact Wilcoxon distribution limited to n <= 60");
    // counts[s] = number of sign assignments with doubled positive-rank sum s.
    std::vector<double> counts(static_cast<std::size_t>(w2_total + 1), 0.0);
    counts[0] = 1.0;
    long reach = 0;
    for (int i = 0; i < n; ++i) {
      const long r2 = rank2[static_cast<std::size_t>(i)];
      for (long s = reach; s >= 0; --s) counts[static_cast<std::size_t>(s + r2)] += counts[static_cast<std::size_t>(s)];
      reach += r2;
    }
    const double total = std::ldexp(1.0, n);
    double lower = 0.0, upper = 0.0;
    for (long s = 0; s <= w2_total; ++s) {
      if (s <= w2_plus) lower += counts[static_cast<std::size_t>(s)];
      if (s >= w2_plus) upper += counts[static_cast<std::size_t>(s)];
    }
    r.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / total);
  } else {
    const double nn = n;
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    const double z = std::max(0.0, std::abs(r.w_plus - mean) - 0.5) / std::sqrt(var);
    r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Synthesizers

SliceSynthesizer identity_synthesizer() {
  return [](const SliceRecord& r, const AvailabilityMask&, int t) { return r.images.at(static_cast<std::size_t>(t)); };
}

SliceSynthesizer mean_image_synthesizer(const std::vector<SliceRecord>& training, int n_modalities) {
  if (training.empty()) throw ParameterError("mean-image baseline needs training slices");
  std::vector<Image> means;
  for (int t = 0; t < n_modalities; ++t) {
    Tensor<double> acc(training.front().images.at(static_cast<std::size_t>(t)).shape());
    for (const auto& r : training) acc.array() += r.images.at(static_cast<std::size_t>(t)).array().cast<double>();
    acc.array() /= static_cast<double>(training.size());
    means.push_back(acc.cast<float>());
  }
  return [means](const SliceRecord&, const AvailabilityMask&, int t) { return means.at(static_cast<std::size_t>(t)); };
}

namespace {

std::vector<Var<float>> masked_inputs(const std::vector<Image>& images, const AvailabilityMask& available) {
  std::vector<Var<float>> x;
  for (int i = 0; i < available.size(); ++i) {
    const Image& img = images.at(static_cast<std::size_t>(i));
    x.push_back(constant(available[i] ? img : Image(img.shape())));
  }
  return x;
}

}  // namespace

SliceSynthesizer generator_synthesizer(const Generator<float>& g, std::vector<float> prior_means, LatentMode mode) {
  return [&g, means = std::move(prior_means), mode](const SliceRecord& r, const AvailabilityMask& available, int t) {
    NoGradGuard ng;
    const auto prior = select_prior(g.config().intensity, r, t, means);
    return g.synthesize(masked_inputs(r.images, available), available, t, prior, mode).image.value();
  };
}

Var<float> latent_ablation_synthesis(const Generator<float>& g, const std::vector<Var<float>>& x,
                                     const AvailabilityMask& available, int t, LatentMode mode,
                                     std::optional<float> prior) {
  return g.synthesize(x, available, t, prior, mode).image;
}

// ---------------------------------------------------------------------------
// Tables

namespace {

void summarize(ScenarioRow& row) {
  row.n = static_cast<int>(row.psnr_values.size());
  auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = sd = 0.0;
    if (v.empty()) return;
    mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() < 2) return;
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    sd = std::sqrt(acc / static_cast<double>(v.size() - 1));
  };
  stats(row.psnr_values, row.psnr_mean, row.psnr_std);
  stats(row.ssim_values, row.ssim_mean, row.ssim_std);
}

std::string scenario_label(const AvailabilityMask& m, int t, const std::vector<std::string>& names) {
  std::vector<std::string> in;
  for (int i : m.available()) in.push_back(names.at(static_cast<std::size_t>(i)));
  return join(in, '+') + " -> " + names.at(static_cast<std::size_t>(t));
}

std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string p_field(const std::optional<double>& p) {
  if (!p) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", *p);
  return std::string(buf) + (*p < 0.05 ? "*" : "");
}

}  // namespace

ScenarioTable evaluate_model(const SliceSynthesizer& model, const std::vector<SliceRecord>& test,
                             const std::vector<std::string>& modalities, const SSIMParams& params) {
  const int n = static_cast<int>(modalities.size());
  if (test.empty()) throw ParameterError("evaluation needs at least one test slice");
  for (const auto& r : test)
    if (r.n_modalities() != n)
      throw ShapeError("test slice has " + std::to_string(r.n_modalities()) + " modalities, expected " +
                       std::to_string(n));
  ScenarioTable table;
  table.modalities = modalities;
  for (const auto& sc : enumerate_scenarios(n)) {
    ScenarioRow row;
    row.available = sc.available;
    row.target = sc.target;
    row.group = sc.available.count();
    row.label = scenario_label(sc.available, sc.target, modalities);
    for (const auto& r : test) {
      const Image y = model(r, sc.available, sc.target);
      const Image& truth = r.images.at(static_cast<std::size_t>(sc.target));
      double p = psnr(truth, y, params.data_range);
      if (!(p <= kPsnrCap)) {
        p = kPsnrCap;
        ++row.n_capped;
      }
      row.psnr_values.push_back(p);
      row.ssim_values.push_back(ssim(truth, y, params));
    }
    summarize(row);
    table.rows.push_back(std::move(row));
  }
  for (int k = 1; k <= n; ++k) {
    ScenarioRow g;
    g.group = k == n ? 0 : k;
    g.label = k == n ? "Average (all)" : "Average (" + std::to_string(k) + " input" + (k > 1 ? "s" : "") + ")";
    for (const auto& row : table.rows) {
      if (k != n && row.group != k) continue;
      g.psnr_values.insert(g.psnr_values.end(), row.psnr_values.begin(), row.psnr_values.end());
      g.ssim_values.insert(g.ssim_values.end(), row.ssim_values.begin(), row.ssim_values.end());
      g.n_capped += row.n_capped;
    }
    summarize(g);
    table.groups.push_back(std::move(g));
  }
  return table;
}

void compare_tables(ScenarioTable& table, const ScenarioTable& reference) {
  if (table.rows.size() != reference.rows.size() || table.groups.size() != reference.groups.size())
    throw ShapeError("tables cover different scenario sets");
  auto compare = [](ScenarioRow& a, const ScenarioRow& b) {
    if (a.label != b.label || a.n != b.n) throw ShapeError("row '" + a.label + "' does not pair with '" + b.label + "'");
    try {
      a.p_psnr = wilcoxon_signed_rank(a.psnr_values, b.psnr_values).p_value;
    } catch (const InsufficientDataError&) {
      a.p_psnr.reset();
    }
    try {
      a.p_ssim = wilcoxon_signed_rank(a.ssim_values, b.ssim_values).p_value;
    } catch (const InsufficientDataError&) {
      a.p_ssim.reset();
    }
  };
  for (std::size_t i = 0; i < table.rows.size(); ++i) compare(table.rows[i], reference.rows[i]);
  for (std::size_t i = 0; i < table.groups.size(); ++i) compare(table.groups[i], reference.groups[i]);
}

std::string ScenarioTable::to_csv() const {
  std::ostringstream out;
  out << "scenario,available,target,n,psnr_mean,psnr_std,ssim_mean,ssim_std,psnr_capped,p_psnr,p_ssim\n";
  auto line = [&](const ScenarioRow& r, bool scenario) {
    out << r.label << ',' << (scenario ? r.available.to_string() : "") << ','
        << (scenario ? modalities.at(static_cast<std::size_t>(r.target)) : "") << ',' << r.n << ','
        << format_double(r.psnr_mean) << ',' << format_double(r.psnr_std) << ',' << format_double(r.ssim_mean) << ','
        << format_double(r.ssim_std) << ',' << r.n_capped << ',' << (r.p_psnr ? format_double(*r.p_psnr) : "") << ','
        << (r.p_ssim ? format_double(*r.p_ssim) : "") << '\n';
  };
  for (const auto& r : rows) line(r, true);
  for (const auto& g : groups) line(g, false);
  return out.str();
}

std::string ScenarioTable::to_text() const {
  std::size_t width = 14;
  for (const auto& r : rows) width = std::max(width, r.label.size());
  for (const auto& g : groups) width = std::max(width, g.label.size());
  const bool with_p = std::any_of(rows.begin(), rows.end(), [](const ScenarioRow& r) { return r.p_psnr.has_value(); });
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s  %18s  %18s  %5s", static_cast<int>(width), "Scenario", "PSNR (dB)", "SSIM",
                "n");
  out << buf << (with_p ? "  p(PSNR)   p(SSIM)" : "") << '\n';
  int last_group = -1;
  auto line = [&](const ScenarioRow& r) {
    const std::string ps = format_fixed(r.psnr_mean, 2) + " +/- " + format_fixed(r.psnr_std, 2) +
                           (r.n_capped ? "^" : "");
    const std::string ss = format_fixed(r.ssim_mean, 4) + " +/- " + format_fixed(r.ssim_std, 4);
    std::snprintf(buf, sizeof(buf), "%-*s  %18s  %18s  %5d", static_cast<int>(width), r.label.c_str(), ps.c_str(),
                  ss.c_str(), r.n);
    out << buf;
    if (with_p) {
      std::snprintf(buf, sizeof(buf), "  %-8s  %-8s", p_field(r.p_psnr).c_str(), p_field(r.p_ssim).c_str());
      out << buf;
    }
    out << '\n';
  };
  for (const auto& r : rows) {
    if (r.group != last_group && last_group != -1) out << '\n';
    last_group = r.group;
    line(r);
  }
  out << '\n';
  for (const auto& g : groups) line(g);
  bool capped = false;
  for (const auto& g : groups) capped = capped || g.n_capped > 0;
  if (capped) out << "^ includes identical images; PSNR capped at " << format_fixed(kPsnrCap, 0) << " dB\n";
  if (with_p) out << "* p < 0.05 (Wilcoxon signed-rank, two-sided)\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Latent export

std::vector<double> pool_latent(const Tensor<float>& z) {
  if (z.rank() != 3) throw ShapeError("expected a [C, h, w] latent, got " + shape_string(z.shape()));
  std::vector<double> out(static_cast<std::size_t>(z.dim(0)));
  const Index hw = z.dim(1) * z.dim(2);
  for (Index c = 0; c < z.dim(0); ++c) {
    double acc = 0.0;
    for (Index i = 0; i < hw; ++i) acc += z[c * hw + i];
    out[static_cast<std::size_t>(c)] = acc / static_cast<double>(hw);
  }
  return out;
}

long export_latent_embeddings(const Generator<float>& g, const std::vector<SliceRecord>& records,
                              const std::vector<Scenario>& scenarios, const std::vector<float>& prior_means,
                              const std::filesystem::path& out) {
  std::ofstream file(out);
  if (!file) throw IoError("cannot write embeddings to " + out.string());
  const Index channels = g.config().latent_channels;
  file << "subject,slice,available,space";
  for (Index c = 0; c < channels; ++c) file << ",v" << c;
  file << '\n';
  long rows = 0;
  NoGradGuard ng;
  auto emit = [&](const SliceRecord& r, const AvailabilityMask& m, const std::string& space, const Tensor<float>& z) {
    file << r.subject_id << ',' << r.slice_index << ',' << m.to_string() << ',' << space;
    for (double v : pool_latent(z)) file << ',' << format_double(v);
    file << '\n';
    ++rows;
  };
  for (const auto& r : records) {
    for (const auto& sc : scenarios) {
      const auto prior = select_prior(g.config().intensity, r, sc.target, prior_means);
      const auto o = g.synthesize(masked_inputs(r.images, sc.available), sc.available, sc.target, prior);
      emit(r, sc.available, "common", o.z.value());
      emit(r, sc.available, "target-" + std::to_string(sc.target + 1), o.z_t.value());
    }
  }
  if (!file) throw IoError("failed writing embeddings to " + out.string());
  return rows;
}

// ---------------------------------------------------------------------------
// Imputation

namespace {

Image volume_slice(const Volume& v, Index z) {
  const Index h = v.dim(1), w = v.dim(2);
  Image img(Shape{h, w});
  std::copy(v.data() + z * h * w, v.data() + (z + 1) * h * w, img.data());
  return img;
}

}  // namespace

ImputationSummary impute_dataset(const Generator<float>& g, const std::vector<float>& prior_means,
                                 const std::filesystem::path& input_root, const std::filesystem::path& output_root) {
  namespace fs = std::filesystem;
  const DatasetManifest manifest = read_manifest(input_root);
  if (static_cast<int>(manifest.modalities.size()) != g.config().n_modalities)
    throw ParameterError("dataset has " + std::to_string(manifest.modalities.size()) + " modalities, model expects " +
                         std::to_string(g.config().n_modalities));
  if (fs::exists(output_root) && fs::equivalent(input_root, output_root))
    throw ParameterError("imputation output must differ from the input dataset");
  fs::create_directories(output_root);
  ImputationSummary summary;
  NoGradGuard ng;
  for (const auto& subject : manifest.subjects) {
    MultisequenceVolume vol = load_subject(input_root / subject);
    if (vol.modalities != manifest.modalities)
      throw AlignmentError("subject " + subject + " lists modalities in a different order than the dataset");
    if (vol.available.count() == 0) throw ContractError("subject " + subject + " has no available sequence");
    if (vol.height() != g.config().image_size || vol.width() != g.config().image_size)
      throw ShapeError("subject " + subject + " slices are " + std::to_string(vol.height()) + "x" +
                       std::to_string(vol.width()) + ", model expects " + std::to_string(g.config().image_size));
    const AvailabilityMask available = vol.available;
    SliceRecord prior_source;
    prior_source.priors = vol.priors;
    std::vector<std::string> imputed;
    for (int t : available.missing()) {
      Volume out(vol.volumes.front().shape());
      const std::optional<float> prior = select_prior(g.config().intensity, prior_source, t, prior_means);
      for (Index z = 0; z < vol.depth(); ++z) {
        std::vector<Var<float>> x;
        for (int i = 0; i < vol.n_modalities(); ++i)
          x.push_back(constant(available[i] ? volume_slice(vol.volumes[static_cast<std::size_t>(i)], z)
                                            : Image(Shape{vol.height(), vol.width()})));
        const Image y = g.synthesize(x, available, t, prior).image.value();
        std::copy(y.data(), y.data() + y.size(), out.data() + z * y.size());
      }
      vol.volumes[static_cast<std::size_t>(t)] = std::move(out);
      imputed.push_back(vol.modalities[static_cast<std::size_t>(t)]);
      ++summary.synthesized_volumes;
    }
    vol.available = AvailabilityMask::all(vol.n_modalities());
    save_subject(output_root, vol);
    for (int i : available.available()) {
      const auto& name = vol.modalities[static_cast<std::size_t>(i)];
      for (const char* ext : {".f32", ".hdr"})
        fs::copy_file(input_root / subject / (name + ext), output_root / subject / (name + ext),
                      fs::copy_options::overwrite_existing);
      ++summary.copied_volumes;
    }
    if (!imputed.empty()) write_key_values(output_root / subject / "imputed.txt", {{"imputed", join(imputed, ',')}});
    ++summary.subjects;
  }
  DatasetManifest out = manifest;
  out.extra["imputed"] = "1";
  write_manifest(output_root, out);
  return summary;
}

double slice_intensity_drift(const std::vector<Image>& synthesized, const std::vector<Image>& truth,
                             const std::vector<LabelImage>& masks) {
  if (synthesized.size() != truth.size() || synthesized.size() != masks.size())
    throw ShapeError("drift needs matching synthesized, truth and mask stacks");
  std::vector<double> errors;
  for (std::size_t k = 0; k < synthesized.size(); ++k) {
    require_same_shape(synthesized[k], truth[k]);
    double s = 0.0, t = 0.0;
    Index n = 0;
    for (Index i = 0; i < synthesized[k].size(); ++i) {
      if (!masks[k][i]) continue;
      s += synthesized[k][i];
      t += truth[k][i];
      ++n;
    }
    if (n > 0) errors.push_back((s - t) / static_cast<double>(n));
  }
  if (errors.size() < 2) return 0.0;
  const double mean = std::accumulate(errors.begin(), errors.end(), 0.0) / static_cast<double>(errors.size());
  double acc = 0.0;
  for (double e : errors) acc += (e - mean) * (e - mean);
  return acc / static_cast<double>(errors.size());
}

}  // namespace hfgan
