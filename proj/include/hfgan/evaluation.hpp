#pragma once

// Scenario enumeration, PSNR/SSIM, the Wilcoxon signed-rank test, per-scenario
// tables, latent ablation, embedding export and dataset imputation.

#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "hfgan/generator.hpp"

namespace hfgan {

struct Scenario {
  AvailabilityMask available;
  int target = 0;
};

/// Every nonempty proper subset (as a bit pattern, ascending) times every
/// missing target (ascending).
std::vector<Scenario> enumerate_scenarios(int n_modalities);
/// Number of distinct input subsets, 2^N - 2.
int count_input_cases(int n_modalities);

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(range^2 / MSE); +infinity for identical images.
double psnr(const Image& a, const Image& b, double data_range = 2.0);
/// PSNR over the pixels where `include` is nonzero.
double masked_psnr(const Image& a, const Image& b, const LabelImage& include, double data_range = 2.0);
/// Mean absolute difference over the pixels where `include` is nonzero.
double masked_l1(const Image& a, const Image& b, const LabelImage& include);

struct SSIMParams {
  Index window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 2.0;

  void validate() const;
};

/// Normalized 1D Gaussian taps.
std::vector<double> gaussian_window(Index size, double sigma);

/// Mean local SSIM over all valid window positions (separable Gaussian
/// weighting, weighted moments without Bessel correction).
double ssim(const Image& a, const Image& b, const SSIMParams& params = {});

enum class WilcoxonMethod { automatic, exact, normal };

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double p_value = 1.0;    // two-sided
  int n = 0;               // pairs after dropping zero differences
  bool exact = false;
};

/// Zero differences are dropped and ties receive mid-ranks. The automatic
/// method uses the exact permutation distribution for n <= 25 and the normal
/// approximation with continuity and tie corrections above. Throws
/// InsufficientDataError for fewer than 6 nonzero pairs.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& x, const std::vector<double>& y,
                                    WilcoxonMethod method = WilcoxonMethod::automatic);

/// Synthesizes target `t` of a slice from the inputs allowed by `available`.
/// Implementations must only read images whose bit is set.
using SliceSynthesizer = std::function<Image(const SliceRecord&, const AvailabilityMask&, int t)>;

/// Returns the ground truth.
SliceSynthesizer identity_synthesizer();
/// Per-target mean image over `training` slices, independent of the inputs.
SliceSynthesizer mean_image_synthesizer(const std::vector<SliceRecord>& training, int n_modalities);
/// Generator inference under NoGradGuard. Priors follow select_prior.
SliceSynthesizer generator_synthesizer(const Generator<float>& g, std::vector<float> prior_means,
                                       LatentMode mode = LatentMode::all);

struct ScenarioRow {
  std::string label;  // input modality names and target
  AvailabilityMask available;
  int target = 0;
  int group = 0;      // |inputs|; 0 marks the grand average
  double psnr_mean = 0, psnr_std = 0, ssim_mean = 0, ssim_std = 0;
  int n = 0;
  int n_capped = 0;   // PSNR values replaced by the cap
  std::vector<double> psnr_values, ssim_values;
  std::optional<double> p_psnr, p_ssim;  // set by compare_tables
};

struct ScenarioTable {
  std::vector<std::string> modalities;
  std::vector<ScenarioRow> rows;    // one per scenario, enumeration order
  std::vector<ScenarioRow> groups;  // one per input count, then "Average (all)"

  std::string to_csv() const;
  std::string to_text() const;
};

/// Per-slice PSNR (capped) and SSIM for every scenario over `test` slices.
ScenarioTable evaluate_model(const SliceSynthesizer& model, const std::vector<SliceRecord>& test,
                             const std::vector<std::string>& modalities, const SSIMParams& params = {});

/// Fills p_psnr / p_ssim of `table` with paired Wilcoxon tests against
/// `reference`; rows with too few nonzero pairs are left empty.
void compare_tables(ScenarioTable& table, const ScenarioTable& reference);

/// G(X, AS, t) with the selected latent representation.
Var<float> latent_ablation_synthesis(const Generator<float>& g, const std::vector<Var<float>>& x,
                                     const AvailabilityMask& available, int t, LatentMode mode,
                                     std::optional<float> prior = std::nullopt);

/// Channel means of a [C, h, w] latent.
std::vector<double> pool_latent(const Tensor<float>& z);

/// CSV rows `subject,slice,available,space,v0..v{C-1}`: per slice and
/// scenario one `common` row (z) and one `target-<k>` row (z_t, one-based k).
/// Returns the number of data rows.
long export_latent_embeddings(const Generator<float>& g, const std::vector<SliceRecord>& records,
                              const std::vector<Scenario>& scenarios, const std::vector<float>& prior_means,
                              const std::filesystem::path& out);

struct ImputationSummary {
  int subjects = 0;
  int synthesized_volumes = 0;
  int copied_volumes = 0;
};

/// Copies every available volume file byte for byte and synthesizes each
/// missing modality slice by slice from all available ones. Subjects with no
/// available modality throw ContractError. Subjects with synthesized
/// modalities get an imputed.txt listing them.
ImputationSummary impute_dataset(const Generator<float>& g, const std::vector<float>& prior_means,
                                 const std::filesystem::path& input_root, const std::filesystem::path& output_root);

/// Variance over slices of the mean brain-region error mean(synth_k) - mean(truth_k).
double slice_intensity_drift(const std::vector<Image>& synthesized, const std::vector<Image>& truth,
                             const std::vector<LabelImage>& masks);

}  // namespace hfgan
