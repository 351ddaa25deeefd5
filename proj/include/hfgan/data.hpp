#pragma once

// Multisequence volumes, slicing, availability masking, phantom generation
// and intensity priors.
//
// On-disk layout (one directory per subject):
//   <root>/dataset.txt                       dataset manifest (key=value)
//   <root>/<subject>/meta.txt                shape, modalities, normalization, priors
//   <root>/<subject>/<modality>.f32          D*H*W little-endian float32, row-major
//   <root>/<subject>/<modality>.hdr          per-volume sidecar (shape, modality, normalization)
//   <root>/<subject>/labels.u8               optional tissue labels (phantoms)

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hfgan/tensor.hpp"

namespace hfgan {

namespace fs = std::filesystem;

using Volume = Tensor<float>;                // [D, H, W]
using Image = Tensor<float>;                 // [H, W]
using LabelVolume = Tensor<std::uint8_t>;    // [D, H, W]
using LabelImage = Tensor<std::uint8_t>;     // [H, W]

/// Binary vector AS; bit i marks modality i as present.
class AvailabilityMask {
 public:
  AvailabilityMask() = default;
  explicit AvailabilityMask(std::vector<std::uint8_t> bits);
  /// Bit i of `value` is modality i.
  static AvailabilityMask from_bits(unsigned value, int n);
  static AvailabilityMask all(int n);
  static AvailabilityMask single(int n, int i);
  /// Parses "1010" (modality 0 first).
  static AvailabilityMask parse(const std::string& text);

  int size() const { return static_cast<int>(bits_.size()); }
  int count() const;
  bool operator[](int i) const { return bits_.at(static_cast<std::size_t>(i)) != 0; }
  void set(int i, bool on) { bits_.at(static_cast<std::size_t>(i)) = on ? 1 : 0; }
  unsigned to_bits() const;
  std::string to_string() const;
  std::vector<int> available() const;
  std::vector<int> missing() const;
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  bool operator==(const AvailabilityMask& o) const { return bits_ == o.bits_; }

 private:
  std::vector<std::uint8_t> bits_;
};

struct MultisequenceVolume {
  std::string subject_id;
  std::vector<std::string> modalities;
  std::vector<Volume> volumes;  // one per modality; zero-filled where unavailable
  AvailabilityMask available;   // defaults to all present
  std::optional<LabelVolume> voxel_mask;
  std::optional<LabelVolume> labels;
  std::vector<float> priors;  // per modality, NaN when unknown
  std::string normalization = "none";

  int n_modalities() const { return static_cast<int>(volumes.size()); }
  Index depth() const { return volumes.front().dim(0); }
  Index height() const { return volumes.front().dim(1); }
  Index width() const { return volumes.front().dim(2); }
  int modality_index(const std::string& name) const;
  /// Throws AlignmentError on shape mismatch.
  void validate() const;
};

struct SliceRecord {
  std::string subject_id;
  Index slice_index = 0;
  std::vector<Image> images;
  Index brain_pixel_count = 0;
  std::optional<LabelImage> labels;
  std::vector<float> priors;

  int n_modalities() const { return static_cast<int>(images.size()); }
};

struct IntensityPrior {
  float value = 0.0f;
};

// ---------------------------------------------------------------------------
// IO

/// Loads raw volumes in the declared modality order; shapes come from each
/// file's .hdr sidecar. Values are returned as stored.
MultisequenceVolume load_volume_set(const std::vector<fs::path>& paths, const std::vector<std::string>& modality_order);

/// Writes one subject directory under `root`. Unavailable modalities are not written.
void save_subject(const fs::path& root, const MultisequenceVolume& vol);
/// Reads a subject directory written by save_subject. Missing modality files
/// become zero volumes with the corresponding availability bit cleared.
MultisequenceVolume load_subject(const fs::path& subject_dir);

struct DatasetManifest {
  std::vector<std::string> modalities;
  std::vector<std::string> subjects;
  std::map<std::string, std::string> extra;
};

void write_manifest(const fs::path& root, const DatasetManifest& manifest);
DatasetManifest read_manifest(const fs::path& root);
std::vector<MultisequenceVolume> load_dataset(const fs::path& root);

/// FNV-1a over every regular file (sorted relative path plus contents).
std::uint64_t hash_directory(const fs::path& root);

std::map<std::string, std::string> read_key_values(const fs::path& file);
void write_key_values(const fs::path& file, const std::vector<std::pair<std::string, std::string>>& entries);
std::string format_float(float v);
std::string format_double(double v);
std::vector<std::string> split(const std::string& s, char sep);
std::string join(const std::vector<std::string>& parts, char sep);

// ---------------------------------------------------------------------------
// Normalization, slicing, masking

enum class NormalizationMode { minmax, percentile };

/// Linear map to [-1, 1]; percentile mode clips at the `upper_percentile`
/// (linear interpolation between order statistics) before scaling.
Volume normalize_intensity(const Volume& volume, NormalizationMode mode, double upper_percentile = 99.5);

/// Order statistic with linear interpolation, q in [0, 100].
double percentile(std::vector<float> values, double q);

enum class MaskSource { provided, nonzero_intensity };

struct SlicePolicy {
  enum class Kind { brain_threshold, center_k };
  Kind kind = Kind::brain_threshold;
  Index value = 2000;
  MaskSource mask_source = MaskSource::provided;

  static SlicePolicy brain_threshold(Index min_pixels, MaskSource source = MaskSource::provided) {
    return {Kind::brain_threshold, min_pixels, source};
  }
  static SlicePolicy center_k(Index k) { return {Kind::center_k, k, MaskSource::provided}; }
};

/// Brain pixels on axial slice `z` under the chosen mask source.
Index brain_pixel_count(const MultisequenceVolume& vol, Index z, MaskSource source);

std::vector<SliceRecord> extract_slices(const MultisequenceVolume& vol, const SlicePolicy& policy);

/// X_i = I_i * AS_i.
std::vector<Image> apply_availability_mask(const SliceRecord& record, const AvailabilityMask& mask);

// ---------------------------------------------------------------------------
// Phantoms

enum TissueLabel : std::uint8_t {
  kBackground = 0,
  kSkull = 1,
  kGrayMatter = 2,
  kWhiteMatter = 3,
  kCsf = 4,
  kLesionCore = 5,
  kLesionRim = 6,
};
inline constexpr int kTissueLabelCount = 7;

struct PhantomOptions {
  std::uint64_t seed = 0;
  int n_subjects = 10;
  Index size = 64;  // H = W
  int n_modalities = 4;
  Index depth = 16;
  double lesion_probability = 0.5;
  double noise_sigma = 0.02;
  /// Per-subject, per-modality contrast gain drawn from [1 - j, 1 + j].
  double gain_jitter = 0.15;
};

std::vector<std::string> phantom_modality_names(int n_modalities);

/// Noise-free contrast of `label` in `modality` before the subject gain.
/// A lesion label that is invisible in a modality renders as `underlying`.
float phantom_contrast(int modality, int n_modalities, std::uint8_t label, std::uint8_t underlying);

std::vector<MultisequenceVolume> generate_phantoms(const PhantomOptions& options);
/// Writes the phantom set to `root` and returns the directory hash.
std::uint64_t generate_phantom_dataset(const PhantomOptions& options, const fs::path& root);

// ---------------------------------------------------------------------------
// Intensity priors

enum class PriorMode { median_soft_tissue, dataset_mean };

/// Gray matter, white matter, CSF and lesion voxels.
LabelVolume soft_tissue_mask(const LabelVolume& labels);

/// Median intensity over voxels with a nonzero mask value.
IntensityPrior median_soft_tissue_prior(const Volume& volume, const LabelVolume& mask);
/// Mean of per-subject medians (training-set statistic).
IntensityPrior dataset_mean_prior(const std::vector<float>& subject_medians);
/// Dispatches on mode; dataset_mean returns `precomputed_mean`.
IntensityPrior compute_intensity_prior(const Volume& volume, const LabelVolume& mask, PriorMode mode,
                                       float precomputed_mean = 0.0f);

/// Fills vol.priors with the per-modality soft-tissue medians.
void attach_priors(MultisequenceVolume& vol);

}  // namespace hfgan
