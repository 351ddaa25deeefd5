#pragma once

// Curriculum scenario sampling, the alternating generator/discriminator
// update, checkpointing and the epoch loop.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hfgan/checkpoint.hpp"
#include "hfgan/losses.hpp"
#include "hfgan/optim.hpp"

namespace hfgan {

/// One training scenario: first pass G(X ⊙ AS, AS, t), cycle pass
/// G(X_hat, hat_AS, c).
struct ScenarioSample {
  AvailabilityMask available;
  int target = 0;
  int cycle_source = 0;
  AvailabilityMask cycle_available;
  bool hard = false;

  /// Throws ContractError naming the first violated invariant.
  void validate() const;
};

/// Hard: a single available modality c != t, hat_AS = {t}. Easy: |AS| uniform
/// over {2..N-1} drawn from the modalities other than t, c uniform in AS,
/// hat_AS = all but c. Throws ParameterError for N < 3.
ScenarioSample sample_scenario(int n_modalities, int target, bool hard, Rng& rng);

/// First half hard, second half easy, targets uniform.
std::vector<ScenarioSample> sample_scenario_batch(int batch_size, int n_modalities, Rng& rng);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 24;
  double lr_g = 1e-4;
  double lr_d = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double warmup_fraction = 0.02;
  /// 0 derives the total from epochs x steps per epoch; otherwise training
  /// stops after exactly this many steps.
  long total_steps = 0;
  int checkpoint_every = 1;  // epochs
  std::uint64_t seed = 0;
  LossWeights weights;

  void validate() const;
};

/// Ordered (key, value) pairs of every model and training setting. The same
/// keys are used by config files, config.resolved and checkpoint manifests.
std::vector<std::pair<std::string, std::string>> config_entries(const ModelConfig& model, const TrainConfig& train);
/// Throws ParameterError for unknown keys or unparsable values.
void apply_config_entry(ModelConfig& model, TrainConfig& train, const std::string& key, const std::string& value);
std::uint64_t config_hash(const ModelConfig& model, const TrainConfig& train);
/// Applies the config.* manifest entries of a checkpoint in stored order.
void read_checkpoint_config(const Checkpoint& ck, ModelConfig& model, TrainConfig& train);

/// Entry of the per-epoch queue: every slice appears once per target modality.
struct QueueEntry {
  std::size_t record = 0;
  int target = 0;
};

struct TrainingSample {
  std::size_t record = 0;
  ScenarioSample scenario;
};

struct TrainState {
  long step = 0;
  int epoch = 0;  // completed epochs
  int nonfinite_streak = 0;
  bool lr_halved = false;
  double lr_scale = 1.0;
};

struct StepOptions {
  bool update_generator = true;
  bool update_discriminator = true;
};

/// Prior handed to the infuser for target `t` of a slice, or nullopt when
/// intensity encoding is off. Median mode uses the slice's per-volume prior
/// and falls back to the dataset mean when it is unknown.
std::optional<float> select_prior(IntensityMode mode, const SliceRecord& record, int t,
                                  const std::vector<float>& dataset_means);

/// Per-modality mean of the per-subject priors over `records` (one vote per subject).
std::vector<float> dataset_prior_means(const std::vector<SliceRecord>& records, int n_modalities);

template <typename S>
class Trainer {
 public:
  using StepCallback = std::function<void(long step, const LossReport&)>;

  Trainer(const ModelConfig& model, const TrainConfig& train, std::vector<SliceRecord> records,
          std::vector<std::string> modality_names);

  /// Shuffled (slice, target) pairs for one epoch; consumes the trainer RNG.
  std::vector<QueueEntry> epoch_queue();
  /// Cuts the queue into batches of batch_size (last batch trimmed to an even
  /// size) and attaches sampled scenarios, first half of each batch hard.
  std::vector<std::vector<TrainingSample>> epoch_batches();
  long steps_per_epoch() const;
  long total_steps() const;
  long warmup_steps() const;

  /// Forward, backward and the alternating update for one batch at the
  /// current step's learning rate. Non-finite losses skip the update; after
  /// three in a row the learning rate is halved once, the next three abort
  /// with NonFiniteError (after writing the snapshot, when configured).
  LossReport train_step(const std::vector<TrainingSample>& batch, StepOptions options = {});

  /// Runs the next epoch; `on_step` sees every step. Stops early at total_steps().
  std::vector<LossReport> run_epoch(const StepCallback& on_step = {});
  bool finished() const { return state_.step >= total_steps(); }

  Checkpoint checkpoint() const;
  void save_checkpoint(const std::filesystem::path& path) const { checkpoint().save(path); }
  /// Restores parameters, optimizer moments, RNG and loop state. The
  /// checkpoint's config hash must match this trainer's.
  void restore(const Checkpoint& ck);
  void set_snapshot_path(std::filesystem::path p) { snapshot_path_ = std::move(p); }

  Generator<S>& generator() { return *generator_; }
  Discriminator<S>& discriminator() { return *discriminator_; }
  const TrainState& state() const { return state_; }
  const ModelConfig& model_config() const { return model_; }
  const TrainConfig& train_config() const { return train_; }
  const std::vector<float>& prior_means() const { return prior_means_; }
  const std::vector<SliceRecord>& records() const { return records_; }

 private:
  bool discriminator_active() const;
  bool cycle_active() const;

  ModelConfig model_;
  TrainConfig train_;
  std::vector<SliceRecord> records_;
  std::vector<std::string> modality_names_;
  std::vector<float> prior_means_;
  std::unique_ptr<Generator<S>> generator_;
  std::unique_ptr<Discriminator<S>> discriminator_;
  Adam<S> opt_g_, opt_d_;
  Rng rng_;
  TrainState state_;
  std::filesystem::path snapshot_path_;
};

/// Epoch loop with a CSV metrics log (`step,term,value`, appended on resume)
/// and checkpoints under `checkpoints/`: epoch_<k>.ckpt every
/// checkpoint_every epochs plus latest.ckpt.
template <typename S>
void train(Trainer<S>& trainer, const std::filesystem::path& run_dir,
           const typename Trainer<S>::StepCallback& on_step = {});

/// Appends one row per loss term.
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path);
  void log(long step, const LossReport& report);

 private:
  std::filesystem::path path_;
};

/// Generator restored from a checkpoint for inference.
template <typename S>
struct LoadedModel {
  ModelConfig config;
  std::vector<std::string> modalities;
  std::vector<float> prior_means;
  std::unique_ptr<Generator<S>> generator;
};

template <typename S>
LoadedModel<S> load_model(const std::filesystem::path& checkpoint_path);

/// Parameter counts of the generator per top-level component.
struct ParameterCounts {
  Index encoder = 0, fusion = 0, infuser = 0, decoder = 0, total = 0;
};
ParameterCounts count_parameters(const ModelConfig& config);

}  // namespace hfgan
