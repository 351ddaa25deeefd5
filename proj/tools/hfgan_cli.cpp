// Command-line driver: phantom generation, training, synthesis, evaluation,
// imputation and latent export.
//
// Exit codes: 0 success, 1 bad input or configuration, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "hfgan/evaluation.hpp"
#include "hfgan/training.hpp"

using namespace hfgan;

namespace {

// ---------------------------------------------------------------------------
// Shared option plumbing

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

const std::map<std::string, std::string>& key_help() {
  static const std::map<std::string, std::string> help{
      {"n_modalities", "number of modalities N (default: from the dataset)"},
      {"image_size", "slice height and width (default: from the dataset)"},
      {"base_channels", "encoder stem width"},
      {"latent_channels", "latent channels c"},
      {"downsample_factor", "spatial downsampling factor f (power of two)"},
      {"token_dim", "infuser token width C"},
      {"n_heads", "attention heads"},
      {"patch_size", "infuser patch size p"},
      {"mlp_ratio", "transformer MLP expansion"},
      {"disc_channels", "discriminator trunk widths, comma separated"},
      {"variant", "ablation variant: full, no-enc-m, no-enc-c, no-caff"},
      {"ie", "intensity encoding: off, median, dataset-mean"},
      {"seed", "seed for initialization, shuffling and scenario sampling"},
      {"init_seed", "parameter initialization seed (defaults to --seed)"},
      {"epochs", "training epochs"},
      {"batch_size", "effective batch size (even; gradients accumulated per sample)"},
      {"lr_g", "generator learning rate"},
      {"lr_d", "discriminator learning rate"},
      {"beta1", "Adam beta1"},
      {"beta2", "Adam beta2"},
      {"warmup_fraction", "fraction of steps spent in linear warmup"},
      {"total_steps", "stop after this many steps (0: epochs x steps per epoch)"},
      {"checkpoint_every", "epochs between checkpoints"},
      {"alpha", "reconstruction weight"},
      {"beta", "latent similarity weight"},
      {"gamma", "cycle weight"},
      {"lambda1", "generator adversarial weight"},
      {"lambda2", "generator classification weight"},
      {"lambda3", "discriminator adversarial weight"},
      {"lambda4", "discriminator classification weight"},
  };
  return help;
}

/// Dataset-side settings shared by train, evaluate and export.
struct DataOptions {
  std::string data;
  std::string slice_policy = "brain:2000";
  std::string mask_source = "provided";
};

SlicePolicy parse_slice_policy(const std::string& text, const std::string& mask_source) {
  const auto parts = split(text, ':');
  if (parts.size() != 2) throw ParameterError("slice policy must be brain:<min_pixels> or center:<k>, got '" + text + "'");
  Index value = 0;
  try {
    value = std::stol(parts[1]);
  } catch (const std::exception&) {
    throw ParameterError("invalid slice policy value '" + parts[1] + "'");
  }
  MaskSource source;
  if (mask_source == "provided")
    source = MaskSource::provided;
  else if (mask_source == "nonzero")
    source = MaskSource::nonzero_intensity;
  else
    throw ParameterError("mask source must be provided or nonzero, got '" + mask_source + "'");
  if (parts[0] == "brain") return SlicePolicy::brain_threshold(value, source);
  if (parts[0] == "center") return SlicePolicy::center_k(value);
  throw ParameterError("unknown slice policy '" + parts[0] + "' (expected brain or center)");
}

void add_data_options(CLI::App* cmd, DataOptions& d, bool with_policy) {
  cmd->add_option("--data", d.data, "dataset directory (contains dataset.txt)")->required();
  if (with_policy) {
    cmd->add_option("--slice-policy", d.slice_policy, "slice selection: brain:<min_pixels> or center:<k>")
        ->capture_default_str();
    cmd->add_option("--mask-source", d.mask_source, "brain mask for the brain policy: provided or nonzero")
        ->capture_default_str();
  }
}

fs::path require_dataset(const std::string& path) {
  if (path.empty() || !fs::exists(fs::path(path) / "dataset.txt"))
    throw ParameterError("dataset not found: " + path + " (expected a directory with dataset.txt)");
  return path;
}

/// Slices of every complete subject under the policy.
std::vector<SliceRecord> load_slices(const std::vector<MultisequenceVolume>& vols, const SlicePolicy& policy,
                                     bool require_complete) {
  std::vector<SliceRecord> out;
  for (const auto& v : vols) {
    if (v.available.count() != v.n_modalities()) {
      if (require_complete)
        throw ContractError("subject " + v.subject_id + " is missing modalities; training needs complete subjects");
      continue;
    }
    for (auto& r : extract_slices(v, policy)) out.push_back(std::move(r));
  }
  if (out.empty()) throw ParameterError("the slice policy selected no slices");
  return out;
}

void print_entries(std::ostream& out, const std::vector<std::pair<std::string, std::string>>& entries) {
  for (const auto& [k, v] : entries) out << k << '=' << v << '\n';
}

LoadedModel<float> open_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw ParameterError("checkpoint not found: " + path);
  return load_model<float>(path);
}

int modality_index(const std::vector<std::string>& names, const std::string& name) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<int>(i);
  throw ParameterError("unknown modality '" + name + "' (expected one of " + join(names, ',') + ")");
}

void check_model_matches(const LoadedModel<float>& m, const DatasetManifest& manifest) {
  if (static_cast<int>(manifest.modalities.size()) != m.config.n_modalities)
    throw ParameterError("checkpoint expects " + std::to_string(m.config.n_modalities) + " modalities, dataset has " +
                         std::to_string(manifest.modalities.size()));
  if (manifest.modalities != m.modalities)
    throw ParameterError("dataset modalities " + join(manifest.modalities, ',') + " differ from the checkpoint's " +
                         join(m.modalities, ','));
}

// ---------------------------------------------------------------------------
// phantom-gen

struct PhantomArgs {
  std::string out;
  PhantomOptions options;
};

void run_phantom_gen(const PhantomArgs& a) {
  const auto hash = generate_phantom_dataset(a.options, a.out);
  std::ifstream manifest(fs::path(a.out) / "dataset.txt");
  std::cout << manifest.rdbuf();
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  std::cout << "hash=" << buf << '\n';
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  DataOptions data;
  std::string run_dir;
  std::string config_file;
  std::string resume;
  std::map<std::string, std::string> values;  // flag values keyed by config key
  std::map<std::string, CLI::Option*> options;
};

void run_train(TrainArgs& a) {
  ModelConfig model;
  TrainConfig train;
  std::set<std::string> explicit_keys;
  auto apply = [&](const std::string& key, const std::string& value) {
    if (key == "data")
      a.data.data = value;
    else if (key == "slice_policy")
      a.data.slice_policy = value;
    else if (key == "mask_source")
      a.data.mask_source = value;
    else
      apply_config_entry(model, train, key, value);
    explicit_keys.insert(key);
  };
  // Precedence: defaults < resumed checkpoint < config file < flags.
  std::optional<Checkpoint> resume_from;
  if (!a.resume.empty()) {
    if (!fs::exists(a.resume)) throw ParameterError("checkpoint not found: " + a.resume);
    resume_from = Checkpoint::load(a.resume);
    read_checkpoint_config(*resume_from, model, train);
    explicit_keys.insert({"n_modalities", "image_size"});
  }
  if (!a.config_file.empty()) {
    if (!fs::exists(a.config_file)) throw ParameterError("config file not found: " + a.config_file);
    auto kv = read_key_values(a.config_file);
    // `seed` also sets init_seed, so it goes first.
    if (kv.count("seed")) apply("seed", kv.at("seed"));
    for (const auto& [k, v] : kv)
      if (k != "seed") apply(k, v);
  }
  if (a.options.at("seed")->count()) apply("seed", a.values.at("seed"));
  for (const auto& [key, opt] : a.options)
    if (key != "seed" && opt->count()) apply(key, a.values.at(key));

  const fs::path data_root = require_dataset(a.data.data);
  const auto manifest = read_manifest(data_root);
  const auto volumes = load_dataset(data_root);
  if (volumes.empty()) throw ParameterError("dataset has no subjects");
  if (!explicit_keys.count("n_modalities")) model.n_modalities = static_cast<int>(manifest.modalities.size());
  if (!explicit_keys.count("image_size")) model.image_size = volumes.front().height();
  model.validate();
  train.validate();
  if (static_cast<int>(manifest.modalities.size()) != model.n_modalities)
    throw ParameterError("dataset has " + std::to_string(manifest.modalities.size()) + " modalities, config sets " +
                         std::to_string(model.n_modalities));
  const auto policy = parse_slice_policy(a.data.slice_policy, a.data.mask_source);
  auto records = load_slices(volumes, policy, true);

  const fs::path run_dir = a.run_dir;
  fs::create_directories(run_dir / "reports");
  std::vector<std::pair<std::string, std::string>> resolved{{"data", fs::absolute(data_root).string()},
                                                            {"slice_policy", a.data.slice_policy},
                                                            {"mask_source", a.data.mask_source}};
  for (auto& e : config_entries(model, train)) resolved.push_back(e);
  write_key_values(run_dir / "config.resolved", resolved);
  print_entries(std::cout, resolved);
  std::cout << "fusion: "
            << (model.variant == Variant::no_caff ? "summation (channel attention disabled)" : "channel attention")
            << "\n";

  Trainer<float> trainer(model, train, std::move(records), manifest.modalities);
  if (resume_from) {
    trainer.restore(*resume_from);
    std::cout << "resumed at step " << trainer.state().step << " (epoch " << trainer.state().epoch << ")\n";
  }
  const long total = trainer.total_steps();
  const long every = std::max(1L, total / 20);
  std::cout << "slices: " << trainer.records().size() << ", steps per epoch: " << trainer.steps_per_epoch()
            << ", total steps: " << total << std::endl;
  LossReport last;
  hfgan::train(trainer, run_dir, [&](long step, const LossReport& r) {
    last = r;
    if (step % every == 0 || step == total) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "step %ld/%ld rec=%.4f cyc=%.4f sim=%.4f adv_g=%.4f adv_d=%.4f", step, total,
                    r.rec, r.cyc, r.sim, r.adv_g, r.adv_d);
      std::cout << buf << std::endl;
    }
  });
  std::vector<std::pair<std::string, std::string>> summary{{"step", std::to_string(trainer.state().step)},
                                                           {"epoch", std::to_string(trainer.state().epoch)}};
  for (const auto& [k, v] : last.terms()) summary.emplace_back("final." + k, format_double(v));
  write_key_values(run_dir / "reports" / "train_summary.txt", summary);
  std::cout << "checkpoint: " << (run_dir / "checkpoints" / "latest.ckpt").string() << '\n';
}

// ---------------------------------------------------------------------------
// synthesize

struct SynthArgs {
  std::string checkpoint, data, subject, available, target, out, latent_mode = "all";
};

void run_synthesize(const SynthArgs& a) {
  const auto mode = parse_latent_mode(a.latent_mode);
  auto model = open_checkpoint(a.checkpoint);
  const fs::path root = require_dataset(a.data);
  check_model_matches(model, read_manifest(root));
  if (!fs::exists(root / a.subject)) throw ParameterError("subject not found: " + a.subject);
  const MultisequenceVolume vol = load_subject(root / a.subject);
  const int t = modality_index(vol.modalities, a.target);
  AvailabilityMask inputs(std::vector<std::uint8_t>(static_cast<std::size_t>(vol.n_modalities()), 0));
  for (const auto& name : split(a.available, ',')) {
    const int i = modality_index(vol.modalities, name);
    if (i == t) throw ContractError("target " + a.target + " is listed as available");
    if (!vol.available[i]) throw ContractError("modality " + name + " is not available for subject " + a.subject);
    inputs.set(i, true);
  }
  if (inputs.count() == 0) throw ContractError("no available modality given");
  if (vol.height() != model.config.image_size)
    throw ShapeError("subject slices are " + std::to_string(vol.height()) + " pixels, checkpoint expects " +
                     std::to_string(model.config.image_size));

  SliceRecord prior_source;
  prior_source.priors = vol.priors;
  const auto prior = select_prior(model.config.intensity, prior_source, t, model.prior_means);
  const Index h = vol.height(), w = vol.width(), hw = h * w;
  Volume out(vol.volumes.front().shape());
  NoGradGuard ng;
  for (Index z = 0; z < vol.depth(); ++z) {
    std::vector<Var<float>> x;
    for (int i = 0; i < vol.n_modalities(); ++i) {
      Image img(Shape{h, w});
      if (inputs[i]) std::copy(vol.volumes[static_cast<std::size_t>(i)].data() + z * hw,
                               vol.volumes[static_cast<std::size_t>(i)].data() + (z + 1) * hw, img.data());
      x.push_back(constant(img));
    }
    const Image y = latent_ablation_synthesis(*model.generator, x, inputs, t, mode, prior).value();
    std::copy(y.data(), y.data() + hw, out.data() + z * hw);
  }
  MultisequenceVolume result = vol;
  for (int i = 0; i < result.n_modalities(); ++i)
    if (!inputs[i]) result.volumes[static_cast<std::size_t>(i)] = Volume(vol.volumes.front().shape());
  result.volumes[static_cast<std::size_t>(t)] = std::move(out);
  result.available = inputs;
  result.available.set(t, true);
  fs::create_directories(a.out);
  save_subject(a.out, result);
  DatasetManifest m{vol.modalities, {vol.subject_id}, {{"synthesized", a.target}, {"latent_mode", to_string(mode)}}};
  write_manifest(a.out, m);
  std::cout << "wrote " << (fs::path(a.out) / vol.subject_id / (a.target + ".f32")).string() << '\n';
}

// ---------------------------------------------------------------------------
// evaluate

struct EvalArgs {
  std::string checkpoint, reference, out;
  DataOptions data;
  long max_slices = 0;
};

ScenarioTable evaluate_checkpoint(const LoadedModel<float>& m, const std::vector<SliceRecord>& slices,
                                  const std::vector<std::string>& names) {
  return evaluate_model(generator_synthesizer(*m.generator, m.prior_means), slices, names);
}

void run_evaluate(const EvalArgs& a) {
  auto model = open_checkpoint(a.checkpoint);
  std::optional<LoadedModel<float>> reference;
  if (!a.reference.empty()) reference = open_checkpoint(a.reference);
  const fs::path root = require_dataset(a.data.data);
  const auto manifest = read_manifest(root);
  check_model_matches(model, manifest);
  if (reference) check_model_matches(*reference, manifest);
  auto slices = load_slices(load_dataset(root), parse_slice_policy(a.data.slice_policy, a.data.mask_source), false);
  if (a.max_slices > 0 && static_cast<long>(slices.size()) > a.max_slices) slices.resize(static_cast<std::size_t>(a.max_slices));
  if (slices.front().images.front().dim(0) != model.config.image_size)
    throw ShapeError("dataset slices do not match the checkpoint image size " + std::to_string(model.config.image_size));

  ScenarioTable table = evaluate_checkpoint(model, slices, manifest.modalities);
  if (reference) compare_tables(table, evaluate_checkpoint(*reference, slices, manifest.modalities));
  fs::create_directories(a.out);
  std::ofstream(fs::path(a.out) / "table.csv") << table.to_csv();
  std::ofstream(fs::path(a.out) / "table.txt") << table.to_text();
  std::cout << table.to_text();
}

// ---------------------------------------------------------------------------
// impute, export-embeddings

struct ImputeArgs {
  std::string checkpoint, data, out;
};

void run_impute(const ImputeArgs& a) {
  auto model = open_checkpoint(a.checkpoint);
  const fs::path root = require_dataset(a.data);
  check_model_matches(model, read_manifest(root));
  const auto s = impute_dataset(*model.generator, model.prior_means, root, a.out);
  std::cout << "subjects=" << s.subjects << " synthesized=" << s.synthesized_volumes << " copied=" << s.copied_volumes
            << '\n';
}

struct ExportArgs {
  std::string checkpoint, out;
  DataOptions data;
  long max_slices = 0;
};

void run_export(const ExportArgs& a) {
  auto model = open_checkpoint(a.checkpoint);
  const fs::path root = require_dataset(a.data.data);
  check_model_matches(model, read_manifest(root));
  auto slices = load_slices(load_dataset(root), parse_slice_policy(a.data.slice_policy, a.data.mask_source), false);
  if (a.max_slices > 0 && static_cast<long>(slices.size()) > a.max_slices) slices.resize(static_cast<std::size_t>(a.max_slices));
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  const long rows = export_latent_embeddings(*model.generator, slices, enumerate_scenarios(model.config.n_modalities),
                                             model.prior_means, a.out);
  std::cout << "rows=" << rows << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid-fusion GAN for multisequence MRI synthesis"};
  app.require_subcommand(1);

  PhantomArgs phantom;
  auto* gen = app.add_subcommand("phantom-gen", "write a procedural phantom dataset");
  gen->add_option("--out", phantom.out, "output dataset directory")->required();
  gen->add_option("--seed", phantom.options.seed, "generator seed")->capture_default_str();
  gen->add_option("--subjects", phantom.options.n_subjects, "number of subjects")->capture_default_str();
  gen->add_option("--size", phantom.options.size, "slice height and width (>= 32)")->capture_default_str();
  gen->add_option("--modalities", phantom.options.n_modalities, "number of modalities (2..5)")->capture_default_str();
  gen->add_option("--depth", phantom.options.depth, "axial slices per volume")->capture_default_str();
  gen->add_option("--lesion-probability", phantom.options.lesion_probability, "probability of a lesion per subject")
      ->capture_default_str();
  gen->add_option("--noise", phantom.options.noise_sigma, "Gaussian noise sigma in normalized units")
      ->capture_default_str();
  gen->add_option("--gain-jitter", phantom.options.gain_jitter, "per-subject contrast gain jitter")
      ->capture_default_str();

  TrainArgs train_args;
  auto* tr = app.add_subcommand("train", "train a model; writes config.resolved, metrics.csv, checkpoints/, reports/");
  tr->add_option("--data", train_args.data.data, "dataset directory (contains dataset.txt)");
  tr->add_option("--slice-policy", train_args.data.slice_policy, "slice selection: brain:<min_pixels> or center:<k>")
      ->capture_default_str();
  tr->add_option("--mask-source", train_args.data.mask_source, "brain mask for the brain policy: provided or nonzero")
      ->capture_default_str();
  tr->add_option("--run-dir", train_args.run_dir, "run directory")->required();
  tr->add_option("--config", train_args.config_file, "key=value config file (flags override it)");
  tr->add_option("--resume", train_args.resume, "checkpoint to resume from (epoch boundary)");
  {
    const auto defaults = config_entries(ModelConfig{}, TrainConfig{});
    for (const auto& [key, value] : defaults) {
      train_args.values[key] = value;
      train_args.options[key] =
          tr->add_option("--" + dashed(key), train_args.values[key], key_help().at(key))->default_str(value);
    }
  }

  SynthArgs synth;
  auto* sy = app.add_subcommand("synthesize", "synthesize one target volume for a subject");
  sy->add_option("--checkpoint", synth.checkpoint, "model checkpoint")->required();
  sy->add_option("--data", synth.data, "dataset directory")->required();
  sy->add_option("--subject", synth.subject, "subject id")->required();
  sy->add_option("--available", synth.available, "comma-separated input modalities")->required();
  sy->add_option("--target", synth.target, "modality to synthesize")->required();
  sy->add_option("--out", synth.out, "output dataset directory")->required();
  sy->add_option("--latent-mode", synth.latent_mode, "all, common-only, only-complementary, only-specific")
      ->capture_default_str();

  EvalArgs eval;
  auto* ev = app.add_subcommand("evaluate", "per-scenario PSNR/SSIM table, optional Wilcoxon comparison");
  ev->add_option("--checkpoint", eval.checkpoint, "model checkpoint")->required();
  ev->add_option("--reference", eval.reference, "second checkpoint for paired significance tests");
  add_data_options(ev, eval.data, true);
  ev->add_option("--out", eval.out, "report directory (table.csv, table.txt)")->required();
  ev->add_option("--max-slices", eval.max_slices, "evaluate at most this many slices (0: all)")->capture_default_str();

  ImputeArgs imp;
  auto* im = app.add_subcommand("impute", "fill missing sequences of a dataset");
  im->add_option("--checkpoint", imp.checkpoint, "model checkpoint")->required();
  im->add_option("--data", imp.data, "dataset with missing sequences")->required();
  im->add_option("--out", imp.out, "output dataset directory")->required();

  ExportArgs exp;
  auto* ex = app.add_subcommand("export-embeddings", "write pooled common and target latents per scenario as CSV");
  ex->add_option("--checkpoint", exp.checkpoint, "model checkpoint")->required();
  add_data_options(ex, exp.data, true);
  ex->add_option("--out", exp.out, "output CSV file")->required();
  ex->add_option("--max-slices", exp.max_slices, "export at most this many slices (0: all)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) run_phantom_gen(phantom);
    if (*tr) run_train(train_args);
    if (*sy) run_synthesize(synth);
    if (*ev) run_evaluate(eval);
    if (*im) run_impute(imp);
    if (*ex) run_export(exp);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.user_error() ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
