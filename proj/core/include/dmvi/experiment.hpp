#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dmvi/datasets.hpp"
#include "dmvi/estimators.hpp"
#include "dmvi/models.hpp"
#include "dmvi/synth.hpp"

namespace dmvi::exp {

/// Everything one invocation needs. `mode` is the model kind for train, the
/// method for estimate-kl, estimate|minimize for synth-gauss and
/// generate|inspect for dataset.
struct ExperimentConfig {
  std::string command = "train";
  std::string mode = "vae";
  std::filesystem::path output_dir = "dmvi_out";
  std::uint64_t seed = 0;

  std::string dataset = "sprites";
  std::uint64_t data_seed = 0;
  data::DatasetParams data;
  std::string idx_path;

  models::TrainConfig train;

  std::string checkpoint;
  std::size_t num_z = 10000;
  std::size_t mc_samples = 1;
  std::size_t gmm_components = 10;
  std::size_t gmm_iterations = 100;
  est::RatioClassifierConfig ratio;
  est::ArConfig ar;
  std::size_t low_posterior_n = 64;
  std::size_t diversity_samples = 64;
  std::size_t bins = 40;

  std::size_t k = 10;
  synth::MinimizeConfig minimize;
  std::size_t synth_samples = 10000;
};

/// Flat `key = value` lines grouped under [section] headers; every field is
/// written, doubles with 17 significant digits.
std::string to_ini(const ExperimentConfig& c);
/// Starts from `base` and applies the file's keys. Unknown sections or keys,
/// and unparsable values, throw ConfigError naming the line.
ExperimentConfig parse_ini(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_ini(const std::filesystem::path& path, ExperimentConfig base = {});
/// Sets one field addressed as "section.key".
void set_value(ExperimentConfig& c, const std::string& dotted_key, const std::string& value);
std::vector<std::string> known_keys();

/// FNV-1a of the resolved config with output_dir left out.
std::uint64_t config_hash(const ExperimentConfig& c);
/// DMVI_SEED, when set, replaces the seed. Returns true if it did.
bool apply_seed_env(ExperimentConfig& c);

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;

struct RunOutcome {
  int exit_code = kExitOk;
  std::string status = "ok";  ///< ok | diverged | error
  std::string message;
};

/// Runs one command and writes config.ini, metrics.jsonl, summary.csv and
/// status.json (plus command outputs) into output_dir. Module errors are
/// caught, recorded in status.json and mapped to an exit code.
RunOutcome run_experiment(const ExperimentConfig& config);

/// Loads the configured dataset: idx_path when set, else the generator.
data::Dataset load_dataset(const ExperimentConfig& c);

}  // namespace dmvi::exp
