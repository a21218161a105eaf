// dmvi command line. Settings resolve in this order, later wins:
// built-in defaults, --config file, DMVI_SEED, --set key=value, explicit flags.

#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "dmvi/errors.hpp"
#include "dmvi/experiment.hpp"

namespace {

using dmvi::exp::ExperimentConfig;

struct Overrides {
  std::vector<std::pair<std::string, std::optional<std::string>>> flags;

  std::optional<std::string>& slot(const std::string& key) {
    flags.emplace_back(key, std::nullopt);
    return flags.back().second;
  }
};

// Options whose value lands in config key `key`.
void bind(CLI::App* app, Overrides& o, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_option(flag, o.slot(key), help + " [" + key + "]");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dmvi: distribution-matching experiments for variational models"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", "dmvi 0.1.0");

  std::string config_path;
  std::vector<std::string> sets;
  Overrides o;
  o.flags.reserve(64);  // slots are referenced by CLI11 until parsing ends
  app.add_option("-c,--config", config_path, "ini file with [section] key = value lines")->check(CLI::ExistingFile);
  app.add_option("--set", sets, "override any config key, e.g. --set train.batch=128")->take_all();
  bind(&app, o, "-o,--out", "experiment.output_dir", "output directory");
  bind(&app, o, "--seed", "experiment.seed", "run seed");
  bind(&app, o, "--dataset", "data.dataset", "sprites|grid2d|rings");
  bind(&app, o, "--data-seed", "data.data_seed", "dataset seed");
  bind(&app, o, "--n", "data.n", "dataset size");
  bind(&app, o, "--idx", "data.idx_path", "read data from an IDX file instead");

  std::string kind, method, synth_mode, dataset_mode;

  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  train->add_option("kind", kind, "vae|aae|gan|vgh|vghpp")->required()->check(CLI::IsMember({"vae", "aae", "gan", "vgh", "vghpp"}));
  bind(train, o, "--iterations", "train.iterations", "optimizer steps");
  bind(train, o, "--batch", "train.batch", "minibatch size");
  bind(train, o, "--latent", "model.latent", "latent dimension");
  bind(train, o, "--hidden", "model.hidden", "hidden width");
  bind(train, o, "--visible", "model.visible", "bernoulli|quantized_normal");
  bind(train, o, "--recon", "model.recon", "loglik|l1 (aae)");
  bind(train, o, "--lambda", "model.lambda", "reconstruction weight");
  bind(train, o, "--generator-loss", "model.generator_loss", "nonsaturating|reverse_kl (gan)");

  auto* estimate = app.add_subcommand("estimate-kl", "estimate KL(q(z) || p(z)) of a checkpoint");
  estimate->add_option("-m,--method", method, "mc|ratio|gmm|ar")->required()->check(CLI::IsMember({"mc", "ratio", "gmm", "ar"}));

  auto* surgery = app.add_subcommand("surgery", "split the average posterior KL into marginal KL and mutual information");
  auto* low = app.add_subcommand("low-posterior", "decode the prior latents with the lowest aggregate posterior");
  bind(low, o, "--count", "estimate.low_posterior_n", "number of latents kept");
  auto* diversity = app.add_subcommand("diversity", "1 - SSIM sample diversity of a checkpoint");
  bind(diversity, o, "--samples", "estimate.diversity_samples", "number of generated images");
  for (auto* sub : {estimate, surgery, low, diversity}) {
    bind(sub, o, "--checkpoint", "estimate.checkpoint", "checkpoint written by train");
    bind(sub, o, "--num-z", "estimate.num_z", "latent samples");
  }

  auto* synth = app.add_subcommand("synth-gauss", "KL estimation and minimization between affine Gaussians");
  synth->add_option("--mode", synth_mode, "estimate|minimize")->required()->check(CLI::IsMember({"estimate", "minimize"}));
  bind(synth, o, "--k", "synth.k", "latent dimension; data dimension is max(1, k/10)");
  bind(synth, o, "--iterations", "synth.iterations", "learner updates");
  bind(synth, o, "--disc-steps", "synth.disc_steps", "discriminator updates per learner update");
  bind(synth, o, "--stop-ratio", "synth.stop_ratio", "stop once true KL <= ratio x initial");

  auto* dataset = app.add_subcommand("dataset", "generate or inspect a dataset");
  dataset->add_option("action", dataset_mode, "generate|inspect")->required()->check(CLI::IsMember({"generate", "inspect"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : dmvi::exp::kExitConfig;
  }

  ExperimentConfig cfg;
  try {
    if (!config_path.empty()) cfg = dmvi::exp::load_ini(config_path);
    dmvi::exp::apply_seed_env(cfg);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw dmvi::ConfigError("--set expects key=value, got '" + s + "'");
      dmvi::exp::set_value(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [key, value] : o.flags)
      if (value) dmvi::exp::set_value(cfg, key, *value);
  } catch (const dmvi::ConfigError& e) {
    std::cerr << "dmvi: " << e.what() << '\n';
    return dmvi::exp::kExitConfig;
  } catch (const dmvi::IoError& e) {
    std::cerr << "dmvi: " << e.what() << '\n';
    return dmvi::exp::kExitIo;
  }

  const CLI::App* sub = app.get_subcommands().front();
  cfg.command = sub->get_name();
  if (sub == train) cfg.mode = kind;
  else if (sub == estimate) cfg.mode = method;
  else if (sub == synth) cfg.mode = synth_mode;
  else if (sub == dataset) cfg.mode = dataset_mode;

  const auto outcome = dmvi::exp::run_experiment(cfg);
  std::cout << cfg.command << (cfg.mode.empty() ? "" : " " + cfg.mode) << ": " << outcome.status << " -> "
            << cfg.output_dir.string() << '\n';
  if (!outcome.message.empty()) std::cerr << "dmvi: " << outcome.message << '\n';
  return outcome.exit_code;
}
