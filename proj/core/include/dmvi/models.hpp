#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "dmvi/distributions.hpp"
#include "dmvi/metrics.hpp"
#include "dmvi/nn.hpp"

namespace dmvi::models {

enum class ModelKind { kVae, kAae, kGan, kVgh, kVghpp };
enum class Visible { kBernoulli, kQuantizedNormal };
enum class ReconLoss { kLogLikelihood, kL1 };
enum class GeneratorLoss { kNonSaturating, kReverseKl };
enum class VghVariant { kVgh, kVghpp };

const char* kind_name(ModelKind k);
ModelKind parse_kind(const std::string& s);
const char* visible_name(Visible v);
Visible parse_visible(const std::string& s);

/// ln(1e-6): floor on every Gaussian log-variance produced by a network.
inline constexpr double kLogVarFloor = -13.815510557964274;
/// Probabilities entering a log are clamped to [1e-7, 1 - 1e-7]; this is the matching logit bound.
inline constexpr double kLogitBound = 16.118095550958316;

/// A learning rate of exactly 0 freezes that component during training.
struct TrainConfig {
  std::size_t latent = 16;
  double lambda = 1.0;
  double lr_encoder = 1e-3;
  double lr_decoder = 1e-3;
  double lr_disc = 2e-4;
  double lr_code_disc = 2e-4;
  std::size_t iterations = 2000;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  Visible visible = Visible::kBernoulli;
  /// QuantizedNormal treats x * qn_scale as integer pixel levels; 255 reads
  /// [0, 1] images as 8-bit data, 1 uses the values as given.
  double qn_scale = 255.0;
  ReconLoss recon = ReconLoss::kLogLikelihood;
  GeneratorLoss generator_loss = GeneratorLoss::kNonSaturating;
  std::size_t hidden = 256;
  std::size_t hidden_layers = 2;
  std::size_t disc_hidden = 256;
  std::size_t disc_layers = 3;
  /// Generator output squashed to (0, 1) for image data; identity for real-valued data.
  bool bounded_output = true;
  std::size_t log_interval = 10;
};

/// All networks of one model with their optimizer state. Networks a model
/// kind does not use have no layers.
struct ModelBundle {
  ModelKind kind = ModelKind::kVae;
  TrainConfig config;
  std::size_t data_dim = 0;
  TrainableNet encoder;
  TrainableNet decoder;
  TrainableNet data_disc;
  TrainableNet code_disc;
};

ModelBundle make_bundle(ModelKind kind, std::size_t data_dim, const TrainConfig& config);

/// q(z|x) parameters for every row of `data`, variance floor applied.
dist::DiagGaussian encode(const ModelBundle& bundle, const Tensor& data);
/// Decoder mean in data space: sigmoid(logits) for Bernoulli, the mean for
/// QuantizedNormal shifted back by the 0.5 dequantization offset, and the
/// generator output for adversarial models.
Tensor decode_mean(const ModelBundle& bundle, const Tensor& z);

// ---------------------------------------------------------------- ELBO

struct ElboGraph {
  ad::Var per_example;  ///< [batch x 1]
  ad::Var elbo;         ///< batch mean
  ad::Var recon;        ///< batch mean of the MC likelihood term
  ad::Var kl;           ///< batch mean of KL(q(z|x) || p(z))
};

/// Per-call randomness for the ELBO: `eps` is (mc_samples * batch) x latent
/// standard normals, `noise` the matching U[0,1) dequantization noise
/// (ignored for Bernoulli).
struct ElboNoise {
  Tensor eps;
  Tensor noise;
  std::size_t mc_samples = 1;
};

ElboNoise draw_elbo_noise(const ModelBundle& bundle, std::size_t batch, std::size_t mc_samples, RngStream& rng);

ElboGraph elbo_graph(ad::Tape& tape, const ModelBundle& bundle, const BoundParams& enc, const BoundParams& dec,
                     const Tensor& x, const ElboNoise& noise);

/// Mean ELBO of `x`, with the same graph the trainer differentiates.
double elbo(const Tensor& x, const ModelBundle& bundle, const ElboNoise& noise);
double elbo(const Tensor& x, const ModelBundle& bundle, std::size_t mc_samples, RngStream& rng);
std::vector<double> elbo_per_example(const Tensor& x, const ModelBundle& bundle, std::size_t mc_samples,
                                     RngStream& rng);

/// Mean squared error between data and the decoded posterior mean.
double reconstruction_error(const ModelBundle& bundle, const Tensor& x);
/// Mean per-example l1 distance between data and the decoded posterior mean.
double reconstruction_l1(const ModelBundle& bundle, const Tensor& x);

// ---------------------------------------------------------------- adversarial terms

/// -log D with D = sigmoid(logit) clamped to [1e-7, 1 - 1e-7], per element.
ad::Var neg_log_prob(ad::Var logits);
/// -log(1 - D), same clamp.
ad::Var neg_log_one_minus(ad::Var logits);
/// R(x) = -log D + log(1 - D) = -logit after clamping.
ad::Var ratio_loss(ad::Var logits);

struct VghInputs {
  ad::Var x;
  ad::Var x_hat;
  ad::Var d_real;    ///< data-disc logits on x
  ad::Var d_recon;   ///< on x_hat
  ad::Var d_sample;  ///< on G(z ~ p); only read by VGH++
  ad::Var c_post;    ///< code-disc logits on z_hat
  ad::Var c_prior;   ///< on z ~ p
};

struct VghLossGraph {
  ad::Var encoder;
  ad::Var generator;
  ad::Var data_disc;
  ad::Var code_disc;
  ad::Var l1;  ///< batch mean ||x - x_hat||_1
};

VghLossGraph vgh_loss_terms(const VghInputs& in, VghVariant variant, double lambda);

struct VghLosses {
  double encoder;
  double generator;
  double data_disc;
  double code_disc;
  double l1;
};

/// All four losses at the bundle's current parameters for one batch.
VghLosses vgh_losses(const Tensor& batch, const ModelBundle& bundle, VghVariant variant, double lambda,
                     RngStream& rng);

struct AaeLosses {
  double recon;        ///< reconstruction loss (negative log-likelihood or lambda * l1)
  double adversarial;  ///< mean R_C(z_hat)
  double code_disc;
};

AaeLosses aae_losses(const Tensor& batch, const ModelBundle& bundle, RngStream& rng);

// ---------------------------------------------------------------- trainers

struct TrainResult {
  ModelBundle bundle;
  ExperimentLog log;
};

/// Training hooks for tests: invoked after every optimizer step with the
/// component name ("encoder", "decoder", "generator", "data_disc", "code_disc").
using StepObserver = std::function<void(std::size_t iteration, const std::string& component)>;

TrainResult train_vae(const Tensor& data, const TrainConfig& config, const StepObserver& observer = {});
TrainResult train_aae(const Tensor& data, const TrainConfig& config, const StepObserver& observer = {});
TrainResult train_gan(const Tensor& data, const TrainConfig& config, GeneratorLoss loss,
                      const StepObserver& observer = {});
TrainResult train_vgh(const Tensor& data, const TrainConfig& config, VghVariant variant,
                      const StepObserver& observer = {});
/// Continues training an existing bundle in place.
void train_vae_steps(ModelBundle& bundle, const Tensor& data, std::size_t iterations, RngStream& rng,
                     ExperimentLog& log, const StepObserver& observer = {});

/// Mean data-discriminator probability on prior samples pushed through the generator.
double sample_score(const ModelBundle& bundle, std::size_t n, RngStream& rng);
/// Prior draws decoded to data space.
Tensor generate(const ModelBundle& bundle, std::size_t n, RngStream& rng);

}  // namespace dmvi::models
