#include "dmvi/models.hpp"

#include <cmath>
#include <limits>

#include "dmvi/errors.hpp"

namespace dmvi::models {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool has_encoder(ModelKind k) { return k != ModelKind::kGan; }
bool has_data_disc(ModelKind k) { return k == ModelKind::kGan || k == ModelKind::kVgh || k == ModelKind::kVghpp; }
bool has_code_disc(ModelKind k) { return k == ModelKind::kAae || k == ModelKind::kVgh || k == ModelKind::kVghpp; }
// VAE and AAE decoders parameterize a likelihood; the others emit samples directly.
bool likelihood_decoder(ModelKind k) { return k == ModelKind::kVae || k == ModelKind::kAae; }

std::vector<std::size_t> widths(std::size_t in, std::size_t hidden, std::size_t layers, std::size_t out) {
  std::vector<std::size_t> w{in};
  for (std::size_t i = 0; i < layers; ++i) w.push_back(hidden);
  w.push_back(out);
  return w;
}

TrainableNet make_net(std::vector<std::size_t> w, Activation hidden, Activation output, RngStream rng) {
  return TrainableNet{Mlp(std::move(w), hidden, output, rng), AdamState{}};
}

ad::Var clamp_log_var(ad::Var lv) { return ad::clamp(lv, kLogVarFloor, kInf); }

struct Split {
  ad::Var mean;
  ad::Var log_var;
};

Split split_gaussian(ad::Var out, std::size_t dim) {
  return {ad::slice_cols(out, 0, dim), clamp_log_var(ad::slice_cols(out, dim, dim))};
}

Tensor batch_rows(const Tensor& data, std::size_t batch, RngStream& rng) {
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = rng.below(data.rows());
  return data.gather_rows(idx);
}

Tensor rows_slice(const Tensor& t, std::size_t begin, std::size_t count) {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = begin + i;
  return t.gather_rows(idx);
}

void require_finite(double v, const char* what, std::size_t it) {
  if (!std::isfinite(v))
    throw NumericError(std::string(what) + ": non-finite loss at iteration " + std::to_string(it));
}

// A zero learning rate freezes the component: no step, no observer call.
void update(TrainableNet& net, std::span<const Tensor> grads, double lr, const StepObserver& obs, std::size_t it,
            const char* name) {
  if (lr == 0.0) return;
  net.step(grads, lr);
  if (obs) obs(it, name);
}

void step(ad::Tape& tape, ad::Var loss, const BoundParams& bound, TrainableNet& net, double lr,
          const StepObserver& obs, std::size_t it, const char* name) {
  if (lr == 0.0) return;
  tape.backward(loss);
  update(net, bound.grads(tape), lr, obs, it, name);
}

bool should_log(const TrainConfig& c, std::size_t it) {
  return c.log_interval != 0 && (it % c.log_interval == 0 || it + 1 == c.iterations);
}

void require_data(const Tensor& data, const ModelBundle& b, const char* fn) {
  if (data.empty() || data.cols() != b.data_dim)
    throw DimensionError(std::string(fn) + ": data has " + shape_to_string(data.shape()) + ", model expects " +
                         std::to_string(b.data_dim) + " columns");
}

// Per-row reconstruction log-likelihood of x under the decoder output.
ad::Var recon_log_lik(const ModelBundle& b, ad::Var dec_out, const Tensor& x, const Tensor* noise) {
  ad::Tape& tape = dec_out.tape();
  if (b.config.visible == Visible::kBernoulli) return dist::graph::bernoulli_log_prob(dec_out, tape.constant(x));
  // Levels y = x * s are dequantized as y + u; the network models (y + u) / s,
  // so the density picks up -ln s per pixel.
  const double s = b.config.qn_scale;
  Tensor target = x;
  if (noise)
    for (std::size_t i = 0; i < target.size(); ++i) target[i] += (*noise)[i] / s;
  auto g = split_gaussian(dec_out, b.data_dim);
  const ad::Var ll = dist::graph::gaussian_log_prob(g.mean, g.log_var, tape.constant(std::move(target)));
  return s == 1.0 ? ll : ad::add_scalar(ll, -static_cast<double>(b.data_dim) * std::log(s));
}

// Decoded mean in data space as a graph node.
ad::Var decoded_mean(const ModelBundle& b, ad::Var dec_out) {
  if (!likelihood_decoder(b.kind)) return dec_out;
  if (b.config.visible == Visible::kBernoulli) return ad::sigmoid(dec_out);
  return ad::add_scalar(ad::slice_cols(dec_out, 0, b.data_dim), -0.5 / b.config.qn_scale);
}

}  // namespace

const char* kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::kVae: return "vae";
    case ModelKind::kAae: return "aae";
    case ModelKind::kGan: return "gan";
    case ModelKind::kVgh: return "vgh";
    case ModelKind::kVghpp: return "vghpp";
  }
  return "?";
}

ModelKind parse_kind(const std::string& s) {
  for (auto k : {ModelKind::kVae, ModelKind::kAae, ModelKind::kGan, ModelKind::kVgh, ModelKind::kVghpp})
    if (s == kind_name(k)) return k;
  throw ConfigError("unknown model kind '" + s + "' (expected vae|aae|gan|vgh|vghpp)");
}

const char* visible_name(Visible v) { return v == Visible::kBernoulli ? "bernoulli" : "quantized_normal"; }

Visible parse_visible(const std::string& s) {
  if (s == "bernoulli") return Visible::kBernoulli;
  if (s == "quantized_normal" || s == "qn") return Visible::kQuantizedNormal;
  throw ConfigError("unknown visible distribution '" + s + "' (expected bernoulli|quantized_normal)");
}

ModelBundle make_bundle(ModelKind kind, std::size_t data_dim, const TrainConfig& c) {
  if (data_dim == 0 || c.latent == 0) throw ContractError("make_bundle: zero data or latent dimension");
  if (!(c.qn_scale > 0.0)) throw ContractError("make_bundle: qn_scale must be positive");
  ModelBundle b;
  b.kind = kind;
  b.config = c;
  b.data_dim = data_dim;
  const RngStream root = RngStream(c.seed).substream(0x1417);
  if (has_encoder(kind))
    b.encoder = make_net(widths(data_dim, c.hidden, c.hidden_layers, 2 * c.latent), Activation::kLeakyRelu,
                         Activation::kIdentity, root.substream(0));
  if (likelihood_decoder(kind)) {
    const std::size_t out = c.visible == Visible::kBernoulli ? data_dim : 2 * data_dim;
    b.decoder = make_net(widths(c.latent, c.hidden, c.hidden_layers, out), Activation::kRelu, Activation::kIdentity,
                         root.substream(1));
  } else {
    b.decoder = make_net(widths(c.latent, c.hidden, c.hidden_layers, data_dim), Activation::kRelu,
                         c.bounded_output ? Activation::kSigmoid : Activation::kIdentity, root.substream(1));
  }
  if (has_data_disc(kind))
    b.data_disc = make_net(widths(data_dim, c.disc_hidden, c.disc_layers, 1), Activation::kLeakyRelu,
                           Activation::kIdentity, root.substream(2));
  if (has_code_disc(kind))
    b.code_disc = make_net(widths(c.latent, c.disc_hidden, c.disc_layers, 1), Activation::kLeakyRelu,
                           Activation::kIdentity, root.substream(3));
  return b;
}

dist::DiagGaussian encode(const ModelBundle& b, const Tensor& data) {
  if (!has_encoder(b.kind)) throw ContractError(std::string("encode: ") + kind_name(b.kind) + " has no encoder");
  require_data(data, b, "encode");
  const Tensor out = b.encoder.net.evaluate(data);
  const std::size_t n = out.rows(), k = b.config.latent;
  dist::DiagGaussian q{Tensor::matrix(n, k), Tensor::matrix(n, k)};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < k; ++j) {
      q.mean(r, j) = out(r, j);
      q.log_var(r, j) = std::max(kLogVarFloor, out(r, k + j));
    }
  return q;
}

Tensor decode_mean(const ModelBundle& b, const Tensor& z) {
  const Tensor out = b.decoder.net.evaluate(z);
  if (!likelihood_decoder(b.kind)) return out;
  Tensor m = Tensor::matrix(out.rows(), b.data_dim);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t j = 0; j < b.data_dim; ++j) {
      const double v = out(r, j);
      m(r, j) = b.config.visible == Visible::kBernoulli ? 1.0 / (1.0 + std::exp(-v)) : v - 0.5 / b.config.qn_scale;
    }
  return m;
}

// ---------------------------------------------------------------- ELBO

ElboNoise draw_elbo_noise(const ModelBundle& b, std::size_t batch, std::size_t mc, RngStream& rng) {
  if (mc == 0 || batch == 0) throw ContractError("draw_elbo_noise: zero samples");
  ElboNoise n;
  n.mc_samples = mc;
  n.eps = rng.normal_tensor({mc * batch, b.config.latent});
  if (b.config.visible == Visible::kQuantizedNormal) n.noise = rng.uniform_tensor({mc * batch, b.data_dim});
  return n;
}

ElboGraph elbo_graph(ad::Tape& tape, const ModelBundle& b, const BoundParams& enc, const BoundParams& dec,
                     const Tensor& x, const ElboNoise& noise) {
  require_data(x, b, "elbo");
  const std::size_t batch = x.rows(), k = b.config.latent;
  if (noise.eps.rows() != noise.mc_samples * batch || noise.eps.cols() != k)
    throw DimensionError("elbo: eps has " + shape_to_string(noise.eps.shape()) + ", expected [" +
                         std::to_string(noise.mc_samples * batch) + "x" + std::to_string(k) + "]");
  const bool qn = b.config.visible == Visible::kQuantizedNormal;
  if (qn && (noise.noise.rows() != noise.mc_samples * batch || noise.noise.cols() != b.data_dim))
    throw DimensionError("elbo: dequantization noise has " + shape_to_string(noise.noise.shape()));

  const ad::Var xv = tape.constant(x);
  const auto q = split_gaussian(b.encoder.net.forward(enc, xv), k);
  const ad::Var kl = dist::graph::kl_diag_standard(q.mean, q.log_var);

  ad::Var recon;
  for (std::size_t s = 0; s < noise.mc_samples; ++s) {
    const ad::Var eps = tape.constant(rows_slice(noise.eps, s * batch, batch));
    const ad::Var z = dist::graph::reparameterize(q.mean, q.log_var, eps);
    const Tensor u = qn ? rows_slice(noise.noise, s * batch, batch) : Tensor{};
    const ad::Var ll = recon_log_lik(b, b.decoder.net.forward(dec, z), x, qn ? &u : nullptr);
    recon = s == 0 ? ll : ad::add(recon, ll);
  }
  if (noise.mc_samples > 1) recon = ad::scale(recon, 1.0 / static_cast<double>(noise.mc_samples));

  ElboGraph g;
  g.per_example = ad::sub(recon, kl);
  g.elbo = ad::mean(g.per_example);
  g.recon = ad::mean(recon);
  g.kl = ad::mean(kl);
  return g;
}

double elbo(const Tensor& x, const ModelBundle& b, const ElboNoise& noise) {
  ad::Tape tape;
  const auto enc = b.encoder.net.bind(tape, false);
  const auto dec = b.decoder.net.bind(tape, false);
  return elbo_graph(tape, b, enc, dec, x, noise).elbo.value().item();
}

double elbo(const Tensor& x, const ModelBundle& b, std::size_t mc, RngStream& rng) {
  return elbo(x, b, draw_elbo_noise(b, x.rows(), mc, rng));
}

std::vector<double> elbo_per_example(const Tensor& x, const ModelBundle& b, std::size_t mc, RngStream& rng) {
  ad::Tape tape;
  const auto enc = b.encoder.net.bind(tape, false);
  const auto dec = b.decoder.net.bind(tape, false);
  const auto g = elbo_graph(tape, b, enc, dec, x, draw_elbo_noise(b, x.rows(), mc, rng));
  const auto v = g.per_example.value().data();
  return {v.begin(), v.end()};
}

double reconstruction_error(const ModelBundle& b, const Tensor& x) {
  const Tensor m = decode_mean(b, encode(b, x).mean);
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) s += (m[i] - x[i]) * (m[i] - x[i]);
  return s / static_cast<double>(m.size());
}

double reconstruction_l1(const ModelBundle& b, const Tensor& x) {
  const Tensor m = decode_mean(b, encode(b, x).mean);
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) s += std::abs(m[i] - x[i]);
  return s / static_cast<double>(x.rows());
}

// ---------------------------------------------------------------- adversarial terms

ad::Var neg_log_prob(ad::Var logits) { return ad::softplus(ad::neg(ad::clamp(logits, -kLogitBound, kLogitBound))); }

ad::Var neg_log_one_minus(ad::Var logits) { return ad::softplus(ad::clamp(logits, -kLogitBound, kLogitBound)); }

ad::Var ratio_loss(ad::Var logits) { return ad::neg(ad::clamp(logits, -kLogitBound, kLogitBound)); }

VghLossGraph vgh_loss_terms(const VghInputs& in, VghVariant variant, double lambda) {
  VghLossGraph g;
  g.l1 = ad::mean(ad::row_l1(ad::sub(in.x, in.x_hat)));
  const ad::Var weighted_l1 = ad::scale(g.l1, lambda);
  g.encoder = ad::add(weighted_l1, ad::mean(ratio_loss(in.c_post)));
  g.generator = ad::add(weighted_l1, ad::mean(ratio_loss(in.d_recon)));
  const ad::Var real = ad::mean(neg_log_prob(in.d_real));
  const ad::Var fake = ad::mean(neg_log_one_minus(in.d_recon));
  if (variant == VghVariant::kVghpp) {
    g.generator = ad::add(g.generator, ad::mean(ratio_loss(in.d_sample)));
    g.data_disc = ad::add(ad::add(ad::scale(real, 2.0), fake), ad::mean(neg_log_one_minus(in.d_sample)));
  } else {
    g.data_disc = ad::add(real, fake);
  }
  g.code_disc = ad::add(ad::mean(neg_log_one_minus(in.c_post)), ad::mean(neg_log_prob(in.c_prior)));
  return g;
}

namespace {

struct VghForward {
  VghInputs in;
  BoundParams enc, gen, dd, cd;
};

// One full forward pass of every VGH network; `train` selects which net is bound as leaves.
VghForward vgh_forward(ad::Tape& tape, const ModelBundle& b, const Tensor& x, const Tensor& eps,
                       const Tensor& z_prior, const std::string& train) {
  VghForward f;
  f.enc = b.encoder.net.bind(tape, train == "encoder");
  f.gen = b.decoder.net.bind(tape, train == "generator");
  f.dd = b.data_disc.net.bind(tape, train == "data_disc");
  f.cd = b.code_disc.net.bind(tape, train == "code_disc");
  const std::size_t k = b.config.latent;
  f.in.x = tape.constant(x);
  const auto q = split_gaussian(b.encoder.net.forward(f.enc, f.in.x), k);
  const ad::Var z_hat = dist::graph::reparameterize(q.mean, q.log_var, tape.constant(eps));
  const ad::Var zp = tape.constant(z_prior);
  f.in.x_hat = b.decoder.net.forward(f.gen, z_hat);
  f.in.d_real = b.data_disc.net.forward(f.dd, f.in.x);
  f.in.d_recon = b.data_disc.net.forward(f.dd, f.in.x_hat);
  f.in.d_sample = b.data_disc.net.forward(f.dd, b.decoder.net.forward(f.gen, zp));
  f.in.c_post = b.code_disc.net.forward(f.cd, z_hat);
  f.in.c_prior = b.code_disc.net.forward(f.cd, zp);
  return f;
}

struct AaeForward {
  ad::Var recon, adversarial, code_disc;
  BoundParams enc, dec, cd;
};

AaeForward aae_forward(ad::Tape& tape, const ModelBundle& b, const Tensor& x, const Tensor& eps,
                       const Tensor& noise, const Tensor& z_prior, bool train_autoencoder) {
  AaeForward f;
  f.enc = b.encoder.net.bind(tape, train_autoencoder);
  f.dec = b.decoder.net.bind(tape, train_autoencoder);
  f.cd = b.code_disc.net.bind(tape, !train_autoencoder);
  const ad::Var xv = tape.constant(x);
  const auto q = split_gaussian(b.encoder.net.forward(f.enc, xv), b.config.latent);
  const ad::Var z_hat = dist::graph::reparameterize(q.mean, q.log_var, tape.constant(eps));
  const ad::Var dec_out = b.decoder.net.forward(f.dec, z_hat);
  if (b.config.recon == ReconLoss::kL1) {
    f.recon = ad::scale(ad::mean(ad::row_l1(ad::sub(xv, decoded_mean(b, dec_out)))), b.config.lambda);
  } else {
    const bool qn = b.config.visible == Visible::kQuantizedNormal;
    f.recon = ad::neg(ad::mean(recon_log_lik(b, dec_out, x, qn ? &noise : nullptr)));
  }
  const ad::Var c_post = b.code_disc.net.forward(f.cd, z_hat);
  f.adversarial = ad::mean(ratio_loss(c_post));
  f.code_disc = ad::add(ad::mean(neg_log_one_minus(c_post)),
                        ad::mean(neg_log_prob(b.code_disc.net.forward(f.cd, tape.constant(z_prior)))));
  return f;
}

struct AaeNoise {
  Tensor eps, noise, z_prior;
};

AaeNoise draw_aae_noise(const ModelBundle& b, std::size_t batch, RngStream& rng) {
  AaeNoise n;
  n.eps = rng.normal_tensor({batch, b.config.latent});
  if (b.config.visible == Visible::kQuantizedNormal) n.noise = rng.uniform_tensor({batch, b.data_dim});
  n.z_prior = rng.normal_tensor({batch, b.config.latent});
  return n;
}

}  // namespace

VghLosses vgh_losses(const Tensor& batch, const ModelBundle& b, VghVariant variant, double lambda, RngStream& rng) {
  require_data(batch, b, "vgh_losses");
  const Tensor eps = rng.normal_tensor({batch.rows(), b.config.latent});
  const Tensor zp = rng.normal_tensor({batch.rows(), b.config.latent});
  ad::Tape tape;
  const auto f = vgh_forward(tape, b, batch, eps, zp, "");
  const auto g = vgh_loss_terms(f.in, variant, lambda);
  return {g.encoder.value().item(), g.generator.value().item(), g.data_disc.value().item(),
          g.code_disc.value().item(), g.l1.value().item()};
}

AaeLosses aae_losses(const Tensor& batch, const ModelBundle& b, RngStream& rng) {
  require_data(batch, b, "aae_losses");
  const auto n = draw_aae_noise(b, batch.rows(), rng);
  ad::Tape tape;
  const auto f = aae_forward(tape, b, batch, n.eps, n.noise, n.z_prior, false);
  return {f.recon.value().item(), f.adversarial.value().item(), f.code_disc.value().item()};
}

// ---------------------------------------------------------------- trainers

void train_vae_steps(ModelBundle& b, const Tensor& data, std::size_t iterations, RngStream& rng, ExperimentLog& log,
                     const StepObserver& observer) {
  require_data(data, b, "train_vae");
  const auto& c = b.config;
  const std::size_t start = b.encoder.adam.t;
  for (std::size_t i = 0; i < iterations; ++i) {
    const std::size_t it = start + i;
    const Tensor x = batch_rows(data, c.batch, rng);
    const ElboNoise noise = draw_elbo_noise(b, x.rows(), 1, rng);
    ad::Tape tape;
    const auto enc = b.encoder.net.bind(tape, true);
    const auto dec = b.decoder.net.bind(tape, true);
    const auto g = elbo_graph(tape, b, enc, dec, x, noise);
    const double value = g.elbo.value().item();
    require_finite(value, "train_vae", it);
    tape.backward(ad::neg(g.elbo));
    const auto ge = enc.grads(tape);
    const auto gd = dec.grads(tape);
    update(b.encoder, ge, c.lr_encoder, observer, it, "encoder");
    update(b.decoder, gd, c.lr_decoder, observer, it, "decoder");
    if (c.log_interval != 0 && (i % c.log_interval == 0 || i + 1 == iterations)) {
      log.record(it, "elbo", value);
      log.record(it, "kl_avg", g.kl.value().item());
      log.record(it, "recon", g.recon.value().item());
    }
  }
}

TrainResult train_vae(const Tensor& data, const TrainConfig& c, const StepObserver& observer) {
  TrainResult r{make_bundle(ModelKind::kVae, data.cols(), c), {}};
  RngStream rng = RngStream(c.seed).substream(1);
  train_vae_steps(r.bundle, data, c.iterations, rng, r.log, observer);
  return r;
}

TrainResult train_aae(const Tensor& data, const TrainConfig& c, const StepObserver& observer) {
  TrainResult r{make_bundle(ModelKind::kAae, data.cols(), c), {}};
  ModelBundle& b = r.bundle;
  const RngStream root = RngStream(c.seed).substream(1);
  for (std::size_t it = 0; it < c.iterations; ++it) {
    RngStream rng = root.substream(it);
    const Tensor x = batch_rows(data, c.batch, rng);
    const auto n = draw_aae_noise(b, x.rows(), rng);
    double recon = 0.0, adv = 0.0, cd = 0.0;
    {
      ad::Tape tape;
      const auto f = aae_forward(tape, b, x, n.eps, n.noise, n.z_prior, true);
      const ad::Var loss = ad::add(f.recon, f.adversarial);
      recon = f.recon.value().item();
      adv = f.adversarial.value().item();
      require_finite(loss.value().item(), "train_aae", it);
      tape.backward(loss);
      const auto ge = f.enc.grads(tape);
      const auto gd = f.dec.grads(tape);
      update(b.encoder, ge, c.lr_encoder, observer, it, "encoder");
      update(b.decoder, gd, c.lr_decoder, observer, it, "decoder");
    }
    {
      ad::Tape tape;
      const auto f = aae_forward(tape, b, x, n.eps, n.noise, n.z_prior, false);
      cd = f.code_disc.value().item();
      require_finite(cd, "train_aae", it);
      step(tape, f.code_disc, f.cd, b.code_disc, c.lr_code_disc, observer, it, "code_disc");
    }
    if (should_log(c, it)) {
      r.log.record(it, "recon", c.recon == ReconLoss::kL1 ? recon / c.lambda : -recon);
      r.log.record(it, "loss_enc", recon + adv);
      r.log.record(it, "loss_code_disc", cd);
    }
  }
  return r;
}

TrainResult train_gan(const Tensor& data, const TrainConfig& c, GeneratorLoss loss, const StepObserver& observer) {
  TrainResult r{make_bundle(ModelKind::kGan, data.cols(), c), {}};
  ModelBundle& b = r.bundle;
  const RngStream root = RngStream(c.seed).substream(1);
  for (std::size_t it = 0; it < c.iterations; ++it) {
    RngStream rng = root.substream(it);
    const Tensor x = batch_rows(data, c.batch, rng);
    const Tensor zp = rng.normal_tensor({x.rows(), c.latent});
    double ld = 0.0, lg = 0.0;
    {
      ad::Tape tape;
      const auto gen = b.decoder.net.bind(tape, false);
      const auto dd = b.data_disc.net.bind(tape, true);
      const ad::Var fake = b.decoder.net.forward(gen, tape.constant(zp));
      const ad::Var l = ad::add(ad::mean(neg_log_prob(b.data_disc.net.forward(dd, tape.constant(x)))),
                                ad::mean(neg_log_one_minus(b.data_disc.net.forward(dd, fake))));
      ld = l.value().item();
      require_finite(ld, "train_gan", it);
      step(tape, l, dd, b.data_disc, c.lr_disc, observer, it, "data_disc");
    }
    {
      ad::Tape tape;
      const auto gen = b.decoder.net.bind(tape, true);
      const auto dd = b.data_disc.net.bind(tape, false);
      const ad::Var logits = b.data_disc.net.forward(dd, b.decoder.net.forward(gen, tape.constant(zp)));
      const ad::Var l =
          ad::mean(loss == GeneratorLoss::kReverseKl ? ratio_loss(logits) : neg_log_prob(logits));
      lg = l.value().item();
      require_finite(lg, "train_gan", it);
      step(tape, l, gen, b.decoder, c.lr_decoder, observer, it, "generator");
    }
    if (should_log(c, it)) {
      r.log.record(it, "loss_disc", ld);
      r.log.record(it, "loss_gen", lg);
    }
  }
  return r;
}

TrainResult train_vgh(const Tensor& data, const TrainConfig& c, VghVariant variant, const StepObserver& observer) {
  const ModelKind kind = variant == VghVariant::kVghpp ? ModelKind::kVghpp : ModelKind::kVgh;
  TrainResult r{make_bundle(kind, data.cols(), c), {}};
  ModelBundle& b = r.bundle;
  const RngStream root = RngStream(c.seed).substream(1);
  for (std::size_t it = 0; it < c.iterations; ++it) {
    RngStream rng = root.substream(it);
    const Tensor x = batch_rows(data, c.batch, rng);
    const Tensor eps = rng.normal_tensor({x.rows(), c.latent});
    const Tensor zp = rng.normal_tensor({x.rows(), c.latent});
    VghLosses seen{};
    // Each network is updated against a fresh forward pass through the current parameters.
    {
      ad::Tape tape;
      const auto f = vgh_forward(tape, b, x, eps, zp, "encoder");
      const auto g = vgh_loss_terms(f.in, variant, c.lambda);
      seen.encoder = g.encoder.value().item();
      seen.l1 = g.l1.value().item();
      require_finite(seen.encoder, "train_vgh", it);
      step(tape, g.encoder, f.enc, b.encoder, c.lr_encoder, observer, it, "encoder");
    }
    {
      ad::Tape tape;
      const auto f = vgh_forward(tape, b, x, eps, zp, "generator");
      const auto g = vgh_loss_terms(f.in, variant, c.lambda);
      seen.generator = g.generator.value().item();
      require_finite(seen.generator, "train_vgh", it);
      step(tape, g.generator, f.gen, b.decoder, c.lr_decoder, observer, it, "generator");
    }
    {
      ad::Tape tape;
      const auto f = vgh_forward(tape, b, x, eps, zp, "data_disc");
      const auto g = vgh_loss_terms(f.in, variant, c.lambda);
      seen.data_disc = g.data_disc.value().item();
      require_finite(seen.data_disc, "train_vgh", it);
      step(tape, g.data_disc, f.dd, b.data_disc, c.lr_disc, observer, it, "data_disc");
    }
    {
      ad::Tape tape;
      const auto f = vgh_forward(tape, b, x, eps, zp, "code_disc");
      const auto g = vgh_loss_terms(f.in, variant, c.lambda);
      seen.code_disc = g.code_disc.value().item();
      require_finite(seen.code_disc, "train_vgh", it);
      step(tape, g.code_disc, f.cd, b.code_disc, c.lr_code_disc, observer, it, "code_disc");
    }
    if (should_log(c, it)) {
      r.log.record(it, "recon", seen.l1);
      r.log.record(it, "loss_enc", seen.encoder);
      r.log.record(it, "loss_gen", seen.generator);
      r.log.record(it, "loss_disc", seen.data_disc);
      r.log.record(it, "loss_code_disc", seen.code_disc);
    }
  }
  return r;
}

double sample_score(const ModelBundle& b, std::size_t n, RngStream& rng) {
  if (!has_data_disc(b.kind)) throw ContractError(std::string("sample_score: ") + kind_name(b.kind) + " has no data discriminator");
  const Tensor logits = b.data_disc.net.evaluate(generate(b, n, rng));
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += 1.0 / (1.0 + std::exp(-logits[i]));
  return s / static_cast<double>(logits.size());
}

Tensor generate(const ModelBundle& b, std::size_t n, RngStream& rng) {
  if (n == 0) throw ContractError("generate: n = 0");
  return decode_mean(b, rng.normal_tensor({n, b.config.latent}));
}

}  // namespace dmvi::models
