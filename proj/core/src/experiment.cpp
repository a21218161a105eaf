#include "dmvi/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "dmvi/checkpoint.hpp"
#include "dmvi/diagnostics.hpp"
#include "dmvi/errors.hpp"
#include "json.hpp"

namespace dmvi::exp {

namespace {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------- value codecs

std::string fmt(const std::string& v) { return v; }
std::string fmt(const std::filesystem::path& v) { return v.string(); }
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void parse_into(std::string& dst, const std::string& v) { dst = v; }
void parse_into(std::filesystem::path& dst, const std::string& v) { dst = v; }
void parse_into(bool& dst, const std::string& v) {
  if (v == "true" || v == "1") dst = true;
  else if (v == "false" || v == "0") dst = false;
  else throw ConfigError("expected true or false, got '" + v + "'");
}
void parse_into(std::uint64_t& dst, const std::string& v) {
  const auto r = std::from_chars(v.data(), v.data() + v.size(), dst);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
}
void parse_into(double& dst, const std::string& v) {
  const auto r = std::from_chars(v.data(), v.data() + v.size(), dst);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError("expected a number, got '" + v + "'");
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename Acc>
Field field(const char* section, const char* key, Acc acc) {
  return {section, key, [acc](const ExperimentConfig& c) { return fmt(acc(const_cast<ExperimentConfig&>(c))); },
          [acc](ExperimentConfig& c, const std::string& v) { parse_into(acc(c), v); }};
}

template <typename E>
Field enum_field(const char* section, const char* key, E models::TrainConfig::*member,
                 std::vector<std::pair<E, const char*>> names) {
  return {section, key,
          [=](const ExperimentConfig& c) {
            for (const auto& [e, n] : names)
              if (c.train.*member == e) return std::string(n);
            return std::string("?");
          },
          [=](ExperimentConfig& c, const std::string& v) {
            std::string all;
            for (const auto& [e, n] : names) {
              if (v == n) {
                c.train.*member = e;
                return;
              }
              all += (all.empty() ? "" : "|") + std::string(n);
            }
            throw ConfigError("expected " + all + ", got '" + v + "'");
          }};
}

#define DMVI_F(sec, key, expr) field(sec, key, [](ExperimentConfig& c) -> auto& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f{
        DMVI_F("experiment", "command", c.command),
        DMVI_F("experiment", "mode", c.mode),
        DMVI_F("experiment", "output_dir", c.output_dir),
        DMVI_F("experiment", "seed", c.seed),
        DMVI_F("data", "dataset", c.dataset),
        DMVI_F("data", "data_seed", c.data_seed),
        DMVI_F("data", "n", c.data.n),
        DMVI_F("data", "image_size", c.data.image_size),
        DMVI_F("data", "noise_std", c.data.noise_std),
        DMVI_F("data", "rings", c.data.rings),
        DMVI_F("data", "idx_path", c.idx_path),
        DMVI_F("model", "latent", c.train.latent),
        DMVI_F("model", "hidden", c.train.hidden),
        DMVI_F("model", "hidden_layers", c.train.hidden_layers),
        DMVI_F("model", "disc_hidden", c.train.disc_hidden),
        DMVI_F("model", "disc_layers", c.train.disc_layers),
        DMVI_F("model", "bounded_output", c.train.bounded_output),
        DMVI_F("model", "lambda", c.train.lambda),
        DMVI_F("model", "qn_scale", c.train.qn_scale),
        DMVI_F("train", "iterations", c.train.iterations),
        DMVI_F("train", "batch", c.train.batch),
        DMVI_F("train", "lr_encoder", c.train.lr_encoder),
        DMVI_F("train", "lr_decoder", c.train.lr_decoder),
        DMVI_F("train", "lr_disc", c.train.lr_disc),
        DMVI_F("train", "lr_code_disc", c.train.lr_code_disc),
        DMVI_F("train", "log_interval", c.train.log_interval),
        DMVI_F("estimate", "checkpoint", c.checkpoint),
        DMVI_F("estimate", "num_z", c.num_z),
        DMVI_F("estimate", "mc_samples", c.mc_samples),
        DMVI_F("estimate", "gmm_components", c.gmm_components),
        DMVI_F("estimate", "gmm_iterations", c.gmm_iterations),
        DMVI_F("estimate", "ratio_hidden_layers", c.ratio.hidden_layers),
        DMVI_F("estimate", "ratio_width", c.ratio.width),
        DMVI_F("estimate", "ratio_iterations", c.ratio.iterations),
        DMVI_F("estimate", "ratio_batch", c.ratio.batch),
        DMVI_F("estimate", "ratio_lr", c.ratio.lr),
        DMVI_F("estimate", "ar_hidden", c.ar.hidden),
        DMVI_F("estimate", "ar_iterations", c.ar.iterations),
        DMVI_F("estimate", "ar_batch", c.ar.batch),
        DMVI_F("estimate", "ar_lr", c.ar.lr),
        DMVI_F("estimate", "low_posterior_n", c.low_posterior_n),
        DMVI_F("estimate", "diversity_samples", c.diversity_samples),
        DMVI_F("estimate", "bins", c.bins),
        DMVI_F("synth", "k", c.k),
        DMVI_F("synth", "iterations", c.minimize.iterations),
        DMVI_F("synth", "lr_learner", c.minimize.lr_learner),
        DMVI_F("synth", "lr_disc", c.minimize.lr_disc),
        DMVI_F("synth", "disc_steps", c.minimize.disc_steps),
        DMVI_F("synth", "batch", c.minimize.batch),
        DMVI_F("synth", "log_interval", c.minimize.log_interval),
        DMVI_F("synth", "stop_ratio", c.minimize.stop_ratio),
        DMVI_F("synth", "samples", c.synth_samples),
    };
    using models::Visible, models::ReconLoss, models::GeneratorLoss;
    const auto after = std::find_if(f.begin(), f.end(), [](const Field& x) { return x.key == "lambda"; }) + 1;
    f.insert(after,
             {enum_field<Visible>("model", "visible", &models::TrainConfig::visible,
                                  {{Visible::kBernoulli, "bernoulli"}, {Visible::kQuantizedNormal, "quantized_normal"}}),
              enum_field<ReconLoss>("model", "recon", &models::TrainConfig::recon,
                                    {{ReconLoss::kLogLikelihood, "loglik"}, {ReconLoss::kL1, "l1"}}),
              enum_field<GeneratorLoss>(
                  "model", "generator_loss", &models::TrainConfig::generator_loss,
                  {{GeneratorLoss::kNonSaturating, "nonsaturating"}, {GeneratorLoss::kReverseKl, "reverse_kl"}})});
    return f;
  }();
  return all;
}

#undef DMVI_F

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields())
    if (f.section == section && f.key == key) return &f;
  return nullptr;
}

// ---------------------------------------------------------------- outputs

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

struct Summary {
  std::vector<std::pair<std::string, double>> rows;
  void add(const std::string& name, double v) { rows.emplace_back(name, v); }
  std::string csv() const {
    std::ostringstream os;
    os << "name,value\n";
    for (const auto& [n, v] : rows) os << n << ',' << fmt(v) << '\n';
    return os.str();
  }
};

struct Outputs {
  ExperimentLog log;
  Summary summary;
  std::string status = "ok";
};

/// Grayscale grid, pixels clamped to [0, 1].
void write_pgm_grid(const std::filesystem::path& path, const Tensor& images, const Shape& item, std::size_t cols) {
  const std::size_t n = images.rows(), h = item[0], w = item[1];
  const std::size_t rows = (n + cols - 1) / cols;
  const std::size_t H = rows * (h + 1) + 1, W = cols * (w + 1) + 1;
  std::vector<std::uint8_t> px(H * W, 128);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r0 = 1 + (i / cols) * (h + 1), c0 = 1 + (i % cols) * (w + 1);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        px[(r0 + y) * W + c0 + x] =
            static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(images(i, y * w + x), 0.0, 1.0)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "P5\n" << W << ' ' << H << "\n255\n";
  f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

void write_idx(const std::filesystem::path& path, const Tensor& data, const Shape& item) {
  std::vector<std::uint8_t> b{0, 0, 0x08, static_cast<std::uint8_t>(item.size() + 1)};
  auto be32 = [&](std::size_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
  };
  be32(data.rows());
  for (auto e : item) be32(e);
  for (double v : data.data()) b.push_back(static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::string matrix_csv(const Tensor& m, const std::string& header) {
  std::ostringstream os;
  os << header << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row_span(r);
    for (std::size_t j = 0; j < row.size(); ++j) os << (j ? "," : "") << fmt(row[j]);
    os << '\n';
  }
  return os.str();
}

Json report_json(const est::EstimateReport& r, std::uint64_t hash) {
  Json j;
  j["method"] = est::method_name(r.method);
  j["value"] = r.value;
  j["stderr"] = r.std_error;
  j["num_z"] = r.num_z;
  j["config_hash"] = fmt(hash);
  j["valid"] = r.valid;
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

Json histogram_json(const diag::HistogramReport& h) {
  Json j;
  j["tag"] = h.tag;
  j["edges"] = h.edges;
  j["counts"] = h.counts;
  j["kde_x"] = h.kde_x;
  j["kde_y"] = h.kde_y;
  j["bandwidth"] = h.bandwidth;
  j["mean"] = h.mean;
  return j;
}

models::ModelBundle load_bundle(const ExperimentConfig& c, const data::Dataset& d) {
  if (c.checkpoint.empty()) throw ConfigError(c.command + ": no checkpoint given (estimate.checkpoint / --checkpoint)");
  auto b = ckpt::to_bundle(ckpt::load(c.checkpoint));
  if (b.data_dim != d.dim()) {
    throw ConfigError("checkpoint expects " + std::to_string(b.data_dim) + " features, dataset '" + d.name + "' has " +
                      std::to_string(d.dim()));
  }
  return b;
}

void require_encoder(const models::ModelBundle& b, const std::string& cmd) {
  if (b.encoder.net.num_layers() == 0) throw ConfigError(cmd + ": the checkpoint's model has no encoder");
}

// ---------------------------------------------------------------- commands

void cmd_train(const ExperimentConfig& c, Outputs& out) {
  const auto d = load_dataset(c);
  const Tensor x = d.matrix();
  models::TrainConfig tc = c.train;
  tc.seed = c.seed;
  const auto kind = models::parse_kind(c.mode);
  models::TrainResult r;
  switch (kind) {
    case models::ModelKind::kVae: r = models::train_vae(x, tc); break;
    case models::ModelKind::kAae: r = models::train_aae(x, tc); break;
    case models::ModelKind::kGan: r = models::train_gan(x, tc, tc.generator_loss); break;
    case models::ModelKind::kVgh: r = models::train_vgh(x, tc, models::VghVariant::kVgh); break;
    case models::ModelKind::kVghpp: r = models::train_vgh(x, tc, models::VghVariant::kVghpp); break;
  }
  out.log = r.log;
  std::vector<std::string> seen;
  for (const auto& rec : r.log.records())
    if (std::find(seen.begin(), seen.end(), rec.name) == seen.end()) seen.push_back(rec.name);
  for (const auto& n : seen) out.summary.add("final_" + n, *r.log.last(n));
  RngStream eval(c.seed ^ 0xe7a1);
  if (kind == models::ModelKind::kVae || kind == models::ModelKind::kAae) {
    out.summary.add("elbo", models::elbo(x, r.bundle, c.mc_samples, eval));
    const auto s = diag::posterior_kl_stats(r.bundle, x);
    out.summary.add("avg_posterior_kl", std::accumulate(s.per_example.begin(), s.per_example.end(), 0.0) /
                                            static_cast<double>(s.per_example.size()));
    out.summary.add("kl_sparsity", s.sparsity());
    out.summary.add("variance_floor_hit", s.floor_hit());
    out.summary.add("reconstruction_mse", models::reconstruction_error(r.bundle, x));
  }
  if (kind != models::ModelKind::kGan) out.summary.add("reconstruction_l1", models::reconstruction_l1(r.bundle, x));
  if (kind != models::ModelKind::kVae && kind != models::ModelKind::kAae)
    out.summary.add("sample_score", models::sample_score(r.bundle, 1000, eval));
  ckpt::save(ckpt::from_bundle(r.bundle, config_hash(c)), c.output_dir / "checkpoint.dmvi");
}

void cmd_estimate(const ExperimentConfig& c, Outputs& out) {
  const auto d = load_dataset(c);
  const auto b = load_bundle(c, d);
  require_encoder(b, c.command);
  const est::PosteriorTable table(models::encode(b, d.matrix()));
  const RngStream rng(c.seed);
  est::EstimateReport r;
  if (c.mode == "mc") {
    r = est::mc_marginal_kl(table, c.num_z, rng);
  } else if (c.mode == "ratio") {
    const Tensor q = est::sample_aggregate(table, c.num_z, rng.substream(0));
    RngStream pr = rng.substream(1);
    const Tensor p = pr.normal_tensor({c.num_z, table.dim()});
    r = est::ratio_kl(q, p, c.ratio, rng.substream(2));
  } else if (c.mode == "gmm") {
    const auto fit = est::gmm_fit(est::sample_aggregate(table, c.num_z, rng.substream(0)), c.gmm_components,
                                  c.gmm_iterations, rng.substream(1));
    r = est::density_model_kl([&](std::span<const double> z) { return fit.model.log_prob(z); }, est::Method::kGmm,
                              table, c.num_z, rng.substream(2));
  } else if (c.mode == "ar") {
    const auto fit = est::ar_fit(est::sample_aggregate(table, c.num_z, rng.substream(0)), c.ar, rng.substream(1));
    r = est::density_model_kl([&](std::span<const double> z) { return fit.model.log_prob(z); }, est::Method::kAr,
                              table, c.num_z, rng.substream(2));
  } else {
    throw ConfigError("estimate-kl: unknown method '" + c.mode + "' (expected mc|ratio|gmm|ar)");
  }
  out.log.record(0, "marginal_kl", r.value);
  out.log.record(0, "stderr", r.std_error);
  out.summary.add("marginal_kl", r.value);
  out.summary.add("stderr", r.std_error);
  out.summary.add("avg_posterior_kl", table.average_kl());
  write_text(c.output_dir / "report.json", report_json(r, config_hash(c)).dump(2) + "\n");
  if (!r.valid) throw NumericError("estimate-kl: " + r.note);
}

void cmd_surgery(const ExperimentConfig& c, Outputs& out) {
  const auto d = load_dataset(c);
  const auto b = load_bundle(c, d);
  require_encoder(b, c.command);
  const est::PosteriorTable table(models::encode(b, d.matrix()));
  const auto s = est::surgery_decompose(table, c.num_z, RngStream(c.seed));
  for (const auto& [n, v] : std::vector<std::pair<std::string, double>>{{"avg_kl", s.avg_kl},
                                                                         {"marginal_kl", s.marginal.value},
                                                                         {"marginal_kl_stderr", s.marginal.std_error},
                                                                         {"mutual_info", s.mutual_info},
                                                                         {"marginal_kl_floor", s.floor}}) {
    out.log.record(0, n, v);
    out.summary.add(n, v);
  }
  Json j;
  j["avg_kl"] = s.avg_kl;
  j["marginal"] = report_json(s.marginal, config_hash(c));
  j["mutual_info"] = s.mutual_info;
  j["floor"] = s.floor;
  j["dataset_size"] = table.size();
  write_text(c.output_dir / "report.json", j.dump(2) + "\n");
}

void cmd_low_posterior(const ExperimentConfig& c, Outputs& out) {
  const auto d = load_dataset(c);
  const Tensor x = d.matrix();
  const auto b = load_bundle(c, d);
  require_encoder(b, c.command);
  const RngStream rng(c.seed);
  const auto low = diag::low_posterior_samples(b, x, c.num_z, c.low_posterior_n, rng.substream(0));
  const auto nn = diag::nearest_neighbors(low.samples, x);
  const auto hists = diag::elbo_histogram(
      b, {{"data", x}, {"low_posterior", low.samples}, {"nearest_neighbor", x.gather_rows(nn)}}, c.bins, c.mc_samples,
      rng.substream(1));
  const auto stats = diag::posterior_kl_stats(b, x);
  double nn_kl = 0.0;
  for (auto i : nn) nn_kl += stats.per_example[i];
  nn_kl /= static_cast<double>(nn.size());
  const double all_kl = std::accumulate(stats.per_example.begin(), stats.per_example.end(), 0.0) /
                        static_cast<double>(stats.per_example.size());

  for (std::size_t i = 0; i < low.log_q.size(); ++i) out.log.record(i, "log_q", low.log_q[i]);
  for (const auto& h : hists) out.summary.add("elbo_mean_" + h.tag, h.mean);
  out.summary.add("elbo_separation", hists[0].mean - hists[1].mean);
  out.summary.add("posterior_kl_nearest_neighbor", nn_kl);
  out.summary.add("posterior_kl_dataset", all_kl);

  Tensor lq = Tensor::matrix(low.log_q.size(), 1 + low.latents.cols());
  for (std::size_t i = 0; i < low.log_q.size(); ++i) {
    lq(i, 0) = low.log_q[i];
    for (std::size_t j = 0; j < low.latents.cols(); ++j) lq(i, 1 + j) = low.latents(i, j);
  }
  std::string header = "log_q";
  for (std::size_t j = 0; j < low.latents.cols(); ++j) header += ",z" + std::to_string(j);
  write_text(c.output_dir / "low_posterior.csv", matrix_csv(lq, header));
  write_text(c.output_dir / "samples.csv", matrix_csv(low.samples, "pixels"));
  Json hj = Json::array();
  std::string hcsv;
  for (const auto& h : hists) {
    hj.push_back(histogram_json(h));
    hcsv += h.to_csv();
  }
  write_text(c.output_dir / "histograms.json", hj.dump(2) + "\n");
  write_text(c.output_dir / "histograms.csv", hcsv);
  if (d.item_shape.size() == 2) {
    write_pgm_grid(c.output_dir / "low_posterior.pgm", low.samples, d.item_shape, 8);
    write_pgm_grid(c.output_dir / "nearest_neighbor.pgm", x.gather_rows(nn), d.item_shape, 8);
  }
}

void cmd_diversity(const ExperimentConfig& c, Outputs& out) {
  const auto d = load_dataset(c);
  if (d.item_shape.size() != 2) throw ConfigError("diversity: dataset '" + d.name + "' is not an image dataset");
  const auto b = load_bundle(c, d);
  RngStream rng(c.seed);
  const Tensor samples = models::generate(b, c.diversity_samples, rng);
  const std::size_t m = std::min(c.diversity_samples, d.size());
  std::vector<std::size_t> first(m);
  std::iota(first.begin(), first.end(), 0);
  const double ds = diag::diversity(samples, d.item_shape), dd = diag::diversity(d.matrix().gather_rows(first), d.item_shape);
  out.log.record(0, "diversity_samples", ds);
  out.log.record(0, "diversity_data", dd);
  out.summary.add("diversity_samples", ds);
  out.summary.add("diversity_data", dd);
  write_pgm_grid(c.output_dir / "samples.pgm", samples, d.item_shape, 8);
}

void cmd_synth(const ExperimentConfig& c, Outputs& out) {
  const auto task = synth::make_task(c.k, c.seed);
  out.summary.add("k", static_cast<double>(task.k));
  out.summary.add("d", static_cast<double>(task.d));
  if (c.mode == "estimate") {
    const auto r = synth::run_estimation(task, synth::classifier_for(task), c.synth_samples, RngStream(c.seed));
    out.log.record(0, "true_kl", r.true_kl);
    out.log.record(0, "est_kl", r.estimate.value);
    out.summary.add("true_kl", r.true_kl);
    out.summary.add("est_kl", r.estimate.value);
    Json j = report_json(r.estimate, config_hash(c));
    j["true_kl"] = r.true_kl;
    j["classifier_width"] = synth::classifier_for(task).width;
    write_text(c.output_dir / "report.json", j.dump(2) + "\n");
  } else if (c.mode == "minimize") {
    const auto r = synth::run_minimization(task, c.minimize);
    out.log = r.to_log();
    out.summary.add("initial_kl", r.initial_kl);
    out.summary.add("final_kl", r.final_kl());
    out.summary.add("iterations_run", static_cast<double>(r.trajectory.back().step));
    synth::write_trajectory_csv(r, c.output_dir / "trajectory.csv");
    out.status = r.status;
  } else {
    throw ConfigError("synth-gauss: unknown mode '" + c.mode + "' (expected estimate|minimize)");
  }
}

void cmd_dataset(const ExperimentConfig& c, Outputs& out) {
  if (c.mode != "generate" && c.mode != "inspect")
    throw ConfigError("dataset: unknown mode '" + c.mode + "' (expected generate|inspect)");
  const auto d = load_dataset(c);
  const Tensor x = d.matrix();
  double lo = x[0], hi = x[0], sum = 0.0;
  for (double v : x.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  out.summary.add("size", static_cast<double>(d.size()));
  out.summary.add("dim", static_cast<double>(d.dim()));
  out.summary.add("mean", sum / static_cast<double>(x.size()));
  out.summary.add("min", lo);
  out.summary.add("max", hi);
  out.log.record(0, "size", static_cast<double>(d.size()));
  out.log.record(0, "mean", sum / static_cast<double>(x.size()));
  Json j;
  j["name"] = d.name;
  j["shape"] = d.data.shape();
  j["item_shape"] = d.item_shape;
  j["digest"] = fmt(data::digest(d.data));
  write_text(c.output_dir / "dataset.json", j.dump(2) + "\n");
  if (c.mode == "generate") {
    if (d.item_shape.size() == 2) {
      write_idx(c.output_dir / "dataset.idx", x, d.item_shape);
      write_pgm_grid(c.output_dir / "preview.pgm", x.gather_rows(std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}),
                     d.item_shape, 8);
    } else {
      write_text(c.output_dir / "dataset.csv", matrix_csv(x, "x,y"));
    }
  }
}

void write_status(const ExperimentConfig& c, const RunOutcome& o) {
  Json j;
  j["command"] = c.command;
  j["mode"] = c.mode;
  j["status"] = o.status;
  j["exit_code"] = o.exit_code;
  j["message"] = o.message;
  j["config_hash"] = fmt(config_hash(c));
  write_text(c.output_dir / "status.json", j.dump(2) + "\n");
}

}  // namespace

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      os << (section.empty() ? "" : "\n") << '[' << f.section << "]\n";
      section = f.section;
    }
    os << f.key << " = " << f.get(c) << '\n';
  }
  return os.str();
}

ExperimentConfig parse_ini(const std::string& text, ExperimentConfig c) {
  std::istringstream is(text);
  std::string line, section;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    const Field* f = find_field(section, key);
    if (!f) throw ConfigError(where + "unknown key '" + key + "' in section [" + section + "]");
    try {
      f->set(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + section + "." + key + ": " + e.what());
    }
  }
  return c;
}

ExperimentConfig load_ini(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_ini(ss.str(), std::move(base));
}

void set_value(ExperimentConfig& c, const std::string& dotted, const std::string& value) {
  const auto dot = dotted.find('.');
  const Field* f = dot == std::string::npos ? nullptr : find_field(dotted.substr(0, dot), dotted.substr(dot + 1));
  if (!f) throw ConfigError("unknown config key '" + dotted + "'");
  try {
    f->set(c, value);
  } catch (const ConfigError& e) {
    throw ConfigError(dotted + ": " + e.what());
  }
}

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.section + "." + f.key);
  return out;
}

std::uint64_t config_hash(const ExperimentConfig& c) {
  ExperimentConfig copy = c;
  copy.output_dir.clear();
  const std::string s = to_ini(copy);
  return data::fnv1a64(s.data(), s.size());
}

bool apply_seed_env(ExperimentConfig& c) {
  const char* s = std::getenv("DMVI_SEED");
  if (!s || !*s) return false;
  try {
    parse_into(c.seed, s);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("DMVI_SEED: ") + e.what());
  }
  return true;
}

data::Dataset load_dataset(const ExperimentConfig& c) {
  if (!c.idx_path.empty()) {
    auto d = data::load_idx(c.idx_path);
    // Flatten everything after the item axis.
    if (d.data.rank() == 1) d.data = d.data.reshaped({d.data.size(), 1});
    return d;
  }
  return data::generate(data::parse_dataset(c.dataset), c.data, c.data_seed);
}

RunOutcome run_experiment(const ExperimentConfig& c) {
  RunOutcome o;
  try {
    std::filesystem::create_directories(c.output_dir);
  } catch (const std::filesystem::filesystem_error& e) {
    return {kExitIo, "error", e.what()};
  }
  Outputs out;
  try {
    write_text(c.output_dir / "config.ini", to_ini(c));
    if (c.command == "train") cmd_train(c, out);
    else if (c.command == "estimate-kl") cmd_estimate(c, out);
    else if (c.command == "surgery") cmd_surgery(c, out);
    else if (c.command == "low-posterior") cmd_low_posterior(c, out);
    else if (c.command == "diversity") cmd_diversity(c, out);
    else if (c.command == "synth-gauss") cmd_synth(c, out);
    else if (c.command == "dataset") cmd_dataset(c, out);
    else throw ConfigError("unknown command '" + c.command + "'");
    o.status = out.status;
    if (o.status == "diverged") {
      o.exit_code = kExitNumeric;
      o.message = "true KL exceeded 10x its initial value";
    }
  } catch (const ConfigError& e) {
    o = {kExitConfig, "error", e.what()};
  } catch (const ContractError& e) {
    o = {kExitConfig, "error", e.what()};
  } catch (const DimensionError& e) {
    o = {kExitConfig, "error", e.what()};
  } catch (const NumericError& e) {
    o = {kExitNumeric, "error", e.what()};
  } catch (const IoError& e) {
    o = {kExitIo, "error", e.what()};
  } catch (const std::filesystem::filesystem_error& e) {
    o = {kExitIo, "error", e.what()};
  }
  try {
    out.log.write_jsonl(c.output_dir / "metrics.jsonl");
    write_text(c.output_dir / "summary.csv", out.summary.csv());
    write_status(c, o);
  } catch (const IoError& e) {
    if (o.exit_code == kExitOk) o = {kExitIo, "error", e.what()};
  }
  return o;
}

}  // namespace dmvi::exp
