#include "dmvi/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dmvi::est {

namespace {

struct RunningMean {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t n = 0;

  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++n;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double std_error() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double var = std::max(0.0, (sum_sq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1));
    return std::sqrt(var / static_cast<double>(n));
  }
};

/// The i-th aggregate posterior draw: x uniform over rows, then z ~ q(z|x).
std::vector<double> aggregate_draw(const PosteriorTable& table, std::size_t i, const RngStream& rng) {
  RngStream sub = rng.substream(i);
  const std::size_t row = sub.below(table.size());
  return table.sample(row, sub);
}

std::vector<std::size_t> permutation(std::size_t n, RngStream& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

double log_sum_exp(std::span<const double> v) {
  const double hi = *std::max_element(v.begin(), v.end());
  if (std::isinf(hi)) return hi;
  double s = 0.0;
  for (double x : v) s += std::exp(x - hi);
  return hi + std::log(s);
}

}  // namespace

const char* method_name(Method m) {
  switch (m) {
    case Method::kMc:
      return "mc";
    case Method::kRatio:
      return "ratio";
    case Method::kGmm:
      return "gmm";
    case Method::kAr:
      return "ar";
  }
  return "?";
}

PosteriorTable::PosteriorTable(dist::DiagGaussian posteriors) : q_(std::move(posteriors)) {
  require_same_shape(q_.mean, q_.log_var, "PosteriorTable");
  if (q_.count() == 0) throw ContractError("PosteriorTable: empty dataset");
  const std::size_t n = q_.count(), d = q_.dim();
  inv_var_.resize(n * d);
  log_norm_.assign(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double lv = q_.log_var(r, j);
      inv_var_[r * d + j] = std::exp(-lv);
      s += lv + dist::kLog2Pi;
    }
    log_norm_[r] = -0.5 * s;
  }
}

void PosteriorTable::conditional_log_q(std::span<const double> z, std::vector<double>& out) const {
  const std::size_t n = size(), d = dim();
  if (z.size() != d) throw DimensionError("conditional_log_q: z has " + std::to_string(z.size()) + " entries, posteriors " + std::to_string(d));
  out.resize(n);
  const double* mu = q_.mean.data().data();
  for (std::size_t r = 0; r < n; ++r) {
    double quad = 0.0;
    const double* m = mu + r * d;
    const double* iv = inv_var_.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = z[j] - m[j];
      quad += diff * diff * iv[j];
    }
    out[r] = log_norm_[r] - 0.5 * quad;
  }
}

double PosteriorTable::marginal_log_q(std::span<const double> z) const {
  thread_local std::vector<double> scratch;
  conditional_log_q(z, scratch);
  return dist::log_mean_exp(scratch);
}

std::vector<double> PosteriorTable::sample(std::size_t row, RngStream& rng) const {
  const std::size_t d = dim();
  std::vector<double> z(d);
  for (std::size_t j = 0; j < d; ++j) z[j] = q_.mean(row, j) + std::exp(0.5 * q_.log_var(row, j)) * rng.normal();
  return z;
}

double PosteriorTable::average_kl() const {
  const auto rows = dist::kl_diag_standard_rows(q_);
  double s = 0.0;
  for (double v : rows) s += v;
  return s / static_cast<double>(rows.size());
}

double marginal_log_q(std::span<const double> z, const PosteriorTable& table) { return table.marginal_log_q(z); }

EstimateReport mc_marginal_kl(const PosteriorTable& table, std::size_t num_z, const RngStream& rng) {
  if (num_z == 0) throw ContractError("mc_marginal_kl: num_z must be at least 1");
  const dist::StandardPrior prior{table.dim()};
  RunningMean acc;
  for (std::size_t i = 0; i < num_z; ++i) {
    const auto z = aggregate_draw(table, i, rng);
    acc.add(table.marginal_log_q(z) - prior.log_prob(z));
  }
  EstimateReport r;
  r.method = Method::kMc;
  r.value = acc.mean();
  r.std_error = acc.std_error();
  r.num_z = num_z;
  r.inner_samples = table.size();
  return r;
}

Tensor sample_aggregate(const PosteriorTable& table, std::size_t num_z, const RngStream& rng) {
  Tensor out = Tensor::matrix(num_z, table.dim());
  for (std::size_t i = 0; i < num_z; ++i) {
    const auto z = aggregate_draw(table, i, rng);
    std::copy(z.begin(), z.end(), out.row_span(i).begin());
  }
  return out;
}

EstimateReport ratio_kl(const Tensor& samples_q, const Tensor& samples_p, const RatioClassifierConfig& config,
                        const RngStream& rng) {
  if (samples_q.rows() == 0 || samples_p.rows() == 0) throw ContractError("ratio_kl: empty sample set");
  if (samples_q.cols() != samples_p.cols()) {
    throw DimensionError("ratio_kl: sample dimensions differ " + shape_to_string(samples_q.shape()) + " vs " +
                         shape_to_string(samples_p.shape()));
  }
  RngStream split_rng = rng.substream(0);
  RngStream init_rng = rng.substream(1);
  RngStream batch_rng = rng.substream(2);

  const auto q_perm = permutation(samples_q.rows(), split_rng);
  const auto p_perm = permutation(samples_p.rows(), split_rng);
  const std::size_t q_train_n = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::floor(config.train_fraction * static_cast<double>(samples_q.rows()))), 1,
      std::max<std::size_t>(1, samples_q.rows() - 1));
  const std::size_t p_train_n = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::floor(config.train_fraction * static_cast<double>(samples_p.rows()))), 1,
      samples_p.rows());
  std::vector<std::size_t> q_train(q_perm.begin(), q_perm.begin() + q_train_n);
  std::vector<std::size_t> q_eval(q_perm.begin() + q_train_n, q_perm.end());
  if (q_eval.empty()) q_eval = q_train;
  std::vector<std::size_t> p_train(p_perm.begin(), p_perm.begin() + p_train_n);

  std::vector<std::size_t> widths{samples_q.cols()};
  for (std::size_t i = 0; i < config.hidden_layers; ++i) widths.push_back(config.width);
  widths.push_back(1);
  TrainableNet clf{Mlp(widths, Activation::kLeakyRelu, Activation::kIdentity, init_rng), {}};

  EstimateReport report;
  report.method = Method::kRatio;
  const std::size_t half = std::max<std::size_t>(1, config.batch);
  std::vector<std::size_t> bq(half), bp(half);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    for (std::size_t i = 0; i < half; ++i) {
      bq[i] = q_train[batch_rng.below(q_train.size())];
      bp[i] = p_train[batch_rng.below(p_train.size())];
    }
    ad::Tape tape;
    BoundParams bound = clf.net.bind(tape, true);
    ad::Var lq = clf.net.forward(bound, tape.constant(samples_q.gather_rows(bq)));
    ad::Var lp = clf.net.forward(bound, tape.constant(samples_p.gather_rows(bp)));
    // -log D(q) - log(1 - D(p)) with D = sigmoid(logit)
    ad::Var loss = ad::add(ad::mean(ad::softplus(ad::neg(lq))), ad::mean(ad::softplus(lp)));
    if (!std::isfinite(loss.value().item())) {
      report.valid = false;
      report.note = "classifier loss became non-finite at iteration " + std::to_string(it);
      report.value = std::numeric_limits<double>::quiet_NaN();
      return report;
    }
    tape.backward(loss);
    try {
      clf.step(bound.grads(tape), config.lr);
    } catch (const NumericError& e) {
      report.valid = false;
      report.note = e.what();
      report.value = std::numeric_limits<double>::quiet_NaN();
      return report;
    }
  }

  const Tensor logits = clf.net.evaluate(samples_q.gather_rows(q_eval));
  RunningMean acc;
  for (double l : logits.data()) acc.add(l);
  report.value = acc.mean();
  report.std_error = acc.std_error();
  report.num_z = q_eval.size();
  report.inner_samples = 1;
  report.valid = std::isfinite(report.value);
  if (!report.valid) report.note = "non-finite classifier output";
  return report;
}

double GmmModel::log_prob(std::span<const double> z) const {
  const std::size_t k = components(), d = dim();
  if (z.size() != d) throw DimensionError("GmmModel::log_prob: dimension mismatch");
  std::vector<double> terms(k);
  for (std::size_t c = 0; c < k; ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double var = variances(c, j);
      const double diff = z[j] - means(c, j);
      s += diff * diff / var + std::log(var) + dist::kLog2Pi;
    }
    terms[c] = std::log(weights[c]) - 0.5 * s;
  }
  return log_sum_exp(terms);
}

std::vector<double> GmmModel::responsibilities(std::span<const double> z) const {
  const std::size_t k = components(), d = dim();
  std::vector<double> terms(k);
  for (std::size_t c = 0; c < k; ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double var = variances(c, j);
      const double diff = z[j] - means(c, j);
      s += diff * diff / var + std::log(var) + dist::kLog2Pi;
    }
    terms[c] = std::log(weights[c]) - 0.5 * s;
  }
  const double norm = log_sum_exp(terms);
  for (auto& t : terms) t = std::exp(t - norm);
  return terms;
}

GmmFitResult gmm_fit(const Tensor& samples, std::size_t k, std::size_t iterations, const RngStream& rng) {
  const std::size_t n = samples.rows(), d = samples.cols();
  if (k == 0) throw ContractError("gmm_fit: need at least one component");
  if (n < k) throw ContractError("gmm_fit: " + std::to_string(n) + " samples for " + std::to_string(k) + " components");
  RngStream init = rng.substream(0);
  RngStream reseed_rng = rng.substream(1);

  std::vector<double> data_mean(d, 0.0), data_var(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) data_mean[j] += samples(r, j) / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = samples(r, j) - data_mean[j];
      data_var[j] += diff * diff / static_cast<double>(n);
    }
  for (auto& v : data_var) v = std::max(v, kGmmVarianceFloor);

  GmmFitResult result;
  GmmModel& m = result.model;
  m.weights.assign(k, 1.0 / static_cast<double>(k));
  m.means = Tensor::matrix(k, d);
  m.variances = Tensor::matrix(k, d);
  const auto perm = permutation(n, init);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) {
      m.means(c, j) = samples(perm[c], j);
      m.variances(c, j) = data_var[j];
    }
  }

  Tensor resp = Tensor::matrix(n, k);
  auto e_step = [&]() {
    double ll = 0.0;
    std::vector<double> terms(k);
    std::vector<double> log_w(k), log_det(k);
    for (std::size_t c = 0; c < k; ++c) {
      log_w[c] = std::log(m.weights[c]);
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += std::log(m.variances(c, j)) + dist::kLog2Pi;
      log_det[c] = s;
    }
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < k; ++c) {
        double quad = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = samples(r, j) - m.means(c, j);
          quad += diff * diff / m.variances(c, j);
        }
        terms[c] = log_w[c] - 0.5 * (quad + log_det[c]);
      }
      const double norm = log_sum_exp(terms);
      ll += norm;
      for (std::size_t c = 0; c < k; ++c) resp(r, c) = std::exp(terms[c] - norm);
    }
    return ll / static_cast<double>(n);
  };

  result.log_likelihood.push_back(e_step());
  for (std::size_t it = 0; it < iterations; ++it) {
    for (std::size_t c = 0; c < k; ++c) {
      double nk = 0.0;
      for (std::size_t r = 0; r < n; ++r) nk += resp(r, c);
      if (nk < 1e-10) {
        // Empty component: restart it on a random datum.
        const std::size_t pick = reseed_rng.below(n);
        for (std::size_t j = 0; j < d; ++j) {
          m.means(c, j) = samples(pick, j);
          m.variances(c, j) = data_var[j];
        }
        m.weights[c] = 1.0 / static_cast<double>(n);
        ++result.reseeds;
        continue;
      }
      m.weights[c] = nk / static_cast<double>(n);
      for (std::size_t j = 0; j < d; ++j) {
        double mu = 0.0;
        for (std::size_t r = 0; r < n; ++r) mu += resp(r, c) * samples(r, j);
        mu /= nk;
        double var = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          const double diff = samples(r, j) - mu;
          var += resp(r, c) * diff * diff;
        }
        m.means(c, j) = mu;
        m.variances(c, j) = std::max(var / nk, kGmmVarianceFloor);
      }
    }
    const double total = std::accumulate(m.weights.begin(), m.weights.end(), 0.0);
    for (auto& w : m.weights) w /= total;
    result.log_likelihood.push_back(e_step());
  }
  return result;
}

namespace {

constexpr double kArLogVarFloor = -13.815510557964274;  // ln 1e-6

}  // namespace

ArGaussModel::ArGaussModel(std::size_t dim, const ArConfig& config, RngStream& rng) : dim_(dim) {
  if (dim == 0) throw ContractError("ArGaussModel: dimension must be positive");
  for (std::size_t i = 0; i < dim; ++i) {
    nets_.push_back(
        TrainableNet{Mlp({std::max<std::size_t>(i, 1), config.hidden, 2}, Activation::kLeakyRelu, Activation::kIdentity, rng), {}});
  }
}

ad::Var ArGaussModel::mean_log_prob(ad::Tape& tape, const Tensor& batch, std::vector<BoundParams>& bound) const {
  if (batch.cols() != dim_) throw DimensionError("ArGaussModel: batch has wrong dimension");
  if (bound.empty())
    for (const auto& n : nets_) bound.push_back(n.net.bind(tape, true));
  ad::Var z = tape.constant(batch);
  ad::Var ones = tape.constant(Tensor::matrix(batch.rows(), 1, 1.0));
  ad::Var total;
  for (std::size_t i = 0; i < dim_; ++i) {
    ad::Var input = i == 0 ? ones : ad::slice_cols(z, 0, i);
    ad::Var out = nets_[i].net.forward(bound[i], input);
    ad::Var mu = ad::slice_cols(out, 0, 1);
    ad::Var lv = ad::clamp(ad::slice_cols(out, 1, 1), kArLogVarFloor, 30.0);
    ad::Var lp = dist::graph::gaussian_log_prob(mu, lv, ad::slice_cols(z, i, 1));
    total = total.valid() ? ad::add(total, lp) : lp;
  }
  return ad::mean(total);
}

std::vector<double> ArGaussModel::log_prob_rows(const Tensor& z) const {
  if (z.cols() != dim_) throw DimensionError("ArGaussModel: input has wrong dimension");
  const std::size_t n = z.rows();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < dim_; ++i) {
    Tensor input = Tensor::matrix(n, std::max<std::size_t>(i, 1), 1.0);
    if (i > 0)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < i; ++j) input(r, j) = z(r, j);
    const Tensor params = nets_[i].net.evaluate(input);
    for (std::size_t r = 0; r < n; ++r) {
      const double lv = std::clamp(params(r, 1), kArLogVarFloor, 30.0);
      const double diff = z(r, i) - params(r, 0);
      out[r] += -0.5 * (diff * diff * std::exp(-lv) + lv + dist::kLog2Pi);
    }
  }
  return out;
}

double ArGaussModel::log_prob(std::span<const double> z) const {
  Tensor t = Tensor::row(std::vector<double>(z.begin(), z.end()));
  return log_prob_rows(t)[0];
}

ArFitResult ar_fit(const Tensor& samples, const ArConfig& config, const RngStream& rng) {
  if (samples.rows() == 0) throw ContractError("ar_fit: no samples");
  RngStream init = rng.substream(0);
  RngStream batch_rng = rng.substream(1);
  ArFitResult result{ArGaussModel(samples.cols(), config, init), {}};
  std::vector<std::size_t> idx(std::min(config.batch, samples.rows()));
  for (std::size_t it = 0; it < config.iterations; ++it) {
    for (auto& i : idx) i = batch_rng.below(samples.rows());
    ad::Tape tape;
    std::vector<BoundParams> bound;
    ad::Var ll = result.model.mean_log_prob(tape, samples.gather_rows(idx), bound);
    result.log_likelihood.push_back(ll.value().item());
    tape.backward(ad::neg(ll));
    for (std::size_t i = 0; i < bound.size(); ++i) result.model.nets()[i].step(bound[i].grads(tape), config.lr);
  }
  return result;
}

EstimateReport density_model_kl(const LogDensity& log_t, Method tag, const PosteriorTable& table,
                                std::size_t num_z, const RngStream& rng) {
  if (num_z == 0) throw ContractError("density_model_kl: num_z must be at least 1");
  const dist::StandardPrior prior{table.dim()};
  RunningMean acc;
  for (std::size_t i = 0; i < num_z; ++i) {
    const auto z = aggregate_draw(table, i, rng);
    acc.add(log_t(z) - prior.log_prob(z));
  }
  EstimateReport r;
  r.method = tag;
  r.value = acc.mean();
  r.std_error = acc.std_error();
  r.num_z = num_z;
  r.inner_samples = 1;
  return r;
}

double marginal_kl_floor(double avg_posterior_kl, std::size_t dataset_size) {
  if (dataset_size == 0) throw ContractError("marginal_kl_floor: dataset size must be at least 1");
  return avg_posterior_kl - std::log(static_cast<double>(dataset_size));
}

SurgeryReport surgery_decompose(const PosteriorTable& table, std::size_t num_z, const RngStream& rng) {
  SurgeryReport s;
  s.avg_kl = table.average_kl();
  s.marginal = mc_marginal_kl(table, num_z, rng);
  s.mutual_info = s.avg_kl - s.marginal.value;
  s.floor = marginal_kl_floor(s.avg_kl, table.size());
  return s;
}

}  // namespace dmvi::est
