#include "dmvi/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "dmvi/errors.hpp"
#include "dmvi/estimators.hpp"

namespace dmvi::diag {

namespace {

Tensor decode_samples(const models::ModelBundle& b, const Tensor& z, RngStream& rng) {
  if (b.kind != models::ModelKind::kVae && b.kind != models::ModelKind::kAae) return models::decode_mean(b, z);
  const Tensor out = b.decoder.net.evaluate(z);
  const std::size_t d = b.data_dim;
  Tensor x = Tensor::matrix(z.rows(), d);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      if (b.config.visible == models::Visible::kBernoulli) {
        const double p = 1.0 / (1.0 + std::exp(-out(r, j)));
        x(r, j) = rng.uniform() < p ? 1.0 : 0.0;
      } else {
        const double lv = std::max(out(r, d + j), models::kLogVarFloor);
        x(r, j) = out(r, j) + std::exp(0.5 * lv) * rng.normal() - 0.5;
      }
    }
  }
  return x;
}

double quantile(std::vector<double>& v, double p) {
  const double pos = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> w(size);
  const double c = 0.5 * static_cast<double>(size - 1);
  double s = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double t = static_cast<double>(i) - c;
    w[i] = std::exp(-t * t / (2 * sigma * sigma));
    s += w[i];
  }
  for (double& v : w) v /= s;
  return w;
}

}  // namespace

LowPosteriorResult low_posterior_samples(const models::ModelBundle& bundle, const Tensor& data, std::size_t num_z,
                                         std::size_t n, const RngStream& rng, DecodeMode mode) {
  if (n == 0 || num_z < n) throw ContractError("low_posterior_samples: need num_z >= n >= 1");
  const est::PosteriorTable table(models::encode(bundle, data));
  const std::size_t k = table.dim();
  Tensor cand = Tensor::matrix(num_z, k);
  LowPosteriorResult res;
  res.candidate_log_q.resize(num_z);
  for (std::size_t i = 0; i < num_z; ++i) {
    RngStream r = rng.substream(i);
    for (double& v : cand.row_span(i)) v = r.normal();
    res.candidate_log_q[i] = table.marginal_log_q(cand.row_span(i));
  }
  std::vector<std::size_t> order(num_z);
  std::iota(order.begin(), order.end(), 0);
  const auto& s = res.candidate_log_q;
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                    [&](std::size_t a, std::size_t b) { return s[a] < s[b] || (s[a] == s[b] && a < b); });
  res.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  res.latents = cand.gather_rows(res.indices);
  for (std::size_t i : res.indices) res.log_q.push_back(s[i]);
  RngStream dec = rng.substream(num_z);
  res.samples = mode == DecodeMode::kMean ? models::decode_mean(bundle, res.latents)
                                          : decode_samples(bundle, res.latents, dec);
  return res;
}

std::size_t HistogramReport::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

std::string HistogramReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "tag,lo,hi,count\n";
  for (std::size_t i = 0; i < counts.size(); ++i) os << tag << ',' << edges[i] << ',' << edges[i + 1] << ',' << counts[i] << '\n';
  return os.str();
}

double silverman_bandwidth(std::vector<double> v) {
  const std::size_t n = v.size();
  if (n < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  std::sort(v.begin(), v.end());
  const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
  const double spread = iqr > 0 ? std::min(sd, iqr / 1.34) : sd;
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

HistogramReport histogram(std::span<const double> values, std::size_t bins, double lo, double hi, std::string tag,
                          std::size_t kde_points) {
  if (bins == 0) throw ContractError("histogram: bins must be positive");
  if (values.empty()) throw ContractError("histogram: empty population '" + tag + "'");
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  HistogramReport h;
  h.tag = std::move(tag);
  h.counts.assign(bins, 0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(lo + width * static_cast<double>(i));
  double sum = 0.0;
  for (double v : values) {
    const double pos = std::floor((v - lo) / width);
    const std::size_t b = pos < 0 ? 0 : std::min(bins - 1, static_cast<std::size_t>(pos));
    ++h.counts[b];
    sum += v;
  }
  h.mean = sum / static_cast<double>(values.size());
  h.bandwidth = silverman_bandwidth({values.begin(), values.end()});
  if (h.bandwidth > 0 && kde_points > 1) {
    const double a = lo - 3 * h.bandwidth, z = hi + 3 * h.bandwidth;
    const double norm = 1.0 / (static_cast<double>(values.size()) * h.bandwidth * std::sqrt(2 * std::numbers::pi));
    for (std::size_t i = 0; i < kde_points; ++i) {
      const double x = a + (z - a) * static_cast<double>(i) / static_cast<double>(kde_points - 1);
      double d = 0.0;
      for (double v : values) {
        const double t = (x - v) / h.bandwidth;
        d += std::exp(-0.5 * t * t);
      }
      h.kde_x.push_back(x);
      h.kde_y.push_back(d * norm);
    }
  }
  return h;
}

std::vector<HistogramReport> elbo_histogram(const models::ModelBundle& bundle,
                                            const std::vector<std::pair<std::string, Tensor>>& populations,
                                            std::size_t bins, std::size_t mc_samples, const RngStream& rng) {
  if (populations.empty()) throw ContractError("elbo_histogram: no populations");
  std::vector<std::vector<double>> values;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t p = 0; p < populations.size(); ++p) {
    RngStream r = rng.substream(p);
    values.push_back(models::elbo_per_example(populations[p].second, bundle, mc_samples, r));
    for (double v : values.back()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  std::vector<HistogramReport> out;
  for (std::size_t p = 0; p < populations.size(); ++p) out.push_back(histogram(values[p], bins, lo, hi, populations[p].first));
  return out;
}

std::vector<std::size_t> nearest_neighbors(const Tensor& queries, const Tensor& data) {
  if (queries.cols() != data.cols()) {
    throw DimensionError("nearest_neighbors: queries " + shape_to_string(queries.shape()) + " vs data " +
                         shape_to_string(data.shape()));
  }
  if (data.rows() == 0) throw ContractError("nearest_neighbors: empty data");
  std::vector<std::size_t> out(queries.rows());
  for (std::size_t q = 0; q < queries.rows(); ++q) {
    const auto a = queries.row_span(q);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < data.rows(); ++r) {
      const auto b = data.row_span(r);
      double d = 0.0;
      for (std::size_t j = 0; j < a.size(); ++j) d += (a[j] - b[j]) * (a[j] - b[j]);
      if (d < best) {
        best = d;
        out[q] = r;
      }
    }
  }
  return out;
}

double PosteriorKlStats::sparsity(double threshold) const {
  if (per_dim.empty()) return 0.0;
  const auto below = std::count_if(per_dim.begin(), per_dim.end(), [&](double v) { return v < threshold; });
  return static_cast<double>(below) / static_cast<double>(per_dim.size());
}

double PosteriorKlStats::floor_hit(double share) const {
  if (floor_fraction.empty()) return 0.0;
  const auto hit = std::count_if(floor_fraction.begin(), floor_fraction.end(), [&](double v) { return v > share; });
  return static_cast<double>(hit) / static_cast<double>(floor_fraction.size());
}

HistogramReport PosteriorKlStats::example_histogram(std::size_t bins) const {
  const auto [lo, hi] = std::minmax_element(per_example.begin(), per_example.end());
  if (lo == per_example.end()) throw ContractError("example_histogram: no examples");
  return histogram(per_example, bins, *lo, *hi, "posterior_kl");
}

PosteriorKlStats posterior_kl_stats(const models::ModelBundle& bundle, const Tensor& data) {
  const auto q = models::encode(bundle, data);
  const Tensor e = dist::kl_diag_standard_elementwise(q);
  PosteriorKlStats s;
  const std::size_t n = e.rows(), k = e.cols();
  s.per_dim.assign(k, 0.0);
  s.floor_fraction.assign(k, 0.0);
  s.per_example.assign(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      s.per_dim[j] += e(r, j);
      s.per_example[r] += e(r, j);
      if (q.log_var(r, j) <= models::kLogVarFloor) s.floor_fraction[j] += 1.0;
    }
  }
  for (std::size_t j = 0; j < k; ++j) {
    s.per_dim[j] /= static_cast<double>(n);
    s.floor_fraction[j] /= static_cast<double>(n);
  }
  return s;
}

double ssim(const Tensor& a, const Tensor& b, const SsimConfig& c) {
  if (a.shape() != b.shape()) {
    throw DimensionError("ssim: shapes differ " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  if (a.rank() != 2) throw DimensionError("ssim: expected an [h, w] image, got " + shape_to_string(a.shape()));
  const std::size_t h = a.shape()[0], w = a.shape()[1], m = c.window;
  if (m == 0 || m > h || m > w) throw ContractError("ssim: window larger than the image");
  const auto g = gaussian_window(m, c.sigma);
  const double c1 = (c.k1 * c.dynamic_range) * (c.k1 * c.dynamic_range);
  const double c2 = (c.k2 * c.dynamic_range) * (c.k2 * c.dynamic_range);
  double total = 0.0;
  for (std::size_t r = 0; r + m <= h; ++r) {
    for (std::size_t col = 0; col + m <= w; ++col) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          const double wt = g[i] * g[j];
          const double x = a(r + i, col + j), y = b(r + i, col + j);
          mx += wt * x;
          my += wt * y;
          xx += wt * x * x;
          yy += wt * y * y;
          xy += wt * x * y;
        }
      }
      const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
  }
  return total / static_cast<double>((h - m + 1) * (w - m + 1));
}

double diversity(const Tensor& images, const Shape& item_shape, const SsimConfig& config) {
  if (item_shape.size() != 2) throw DimensionError("diversity: item shape must be [h, w]");
  const std::size_t n = images.rows();
  if (n < 2) throw ContractError("diversity: need at least two images");
  if (images.cols() != item_shape[0] * item_shape[1]) {
    throw DimensionError("diversity: images " + shape_to_string(images.shape()) + " do not match item shape " +
                         shape_to_string(item_shape));
  }
  std::vector<Tensor> items;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = images.row_span(i);
    items.emplace_back(item_shape, std::vector<double>(row.begin(), row.end()));
  }
  double s = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j, ++pairs) s += 1.0 - ssim(items[i], items[j], config);
  return s / static_cast<double>(pairs);
}

}  // namespace dmvi::diag
