#include "dmvi/datasets.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "dmvi/errors.hpp"

namespace dmvi::data {

namespace {

Dataset sprites(const DatasetParams& p, RngStream& rng) {
  const std::size_t s = p.image_size;
  if (s < 5) throw ContractError("sprites: image_size must be at least 5");
  Dataset d{"sprites", Tensor::matrix(p.n, s * s, 0.0), {s, s}, {}};
  for (std::size_t i = 0; i < p.n; ++i) {
    const auto shape = static_cast<std::uint32_t>(rng.below(3));  // 0 hbar, 1 vbar, 2 cross
    const std::size_t arm = 2 + rng.below(3);
    const std::size_t r = 1 + rng.below(s - 2), c = 1 + rng.below(s - 2);
    auto set = [&](std::size_t rr, std::size_t cc) { d.data(i, rr * s + cc) = 1.0; };
    const std::size_t lo_c = c >= arm ? c - arm : 0, hi_c = std::min(s - 1, c + arm);
    const std::size_t lo_r = r >= arm ? r - arm : 0, hi_r = std::min(s - 1, r + arm);
    if (shape != 1)
      for (std::size_t cc = lo_c; cc <= hi_c; ++cc) set(r, cc);
    if (shape != 0)
      for (std::size_t rr = lo_r; rr <= hi_r; ++rr) set(rr, c);
    d.labels.push_back(shape);
  }
  return d;
}

Dataset grid2d(const DatasetParams& p, RngStream& rng) {
  Dataset d{"grid2d", Tensor::matrix(p.n, 2), {2}, {}};
  for (std::size_t i = 0; i < p.n; ++i) {
    const auto k = static_cast<std::uint32_t>(rng.below(25));
    d.data(i, 0) = -4.0 + 2.0 * static_cast<double>(k / 5) + rng.normal(0.0, p.noise_std);
    d.data(i, 1) = -4.0 + 2.0 * static_cast<double>(k % 5) + rng.normal(0.0, p.noise_std);
    d.labels.push_back(k);
  }
  return d;
}

Dataset rings(const DatasetParams& p, RngStream& rng) {
  if (p.rings == 0) throw ContractError("rings: need at least one ring");
  Dataset d{"rings", Tensor::matrix(p.n, 2), {2}, {}};
  for (std::size_t i = 0; i < p.n; ++i) {
    const auto k = static_cast<std::uint32_t>(rng.below(p.rings));
    const double radius = 1.0 + static_cast<double>(k) + rng.normal(0.0, p.noise_std);
    const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    d.data(i, 0) = radius * std::cos(angle);
    d.data(i, 1) = radius * std::sin(angle);
    d.labels.push_back(k);
  }
  return d;
}

std::string hex_bytes(const std::uint8_t* b, std::size_t n) {
  std::ostringstream os;
  os << std::hex;
  for (std::size_t i = 0; i < n; ++i) os << (i ? " " : "") << "0x" << (b[i] < 16 ? "0" : "") << int(b[i]);
  return os.str();
}

}  // namespace

const char* dataset_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::kSprites: return "sprites";
    case DatasetKind::kGrid2d: return "grid2d";
    case DatasetKind::kRings: return "rings";
  }
  return "?";
}

DatasetKind parse_dataset(const std::string& s) {
  for (auto k : {DatasetKind::kSprites, DatasetKind::kGrid2d, DatasetKind::kRings})
    if (s == dataset_name(k)) return k;
  throw ConfigError("unknown dataset kind '" + s + "' (expected sprites|grid2d|rings)");
}

Dataset generate(DatasetKind kind, const DatasetParams& params, std::uint64_t seed) {
  if (params.n == 0) throw ContractError("generate: n must be positive");
  RngStream rng = RngStream(seed).substream(0xda7a);
  switch (kind) {
    case DatasetKind::kSprites: return sprites(params, rng);
    case DatasetKind::kGrid2d: return grid2d(params, rng);
    case DatasetKind::kRings: return rings(params, rng);
  }
  throw ContractError("generate: unknown kind");
}

Dataset parse_idx(const std::vector<std::uint8_t>& b) {
  if (b.size() < 4) throw ParseError("idx: truncated header, " + std::to_string(b.size()) + " of 4 magic bytes", b.size());
  if (b[0] != 0 || b[1] != 0 || b[2] != 0x08) {
    const std::uint8_t expect[3] = {0x00, 0x00, 0x08};
    throw ParseError("idx: bad magic, expected " + hex_bytes(expect, 3) + " 0x<rank>, found " + hex_bytes(b.data(), 4), 0);
  }
  const std::size_t rank = b[3];
  if (rank == 0) throw ParseError("idx: rank 0", 3);
  std::size_t off = 4;
  Shape shape;
  for (std::size_t i = 0; i < rank; ++i) {
    if (off + 4 > b.size()) throw ParseError("idx: truncated dimension table", b.size());
    const std::size_t dim = (std::size_t{b[off]} << 24) | (std::size_t{b[off + 1]} << 16) |
                            (std::size_t{b[off + 2]} << 8) | std::size_t{b[off + 3]};
    if (dim == 0) throw ParseError("idx: zero extent in dimension " + std::to_string(i), off);
    shape.push_back(dim);
    off += 4;
  }
  const std::size_t count = shape_numel(shape);
  if (b.size() - off < count)
    throw ParseError("idx: truncated payload, expected " + std::to_string(count) + " bytes, found " +
                         std::to_string(b.size() - off),
                     b.size());
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) values[i] = static_cast<double>(b[off + i]) / 255.0;
  Shape item(shape.begin() + 1, shape.end());
  if (item.empty()) item.push_back(1);
  return Dataset{"idx", Tensor(shape, std::move(values)), item, {}};
}

Dataset load_idx(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Dataset d = parse_idx(bytes);
  d.name = path.filename().string();
  return d;
}

std::uint64_t fnv1a64(const void* bytes, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const std::uint8_t*>(bytes);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t digest(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](std::uint64_t v) {
    std::uint8_t le[8];
    for (int i = 0; i < 8; ++i) le[i] = static_cast<std::uint8_t>(v >> (8 * i));
    h = fnv1a64(le, 8, h);
  };
  feed(t.rank());
  for (auto e : t.shape()) feed(e);
  for (double v : t.data()) feed(std::bit_cast<std::uint64_t>(v));
  return h;
}

}  // namespace dmvi::data
