#include "dmvi/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dmvi/datasets.hpp"
#include "dmvi/errors.hpp"

namespace dmvi::ckpt {

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'D', 'M', 'V', 'I'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    const auto u = static_cast<std::uint64_t>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t end) : b_(b), end_(end) {}
  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    std::uint64_t u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= std::uint64_t{b_[off_ + i]} << (8 * i);
    off_ += sizeof(T);
    return static_cast<T>(u);
  }
  double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + off_), n);
    off_ += n;
    return s;
  }
  std::size_t offset() const { return off_; }

 private:
  void need(std::size_t n, const char* what) {
    if (end_ - off_ < n) throw ParseError(std::string("checkpoint: truncated ") + what, end_);
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t end_;
  std::size_t off_ = 0;
};

struct NetRef {
  const char* name;
  TrainableNet models::ModelBundle::*member;
};

constexpr std::array<NetRef, 4> kNets{{{"encoder", &models::ModelBundle::encoder},
                                       {"decoder", &models::ModelBundle::decoder},
                                       {"data_disc", &models::ModelBundle::data_disc},
                                       {"code_disc", &models::ModelBundle::code_disc}}};

enum Meta : std::size_t {
  kKind, kDataDim, kLatent, kHidden, kHiddenLayers, kDiscHidden, kDiscLayers, kVisible, kBounded, kRecon, kGenLoss,
  kLambda, kLrEncoder, kLrDecoder, kLrDisc, kLrCodeDisc, kIterations, kBatch, kSeedBits, kLogInterval, kQnScale,
  kAdamT0, kMetaSize = kAdamT0 + 4
};

const Tensor& require(const Checkpoint& c, const std::string& name) {
  const Tensor* t = c.find(name);
  if (!t) throw DimensionError("checkpoint: missing tensor '" + name + "'");
  return *t;
}

void copy_checked(Tensor& dst, const Tensor& src, const std::string& name) {
  if (dst.shape() != src.shape()) {
    throw DimensionError("checkpoint: tensor '" + name + "' has shape " + shape_to_string(src.shape()) +
                         " but the model expects " + shape_to_string(dst.shape()));
  }
  dst = src;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

std::vector<std::uint8_t> serialize(const Checkpoint& c) {
  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.le<std::uint32_t>(kFormatVersion);
  w.le<std::uint64_t>(c.config_hash);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.le<std::uint64_t>(e);
    for (double v : t.data()) w.f64(v);
  }
  const std::uint64_t digest = data::fnv1a64(w.buffer().data(), w.buffer().size());
  w.le<std::uint64_t>(digest);
  return std::move(w.buffer());
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4) throw ParseError("checkpoint: truncated magic", bytes.size());
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) throw ParseError("checkpoint: bad magic, expected \"DMVI\"", 0);
  if (bytes.size() < 8 + 8 + 4 + 8) throw ParseError("checkpoint: truncated header", bytes.size());
  Reader r(bytes, bytes.size() - 8);
  r.str(4, "magic");
  const auto version = r.le<std::uint32_t>("version");
  if (version != kFormatVersion) {
    throw ParseError("checkpoint: format version " + std::to_string(version) + ", this build reads version " +
                         std::to_string(kFormatVersion),
                     4);
  }
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored = 0;
  for (std::size_t i = 0; i < 8; ++i) stored |= std::uint64_t{bytes[body + i]} << (8 * i);
  if (stored != data::fnv1a64(bytes.data(), body)) throw ParseError("checkpoint: digest mismatch, file is corrupt", body);

  Checkpoint c;
  c.config_hash = r.le<std::uint64_t>("config hash");
  const auto count = r.le<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.le<std::uint32_t>("tensor name");
    std::string name = r.str(len, "tensor name");
    const auto rank = r.le<std::uint32_t>("tensor rank");
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::size_t>(r.le<std::uint64_t>("extents")));
    std::vector<double> values(shape_numel(shape));
    for (double& v : values) v = r.f64("payload");
    c.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (r.offset() != body) throw ParseError("checkpoint: trailing bytes after tensor table", r.offset());
  return c;
}

void save(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = serialize(c);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

Checkpoint from_bundle(const models::ModelBundle& b, std::uint64_t config_hash) {
  Checkpoint c;
  c.config_hash = config_hash;
  const auto& cfg = b.config;
  Tensor meta({kMetaSize});
  meta[kKind] = static_cast<double>(b.kind);
  meta[kDataDim] = static_cast<double>(b.data_dim);
  meta[kLatent] = static_cast<double>(cfg.latent);
  meta[kHidden] = static_cast<double>(cfg.hidden);
  meta[kHiddenLayers] = static_cast<double>(cfg.hidden_layers);
  meta[kDiscHidden] = static_cast<double>(cfg.disc_hidden);
  meta[kDiscLayers] = static_cast<double>(cfg.disc_layers);
  meta[kVisible] = static_cast<double>(cfg.visible);
  meta[kBounded] = cfg.bounded_output ? 1.0 : 0.0;
  meta[kRecon] = static_cast<double>(cfg.recon);
  meta[kGenLoss] = static_cast<double>(cfg.generator_loss);
  meta[kLambda] = cfg.lambda;
  meta[kLrEncoder] = cfg.lr_encoder;
  meta[kLrDecoder] = cfg.lr_decoder;
  meta[kLrDisc] = cfg.lr_disc;
  meta[kLrCodeDisc] = cfg.lr_code_disc;
  meta[kIterations] = static_cast<double>(cfg.iterations);
  meta[kBatch] = static_cast<double>(cfg.batch);
  meta[kSeedBits] = std::bit_cast<double>(cfg.seed);  // all 64 bits survive
  meta[kLogInterval] = static_cast<double>(cfg.log_interval);
  meta[kQnScale] = cfg.qn_scale;
  for (std::size_t i = 0; i < kNets.size(); ++i) meta[kAdamT0 + i] = static_cast<double>((b.*kNets[i].member).adam.t);
  c.tensors.emplace_back("meta", std::move(meta));
  for (const auto& ref : kNets) {
    const TrainableNet& tn = b.*ref.member;
    const auto names = tn.net.parameter_names(ref.name);
    const auto params = tn.net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) c.tensors.emplace_back(names[i], *params[i]);
    for (std::size_t i = 0; i < tn.adam.m.size(); ++i) {
      c.tensors.emplace_back(names[i] + ".adam_m", tn.adam.m[i]);
      c.tensors.emplace_back(names[i] + ".adam_v", tn.adam.v[i]);
    }
  }
  return c;
}

void load_into(models::ModelBundle& b, const Checkpoint& c) {
  const Tensor& meta = require(c, "meta");
  if (meta.size() != kMetaSize) throw DimensionError("checkpoint: tensor 'meta' has " + std::to_string(meta.size()) + " entries");
  for (std::size_t n = 0; n < kNets.size(); ++n) {
    TrainableNet& tn = b.*kNets[n].member;
    const auto names = tn.net.parameter_names(kNets[n].name);
    auto params = tn.net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) copy_checked(*params[i], require(c, names[i]), names[i]);
    tn.adam.m.clear();
    tn.adam.v.clear();
    tn.adam.t = static_cast<std::uint64_t>(meta[kAdamT0 + n]);
    if (params.empty() || !c.find(names[0] + ".adam_m")) continue;
    for (std::size_t i = 0; i < params.size(); ++i) {
      tn.adam.m.push_back(require(c, names[i] + ".adam_m"));
      tn.adam.v.push_back(require(c, names[i] + ".adam_v"));
      Tensor probe(params[i]->shape());
      copy_checked(probe, tn.adam.m.back(), names[i] + ".adam_m");
      copy_checked(probe, tn.adam.v.back(), names[i] + ".adam_v");
    }
  }
}

models::ModelBundle to_bundle(const Checkpoint& c) {
  const Tensor& meta = require(c, "meta");
  if (meta.size() != kMetaSize) throw DimensionError("checkpoint: tensor 'meta' has " + std::to_string(meta.size()) + " entries");
  auto as = [&](Meta i) { return static_cast<std::size_t>(meta[i]); };
  models::TrainConfig cfg;
  cfg.latent = as(kLatent);
  cfg.hidden = as(kHidden);
  cfg.hidden_layers = as(kHiddenLayers);
  cfg.disc_hidden = as(kDiscHidden);
  cfg.disc_layers = as(kDiscLayers);
  cfg.visible = static_cast<models::Visible>(as(kVisible));
  cfg.bounded_output = meta[kBounded] != 0.0;
  cfg.recon = static_cast<models::ReconLoss>(as(kRecon));
  cfg.generator_loss = static_cast<models::GeneratorLoss>(as(kGenLoss));
  cfg.lambda = meta[kLambda];
  cfg.lr_encoder = meta[kLrEncoder];
  cfg.lr_decoder = meta[kLrDecoder];
  cfg.lr_disc = meta[kLrDisc];
  cfg.lr_code_disc = meta[kLrCodeDisc];
  cfg.iterations = as(kIterations);
  cfg.batch = as(kBatch);
  cfg.seed = std::bit_cast<std::uint64_t>(meta[kSeedBits]);
  cfg.log_interval = as(kLogInterval);
  cfg.qn_scale = meta[kQnScale];
  auto b = models::make_bundle(static_cast<models::ModelKind>(as(kKind)), as(kDataDim), cfg);
  load_into(b, c);
  return b;
}

}  // namespace dmvi::ckpt
