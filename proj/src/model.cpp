#include "hpss/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace hpss {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

uint64_t DetRng::next_u64() {
  // SplitMix64
  state_ += 0x9e3779b97f4a7c15ull;
  uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double DetRng::next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double DetRng::uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

double DetRng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = next_double();
  while (u1 <= 1e-300) u1 = next_double();
  const double u2 = next_double();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

uint64_t DetRng::fork(uint64_t stream_id) {
  DetRng sub(state_ ^ (0xa0761d6478bd642full * (stream_id + 1)));
  return sub.next_u64();
}

void SeparatorConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("config: depth must be >= 1");
  if (patch_h <= 0 || patch_w <= 0 || patch_h % (1 << depth) || patch_w % (1 << depth))
    throw std::invalid_argument("config: patch dims must be positive and divisible by 2^depth");
  for (int w : branch_widths)
    if (w < 1) throw std::invalid_argument("config: branch widths must be >= 1");
  for (auto [kh, kw] : branch_kernels)
    if (kh < 1 || kw < 1 || kh % 2 == 0 || kw % 2 == 0)
      throw std::invalid_argument("config: branch kernels must have odd positive dims");
  if (disc_stages < 1 || static_cast<int>(disc_widths.size()) != disc_stages)
    throw std::invalid_argument("config: disc_widths must list one width per stage");
  if (reduced_h() % (1 << disc_stages) || reduced_w() % (1 << disc_stages))
    throw std::invalid_argument("config: embedding dims must be divisible by 2^disc_stages");
}

namespace {

Tensor init_conv(DetRng& rng, int cout, int cin, int kh, int kw) {
  Tensor t(Shape{cout, cin, kh, kw});
  const double bound = std::sqrt(6.0 / (static_cast<double>(cin) * kh * kw));
  for (auto& x : t.v) x = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

Tensor init_dense(DetRng& rng, int n, int m) {
  Tensor t(Shape{n, m});
  const double bound = std::sqrt(6.0 / static_cast<double>(n));
  for (auto& x : t.v) x = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

Tensor zeros1(int n) { return Tensor(Shape{n}); }

int bound_leaf(Graph& g, const NamedTensors& params, const std::string& name, bool trainable,
               LeafBindings* bind) {
  if (bind) {
    auto hit = bind->ids.find(name);
    if (hit != bind->ids.end()) return hit->second;
  }
  auto it = params.find(name);
  if (it == params.end()) throw std::logic_error("missing parameter " + name);
  const int id = g.leaf(it->second, trainable);
  if (bind) bind->ids.emplace(name, id);
  return id;
}

}  // namespace

ParamSet init_params(const SeparatorConfig& config, uint64_t seed) {
  config.validate();
  ParamSet ps;
  ps.config = config;
  ps.seed = seed;
  DetRng rng(seed);

  for (int b = 0; b < 3; ++b) {
    const auto [kh, kw] = config.branch_kernels[b];
    const int w = config.branch_widths[b];
    int cin = 1;
    for (int s = 0; s < config.depth; ++s) {
      const std::string base = "enc.b" + std::to_string(b) + ".s" + std::to_string(s);
      ps.enc[base + ".kernel"] = init_conv(rng, w, cin, kh, kw);
      ps.enc[base + ".bias"] = zeros1(w);
      cin = w;
    }
  }

  const int zc = config.embedding_channels();
  const int dw = config.decoder_channels();
  int cin = zc;
  for (int s = 0; s < config.depth; ++s) {
    const std::string base = "dec.s" + std::to_string(s);
    ps.dec[base + ".kernel"] = init_conv(rng, dw, cin, 3, 3);
    ps.dec[base + ".bias"] = zeros1(dw);
    cin = dw;
  }
  ps.dec["dec.head.kernel"] = init_conv(rng, 2, cin, 3, 3);
  ps.dec["dec.head.bias"] = zeros1(2);

  cin = zc;
  for (int s = 0; s < config.disc_stages; ++s) {
    const std::string base = "disc.s" + std::to_string(s);
    ps.disc[base + ".kernel"] = init_conv(rng, config.disc_widths[s], cin, 3, 3);
    ps.disc[base + ".bias"] = zeros1(config.disc_widths[s]);
    cin = config.disc_widths[s];
  }
  const int fc_in = cin * (config.reduced_h() >> config.disc_stages) *
                    (config.reduced_w() >> config.disc_stages);
  ps.disc["disc.fc.weight"] = init_dense(rng, fc_in, 1);
  ps.disc["disc.fc.bias"] = zeros1(1);
  return ps;
}

int encode(Graph& g, int input, const ParamSet& ps, bool trainable, LeafBindings* bind) {
  const SeparatorConfig& c = ps.config;
  const Shape& s = g.value(input).shape;
  if (s.rank != 4 || s.d[1] != 1 || s.d[2] != c.patch_h || s.d[3] != c.patch_w)
    throw std::invalid_argument("encode: input " + s.str() + " does not match config patch " +
                                std::to_string(c.patch_h) + "x" + std::to_string(c.patch_w));
  std::vector<int> branches;
  for (int b = 0; b < 3; ++b) {
    int x = input;
    for (int st = 0; st < c.depth; ++st) {
      const std::string base = "enc.b" + std::to_string(b) + ".s" + std::to_string(st);
      const int k = bound_leaf(g, ps.enc, base + ".kernel", trainable, bind);
      const int bi = bound_leaf(g, ps.enc, base + ".bias", trainable, bind);
      x = g.activation(g.conv2d(x, k, bi, Pad::same), Act::relu);
      x = g.maxpool2d(x);
    }
    branches.push_back(x);
  }
  return g.concat_channels(branches);
}

int decode(Graph& g, int z, const ParamSet& ps, bool trainable, LeafBindings* bind) {
  const SeparatorConfig& c = ps.config;
  const Shape& s = g.value(z).shape;
  if (s.rank != 4 || s.d[1] != c.embedding_channels() || s.d[2] != c.reduced_h() ||
      s.d[3] != c.reduced_w())
    throw std::invalid_argument("decode: embedding " + s.str() + " does not match config");
  int x = z;
  for (int st = 0; st < c.depth; ++st) {
    const std::string base = "dec.s" + std::to_string(st);
    const int k = bound_leaf(g, ps.dec, base + ".kernel", trainable, bind);
    const int bi = bound_leaf(g, ps.dec, base + ".bias", trainable, bind);
    x = g.upsample2x(x);
    x = g.activation(g.conv2d(x, k, bi, Pad::same), Act::relu);
  }
  const int k = bound_leaf(g, ps.dec, "dec.head.kernel", trainable, bind);
  const int bi = bound_leaf(g, ps.dec, "dec.head.bias", trainable, bind);
  return g.activation(g.conv2d(x, k, bi, Pad::same), Act::sigmoid);
}

int discriminate(Graph& g, int z, const ParamSet& ps, bool trainable, LeafBindings* bind) {
  const SeparatorConfig& c = ps.config;
  const Shape& s = g.value(z).shape;
  if (s.rank != 4 || s.d[1] != c.embedding_channels())
    throw std::invalid_argument("discriminate: embedding " + s.str() + " does not match config");
  if (s.d[2] % (1 << c.disc_stages) || s.d[3] % (1 << c.disc_stages))
    throw std::invalid_argument("discriminate: spatial dims " + s.str() +
                                " not divisible by 2^stages");
  int x = z;
  for (int st = 0; st < c.disc_stages; ++st) {
    const std::string base = "disc.s" + std::to_string(st);
    const int k = bound_leaf(g, ps.disc, base + ".kernel", trainable, bind);
    const int bi = bound_leaf(g, ps.disc, base + ".bias", trainable, bind);
    x = g.maxpool2d(g.activation(g.conv2d(x, k, bi, Pad::same), Act::relu));
  }
  x = g.flatten(x);
  const int w = bound_leaf(g, ps.disc, "disc.fc.weight", trainable, bind);
  const int bi = bound_leaf(g, ps.disc, "disc.fc.bias", trainable, bind);
  return g.activation(g.dense(x, w, bi), Act::sigmoid);
}

// ---- checkpoint I/O ----

namespace {

constexpr char kMagic[8] = {'H', 'P', 'S', 'S', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t x) { os.write(reinterpret_cast<const char*>(&x), 4); }
void put_u64(std::ostream& os, uint64_t x) { os.write(reinterpret_cast<const char*>(&x), 8); }
uint32_t get_u32(std::istream& is) {
  uint32_t x = 0;
  is.read(reinterpret_cast<char*>(&x), 4);
  return x;
}
uint64_t get_u64(std::istream& is) {
  uint64_t x = 0;
  is.read(reinterpret_cast<char*>(&x), 8);
  return x;
}

void put_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
  put_u32(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(os, static_cast<uint32_t>(t.shape.rank));
  for (int i = 0; i < t.shape.rank; ++i) put_u32(os, static_cast<uint32_t>(t.shape.d[i]));
  os.write(reinterpret_cast<const char*>(t.v.data()),
           static_cast<std::streamsize>(t.v.size() * sizeof(float)));
}

std::pair<std::string, Tensor> get_tensor(std::istream& is) {
  const uint32_t nlen = get_u32(is);
  if (!is || nlen > 4096) throw std::runtime_error("checkpoint: corrupt parameter name");
  std::string name(nlen, '\0');
  is.read(name.data(), nlen);
  const uint32_t rank = get_u32(is);
  if (!is || rank < 1 || rank > 4) throw std::runtime_error("checkpoint: bad tensor rank");
  Shape s;
  s.rank = static_cast<int>(rank);
  for (uint32_t i = 0; i < rank; ++i) s.d[i] = static_cast<int>(get_u32(is));
  Tensor t(s);
  is.read(reinterpret_cast<char*>(t.v.data()),
          static_cast<std::streamsize>(t.v.size() * sizeof(float)));
  if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
  return {std::move(name), std::move(t)};
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamSet& ps) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, 8);
  put_u32(os, kVersion);

  const SeparatorConfig& c = ps.config;
  put_u32(os, static_cast<uint32_t>(c.patch_h));
  put_u32(os, static_cast<uint32_t>(c.patch_w));
  put_u32(os, static_cast<uint32_t>(c.depth));
  for (int w : c.branch_widths) put_u32(os, static_cast<uint32_t>(w));
  for (auto [kh, kw] : c.branch_kernels) {
    put_u32(os, static_cast<uint32_t>(kh));
    put_u32(os, static_cast<uint32_t>(kw));
  }
  put_u32(os, static_cast<uint32_t>(c.decoder_width));
  put_u32(os, static_cast<uint32_t>(c.disc_stages));
  for (int w : c.disc_widths) put_u32(os, static_cast<uint32_t>(w));
  put_u64(os, ps.seed);

  uint32_t count = static_cast<uint32_t>(ps.enc.size() + ps.dec.size() + ps.disc.size());
  put_u32(os, count);
  for (const auto* coll : {&ps.enc, &ps.dec, &ps.disc})
    for (const auto& [name, t] : *coll) put_tensor(os, name, t);
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

ParamSet load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t ver = get_u32(is);
  if (ver != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ver));

  ParamSet ps;
  SeparatorConfig& c = ps.config;
  c.patch_h = static_cast<int>(get_u32(is));
  c.patch_w = static_cast<int>(get_u32(is));
  c.depth = static_cast<int>(get_u32(is));
  for (int& w : c.branch_widths) w = static_cast<int>(get_u32(is));
  for (auto& [kh, kw] : c.branch_kernels) {
    kh = static_cast<int>(get_u32(is));
    kw = static_cast<int>(get_u32(is));
  }
  c.decoder_width = static_cast<int>(get_u32(is));
  c.disc_stages = static_cast<int>(get_u32(is));
  c.disc_widths.resize(c.disc_stages);
  for (int& w : c.disc_widths) w = static_cast<int>(get_u32(is));
  ps.seed = get_u64(is);
  if (!is) throw std::runtime_error("checkpoint: truncated config in " + path);
  c.validate();

  const uint32_t count = get_u32(is);
  for (uint32_t i = 0; i < count; ++i) {
    auto [name, t] = get_tensor(is);
    if (name.rfind("enc.", 0) == 0)
      ps.enc[name] = std::move(t);
    else if (name.rfind("dec.", 0) == 0)
      ps.dec[name] = std::move(t);
    else if (name.rfind("disc.", 0) == 0)
      ps.disc[name] = std::move(t);
    else
      throw std::runtime_error("checkpoint: unknown parameter collection for " + name);
  }
  return ps;
}

}  // namespace hpss
