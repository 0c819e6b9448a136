#include "hpss/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>

namespace hpss {

Shape::Shape(std::initializer_list<int> dims) {
  if (dims.size() < 1 || dims.size() > 4) throw std::invalid_argument("shape rank must be 1..4");
  rank = static_cast<int>(dims.size());
  int i = 0;
  for (int x : dims) d[i++] = x;
}

long Shape::numel() const {
  long n = 1;
  for (int i = 0; i < rank; ++i) n *= d[i];
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << "[";
  for (int i = 0; i < rank; ++i) os << (i ? "," : "") << d[i];
  os << "]";
  return os.str();
}

template <typename T>
bool TensorT<T>::all_finite() const {
  for (T x : v)
    if (!std::isfinite(static_cast<double>(x))) return false;
  return true;
}
template bool TensorT<float>::all_finite() const;
template bool TensorT<double>::all_finite() const;

const char* act_name(Act a) {
  switch (a) {
    case Act::relu: return "relu";
    case Act::sigmoid: return "sigmoid";
    default: return "linear";
  }
}

namespace {

constexpr double kSigmoidClamp = 30.0;
constexpr double kLogClamp = 1e-7;

template <typename T>
T sigmoid_clamped(T x) {
  double z = std::clamp(static_cast<double>(x), -kSigmoidClamp, kSigmoidClamp);
  return static_cast<T>(1.0 / (1.0 + std::exp(-z)));
}

struct ConvDims {
  int B, Cin, H, W, Cout, KH, KW, OH, OW, cy, cx;
};

ConvDims conv_dims(const Shape& in, const Shape& k, Pad pad) {
  ConvDims d;
  d.B = in.d[0];
  d.Cin = in.d[1];
  d.H = in.d[2];
  d.W = in.d[3];
  d.Cout = k.d[0];
  d.KH = k.d[2];
  d.KW = k.d[3];
  d.cy = d.KH / 2;
  d.cx = d.KW / 2;
  if (pad == Pad::same) {
    d.OH = d.H;
    d.OW = d.W;
  } else {
    d.OH = d.H - d.KH + 1;
    d.OW = d.W - d.KW + 1;
  }
  return d;
}

// Forward kernels, templated on storage type; reductions accumulate in double.

template <typename T>
TensorT<T> conv2d_fwd(const TensorT<T>& in, const TensorT<T>& k, const TensorT<T>& b, Pad pad) {
  ConvDims d = conv_dims(in.shape, k.shape, pad);
  TensorT<T> out(Shape{d.B, d.Cout, d.OH, d.OW});
  const int y0 = (pad == Pad::same) ? -d.cy : 0;
  const int x0 = (pad == Pad::same) ? -d.cx : 0;
  for (int bb = 0; bb < d.B; ++bb)
    for (int oc = 0; oc < d.Cout; ++oc)
      for (int oy = 0; oy < d.OH; ++oy)
        for (int ox = 0; ox < d.OW; ++ox) {
          double acc = static_cast<double>(b.v[oc]);
          for (int ic = 0; ic < d.Cin; ++ic)
            for (int ky = 0; ky < d.KH; ++ky) {
              const int iy = oy + y0 + ky;
              if (iy < 0 || iy >= d.H) continue;
              for (int kx = 0; kx < d.KW; ++kx) {
                const int ix = ox + x0 + kx;
                if (ix < 0 || ix >= d.W) continue;
                acc += static_cast<double>(in.at(bb, ic, iy, ix)) *
                       static_cast<double>(k.at(oc, ic, ky, kx));
              }
            }
          out.at(bb, oc, oy, ox) = static_cast<T>(acc);
        }
  return out;
}

template <typename T>
TensorT<T> maxpool_fwd(const TensorT<T>& in, std::vector<int>* argmax) {
  const int B = in.shape.d[0], C = in.shape.d[1], H = in.shape.d[2], W = in.shape.d[3];
  TensorT<T> out(Shape{B, C, H / 2, W / 2});
  if (argmax) argmax->assign(out.v.size(), 0);
  size_t o = 0;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; y += 2)
        for (int x = 0; x < W; x += 2, ++o) {
          // first-occurrence tie-break in row-major window order
          int besty = y, bestx = x;
          T best = in.at(b, c, y, x);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              T cand = in.at(b, c, y + dy, x + dx);
              if (cand > best) {
                best = cand;
                besty = y + dy;
                bestx = x + dx;
              }
            }
          out.v[o] = best;
          if (argmax)
            (*argmax)[o] = static_cast<int>(((static_cast<long>(b) * C + c) * H + besty) * W + bestx);
        }
  return out;
}

template <typename T>
TensorT<T> dense_fwd(const TensorT<T>& in, const TensorT<T>& w, const TensorT<T>& b) {
  const int B = in.shape.d[0], N = in.shape.d[1], M = w.shape.d[1];
  TensorT<T> out(Shape{B, M});
  for (int bb = 0; bb < B; ++bb)
    for (int m = 0; m < M; ++m) {
      double acc = static_cast<double>(b.v[m]);
      for (int n = 0; n < N; ++n)
        acc += static_cast<double>(in.at(bb, n)) * static_cast<double>(w.at(n, m));
      out.at(bb, m) = static_cast<T>(acc);
    }
  return out;
}

template <typename T>
TensorT<T> activation_fwd(const TensorT<T>& in, Act a) {
  TensorT<T> out(in.shape);
  switch (a) {
    case Act::relu:
      for (size_t i = 0; i < in.v.size(); ++i) out.v[i] = in.v[i] > T(0) ? in.v[i] : T(0);
      break;
    case Act::sigmoid:
      for (size_t i = 0; i < in.v.size(); ++i) out.v[i] = sigmoid_clamped(in.v[i]);
      break;
    case Act::linear:
      out.v = in.v;
      break;
  }
  return out;
}

template <typename T>
TensorT<T> upsample_fwd(const TensorT<T>& in) {
  const int B = in.shape.d[0], C = in.shape.d[1], H = in.shape.d[2], W = in.shape.d[3];
  TensorT<T> out(Shape{B, C, H * 2, W * 2});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H * 2; ++y)
        for (int x = 0; x < W * 2; ++x) out.at(b, c, y, x) = in.at(b, c, y / 2, x / 2);
  return out;
}

template <typename T>
TensorT<T> concat_fwd(const std::vector<const TensorT<T>*>& ins) {
  const Shape& s0 = ins[0]->shape;
  int ctot = 0;
  for (auto* t : ins) ctot += t->shape.d[1];
  TensorT<T> out(Shape{s0.d[0], ctot, s0.d[2], s0.d[3]});
  const int plane = s0.d[2] * s0.d[3];
  for (int b = 0; b < s0.d[0]; ++b) {
    int co = 0;
    for (auto* t : ins) {
      const int c = t->shape.d[1];
      std::copy_n(t->v.begin() + static_cast<size_t>(b) * c * plane, static_cast<size_t>(c) * plane,
                  out.v.begin() + (static_cast<size_t>(b) * ctot + co) * plane);
      co += c;
    }
  }
  return out;
}

template <typename T>
TensorT<T> weighted_mse_fwd(const TensorT<T>& est, const TensorT<T>& tgt, double lh, double lp) {
  const int B = est.shape.d[0];
  const long per_ch = est.numel() / (static_cast<long>(B) * 2);
  double total = 0.0;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < 2; ++c) {
      double acc = 0.0;
      const size_t base = (static_cast<size_t>(b) * 2 + c) * per_ch;
      for (long i = 0; i < per_ch; ++i) {
        const double diff = static_cast<double>(est.v[base + i]) - static_cast<double>(tgt.v[base + i]);
        acc += diff * diff;
      }
      total += (c == 0 ? lh : lp) * acc;
    }
  TensorT<T> out(Shape{1});
  out.v[0] = static_cast<T>(total / B);
  return out;
}

template <typename T>
TensorT<T> bce_fwd(const TensorT<T>& pb, const TensorT<T>& pa) {
  double acc_b = 0.0, acc_a = 0.0;
  for (T p : pb.v) acc_b += std::log(std::max(static_cast<double>(p), kLogClamp));
  for (T p : pa.v) acc_a += std::log(std::max(1.0 - static_cast<double>(p), kLogClamp));
  TensorT<T> out(Shape{1});
  out.v[0] = static_cast<T>(-acc_b / static_cast<double>(pb.v.size()) -
                            acc_a / static_cast<double>(pa.v.size()));
  return out;
}

template <typename T>
TensorT<T> sum_all_fwd(const TensorT<T>& in) {
  double acc = 0.0;
  for (T x : in.v) acc += static_cast<double>(x);
  TensorT<T> out(Shape{1});
  out.v[0] = static_cast<T>(acc);
  return out;
}

}  // namespace

void Graph::check_id(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("graph: unknown node id " + std::to_string(id));
}

int Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Graph::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.kind = OpKind::leaf;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  return push(std::move(n));
}

static bool any_grad(const std::vector<Graph::Node>& nodes, const std::vector<int>& in) {
  for (int i : in)
    if (nodes[i].requires_grad) return true;
  return false;
}

int Graph::conv2d(int input, int kernel, int bias, Pad pad) {
  check_id(input);
  check_id(kernel);
  check_id(bias);
  const Shape& si = nodes_[input].value.shape;
  const Shape& sk = nodes_[kernel].value.shape;
  const Shape& sb = nodes_[bias].value.shape;
  if (si.rank != 4 || sk.rank != 4)
    throw std::invalid_argument("conv2d: need 4-D input/kernel, got input " + si.str() +
                                ", kernel " + sk.str());
  if (sk.d[2] % 2 == 0 || sk.d[3] % 2 == 0)
    throw std::invalid_argument("conv2d: kernel spatial dims must be odd, kernel " + sk.str());
  if (si.d[1] != sk.d[1])
    throw std::invalid_argument("conv2d: input channels do not match kernel: input " + si.str() +
                                ", kernel " + sk.str());
  if (sb.rank != 1 || sb.d[0] != sk.d[0])
    throw std::invalid_argument("conv2d: bias " + sb.str() + " does not match kernel " + sk.str());
  if (pad == Pad::valid && (si.d[2] < sk.d[2] || si.d[3] < sk.d[3]))
    throw std::invalid_argument("conv2d: valid padding needs input >= kernel, input " + si.str() +
                                ", kernel " + sk.str());
  Node n;
  n.kind = OpKind::conv2d;
  n.in = {input, kernel, bias};
  n.pad = pad;
  n.requires_grad = any_grad(nodes_, n.in);
  n.value = conv2d_fwd(nodes_[input].value, nodes_[kernel].value, nodes_[bias].value, pad);
  return push(std::move(n));
}

int Graph::maxpool2d(int input) {
  check_id(input);
  const Shape& s = nodes_[input].value.shape;
  if (s.rank != 4) throw std::invalid_argument("maxpool2d: need 4-D input, got " + s.str());
  if (s.d[2] % 2 || s.d[3] % 2)
    throw std::invalid_argument("maxpool2d: spatial dims must be even, got " + s.str());
  Node n;
  n.kind = OpKind::maxpool2d;
  n.in = {input};
  n.requires_grad = nodes_[input].requires_grad;
  n.value = maxpool_fwd(nodes_[input].value, &n.aux);
  return push(std::move(n));
}

int Graph::dense(int input, int weight, int bias) {
  check_id(input);
  check_id(weight);
  check_id(bias);
  const Shape& si = nodes_[input].value.shape;
  const Shape& sw = nodes_[weight].value.shape;
  const Shape& sb = nodes_[bias].value.shape;
  if (si.rank != 2 || sw.rank != 2 || si.d[1] != sw.d[0])
    throw std::invalid_argument("dense: input " + si.str() + " does not match weight " + sw.str());
  if (sb.rank != 1 || sb.d[0] != sw.d[1])
    throw std::invalid_argument("dense: bias " + sb.str() + " does not match weight " + sw.str());
  Node n;
  n.kind = OpKind::dense;
  n.in = {input, weight, bias};
  n.requires_grad = any_grad(nodes_, n.in);
  n.value = dense_fwd(nodes_[input].value, nodes_[weight].value, nodes_[bias].value);
  return push(std::move(n));
}

int Graph::activation(int input, Act kind) {
  check_id(input);
  Node n;
  n.kind = OpKind::activation;
  n.in = {input};
  n.act = kind;
  n.requires_grad = nodes_[input].requires_grad;
  n.value = activation_fwd(nodes_[input].value, kind);
  return push(std::move(n));
}

int Graph::upsample2x(int input) {
  check_id(input);
  const Shape& s = nodes_[input].value.shape;
  if (s.rank != 4) throw std::invalid_argument("upsample2x: need 4-D input, got " + s.str());
  Node n;
  n.kind = OpKind::upsample2x;
  n.in = {input};
  n.requires_grad = nodes_[input].requires_grad;
  n.value = upsample_fwd(nodes_[input].value);
  return push(std::move(n));
}

int Graph::concat_channels(const std::vector<int>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  std::vector<const Tensor*> ts;
  for (int id : inputs) {
    check_id(id);
    ts.push_back(&nodes_[id].value);
    const Shape& s = nodes_[id].value.shape;
    const Shape& s0 = ts[0]->shape;
    if (s.rank != 4 || s.d[0] != s0.d[0] || s.d[2] != s0.d[2] || s.d[3] != s0.d[3])
      throw std::invalid_argument("concat_channels: mismatched shapes " + s0.str() + " vs " +
                                  s.str());
  }
  Node n;
  n.kind = OpKind::concat_channels;
  n.in = inputs;
  n.requires_grad = any_grad(nodes_, inputs);
  n.value = concat_fwd(ts);
  return push(std::move(n));
}

int Graph::flatten(int input) {
  check_id(input);
  const Tensor& t = nodes_[input].value;
  Node n;
  n.kind = OpKind::flatten;
  n.in = {input};
  n.requires_grad = nodes_[input].requires_grad;
  n.value = t;
  n.value.shape = Shape{t.shape.d[0], static_cast<int>(t.numel() / t.shape.d[0])};
  return push(std::move(n));
}

int Graph::add(int a, int b) {
  check_id(a);
  check_id(b);
  if (nodes_[a].value.shape != nodes_[b].value.shape)
    throw std::invalid_argument("add: shape mismatch " + nodes_[a].value.shape.str() + " vs " +
                                nodes_[b].value.shape.str());
  Node n;
  n.kind = OpKind::add;
  n.in = {a, b};
  n.requires_grad = any_grad(nodes_, n.in);
  n.value = nodes_[a].value;
  for (size_t i = 0; i < n.value.v.size(); ++i) n.value.v[i] += nodes_[b].value.v[i];
  return push(std::move(n));
}

int Graph::sub(int a, int b) {
  check_id(a);
  check_id(b);
  if (nodes_[a].value.shape != nodes_[b].value.shape)
    throw std::invalid_argument("sub: shape mismatch " + nodes_[a].value.shape.str() + " vs " +
                                nodes_[b].value.shape.str());
  Node n;
  n.kind = OpKind::sub;
  n.in = {a, b};
  n.requires_grad = any_grad(nodes_, n.in);
  n.value = nodes_[a].value;
  for (size_t i = 0; i < n.value.v.size(); ++i) n.value.v[i] -= nodes_[b].value.v[i];
  return push(std::move(n));
}

int Graph::mul_scalar(int a, double c) {
  check_id(a);
  Node n;
  n.kind = OpKind::mul_scalar;
  n.in = {a};
  n.c0 = c;
  n.requires_grad = nodes_[a].requires_grad;
  n.value = nodes_[a].value;
  for (auto& x : n.value.v) x = static_cast<float>(c * x);
  return push(std::move(n));
}

int Graph::sum_all(int a) {
  check_id(a);
  Node n;
  n.kind = OpKind::sum_all;
  n.in = {a};
  n.requires_grad = nodes_[a].requires_grad;
  n.value = sum_all_fwd(nodes_[a].value);
  return push(std::move(n));
}

int Graph::weighted_mse_pair(int est, int target, double lambda_h, double lambda_p) {
  check_id(est);
  check_id(target);
  const Shape& se = nodes_[est].value.shape;
  const Shape& st = nodes_[target].value.shape;
  if (se != st)
    throw std::invalid_argument("weighted_mse_pair: estimate " + se.str() +
                                " does not match target " + st.str());
  if (se.rank != 4 || se.d[1] != 2)
    throw std::invalid_argument("weighted_mse_pair: need (batch,2,freq,time), got " + se.str());
  Node n;
  n.kind = OpKind::weighted_mse_pair;
  n.in = {est, target};
  n.c0 = lambda_h;
  n.c1 = lambda_p;
  n.requires_grad = any_grad(nodes_, n.in);
  n.value = weighted_mse_fwd(nodes_[est].value, nodes_[target].value, lambda_h, lambda_p);
  return push(std::move(n));
}

int Graph::bce_domain(int probs_b, int probs_a) {
  check_id(probs_b);
  check_id(probs_a);
  if (nodes_[probs_b].value.numel() == 0 || nodes_[probs_a].value.numel() == 0)
    throw std::invalid_argument("bce_domain: empty half-batch");
  Node n;
  n.kind = OpKind::bce_domain;
  n.in = {probs_b, probs_a};
  n.requires_grad = any_grad(nodes_, n.in);
  n.value = bce_fwd(nodes_[probs_b].value, nodes_[probs_a].value);
  return push(std::move(n));
}

const Tensor& Graph::grad(int id) const {
  check_id(id);
  if (!backward_done_) throw std::logic_error("graph: gradient requested before backward");
  return nodes_[id].grad;
}

void Graph::backward(int loss) {
  check_id(loss);
  if (nodes_.empty()) throw std::logic_error("graph: backward on empty graph");
  if (nodes_[loss].value.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                nodes_[loss].value.shape.str());
  // (re)initialize gradient buffers for the reachable requires_grad subgraph
  for (auto& n : nodes_) {
    if (n.requires_grad)
      n.grad = Tensor(n.value.shape);
    else
      n.grad = Tensor();
  }
  if (!nodes_[loss].requires_grad) {
    backward_done_ = true;
    return;
  }
  nodes_[loss].grad.v[0] = 1.0f;

  for (int id = loss; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.kind == OpKind::leaf) continue;
    if (id > loss) continue;
    const Tensor& g = n.grad;
    switch (n.kind) {
      case OpKind::conv2d: {
        Node& ni = nodes_[n.in[0]];
        Node& nk = nodes_[n.in[1]];
        Node& nb = nodes_[n.in[2]];
        ConvDims d = conv_dims(ni.value.shape, nk.value.shape, n.pad);
        const int y0 = (n.pad == Pad::same) ? -d.cy : 0;
        const int x0 = (n.pad == Pad::same) ? -d.cx : 0;
        if (ni.requires_grad) {
          for (int bb = 0; bb < d.B; ++bb)
            for (int ic = 0; ic < d.Cin; ++ic)
              for (int iy = 0; iy < d.H; ++iy)
                for (int ix = 0; ix < d.W; ++ix) {
                  double acc = 0.0;
                  for (int oc = 0; oc < d.Cout; ++oc)
                    for (int ky = 0; ky < d.KH; ++ky) {
                      const int oy = iy - y0 - ky;
                      if (oy < 0 || oy >= d.OH) continue;
                      for (int kx = 0; kx < d.KW; ++kx) {
                        const int ox = ix - x0 - kx;
                        if (ox < 0 || ox >= d.OW) continue;
                        acc += static_cast<double>(g.at(bb, oc, oy, ox)) *
                               static_cast<double>(nk.value.at(oc, ic, ky, kx));
                      }
                    }
                  ni.grad.at(bb, ic, iy, ix) += static_cast<float>(acc);
                }
        }
        if (nk.requires_grad) {
          for (int oc = 0; oc < d.Cout; ++oc)
            for (int ic = 0; ic < d.Cin; ++ic)
              for (int ky = 0; ky < d.KH; ++ky)
                for (int kx = 0; kx < d.KW; ++kx) {
                  double acc = 0.0;
                  for (int bb = 0; bb < d.B; ++bb)
                    for (int oy = 0; oy < d.OH; ++oy) {
                      const int iy = oy + y0 + ky;
                      if (iy < 0 || iy >= d.H) continue;
                      for (int ox = 0; ox < d.OW; ++ox) {
                        const int ix = ox + x0 + kx;
                        if (ix < 0 || ix >= d.W) continue;
                        acc += static_cast<double>(g.at(bb, oc, oy, ox)) *
                               static_cast<double>(ni.value.at(bb, ic, iy, ix));
                      }
                    }
                  nk.grad.at(oc, ic, ky, kx) += static_cast<float>(acc);
                }
        }
        if (nb.requires_grad) {
          for (int oc = 0; oc < d.Cout; ++oc) {
            double acc = 0.0;
            for (int bb = 0; bb < d.B; ++bb)
              for (int oy = 0; oy < d.OH; ++oy)
                for (int ox = 0; ox < d.OW; ++ox)
                  acc += static_cast<double>(g.at(bb, oc, oy, ox));
            nb.grad.v[oc] += static_cast<float>(acc);
          }
        }
        break;
      }
      case OpKind::maxpool2d: {
        Node& ni = nodes_[n.in[0]];
        if (ni.requires_grad)
          for (size_t o = 0; o < g.v.size(); ++o) ni.grad.v[n.aux[o]] += g.v[o];
        break;
      }
      case OpKind::dense: {
        Node& ni = nodes_[n.in[0]];
        Node& nw = nodes_[n.in[1]];
        Node& nb = nodes_[n.in[2]];
        const int B = ni.value.shape.d[0], N = ni.value.shape.d[1], M = nw.value.shape.d[1];
        if (ni.requires_grad)
          for (int bb = 0; bb < B; ++bb)
            for (int nn = 0; nn < N; ++nn) {
              double acc = 0.0;
              for (int m = 0; m < M; ++m)
                acc += static_cast<double>(g.at(bb, m)) * static_cast<double>(nw.value.at(nn, m));
              ni.grad.at(bb, nn) += static_cast<float>(acc);
            }
        if (nw.requires_grad)
          for (int nn = 0; nn < N; ++nn)
            for (int m = 0; m < M; ++m) {
              double acc = 0.0;
              for (int bb = 0; bb < B; ++bb)
                acc += static_cast<double>(ni.value.at(bb, nn)) * static_cast<double>(g.at(bb, m));
              nw.grad.at(nn, m) += static_cast<float>(acc);
            }
        if (nb.requires_grad)
          for (int m = 0; m < M; ++m) {
            double acc = 0.0;
            for (int bb = 0; bb < B; ++bb) acc += static_cast<double>(g.at(bb, m));
            nb.grad.v[m] += static_cast<float>(acc);
          }
        break;
      }
      case OpKind::activation: {
        Node& ni = nodes_[n.in[0]];
        if (!ni.requires_grad) break;
        switch (n.act) {
          case Act::relu:
            for (size_t i = 0; i < g.v.size(); ++i)
              if (ni.value.v[i] > 0.0f) ni.grad.v[i] += g.v[i];
            break;
          case Act::sigmoid:
            for (size_t i = 0; i < g.v.size(); ++i) {
              const double x = ni.value.v[i];
              if (x <= -kSigmoidClamp || x >= kSigmoidClamp) continue;  // clamp region is flat
              const double s = n.value.v[i];
              ni.grad.v[i] += static_cast<float>(g.v[i] * s * (1.0 - s));
            }
            break;
          case Act::linear:
            for (size_t i = 0; i < g.v.size(); ++i) ni.grad.v[i] += g.v[i];
            break;
        }
        break;
      }
      case OpKind::upsample2x: {
        Node& ni = nodes_[n.in[0]];
        if (!ni.requires_grad) break;
        const Shape& s = ni.value.shape;
        for (int bb = 0; bb < s.d[0]; ++bb)
          for (int c = 0; c < s.d[1]; ++c)
            for (int y = 0; y < s.d[2]; ++y)
              for (int x = 0; x < s.d[3]; ++x) {
                double acc = 0.0;
                for (int dy = 0; dy < 2; ++dy)
                  for (int dx = 0; dx < 2; ++dx)
                    acc += static_cast<double>(g.at(bb, c, 2 * y + dy, 2 * x + dx));
                ni.grad.at(bb, c, y, x) += static_cast<float>(acc);
              }
        break;
      }
      case OpKind::concat_channels: {
        const Shape& so = n.value.shape;
        const int plane = so.d[2] * so.d[3];
        for (int bb = 0; bb < so.d[0]; ++bb) {
          int co = 0;
          for (int id_in : n.in) {
            Node& ni = nodes_[id_in];
            const int c = ni.value.shape.d[1];
            if (ni.requires_grad) {
              const size_t src = (static_cast<size_t>(bb) * so.d[1] + co) * plane;
              const size_t dst = static_cast<size_t>(bb) * c * plane;
              for (long i = 0; i < static_cast<long>(c) * plane; ++i)
                ni.grad.v[dst + i] += g.v[src + i];
            }
            co += c;
          }
        }
        break;
      }
      case OpKind::flatten: {
        Node& ni = nodes_[n.in[0]];
        if (ni.requires_grad)
          for (size_t i = 0; i < g.v.size(); ++i) ni.grad.v[i] += g.v[i];
        break;
      }
      case OpKind::add:
      case OpKind::sub: {
        Node& na = nodes_[n.in[0]];
        Node& nb = nodes_[n.in[1]];
        const float sgn = (n.kind == OpKind::sub) ? -1.0f : 1.0f;
        if (na.requires_grad)
          for (size_t i = 0; i < g.v.size(); ++i) na.grad.v[i] += g.v[i];
        if (nb.requires_grad)
          for (size_t i = 0; i < g.v.size(); ++i) nb.grad.v[i] += sgn * g.v[i];
        break;
      }
      case OpKind::mul_scalar: {
        Node& ni = nodes_[n.in[0]];
        if (ni.requires_grad)
          for (size_t i = 0; i < g.v.size(); ++i)
            ni.grad.v[i] += static_cast<float>(n.c0 * g.v[i]);
        break;
      }
      case OpKind::sum_all: {
        Node& ni = nodes_[n.in[0]];
        if (ni.requires_grad)
          for (auto& x : ni.grad.v) x += g.v[0];
        break;
      }
      case OpKind::weighted_mse_pair: {
        Node& ne = nodes_[n.in[0]];
        Node& nt = nodes_[n.in[1]];
        const int B = ne.value.shape.d[0];
        const long per_ch = ne.value.numel() / (static_cast<long>(B) * 2);
        const double g0 = g.v[0];
        for (int bb = 0; bb < B; ++bb)
          for (int c = 0; c < 2; ++c) {
            const double w = 2.0 * (c == 0 ? n.c0 : n.c1) / B;
            const size_t base = (static_cast<size_t>(bb) * 2 + c) * per_ch;
            for (long i = 0; i < per_ch; ++i) {
              const double diff =
                  static_cast<double>(ne.value.v[base + i]) - static_cast<double>(nt.value.v[base + i]);
              if (ne.requires_grad) ne.grad.v[base + i] += static_cast<float>(g0 * w * diff);
              if (nt.requires_grad) nt.grad.v[base + i] -= static_cast<float>(g0 * w * diff);
            }
          }
        break;
      }
      case OpKind::bce_domain: {
        Node& nb = nodes_[n.in[0]];
        Node& na = nodes_[n.in[1]];
        const double g0 = g.v[0];
        if (nb.requires_grad) {
          const double inv = 1.0 / static_cast<double>(nb.value.v.size());
          for (size_t i = 0; i < nb.value.v.size(); ++i) {
            const double p = nb.value.v[i];
            if (p > kLogClamp) nb.grad.v[i] += static_cast<float>(-g0 * inv / p);
          }
        }
        if (na.requires_grad) {
          const double inv = 1.0 / static_cast<double>(na.value.v.size());
          for (size_t i = 0; i < na.value.v.size(); ++i) {
            const double p = na.value.v[i];
            if (1.0 - p > kLogClamp) na.grad.v[i] += static_cast<float>(g0 * inv / (1.0 - p));
          }
        }
        break;
      }
      case OpKind::leaf:
        break;
    }
  }
  backward_done_ = true;
}

double Graph::forward_double(int loss, int perturb_leaf, long elem, double delta) const {
  check_id(loss);
  std::vector<TensorD> vals(nodes_.size());
  for (size_t id = 0; id <= static_cast<size_t>(loss); ++id) {
    const Node& n = nodes_[id];
    switch (n.kind) {
      case OpKind::leaf: {
        TensorD t(n.value.shape);
        for (size_t i = 0; i < t.v.size(); ++i) t.v[i] = static_cast<double>(n.value.v[i]);
        if (static_cast<int>(id) == perturb_leaf) t.v[elem] += delta;
        vals[id] = std::move(t);
        break;
      }
      case OpKind::conv2d:
        vals[id] = conv2d_fwd(vals[n.in[0]], vals[n.in[1]], vals[n.in[2]], n.pad);
        break;
      case OpKind::maxpool2d:
        vals[id] = maxpool_fwd(vals[n.in[0]], nullptr);
        break;
      case OpKind::dense:
        vals[id] = dense_fwd(vals[n.in[0]], vals[n.in[1]], vals[n.in[2]]);
        break;
      case OpKind::activation:
        vals[id] = activation_fwd(vals[n.in[0]], n.act);
        break;
      case OpKind::upsample2x:
        vals[id] = upsample_fwd(vals[n.in[0]]);
        break;
      case OpKind::concat_channels: {
        std::vector<const TensorD*> ts;
        for (int i : n.in) ts.push_back(&vals[i]);
        vals[id] = concat_fwd(ts);
        break;
      }
      case OpKind::flatten: {
        vals[id] = vals[n.in[0]];
        vals[id].shape = n.value.shape;
        break;
      }
      case OpKind::add: {
        vals[id] = vals[n.in[0]];
        for (size_t i = 0; i < vals[id].v.size(); ++i) vals[id].v[i] += vals[n.in[1]].v[i];
        break;
      }
      case OpKind::sub: {
        vals[id] = vals[n.in[0]];
        for (size_t i = 0; i < vals[id].v.size(); ++i) vals[id].v[i] -= vals[n.in[1]].v[i];
        break;
      }
      case OpKind::mul_scalar: {
        vals[id] = vals[n.in[0]];
        for (auto& x : vals[id].v) x *= n.c0;
        break;
      }
      case OpKind::sum_all:
        vals[id] = sum_all_fwd(vals[n.in[0]]);
        break;
      case OpKind::weighted_mse_pair:
        vals[id] = weighted_mse_fwd(vals[n.in[0]], vals[n.in[1]], n.c0, n.c1);
        break;
      case OpKind::bce_domain:
        vals[id] = bce_fwd(vals[n.in[0]], vals[n.in[1]]);
        break;
    }
  }
  return vals[loss].v[0];
}

double Graph::grad_check(int loss, double epsilon, int max_samples_per_leaf) {
  if (epsilon < 1e-6 || epsilon > 1e-3)
    throw std::invalid_argument("grad_check: epsilon must be in [1e-6, 1e-3]");
  backward(loss);
  double worst = 0.0;
  for (int id = 0; id < static_cast<int>(nodes_.size()); ++id) {
    const Node& n = nodes_[id];
    if (n.kind != OpKind::leaf || !n.requires_grad) continue;
    const long count = n.value.numel();
    const long step = std::max<long>(1, count / max_samples_per_leaf);
    for (long i = 0; i < count; i += step) {
      const double fp = forward_double(loss, id, i, epsilon);
      const double fm = forward_double(loss, id, i, -epsilon);
      const double fd = (fp - fm) / (2.0 * epsilon);
      const double an = static_cast<double>(n.grad.v[i]);
      const double err = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace hpss
