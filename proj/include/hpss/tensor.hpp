#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace hpss {

/// Tensor shape, rank 1..4. 4-D activations are (batch, channels, freq, time),
/// 2-D are (batch, features).
struct Shape {
  int rank = 0;
  std::array<int, 4> d{0, 0, 0, 0};

  Shape() = default;
  Shape(std::initializer_list<int> dims);

  long numel() const;
  bool operator==(const Shape& o) const { return rank == o.rank && d == o.d; }
  bool operator!=(const Shape& o) const { return !(*this == o); }
  std::string str() const;
};

template <typename T>
struct TensorT {
  Shape shape;
  std::vector<T> v;

  TensorT() = default;
  explicit TensorT(Shape s) : shape(s), v(static_cast<size_t>(s.numel()), T(0)) {}

  long numel() const { return shape.numel(); }

  // 4-D accessors (batch, channel, row, col)
  T& at(int b, int c, int y, int x) {
    return v[((static_cast<size_t>(b) * shape.d[1] + c) * shape.d[2] + y) * shape.d[3] + x];
  }
  const T& at(int b, int c, int y, int x) const {
    return v[((static_cast<size_t>(b) * shape.d[1] + c) * shape.d[2] + y) * shape.d[3] + x];
  }
  // 2-D accessors (batch, feature)
  T& at(int b, int n) { return v[static_cast<size_t>(b) * shape.d[1] + n]; }
  const T& at(int b, int n) const { return v[static_cast<size_t>(b) * shape.d[1] + n]; }

  bool all_finite() const;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

enum class Act { relu, sigmoid, linear };
enum class Pad { same, valid };

enum class OpKind {
  leaf,
  conv2d,
  maxpool2d,
  dense,
  activation,
  upsample2x,
  concat_channels,
  flatten,
  add,
  sub,
  mul_scalar,
  sum_all,
  weighted_mse_pair,
  bce_domain,
};

/// Reverse-mode autodiff over an explicitly recorded tape. Ops execute
/// eagerly on insertion (float32 storage, float64 accumulation in
/// reductions); the recorded tape supports backward() and a float64
/// re-execution used by grad_check.
class Graph {
 public:
  struct Node {
    OpKind kind = OpKind::leaf;
    std::vector<int> in;
    Pad pad = Pad::same;
    Act act = Act::linear;
    double c0 = 0.0, c1 = 0.0;  // op scalars: mul factor / loss weights
    bool requires_grad = false;
    Tensor value;
    Tensor grad;
    std::vector<int> aux;  // maxpool argmax routing (input flat index per output element)
  };

  int leaf(Tensor value, bool requires_grad);

  int conv2d(int input, int kernel, int bias, Pad pad);
  int maxpool2d(int input);
  int dense(int input, int weight, int bias);
  int activation(int input, Act kind);
  int upsample2x(int input);
  int concat_channels(const std::vector<int>& inputs);
  int flatten(int input);
  int add(int a, int b);
  int sub(int a, int b);
  int mul_scalar(int a, double c);
  int sum_all(int a);
  /// Eq.-2-style batch-mean weighted squared error over a 2-channel pair.
  int weighted_mse_pair(int est, int target, double lambda_h, double lambda_p);
  /// Binary cross-entropy over two probability half-batches; log args clamped at 1e-7.
  int bce_domain(int probs_b, int probs_a);

  /// Populates gradient buffers for every node reachable from `loss` that
  /// requires grad. Leaves that do not require grad are untouched.
  void backward(int loss);

  const Tensor& value(int id) const { return nodes_[id].value; }
  const Tensor& grad(int id) const;
  size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_[id]; }

  /// Re-runs the recorded forward pass in float64 with one leaf element
  /// perturbed by `delta`; returns the scalar value of `loss`.
  double forward_double(int loss, int perturb_leaf, long elem, double delta) const;

  /// Central-difference check of analytic gradients. Samples up to
  /// `max_samples_per_leaf` elements of every grad-requiring leaf and returns
  /// max over samples of |analytic - fd| / max(|analytic|, |fd|, 1e-8).
  double grad_check(int loss, double epsilon, int max_samples_per_leaf = 24);

 private:
  int push(Node n);
  void check_id(int id) const;
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

const char* act_name(Act a);

}  // namespace hpss
