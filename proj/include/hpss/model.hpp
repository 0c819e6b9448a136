#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hpss/tensor.hpp"

namespace hpss {

/// Model hyperparameters for the 3-branch separator and the domain
/// discriminator. Patch dims must be divisible by 2^depth (and the reduced
/// embedding dims by 2^disc_stages).
struct SeparatorConfig {
  int patch_h = 256;
  int patch_w = 256;
  int depth = 4;  // encoder downsampling stages
  std::array<int, 3> branch_widths{16, 16, 16};
  // kernel (freq, time) per branch: square, time-elongated, freq-elongated
  std::array<std::pair<int, int>, 3> branch_kernels{{{3, 3}, {1, 5}, {5, 1}}};
  int decoder_width = 0;  // 0 -> sum of branch widths
  int disc_stages = 3;
  std::vector<int> disc_widths{16, 32, 64};

  int embedding_channels() const { return branch_widths[0] + branch_widths[1] + branch_widths[2]; }
  int reduced_h() const { return patch_h >> depth; }
  int reduced_w() const { return patch_w >> depth; }
  int decoder_channels() const { return decoder_width > 0 ? decoder_width : embedding_channels(); }
  void validate() const;
  bool operator==(const SeparatorConfig&) const = default;
};

using NamedTensors = std::map<std::string, Tensor>;

/// The three disjoint learnable collections of the framework.
struct ParamSet {
  SeparatorConfig config;
  uint64_t seed = 0;
  NamedTensors enc;   // encoder
  NamedTensors dec;   // decoder
  NamedTensors disc;  // domain discriminator
};

ParamSet init_params(const SeparatorConfig& config, uint64_t seed);

/// Graph leaves bound to ParamSet entries, for routing gradients back to the
/// right parameter after backward(). Shared across builder calls on one graph
/// so a parameter enters the tape as a single leaf no matter how many paths
/// use it.
struct LeafBindings {
  std::map<std::string, int> ids;  // param name -> node id
};

/// Three parallel conv branches with 2x2 max-pool downsampling, concatenated
/// along channels into the embedding z.
int encode(Graph& g, int input, const ParamSet& ps, bool trainable, LeafBindings* bind = nullptr);

/// Mirror-image upsampling stack ending in a 2-channel sigmoid head.
int decode(Graph& g, int z, const ParamSet& ps, bool trainable, LeafBindings* bind = nullptr);

/// Conv stages (3x3 conv + 2x2 max pool) then one FC layer and a sigmoid;
/// output is P(domain = B) per batch item, shape (batch, 1).
int discriminate(Graph& g, int z, const ParamSet& ps, bool trainable, LeafBindings* bind = nullptr);

/// Versioned binary checkpoint; bit-exact round trip.
void save_checkpoint(const std::string& path, const ParamSet& ps);
ParamSet load_checkpoint(const std::string& path);

/// Deterministic uniform in [0,1) from a 64-bit SplitMix-style stream;
/// identical across platforms.
class DetRng {
 public:
  explicit DetRng(uint64_t seed) : state_(seed) {}
  uint64_t next_u64();
  double next_double();                      // [0,1)
  double uniform(double lo, double hi);
  double normal();                           // Box-Muller
  uint64_t fork(uint64_t stream_id);         // derive an independent seed

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace hpss
