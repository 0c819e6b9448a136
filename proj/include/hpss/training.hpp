#pragma once

#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hpss/data.hpp"
#include "hpss/model.hpp"
#include "hpss/tensor.hpp"

namespace hpss {

struct LossWeights {
  double lambda_h = 0.5;
  double lambda_p = 0.5;
  double gamma_s = 1.0;
  double gamma_u = 0.001;
};

/// Batch-mean weighted squared error between source-pair tensors (batch,2,F,T).
double loss_supervised(const Tensor& est, const Tensor& target, const LossWeights& w);

/// Binary cross-entropy of the domain discriminator: -E_B[log p] - E_A[log(1-p)].
double loss_domain(const std::vector<double>& probs_b, const std::vector<double>& probs_a);

/// Eq.-5-style combination: gamma_s * L_S - gamma_u * L_U.
double encoder_objective(double ls, double lu, const LossWeights& w);

struct AdamState {
  std::map<std::string, std::pair<Tensor, Tensor>> moments;  // first, second
  long step = 0;
};

using NamedGrads = std::map<std::string, Tensor>;

/// Standard Adam (beta1 0.9, beta2 0.999, eps 1e-8, bias correction).
/// Only parameters named in `grads` are updated. NaN gradients abort.
void adam_update(NamedTensors& params, const NamedGrads& grads, AdamState& st, double lr);

struct OptimState {
  AdamState enc, dec, disc;
  double lr = 1e-3;
  double plateau_factor = 0.25;
  int plateau_patience = 50;
  int stop_patience = 200;
  double improve_eps = 1e-6;
  double best_val = std::numeric_limits<double>::infinity();
  int plateau_counter = 0;
  int stop_counter = 0;
};

/// Plateau schedule on the supervised validation loss; returns the stop flag.
bool lr_on_plateau(OptimState& st, double val_loss);

struct EpochRecord {
  int epoch = 0;
  double ls_train = 0.0;
  double ls_val = 0.0;
  double lu = 0.0;
  double disc_accuracy = 0.5;
  double lr = 0.0;
  double wall_s = 0.0;  // kept in memory only, not part of the CSV
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

void write_history_csv(const std::string& path, const TrainHistory& h);

enum class TrainMode { source_only, target_only, joint, fine_tune, uda };

const char* train_mode_name(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

struct FitConfig {
  TrainMode mode = TrainMode::source_only;
  SeparatorConfig model;
  LossWeights weights;
  int batch_size = 8;
  int max_epochs = 1000;
  double lr = 1e-3;
  double plateau_factor = 0.25;
  int plateau_patience = 50;
  int stop_patience = 200;
  double val_fraction = 0.2;
  int fft_size = 512;
  int hop = 128;
  int patch_frames = 256;
  int max_patches_per_track = 0;  // 0 = use all patches
  int disc_updates_per_step = 5;
  uint64_t seed = 17;
};

struct FitInputs {
  std::vector<Track> labelled_a;
  std::vector<Track> labelled_b;
  std::vector<Track> unlabelled_b;
  std::optional<ParamSet> init;  // required starting point for fine_tune
};

struct FitResult {
  ParamSet best;
  ParamSet final;
  TrainHistory history;
  int best_epoch = -1;
};

/// Test hooks for observing the update schedule of train_step_uda.
struct StepHooks {
  std::function<void(int)> after_disc_update;  // called with the update index (0..4)
  std::function<void()> after_main_update;
};

struct StepRecord {
  int disc_updates = 0;
  int main_updates = 0;
  double ls = 0.0;
  double lu = 0.0;
  double disc_accuracy = 0.0;  // over the discriminator-phase half-batches
};

/// One adversarial iteration: disc_updates successive theta_C Adam updates on
/// freshly drawn A/B mixture half-batches with theta_E frozen, then one joint
/// theta_D / theta_E update with theta_C frozen.
StepRecord train_step_uda(const Batch& labelled_a, BatchStream& mix_a, BatchStream& mix_b,
                          ParamSet& params, OptimState& state, const LossWeights& w,
                          int disc_updates = 5, int half_batch = 4,
                          const StepHooks* hooks = nullptr);

/// Full training in any of the five Table-1 modes.
FitResult fit(const FitInputs& data, const FitConfig& cfg);

/// Re-initializes the discriminator and trains it against the frozen encoder.
ParamSet train_discriminator_frozen_encoder(const ParamSet& base, BatchStream& mix_a,
                                            BatchStream& mix_b, int steps, double lr,
                                            uint64_t seed);

/// Balanced accuracy of P(domain=B) > 0.5 over the two mixture-patch pools.
double discriminator_accuracy(const ParamSet& ps, const std::vector<PatchTriple>& pool_a,
                              const std::vector<PatchTriple>& pool_b);

}  // namespace hpss
