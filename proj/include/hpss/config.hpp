#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hpss/model.hpp"
#include "hpss/training.hpp"

namespace hpss {

/// Every knob of the toolkit, with defaults matching the published recipe
/// (γ_S=1, γ_U=0.001, λ=0.5/0.5, Adam lr 0.001, plateau 0.25/50, stop 200,
/// STFT 512 with 75% overlap, 256x256 patches, 20% validation split).
struct RunConfig {
  std::string mode = "source_only";
  std::string corpus;
  std::string unlabelled_b;
  std::string init_checkpoint;
  std::string out_dir = "out";
  std::string profile = "full";

  int sample_rate = 16000;
  int fft_size = 512;
  int hop = 128;
  int patch_frames = 256;

  int depth = 4;
  int branch_width = 16;
  int decoder_width = 0;  // 0 = sum of branch widths
  int disc_stages = 3;
  int disc_width = 16;  // first stage width, doubled per stage

  double lambda_h = 0.5;
  double lambda_p = 0.5;
  double gamma_s = 1.0;
  double gamma_u = 0.001;

  double lr = 0.001;
  double plateau_factor = 0.25;
  int plateau_patience = 50;
  int stop_patience = 200;
  double val_fraction = 0.2;
  int batch_size = 8;
  int max_epochs = 1000;
  int max_patches_per_track = 0;
  int disc_updates_per_step = 5;

  uint64_t seed = 17;
  double duration_s = 12.0;
  int tracks_a = 100;
  int tracks_a_test = 0;
  int tracks_b = 23;
  int tracks_b_test = 5;
  int tracks_b_unlabelled = 50;

  int filter_len = 1;

  bool operator==(const RunConfig&) const = default;

  SeparatorConfig model_config() const;
  FitConfig fit_config() const;
  void validate() const;
};

/// The desk profile: 4x smaller corpora, 64x64 patches, micro model, short
/// schedule. Mirrors the counts used by the acceptance experiments.
void apply_desk_profile(RunConfig& cfg);

// ---- manifest ----

struct ManifestEntry {
  std::string id;
  std::string domain;  // "A" / "B"
  std::string split;   // train / test / unlabelled
  uint64_t seed = 0;
  double duration_s = 0.0;
  bool labelled = true;
};

void write_manifest(const std::string& path, const RunConfig& cfg,
                    const std::vector<ManifestEntry>& tracks);

/// Parses a manifest back; unknown config keys are rejected.
std::pair<RunConfig, std::vector<ManifestEntry>> read_manifest(const std::string& path);

/// Key=value serialization used by both the manifest and config files.
std::vector<std::pair<std::string, std::string>> config_items(const RunConfig& cfg);
void set_config_item(RunConfig& cfg, const std::string& key, const std::string& value);

/// Generates the two-domain corpus tree under out_root and writes the
/// manifest. Returns the manifest entries.
std::vector<ManifestEntry> synth_corpus(const RunConfig& cfg, const std::string& out_root);

}  // namespace hpss
