#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hpss/dsp.hpp"
#include "hpss/tensor.hpp"

namespace hpss {

enum class Domain { A, B };

inline const char* domain_name(Domain d) { return d == Domain::A ? "A" : "B"; }

/// A mono 16 kHz track, optionally with ground-truth stems. When stems are
/// present, mixture == harmonic + percussive within 1e-6.
struct Track {
  std::string id;
  Domain domain = Domain::A;
  std::vector<double> mixture;
  std::vector<double> harmonic;    // empty when unlabelled
  std::vector<double> percussive;  // empty when unlabelled
  int sample_rate = 16000;
  uint64_t seed = 0;

  bool labelled() const { return !harmonic.empty() && !percussive.empty(); }
};

/// Deterministic synthetic track. Domain A: stacked harmonic tones over
/// broadband noise-burst percussion. Domain B: a single vibrato voice over
/// sparse low-frequency thumps.
Track synth_track(Domain domain, uint64_t seed, double duration_s, const std::string& id = "");

// ---- WAV I/O (RIFF, PCM16 or float32) ----

enum class WavFormat { pcm16, float32 };

void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate,
               WavFormat fmt = WavFormat::float32);

/// Loads a WAV file as mono 16 kHz samples in [-1, 1]: stereo is averaged,
/// other rates are linearly resampled.
std::vector<double> load_wav(const std::string& path);

/// Raw variant for tests: no resampling, returns (channel-averaged samples, rate).
std::pair<std::vector<double>, int> load_wav_raw(const std::string& path);

// ---- patches and batches ----

/// Mixture patch plus (for labelled tracks) target patches cut from the same
/// frame range and normalized by the mixture patch's norm_factor.
struct PatchTriple {
  MagnitudePatch mix, h, p;
  bool has_targets = false;
};

std::vector<PatchTriple> track_patches(const Track& track, int fft_size, int hop,
                                       int patch_frames);

struct Batch {
  Tensor x;  // (batch, 1, F, T)
  Tensor y;  // (batch, 2, F, T); empty when unlabelled
  bool has_targets = false;
  int size = 0;
};

/// Deterministic shuffled batch stream over a fixed patch pool. Epoch e uses
/// the permutation derived from (seed, e); identical across runs.
class BatchStream {
 public:
  BatchStream(std::vector<PatchTriple> patches, int batch_size, uint64_t seed);

  int batches_per_epoch() const;
  size_t patch_count() const { return patches_.size(); }
  std::vector<Batch> epoch(int e) const;

  /// Cycling mixture-only draw for domain half-batches; reshuffles at every
  /// wraparound. Mutates the stream cursor.
  Tensor next_mixtures(int n);

 private:
  std::vector<PatchTriple> patches_;
  int batch_size_;
  uint64_t seed_;
  std::vector<int> cycle_order_;
  size_t cycle_pos_ = 0;
  int cycle_epoch_ = 0;
};

Batch make_batch(const std::vector<const PatchTriple*>& items);

/// Spec-level convenience: the full deterministic batch sequence for one
/// epoch over the given tracks.
std::vector<Batch> make_batches(const std::vector<Track>& tracks, int fft_size, int hop,
                                int patch_frames, int batch_size, uint64_t seed);

struct DatasetSplit {
  std::vector<Track> train;
  std::vector<Track> validation;
  uint64_t seed = 0;
};

/// Track-level split; validation gets max(1, floor(fraction * n)) tracks.
DatasetSplit split_tracks(std::vector<Track> tracks, double fraction, uint64_t seed);

// ---- corpus on disk ----
// Layout: <root>/<corpus>/<split>/<track>/{mixture,harmonic,percussive}.wav

void save_track(const std::string& track_dir, const Track& track);
Track load_track(const std::string& track_dir, Domain domain, uint64_t seed = 0);
std::vector<Track> load_corpus_split(const std::string& root, const std::string& corpus,
                                     const std::string& split, Domain domain);

double spectral_centroid_hz(const std::vector<double>& signal, int sample_rate);

}  // namespace hpss
