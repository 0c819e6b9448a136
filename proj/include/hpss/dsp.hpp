#pragma once

#include <complex>
#include <string>
#include <utility>
#include <vector>

#include "hpss/tensor.hpp"

namespace hpss {

/// One-sided STFT of a mono signal. Values are frame-major: v[t*bins + b].
/// Frames are laid on a zero-padded copy of the signal (head pad of
/// fft_size - hop, tail pad to complete coverage) so the transform inverts
/// exactly over the original samples.
struct ComplexSpectrogram {
  int bins = 0;     // fft_size/2 + 1
  int frames = 0;
  int sample_rate = 16000;
  int hop = 0;
  int fft_size = 0;
  long original_length = 0;
  std::vector<std::complex<double>> v;

  std::complex<double>& at(int t, int b) { return v[static_cast<size_t>(t) * bins + b]; }
  const std::complex<double>& at(int t, int b) const { return v[static_cast<size_t>(t) * bins + b]; }
};

/// Magnitude plane with the same frame-major layout as ComplexSpectrogram.
struct MagSpectrogram {
  int bins = 0;
  int frames = 0;
  std::vector<double> v;

  MagSpectrogram() = default;
  MagSpectrogram(int bins_, int frames_) : bins(bins_), frames(frames_), v(static_cast<size_t>(bins_) * frames_, 0.0) {}
  double& at(int t, int b) { return v[static_cast<size_t>(t) * bins + b]; }
  const double& at(int t, int b) const { return v[static_cast<size_t>(t) * bins + b]; }
};

/// Per-track STFT phases plus the metadata needed to invert.
struct PhaseRecord {
  int bins = 0;
  int frames = 0;
  int sample_rate = 16000;
  int hop = 0;
  int fft_size = 0;
  long original_length = 0;
  std::vector<double> phase;  // frame-major, like ComplexSpectrogram

  double at(int t, int b) const { return phase[static_cast<size_t>(t) * bins + b]; }
};

/// Normalized magnitude block as fed to the network. Values are stored
/// freq-major (v[f*frames + t]) to match tensor spatial layout, with the
/// Nyquist bin dropped: bins = fft_size/2.
struct MagnitudePatch {
  int bins = 0;
  int frames = 0;
  std::vector<float> v;
  double norm_factor = 1.0;
  std::string track_id;
  int frame_offset = 0;
  int pad_frames = 0;  // zero frames appended to complete the last block

  float& at(int f, int t) { return v[static_cast<size_t>(f) * frames + t]; }
  const float& at(int f, int t) const { return v[static_cast<size_t>(f) * frames + t]; }
};

ComplexSpectrogram stft(const std::vector<double>& signal, int fft_size, int hop,
                        int sample_rate = 16000);

std::vector<double> istft(const ComplexSpectrogram& spec, long original_length);

MagSpectrogram magnitude(const ComplexSpectrogram& spec);

/// Splits |spec| (Nyquist bin dropped) into consecutive non-overlapping
/// blocks of patch_frames, each max-normalized with a 1e-8 floor. The last
/// block is zero-padded and the pad length recorded.
std::pair<std::vector<MagnitudePatch>, PhaseRecord> extract_patches(const ComplexSpectrogram& spec,
                                                                    int patch_frames,
                                                                    const std::string& track_id = "");

/// Inverse of extract_patches: de-normalizes, strips padding, reinserts a
/// zero Nyquist row and reattaches the recorded phase.
ComplexSpectrogram assemble_patches(const std::vector<MagnitudePatch>& patches,
                                    const PhaseRecord& rec);

/// Magnitude-only variant of assemble_patches (full bins, zero Nyquist row).
MagSpectrogram assemble_magnitude(const std::vector<MagnitudePatch>& patches,
                                  const PhaseRecord& rec);

std::vector<double> hann_periodic(int n);

}  // namespace hpss
