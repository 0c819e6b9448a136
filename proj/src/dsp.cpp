#include "hpss/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "hpss/fft.hpp"

namespace hpss {

std::vector<double> hann_periodic(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / n));
  return w;
}

// Head pad keeps every original sample under full window coverage so the
// overlap-add inverse is exact; the tail pad completes the last frame.
static int head_pad(int fft_size, int hop) { return fft_size - hop; }

ComplexSpectrogram stft(const std::vector<double>& signal, int fft_size, int hop, int sample_rate) {
  if (static_cast<int>(signal.size()) < fft_size)
    throw std::invalid_argument("stft: signal shorter than fft_size");
  if (hop <= 0 || fft_size <= 0 || (fft_size & (fft_size - 1)) != 0)
    throw std::invalid_argument("stft: fft_size must be a power of two and hop positive");
  for (double s : signal)
    if (!std::isfinite(s)) throw std::invalid_argument("stft: non-finite sample");

  const int pad0 = head_pad(fft_size, hop);
  const long len = static_cast<long>(signal.size());
  const int frames = static_cast<int>((pad0 + len - 1) / hop) + 1;
  const long padded_len = static_cast<long>(frames - 1) * hop + fft_size;

  std::vector<double> padded(padded_len, 0.0);
  std::copy(signal.begin(), signal.end(), padded.begin() + pad0);

  const std::vector<double> w = hann_periodic(fft_size);

  ComplexSpectrogram spec;
  spec.bins = fft_size / 2 + 1;
  spec.frames = frames;
  spec.sample_rate = sample_rate;
  spec.hop = hop;
  spec.fft_size = fft_size;
  spec.original_length = len;
  spec.v.resize(static_cast<size_t>(spec.bins) * frames);

  std::vector<double> frame(fft_size);
  for (int t = 0; t < frames; ++t) {
    const long start = static_cast<long>(t) * hop;
    for (int i = 0; i < fft_size; ++i) frame[i] = padded[start + i] * w[i];
    auto half = rfft(frame);
    std::copy(half.begin(), half.end(), spec.v.begin() + static_cast<size_t>(t) * spec.bins);
  }
  return spec;
}

std::vector<double> istft(const ComplexSpectrogram& spec, long original_length) {
  if (spec.fft_size <= 0 || spec.hop <= 0 || spec.bins != spec.fft_size / 2 + 1 ||
      spec.frames < 1 ||
      spec.v.size() != static_cast<size_t>(spec.bins) * spec.frames)
    throw std::invalid_argument("istft: inconsistent spectrogram metadata");
  const int pad0 = head_pad(spec.fft_size, spec.hop);
  const long padded_len = static_cast<long>(spec.frames - 1) * spec.hop + spec.fft_size;
  if (original_length < 0 || pad0 + original_length > padded_len)
    throw std::invalid_argument("istft: original_length exceeds frame coverage");

  const std::vector<double> w = hann_periodic(spec.fft_size);
  std::vector<double> num(padded_len, 0.0), den(padded_len, 0.0);

  std::vector<std::complex<double>> half(spec.bins);
  for (int t = 0; t < spec.frames; ++t) {
    std::copy(spec.v.begin() + static_cast<size_t>(t) * spec.bins,
              spec.v.begin() + static_cast<size_t>(t + 1) * spec.bins, half.begin());
    std::vector<double> td = irfft(half, spec.fft_size);
    const long start = static_cast<long>(t) * spec.hop;
    for (int i = 0; i < spec.fft_size; ++i) {
      num[start + i] += w[i] * td[i];
      den[start + i] += w[i] * w[i];
    }
  }
  std::vector<double> out(original_length, 0.0);
  for (long i = 0; i < original_length; ++i) {
    const double d = den[pad0 + i];
    out[i] = d > 1e-12 ? num[pad0 + i] / d : 0.0;
  }
  return out;
}

MagSpectrogram magnitude(const ComplexSpectrogram& spec) {
  MagSpectrogram m(spec.bins, spec.frames);
  for (size_t i = 0; i < spec.v.size(); ++i) m.v[i] = std::abs(spec.v[i]);
  return m;
}

std::pair<std::vector<MagnitudePatch>, PhaseRecord> extract_patches(const ComplexSpectrogram& spec,
                                                                    int patch_frames,
                                                                    const std::string& track_id) {
  if (patch_frames < 1) throw std::invalid_argument("extract_patches: patch_frames must be >= 1");
  const int fbins = spec.bins - 1;  // Nyquist bin dropped
  const int npatch = (spec.frames + patch_frames - 1) / patch_frames;

  PhaseRecord rec;
  rec.bins = spec.bins;
  rec.frames = spec.frames;
  rec.sample_rate = spec.sample_rate;
  rec.hop = spec.hop;
  rec.fft_size = spec.fft_size;
  rec.original_length = spec.original_length;
  rec.phase.resize(spec.v.size());
  for (size_t i = 0; i < spec.v.size(); ++i) rec.phase[i] = std::arg(spec.v[i]);

  std::vector<MagnitudePatch> patches(npatch);
  for (int p = 0; p < npatch; ++p) {
    MagnitudePatch& mp = patches[p];
    mp.bins = fbins;
    mp.frames = patch_frames;
    mp.track_id = track_id;
    mp.frame_offset = p * patch_frames;
    mp.pad_frames = std::max(0, (p + 1) * patch_frames - spec.frames);
    mp.v.assign(static_cast<size_t>(fbins) * patch_frames, 0.0f);

    double peak = 0.0;
    const int nt = patch_frames - mp.pad_frames;
    for (int t = 0; t < nt; ++t)
      for (int f = 0; f < fbins; ++f)
        peak = std::max(peak, std::abs(spec.at(mp.frame_offset + t, f)));
    mp.norm_factor = std::max(peak, 1e-8);
    for (int t = 0; t < nt; ++t)
      for (int f = 0; f < fbins; ++f)
        mp.at(f, t) = static_cast<float>(std::abs(spec.at(mp.frame_offset + t, f)) / mp.norm_factor);
  }
  return {std::move(patches), std::move(rec)};
}

static void check_patch_layout(const std::vector<MagnitudePatch>& patches, const PhaseRecord& rec) {
  if (patches.empty()) throw std::invalid_argument("assemble_patches: no patches");
  const int pf = patches[0].frames;
  for (size_t p = 0; p < patches.size(); ++p) {
    if (patches[p].frame_offset != static_cast<int>(p) * pf)
      throw std::invalid_argument("assemble_patches: missing patch at frame offset " +
                                  std::to_string(static_cast<int>(p) * pf));
    if (patches[p].bins != rec.bins - 1)
      throw std::invalid_argument("assemble_patches: patch bins do not match phase record");
  }
  const int covered = static_cast<int>(patches.size()) * pf - patches.back().pad_frames;
  if (covered != rec.frames)
    throw std::invalid_argument("assemble_patches: patches cover " + std::to_string(covered) +
                                " frames, record has " + std::to_string(rec.frames));
}

MagSpectrogram assemble_magnitude(const std::vector<MagnitudePatch>& patches,
                                  const PhaseRecord& rec) {
  check_patch_layout(patches, rec);
  MagSpectrogram mag(rec.bins, rec.frames);
  for (const MagnitudePatch& mp : patches) {
    const int nt = mp.frames - mp.pad_frames;
    for (int t = 0; t < nt; ++t)
      for (int f = 0; f < mp.bins; ++f)
        mag.at(mp.frame_offset + t, f) = static_cast<double>(mp.at(f, t)) * mp.norm_factor;
    // Nyquist row stays zero
  }
  return mag;
}

ComplexSpectrogram assemble_patches(const std::vector<MagnitudePatch>& patches,
                                    const PhaseRecord& rec) {
  MagSpectrogram mag = assemble_magnitude(patches, rec);
  ComplexSpectrogram spec;
  spec.bins = rec.bins;
  spec.frames = rec.frames;
  spec.sample_rate = rec.sample_rate;
  spec.hop = rec.hop;
  spec.fft_size = rec.fft_size;
  spec.original_length = rec.original_length;
  spec.v.resize(rec.phase.size());
  for (size_t i = 0; i < rec.phase.size(); ++i)
    spec.v[i] = std::polar(mag.v[i], rec.phase[i]);
  return spec;
}

}  // namespace hpss
