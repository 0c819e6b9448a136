#include "hpss/masking.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hpss {

namespace {

constexpr double kEps = 1e-10;

void check_same_shape(const MagSpectrogram& a, const MagSpectrogram& b, const char* who) {
  if (a.bins != b.bins || a.frames != b.frames)
    throw std::invalid_argument(std::string(who) + ": shape mismatch " + std::to_string(a.bins) +
                                "x" + std::to_string(a.frames) + " vs " + std::to_string(b.bins) +
                                "x" + std::to_string(b.frames));
}

}  // namespace

MaskPair ibm(const MagSpectrogram& h_mag, const MagSpectrogram& p_mag) {
  check_same_shape(h_mag, p_mag, "ibm");
  MaskPair m{MagSpectrogram(h_mag.bins, h_mag.frames), MagSpectrogram(h_mag.bins, h_mag.frames)};
  for (size_t i = 0; i < h_mag.v.size(); ++i) {
    m.h.v[i] = h_mag.v[i] >= p_mag.v[i] ? 1.0 : 0.0;
    m.p.v[i] = 1.0 - m.h.v[i];
  }
  return m;
}

MaskPair irm(const MagSpectrogram& h_mag, const MagSpectrogram& p_mag) {
  check_same_shape(h_mag, p_mag, "irm");
  MaskPair m{MagSpectrogram(h_mag.bins, h_mag.frames), MagSpectrogram(h_mag.bins, h_mag.frames)};
  for (size_t i = 0; i < h_mag.v.size(); ++i) {
    const double denom = h_mag.v[i] + p_mag.v[i] + kEps;
    const double mh = h_mag.v[i] / denom;
    const double mp = p_mag.v[i] / denom;
    const double s = mh + mp;
    m.h.v[i] = s > 0.0 ? mh / s : 0.5;
    m.p.v[i] = 1.0 - m.h.v[i];
  }
  return m;
}

std::pair<MagSpectrogram, MagSpectrogram> wiener_refine(const MagSpectrogram& est_h,
                                                        const MagSpectrogram& est_p,
                                                        const MagSpectrogram& mix_mag) {
  check_same_shape(est_h, est_p, "wiener_refine");
  check_same_shape(est_h, mix_mag, "wiener_refine");
  MagSpectrogram rh(est_h.bins, est_h.frames), rp(est_h.bins, est_h.frames);
  for (size_t i = 0; i < est_h.v.size(); ++i) {
    const double h2 = est_h.v[i] * est_h.v[i];
    const double p2 = est_p.v[i] * est_p.v[i];
    const double mh = h2 / (h2 + p2 + kEps);
    rh.v[i] = mh * mix_mag.v[i];
    rp.v[i] = mix_mag.v[i] - rh.v[i];  // complementary mask, conserves the mixture
  }
  return {std::move(rh), std::move(rp)};
}

MagSpectrogram apply_mask(const MagSpectrogram& mask, const MagSpectrogram& mag) {
  check_same_shape(mask, mag, "apply_mask");
  MagSpectrogram out(mag.bins, mag.frames);
  for (size_t i = 0; i < mag.v.size(); ++i) out.v[i] = mask.v[i] * mag.v[i];
  return out;
}

std::vector<double> reconstruct(const MagSpectrogram& source_mag, const PhaseRecord& mix_phase,
                                long original_length) {
  if (source_mag.bins != mix_phase.bins || source_mag.frames != mix_phase.frames)
    throw std::invalid_argument("reconstruct: magnitude and phase shapes disagree");
  ComplexSpectrogram spec;
  spec.bins = mix_phase.bins;
  spec.frames = mix_phase.frames;
  spec.sample_rate = mix_phase.sample_rate;
  spec.hop = mix_phase.hop;
  spec.fft_size = mix_phase.fft_size;
  spec.original_length = original_length;
  spec.v.resize(mix_phase.phase.size());
  for (size_t i = 0; i < spec.v.size(); ++i)
    spec.v[i] = std::polar(source_mag.v[i], mix_phase.phase[i]);
  return istft(spec, original_length);
}

}  // namespace hpss
