#pragma once

#include <utility>
#include <vector>

#include "hpss/dsp.hpp"

namespace hpss {

/// Complementary harmonic/percussive masks; h + p == 1 elementwise, exactly.
struct MaskPair {
  MagSpectrogram h, p;
};

/// Ideal binary mask. Ties (h == p) go to the harmonic source.
MaskPair ibm(const MagSpectrogram& h_mag, const MagSpectrogram& p_mag);

/// Ideal ratio mask with a 1e-10 denominator floor; the pair is renormalized
/// so the masks sum to one exactly.
MaskPair irm(const MagSpectrogram& h_mag, const MagSpectrogram& p_mag);

/// Single-channel power-ratio (exponent 2) Wiener post-filter. Outputs sum
/// elementwise to mix_mag.
std::pair<MagSpectrogram, MagSpectrogram> wiener_refine(const MagSpectrogram& est_h,
                                                        const MagSpectrogram& est_p,
                                                        const MagSpectrogram& mix_mag);

MagSpectrogram apply_mask(const MagSpectrogram& mask, const MagSpectrogram& mag);

/// Magnitude + mixture phase back to the time domain.
std::vector<double> reconstruct(const MagSpectrogram& source_mag, const PhaseRecord& mix_phase,
                                long original_length);

}  // namespace hpss
