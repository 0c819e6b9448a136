#pragma once

#include <complex>
#include <vector>

namespace hpss {

/// In-place radix-2 FFT. Size must be a power of two. The inverse transform
/// includes the 1/N factor.
void fft(std::vector<std::complex<double>>& a, bool inverse);

/// Real-input FFT: returns the n/2+1 non-redundant bins.
std::vector<std::complex<double>> rfft(const std::vector<double>& x);

/// Inverse of rfft: expands the half spectrum by conjugate symmetry and
/// returns n real samples.
std::vector<double> irfft(const std::vector<std::complex<double>>& half, int n);

}  // namespace hpss
