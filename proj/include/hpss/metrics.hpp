#pragma once

#include <array>
#include <string>
#include <vector>

namespace hpss {

/// Per-track BSS_eval results in dB; index 0 = harmonic, 1 = percussive.
/// Values are capped to [-100, 100].
struct TrackMetrics {
  std::string track_id;
  std::array<double, 2> sdr{0.0, 0.0};
  std::array<double, 2> sir{0.0, 0.0};
  std::array<double, 2> sar{0.0, 0.0};
};

/// The decomposition behind one estimate's metrics; all vectors share the
/// padded length n + filter_len - 1 and sum to the (padded) estimate.
struct BssDecomposition {
  std::vector<double> s_target, e_interf, e_artif;
};

/// Least-squares BSS_eval decomposition. filter_len 1 projects onto the
/// plain source spans; larger values allow a time-invariant filter of that
/// many taps on each reference (BSS_eval-v3 style).
TrackMetrics bss_eval(const std::array<std::vector<double>, 2>& references,
                      const std::array<std::vector<double>, 2>& estimates, int filter_len = 1,
                      const std::string& track_id = "",
                      std::array<BssDecomposition, 2>* decomposition = nullptr);

struct MetricsTable {
  std::vector<TrackMetrics> tracks;
  TrackMetrics median;  // per-metric lower median across tracks
};

MetricsTable aggregate(std::vector<TrackMetrics> per_track);

/// Lower median (sorted element at index (n-1)/2).
double lower_median(std::vector<double> values);

void write_metrics_csv(const std::string& path, const std::vector<std::pair<std::string, MetricsTable>>& methods);

std::string format_metrics_table(const std::vector<std::pair<std::string, MetricsTable>>& methods,
                                 const std::string& test_set_label);

}  // namespace hpss
