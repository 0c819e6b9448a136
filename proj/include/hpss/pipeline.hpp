#pragma once

#include <string>
#include <vector>

#include "hpss/data.hpp"
#include "hpss/metrics.hpp"
#include "hpss/model.hpp"

namespace hpss {

struct SeparatedTrack {
  std::vector<double> harmonic, percussive;
};

/// Full inference chain: stft -> patches -> encode/decode -> assemble ->
/// Wiener refinement against the mixture magnitude -> mixture-phase inverse
/// transform. STFT geometry derives from the checkpoint config (fft_size =
/// 2 * patch height, 75% overlap).
SeparatedTrack separate_signal(const std::vector<double>& mixture, const ParamSet& ps);

enum class EvalMethod { model, ibm, irm, mixture };

const char* eval_method_name(EvalMethod m);

/// BSS_eval of one labelled track under the given method. Oracle methods use
/// the provided STFT geometry; the model method derives its own from the
/// checkpoint.
TrackMetrics evaluate_track(const Track& track, EvalMethod method, const ParamSet* ps,
                            int fft_size, int hop, int filter_len);

/// Evaluates every track (in parallel) and aggregates the medians.
MetricsTable evaluate_tracks(const std::vector<Track>& tracks, EvalMethod method,
                             const ParamSet* ps, int fft_size, int hop, int filter_len);

}  // namespace hpss
