#include "hpss/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "hpss/errors.hpp"
#include "hpss/masking.hpp"

namespace hpss {

SeparatedTrack separate_signal(const std::vector<double>& mixture, const ParamSet& ps) {
  const int fft_size = 2 * ps.config.patch_h;
  const int hop = fft_size / 4;
  const int patch_frames = ps.config.patch_w;

  const ComplexSpectrogram spec = stft(mixture, fft_size, hop);
  auto [patches, rec] = extract_patches(spec, patch_frames);

  // run the separator over all patches, re-using each patch's norm factor
  std::vector<MagnitudePatch> est_h = patches, est_p = patches;
  const int F = patches[0].bins, T = patches[0].frames;
  const size_t plane = static_cast<size_t>(F) * T;
  for (size_t i = 0; i < patches.size(); i += 8) {
    const int B = static_cast<int>(std::min<size_t>(8, patches.size() - i));
    Tensor x(Shape{B, 1, F, T});
    for (int b = 0; b < B; ++b)
      std::copy(patches[i + b].v.begin(), patches[i + b].v.end(), x.v.begin() + b * plane);
    Graph g;
    const int yh = decode(g, encode(g, g.leaf(x, false), ps, false), ps, false);
    const Tensor& out = g.value(yh);
    for (int b = 0; b < B; ++b) {
      std::copy(out.v.begin() + (static_cast<size_t>(b) * 2) * plane,
                out.v.begin() + (static_cast<size_t>(b) * 2 + 1) * plane, est_h[i + b].v.begin());
      std::copy(out.v.begin() + (static_cast<size_t>(b) * 2 + 1) * plane,
                out.v.begin() + (static_cast<size_t>(b) * 2 + 2) * plane, est_p[i + b].v.begin());
    }
  }
  // zero the padding frames of the last patch so assembly stays exact
  for (auto* est : {&est_h, &est_p}) {
    MagnitudePatch& last = est->back();
    for (int t = last.frames - last.pad_frames; t < last.frames; ++t)
      for (int f = 0; f < last.bins; ++f) last.at(f, t) = 0.0f;
  }

  const MagSpectrogram mix_mag = magnitude(spec);
  const MagSpectrogram raw_h = assemble_magnitude(est_h, rec);
  const MagSpectrogram raw_p = assemble_magnitude(est_p, rec);
  auto [ref_h, ref_p] = wiener_refine(raw_h, raw_p, mix_mag);

  SeparatedTrack out;
  out.harmonic = reconstruct(ref_h, rec, spec.original_length);
  out.percussive = reconstruct(ref_p, rec, spec.original_length);
  return out;
}

const char* eval_method_name(EvalMethod m) {
  switch (m) {
    case EvalMethod::model: return "model";
    case EvalMethod::ibm: return "IBM";
    case EvalMethod::irm: return "IRM";
    case EvalMethod::mixture: return "mixture";
  }
  return "?";
}

TrackMetrics evaluate_track(const Track& track, EvalMethod method, const ParamSet* ps,
                            int fft_size, int hop, int filter_len) {
  if (!track.labelled()) throw DataError("evaluate: track " + track.id + " has no ground truth");
  std::array<std::vector<double>, 2> refs{track.harmonic, track.percussive};
  std::array<std::vector<double>, 2> ests;

  switch (method) {
    case EvalMethod::model: {
      if (!ps) throw ConfigError("evaluate: model method needs a checkpoint");
      SeparatedTrack sep = separate_signal(track.mixture, *ps);
      ests = {std::move(sep.harmonic), std::move(sep.percussive)};
      break;
    }
    case EvalMethod::mixture: {
      ests = {track.mixture, track.mixture};
      break;
    }
    case EvalMethod::ibm:
    case EvalMethod::irm: {
      const ComplexSpectrogram mix_spec = stft(track.mixture, fft_size, hop, track.sample_rate);
      const MagSpectrogram mix_mag = magnitude(mix_spec);
      const MagSpectrogram h_mag = magnitude(stft(track.harmonic, fft_size, hop, track.sample_rate));
      const MagSpectrogram p_mag = magnitude(stft(track.percussive, fft_size, hop, track.sample_rate));
      const MaskPair masks = method == EvalMethod::ibm ? ibm(h_mag, p_mag) : irm(h_mag, p_mag);
      PhaseRecord rec;
      rec.bins = mix_spec.bins;
      rec.frames = mix_spec.frames;
      rec.sample_rate = mix_spec.sample_rate;
      rec.hop = mix_spec.hop;
      rec.fft_size = mix_spec.fft_size;
      rec.original_length = mix_spec.original_length;
      rec.phase.resize(mix_spec.v.size());
      for (size_t i = 0; i < mix_spec.v.size(); ++i) rec.phase[i] = std::arg(mix_spec.v[i]);
      ests[0] = reconstruct(apply_mask(masks.h, mix_mag), rec, mix_spec.original_length);
      ests[1] = reconstruct(apply_mask(masks.p, mix_mag), rec, mix_spec.original_length);
      break;
    }
  }
  return bss_eval(refs, ests, filter_len, track.id);
}

MetricsTable evaluate_tracks(const std::vector<Track>& tracks, EvalMethod method,
                             const ParamSet* ps, int fft_size, int hop, int filter_len) {
  std::vector<TrackMetrics> per_track(tracks.size());
  const unsigned workers =
      std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                      static_cast<unsigned>(tracks.size())));
  std::exception_ptr err;
  std::vector<std::thread> pool;
  std::atomic<size_t> next{0};
  std::mutex err_mu;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (size_t i = next.fetch_add(1); i < tracks.size(); i = next.fetch_add(1)) {
        try {
          per_track[i] = evaluate_track(tracks[i], method, ps, fft_size, hop, filter_len);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
  return aggregate(std::move(per_track));
}

}  // namespace hpss
