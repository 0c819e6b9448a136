#include "hpss/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "hpss/fft.hpp"
#include "hpss/model.hpp"

namespace fs = std::filesystem;

namespace hpss {

namespace {

constexpr int kRate = 16000;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Harmonic stack with 1/k partial amplitudes; freq may vary per sample
// (vibrato), phase is the integral of the instantaneous frequency.
void add_harmonic_stack(std::vector<double>& out, size_t start, size_t len,
                        const std::vector<double>& inst_freq, const std::vector<double>& gain,
                        DetRng& rng) {
  const double f_base = *std::min_element(inst_freq.begin(), inst_freq.end());
  const int nharm = std::max(1, std::min(12, static_cast<int>(7200.0 / f_base)));
  std::vector<double> phase0(nharm);
  for (int k = 0; k < nharm; ++k) phase0[k] = rng.uniform(0.0, kTwoPi);
  double phi = 0.0;
  for (size_t i = 0; i < len && start + i < out.size(); ++i) {
    phi += kTwoPi * inst_freq[i] / kRate;
    double s = 0.0;
    for (int k = 0; k < nharm; ++k) s += std::sin((k + 1) * phi + phase0[k]) / (k + 1);
    out[start + i] += gain[i] * s;
  }
}

std::vector<double> synth_harmonic_a(double dur, DetRng& rng) {
  const size_t n = static_cast<size_t>(dur * kRate);
  std::vector<double> h(n, 0.0);
  const int ntones = 2 + static_cast<int>(rng.next_u64() % 3);  // 2..4
  for (int t = 0; t < ntones; ++t) {
    const double f0 = rng.uniform(80.0, 800.0);
    const double fe = rng.uniform(0.2, 0.8);
    const double pe = rng.uniform(0.0, kTwoPi);
    std::vector<double> freq(n, f0), gain(n);
    for (size_t i = 0; i < n; ++i)
      gain[i] = (0.55 + 0.45 * std::sin(kTwoPi * fe * i / kRate + pe)) / ntones;
    add_harmonic_stack(h, 0, n, freq, gain, rng);
  }
  return h;
}

std::vector<double> synth_percussive_a(double dur, DetRng& rng) {
  const size_t n = static_cast<size_t>(dur * kRate);
  std::vector<double> p(n, 0.0);
  const double bpm = rng.uniform(100.0, 180.0);
  const double period = 60.0 / bpm * kRate;
  for (double pos = rng.uniform(0.0, period); pos < static_cast<double>(n); pos += period) {
    const double jitter = rng.uniform(-0.1, 0.1) * period;
    const size_t start = static_cast<size_t>(std::max(0.0, pos + jitter));
    const double dur_ms = rng.uniform(5.0, 20.0);
    const size_t blen = static_cast<size_t>(dur_ms * 1e-3 * kRate);
    const double tau = static_cast<double>(blen) / 4.0;
    const double amp = rng.uniform(0.5, 1.0);
    for (size_t i = 0; i < blen && start + i < n; ++i)
      p[start + i] += amp * rng.normal() * std::exp(-static_cast<double>(i) / tau);
  }
  return p;
}

std::vector<double> synth_harmonic_b(double dur, DetRng& rng) {
  const size_t n = static_cast<size_t>(dur * kRate);
  std::vector<double> h(n, 0.0);
  const double fvib = rng.uniform(5.0, 7.0);
  const double vib_depth = rng.uniform(0.008, 0.015);
  size_t pos = 0;
  while (pos < n) {
    const size_t note_len = static_cast<size_t>(rng.uniform(0.5, 1.5) * kRate);
    const size_t len = std::min(note_len, n - pos);
    const double f0 = rng.uniform(200.0, 1000.0);
    const double pv = rng.uniform(0.0, kTwoPi);
    std::vector<double> freq(len), gain(len);
    const size_t ramp = std::min<size_t>(len / 4, static_cast<size_t>(0.05 * kRate));
    for (size_t i = 0; i < len; ++i) {
      freq[i] = f0 * (1.0 + vib_depth * std::sin(kTwoPi * fvib * i / kRate + pv));
      double g = 1.0;
      if (ramp > 0) {
        if (i < ramp) g = static_cast<double>(i) / ramp;
        if (len - 1 - i < ramp) g = std::min(g, static_cast<double>(len - 1 - i) / ramp);
      }
      gain[i] = g;
    }
    add_harmonic_stack(h, pos, len, freq, gain, rng);
    pos += len;
  }
  return h;
}

std::vector<double> synth_percussive_b(double dur, DetRng& rng) {
  const size_t n = static_cast<size_t>(dur * kRate);
  std::vector<double> p(n, 0.0);
  const double bpm = rng.uniform(90.0, 160.0);
  const double period = 60.0 / bpm * kRate;
  for (double pos = rng.uniform(0.0, period); pos < static_cast<double>(n); pos += period) {
    const double jitter = rng.uniform(-0.05, 0.05) * period;
    const size_t start = static_cast<size_t>(std::max(0.0, pos + jitter));
    const double f = rng.uniform(70.0, 150.0);
    const double tau = rng.uniform(0.02, 0.035) * kRate;
    const double amp = rng.uniform(0.6, 1.0);
    const size_t blen = static_cast<size_t>(6.0 * tau);
    const double ph = rng.uniform(0.0, kTwoPi);
    for (size_t i = 0; i < blen && start + i < n; ++i) {
      const double t = static_cast<double>(i);
      p[start + i] += amp * std::exp(-t / tau) * std::sin(kTwoPi * f * t / kRate + ph);
    }
  }
  return p;
}

double rms(const std::vector<double>& x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / std::max<size_t>(1, x.size()));
}

}  // namespace

Track synth_track(Domain domain, uint64_t seed, double duration_s, const std::string& id) {
  if (duration_s < 2.0) throw std::invalid_argument("synth_track: duration must be >= 2 s");
  DetRng rng(seed ^ (domain == Domain::A ? 0x41ull : 0x42ull) * 0x9e3779b97f4a7c15ull);

  Track t;
  t.id = id.empty() ? (std::string("synth_") + domain_name(domain) + "_" + std::to_string(seed))
                    : id;
  t.domain = domain;
  t.seed = seed;
  t.sample_rate = kRate;
  t.harmonic = domain == Domain::A ? synth_harmonic_a(duration_s, rng)
                                   : synth_harmonic_b(duration_s, rng);
  t.percussive = domain == Domain::A ? synth_percussive_a(duration_s, rng)
                                     : synth_percussive_b(duration_s, rng);

  // balance stem levels, then peak-normalize the mixture to 0.9 applying the
  // same gain to both stems
  const double rh = rms(t.harmonic), rp = rms(t.percussive);
  if (rp > 0.0) {
    const double target = rng.uniform(0.6, 1.0) * rh;
    const double g = target / rp;
    for (double& v : t.percussive) v *= g;
  }
  t.mixture.resize(t.harmonic.size());
  double peak = 0.0;
  for (size_t i = 0; i < t.mixture.size(); ++i)
    peak = std::max(peak, std::abs(t.harmonic[i] + t.percussive[i]));
  const double g = peak > 0.0 ? 0.9 / peak : 1.0;
  for (double& v : t.harmonic) v *= g;
  for (double& v : t.percussive) v *= g;
  for (size_t i = 0; i < t.mixture.size(); ++i) t.mixture[i] = t.harmonic[i] + t.percussive[i];
  return t;
}

// ---- WAV ----

namespace {

void put_u32le(std::ostream& os, uint32_t x) { os.write(reinterpret_cast<const char*>(&x), 4); }
void put_u16le(std::ostream& os, uint16_t x) { os.write(reinterpret_cast<const char*>(&x), 2); }

}  // namespace

void write_wav(const std::string& path, const std::vector<double>& samples, int sample_rate,
               WavFormat fmt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_wav: cannot open " + path);
  const uint16_t bits = fmt == WavFormat::pcm16 ? 16 : 32;
  const uint16_t tag = fmt == WavFormat::pcm16 ? 1 : 3;  // PCM / IEEE float
  const uint32_t data_bytes = static_cast<uint32_t>(samples.size() * bits / 8);

  os.write("RIFF", 4);
  put_u32le(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put_u32le(os, 16);
  put_u16le(os, tag);
  put_u16le(os, 1);  // mono
  put_u32le(os, static_cast<uint32_t>(sample_rate));
  put_u32le(os, static_cast<uint32_t>(sample_rate) * bits / 8);
  put_u16le(os, bits / 8);
  put_u16le(os, bits);
  os.write("data", 4);
  put_u32le(os, data_bytes);

  if (fmt == WavFormat::pcm16) {
    for (double v : samples) {
      const double c = std::clamp(v, -1.0, 1.0);
      const int16_t q = static_cast<int16_t>(std::lround(c * 32767.0));
      os.write(reinterpret_cast<const char*>(&q), 2);
    }
  } else {
    for (double v : samples) {
      const float f = static_cast<float>(v);
      os.write(reinterpret_cast<const char*>(&f), 4);
    }
  }
  if (!os) throw std::runtime_error("write_wav: write failed for " + path);
}

std::pair<std::vector<double>, int> load_wav_raw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_wav: cannot open " + path);
  char tag[4];
  uint32_t riff_size = 0;
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "RIFF", 4) != 0)
    throw std::runtime_error("load_wav: " + path + " is not a RIFF file");
  is.read(reinterpret_cast<char*>(&riff_size), 4);
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "WAVE", 4) != 0)
    throw std::runtime_error("load_wav: " + path + " is not a WAVE file");

  uint16_t fmt_tag = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  bool have_fmt = false;
  std::vector<char> data;
  while (is.read(tag, 4)) {
    uint32_t chunk = 0;
    is.read(reinterpret_cast<char*>(&chunk), 4);
    if (!is) break;
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      std::vector<char> buf(chunk);
      is.read(buf.data(), chunk);
      if (chunk < 16) throw std::runtime_error("load_wav: corrupt fmt chunk in " + path);
      std::memcpy(&fmt_tag, buf.data(), 2);
      std::memcpy(&channels, buf.data() + 2, 2);
      std::memcpy(&rate, buf.data() + 4, 4);
      std::memcpy(&bits, buf.data() + 14, 2);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data.resize(chunk);
      is.read(data.data(), chunk);
      break;
    } else {
      is.seekg(chunk + (chunk & 1), std::ios::cur);
    }
  }
  if (!have_fmt || data.empty())
    throw std::runtime_error("load_wav: missing fmt/data chunk in " + path);
  if (channels < 1 || channels > 2)
    throw std::runtime_error("load_wav: unsupported channel count in " + path);

  std::vector<double> mono;
  if (fmt_tag == 1 && bits == 16) {
    const size_t nsamp = data.size() / 2 / channels;
    mono.resize(nsamp);
    const int16_t* q = reinterpret_cast<const int16_t*>(data.data());
    for (size_t i = 0; i < nsamp; ++i) {
      double acc = 0.0;
      for (int c = 0; c < channels; ++c) acc += static_cast<double>(q[i * channels + c]) / 32767.0;
      mono[i] = acc / channels;
    }
  } else if (fmt_tag == 3 && bits == 32) {
    const size_t nsamp = data.size() / 4 / channels;
    mono.resize(nsamp);
    const float* f = reinterpret_cast<const float*>(data.data());
    for (size_t i = 0; i < nsamp; ++i) {
      double acc = 0.0;
      for (int c = 0; c < channels; ++c) acc += static_cast<double>(f[i * channels + c]);
      mono[i] = acc / channels;
    }
  } else {
    throw std::runtime_error("load_wav: unsupported encoding (fmt " + std::to_string(fmt_tag) +
                             ", " + std::to_string(bits) + " bit) in " + path);
  }
  for (double& v : mono) v = std::clamp(v, -1.0, 1.0);
  return {std::move(mono), static_cast<int>(rate)};
}

std::vector<double> load_wav(const std::string& path) {
  auto [mono, rate] = load_wav_raw(path);
  if (rate == kRate) return mono;
  if (rate <= 0) throw std::runtime_error("load_wav: bad sample rate in " + path);
  // linear-interpolation resample to 16 kHz
  const double ratio = static_cast<double>(rate) / kRate;
  const size_t out_len = static_cast<size_t>(static_cast<double>(mono.size()) / ratio);
  std::vector<double> out(out_len);
  for (size_t i = 0; i < out_len; ++i) {
    const double src = static_cast<double>(i) * ratio;
    const size_t i0 = static_cast<size_t>(src);
    const size_t i1 = std::min(i0 + 1, mono.size() - 1);
    const double frac = src - static_cast<double>(i0);
    out[i] = mono[i0] * (1.0 - frac) + mono[i1] * frac;
  }
  return out;
}

// ---- patches and batches ----

std::vector<PatchTriple> track_patches(const Track& track, int fft_size, int hop,
                                       int patch_frames) {
  auto [mix_patches, rec] = extract_patches(stft(track.mixture, fft_size, hop, track.sample_rate),
                                            patch_frames, track.id);
  std::vector<PatchTriple> out(mix_patches.size());
  MagSpectrogram hm, pm;
  if (track.labelled()) {
    hm = magnitude(stft(track.harmonic, fft_size, hop, track.sample_rate));
    pm = magnitude(stft(track.percussive, fft_size, hop, track.sample_rate));
  }
  for (size_t i = 0; i < mix_patches.size(); ++i) {
    out[i].mix = std::move(mix_patches[i]);
    if (!track.labelled()) continue;
    const MagnitudePatch& mp = out[i].mix;
    for (MagnitudePatch* tgt : {&out[i].h, &out[i].p}) {
      tgt->bins = mp.bins;
      tgt->frames = mp.frames;
      tgt->norm_factor = mp.norm_factor;  // one gain per patch triple
      tgt->track_id = mp.track_id;
      tgt->frame_offset = mp.frame_offset;
      tgt->pad_frames = mp.pad_frames;
      tgt->v.assign(mp.v.size(), 0.0f);
    }
    const int nt = mp.frames - mp.pad_frames;
    for (int t = 0; t < nt; ++t)
      for (int f = 0; f < mp.bins; ++f) {
        out[i].h.at(f, t) =
            static_cast<float>(hm.at(mp.frame_offset + t, f) / mp.norm_factor);
        out[i].p.at(f, t) =
            static_cast<float>(pm.at(mp.frame_offset + t, f) / mp.norm_factor);
      }
    out[i].has_targets = true;
  }
  return out;
}

Batch make_batch(const std::vector<const PatchTriple*>& items) {
  if (items.empty()) throw std::invalid_argument("make_batch: empty batch");
  const int B = static_cast<int>(items.size());
  const int F = items[0]->mix.bins, T = items[0]->mix.frames;
  Batch b;
  b.size = B;
  b.has_targets = items[0]->has_targets;
  b.x = Tensor(Shape{B, 1, F, T});
  if (b.has_targets) b.y = Tensor(Shape{B, 2, F, T});
  for (int i = 0; i < B; ++i) {
    const PatchTriple& pt = *items[i];
    std::copy(pt.mix.v.begin(), pt.mix.v.end(),
              b.x.v.begin() + static_cast<size_t>(i) * F * T);
    if (b.has_targets) {
      std::copy(pt.h.v.begin(), pt.h.v.end(),
                b.y.v.begin() + (static_cast<size_t>(i) * 2) * F * T);
      std::copy(pt.p.v.begin(), pt.p.v.end(),
                b.y.v.begin() + (static_cast<size_t>(i) * 2 + 1) * F * T);
    }
  }
  return b;
}

BatchStream::BatchStream(std::vector<PatchTriple> patches, int batch_size, uint64_t seed)
    : patches_(std::move(patches)), batch_size_(batch_size), seed_(seed) {
  if (batch_size_ < 1) throw std::invalid_argument("BatchStream: batch_size must be >= 1");
  if (patches_.empty()) throw std::invalid_argument("BatchStream: no patches");
}

int BatchStream::batches_per_epoch() const {
  return static_cast<int>((patches_.size() + batch_size_ - 1) / batch_size_);
}

static std::vector<int> seeded_permutation(size_t n, uint64_t seed) {
  std::vector<int> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  DetRng rng(seed);
  for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.next_u64() % i]);
  return order;
}

std::vector<Batch> BatchStream::epoch(int e) const {
  DetRng base(seed_);
  const std::vector<int> order = seeded_permutation(patches_.size(), base.fork(e));
  std::vector<Batch> out;
  for (size_t i = 0; i < order.size(); i += batch_size_) {
    std::vector<const PatchTriple*> items;
    for (size_t j = i; j < std::min(order.size(), i + batch_size_); ++j)
      items.push_back(&patches_[order[j]]);
    out.push_back(make_batch(items));
  }
  return out;
}

Tensor BatchStream::next_mixtures(int n) {
  const int F = patches_[0].mix.bins, T = patches_[0].mix.frames;
  Tensor x(Shape{n, 1, F, T});
  for (int i = 0; i < n; ++i) {
    if (cycle_pos_ >= cycle_order_.size()) {
      DetRng base(seed_ ^ 0x5cull);
      cycle_order_ = seeded_permutation(patches_.size(), base.fork(cycle_epoch_++));
      cycle_pos_ = 0;
    }
    const MagnitudePatch& mp = patches_[cycle_order_[cycle_pos_++]].mix;
    std::copy(mp.v.begin(), mp.v.end(), x.v.begin() + static_cast<size_t>(i) * F * T);
  }
  return x;
}

std::vector<Batch> make_batches(const std::vector<Track>& tracks, int fft_size, int hop,
                                int patch_frames, int batch_size, uint64_t seed) {
  if (tracks.empty()) throw std::invalid_argument("make_batches: no tracks");
  std::vector<PatchTriple> pool;
  for (const Track& t : tracks)
    for (auto& pt : track_patches(t, fft_size, hop, patch_frames)) pool.push_back(std::move(pt));
  BatchStream stream(std::move(pool), batch_size, seed);
  return stream.epoch(0);
}

DatasetSplit split_tracks(std::vector<Track> tracks, double fraction, uint64_t seed) {
  if (tracks.size() < 2) throw std::invalid_argument("split: need at least 2 tracks");
  const size_t n_val =
      std::max<size_t>(1, static_cast<size_t>(fraction * static_cast<double>(tracks.size())));
  const std::vector<int> order = seeded_permutation(tracks.size(), seed);
  DatasetSplit out;
  out.seed = seed;
  for (size_t i = 0; i < tracks.size(); ++i) {
    if (i < n_val)
      out.validation.push_back(std::move(tracks[order[i]]));
    else
      out.train.push_back(std::move(tracks[order[i]]));
  }
  return out;
}

// ---- corpus on disk ----

void save_track(const std::string& track_dir, const Track& track) {
  fs::create_directories(track_dir);
  write_wav(track_dir + "/mixture.wav", track.mixture, track.sample_rate);
  if (track.labelled()) {
    write_wav(track_dir + "/harmonic.wav", track.harmonic, track.sample_rate);
    write_wav(track_dir + "/percussive.wav", track.percussive, track.sample_rate);
  }
}

Track load_track(const std::string& track_dir, Domain domain, uint64_t seed) {
  Track t;
  t.id = fs::path(track_dir).filename().string();
  t.domain = domain;
  t.seed = seed;
  t.mixture = load_wav(track_dir + "/mixture.wav");
  if (fs::exists(track_dir + "/harmonic.wav") && fs::exists(track_dir + "/percussive.wav")) {
    t.harmonic = load_wav(track_dir + "/harmonic.wav");
    t.percussive = load_wav(track_dir + "/percussive.wav");
  }
  return t;
}

std::vector<Track> load_corpus_split(const std::string& root, const std::string& corpus,
                                     const std::string& split, Domain domain) {
  const fs::path dir = fs::path(root) / corpus / split;
  if (!fs::is_directory(dir))
    throw std::runtime_error("corpus: missing directory " + dir.string());
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) names.push_back(e.path().string());
  std::sort(names.begin(), names.end());
  std::vector<Track> out;
  for (const auto& n : names) out.push_back(load_track(n, domain));
  if (out.empty()) throw std::runtime_error("corpus: no tracks under " + dir.string());
  return out;
}

double spectral_centroid_hz(const std::vector<double>& signal, int sample_rate) {
  size_t n = 1;
  while (n < signal.size()) n <<= 1;
  std::vector<double> padded(n, 0.0);
  std::copy(signal.begin(), signal.end(), padded.begin());
  auto half = rfft(padded);
  double num = 0.0, den = 0.0;
  for (size_t k = 0; k < half.size(); ++k) {
    const double e = std::norm(half[k]);
    num += e * static_cast<double>(k) * sample_rate / static_cast<double>(n);
    den += e;
  }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace hpss
