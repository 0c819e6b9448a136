#include "hpss/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hpss/data.hpp"
#include "hpss/errors.hpp"

namespace fs = std::filesystem;

namespace hpss {

SeparatorConfig RunConfig::model_config() const {
  SeparatorConfig mc;
  mc.patch_h = fft_size / 2;
  mc.patch_w = patch_frames;
  mc.depth = depth;
  mc.branch_widths = {branch_width, branch_width, branch_width};
  mc.decoder_width = decoder_width;
  mc.disc_stages = disc_stages;
  mc.disc_widths.clear();
  for (int s = 0, w = disc_width; s < disc_stages; ++s, w *= 2) mc.disc_widths.push_back(w);
  return mc;
}

FitConfig RunConfig::fit_config() const {
  FitConfig fc;
  fc.mode = parse_train_mode(mode);
  fc.model = model_config();
  fc.weights = LossWeights{lambda_h, lambda_p, gamma_s, gamma_u};
  fc.batch_size = batch_size;
  fc.max_epochs = max_epochs;
  fc.lr = lr;
  fc.plateau_factor = plateau_factor;
  fc.plateau_patience = plateau_patience;
  fc.stop_patience = stop_patience;
  fc.val_fraction = val_fraction;
  fc.fft_size = fft_size;
  fc.hop = hop;
  fc.patch_frames = patch_frames;
  fc.max_patches_per_track = max_patches_per_track;
  fc.disc_updates_per_step = disc_updates_per_step;
  fc.seed = seed;
  return fc;
}

void RunConfig::validate() const {
  if (sample_rate != 16000) throw ConfigError("config: sample_rate must be 16000");
  if (fft_size < 8 || (fft_size & (fft_size - 1)) != 0)
    throw ConfigError("config: fft_size must be a power of two");
  if (hop <= 0 || hop > fft_size) throw ConfigError("config: hop must be in (0, fft_size]");
  if (patch_frames < 1) throw ConfigError("config: patch_frames must be >= 1");
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (duration_s < 2.0) throw ConfigError("config: duration_s must be >= 2");
  if (filter_len < 1) throw ConfigError("config: filter_len must be >= 1");
  model_config().validate();
}

void apply_desk_profile(RunConfig& cfg) {
  cfg.fft_size = 128;
  cfg.hop = 32;
  cfg.patch_frames = 64;
  cfg.depth = 2;
  cfg.branch_width = 3;
  cfg.disc_stages = 2;
  cfg.disc_width = 4;
  cfg.max_epochs = 60;
  cfg.plateau_patience = 12;
  cfg.stop_patience = 30;
  cfg.max_patches_per_track = 4;
  cfg.duration_s = 3.0;
  cfg.tracks_a = 24;
  cfg.tracks_a_test = 6;
  cfg.tracks_b = 6;
  cfg.tracks_b_test = 4;
  cfg.tracks_b_unlabelled = 12;
}

// ---- key=value serialization ----

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> config_items(const RunConfig& c) {
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("mode", c.mode);
  kv.emplace_back("corpus", c.corpus);
  kv.emplace_back("unlabelled_b", c.unlabelled_b);
  kv.emplace_back("init_checkpoint", c.init_checkpoint);
  kv.emplace_back("out_dir", c.out_dir);
  kv.emplace_back("profile", c.profile);
  kv.emplace_back("sample_rate", std::to_string(c.sample_rate));
  kv.emplace_back("fft_size", std::to_string(c.fft_size));
  kv.emplace_back("hop", std::to_string(c.hop));
  kv.emplace_back("patch_frames", std::to_string(c.patch_frames));
  kv.emplace_back("depth", std::to_string(c.depth));
  kv.emplace_back("branch_width", std::to_string(c.branch_width));
  kv.emplace_back("decoder_width", std::to_string(c.decoder_width));
  kv.emplace_back("disc_stages", std::to_string(c.disc_stages));
  kv.emplace_back("disc_width", std::to_string(c.disc_width));
  kv.emplace_back("lambda_h", fmt_double(c.lambda_h));
  kv.emplace_back("lambda_p", fmt_double(c.lambda_p));
  kv.emplace_back("gamma_s", fmt_double(c.gamma_s));
  kv.emplace_back("gamma_u", fmt_double(c.gamma_u));
  kv.emplace_back("lr", fmt_double(c.lr));
  kv.emplace_back("plateau_factor", fmt_double(c.plateau_factor));
  kv.emplace_back("plateau_patience", std::to_string(c.plateau_patience));
  kv.emplace_back("stop_patience", std::to_string(c.stop_patience));
  kv.emplace_back("val_fraction", fmt_double(c.val_fraction));
  kv.emplace_back("batch_size", std::to_string(c.batch_size));
  kv.emplace_back("max_epochs", std::to_string(c.max_epochs));
  kv.emplace_back("max_patches_per_track", std::to_string(c.max_patches_per_track));
  kv.emplace_back("disc_updates_per_step", std::to_string(c.disc_updates_per_step));
  kv.emplace_back("seed", std::to_string(c.seed));
  kv.emplace_back("duration_s", fmt_double(c.duration_s));
  kv.emplace_back("tracks_a", std::to_string(c.tracks_a));
  kv.emplace_back("tracks_a_test", std::to_string(c.tracks_a_test));
  kv.emplace_back("tracks_b", std::to_string(c.tracks_b));
  kv.emplace_back("tracks_b_test", std::to_string(c.tracks_b_test));
  kv.emplace_back("tracks_b_unlabelled", std::to_string(c.tracks_b_unlabelled));
  kv.emplace_back("filter_len", std::to_string(c.filter_len));
  return kv;
}

void set_config_item(RunConfig& c, const std::string& key, const std::string& value) {
  auto as_int = [&] { return std::stoi(value); };
  auto as_u64 = [&] { return static_cast<uint64_t>(std::stoull(value)); };
  auto as_double = [&] { return std::stod(value); };
  if (key == "mode") c.mode = value;
  else if (key == "corpus") c.corpus = value;
  else if (key == "unlabelled_b") c.unlabelled_b = value;
  else if (key == "init_checkpoint") c.init_checkpoint = value;
  else if (key == "out_dir") c.out_dir = value;
  else if (key == "profile") c.profile = value;
  else if (key == "sample_rate") c.sample_rate = as_int();
  else if (key == "fft_size") c.fft_size = as_int();
  else if (key == "hop") c.hop = as_int();
  else if (key == "patch_frames") c.patch_frames = as_int();
  else if (key == "depth") c.depth = as_int();
  else if (key == "branch_width") c.branch_width = as_int();
  else if (key == "decoder_width") c.decoder_width = as_int();
  else if (key == "disc_stages") c.disc_stages = as_int();
  else if (key == "disc_width") c.disc_width = as_int();
  else if (key == "lambda_h") c.lambda_h = as_double();
  else if (key == "lambda_p") c.lambda_p = as_double();
  else if (key == "gamma_s") c.gamma_s = as_double();
  else if (key == "gamma_u") c.gamma_u = as_double();
  else if (key == "lr") c.lr = as_double();
  else if (key == "plateau_factor") c.plateau_factor = as_double();
  else if (key == "plateau_patience") c.plateau_patience = as_int();
  else if (key == "stop_patience") c.stop_patience = as_int();
  else if (key == "val_fraction") c.val_fraction = as_double();
  else if (key == "batch_size") c.batch_size = as_int();
  else if (key == "max_epochs") c.max_epochs = as_int();
  else if (key == "max_patches_per_track") c.max_patches_per_track = as_int();
  else if (key == "disc_updates_per_step") c.disc_updates_per_step = as_int();
  else if (key == "seed") c.seed = as_u64();
  else if (key == "duration_s") c.duration_s = as_double();
  else if (key == "tracks_a") c.tracks_a = as_int();
  else if (key == "tracks_a_test") c.tracks_a_test = as_int();
  else if (key == "tracks_b") c.tracks_b = as_int();
  else if (key == "tracks_b_test") c.tracks_b_test = as_int();
  else if (key == "tracks_b_unlabelled") c.tracks_b_unlabelled = as_int();
  else if (key == "filter_len") c.filter_len = as_int();
  else throw ConfigError("config: unknown key '" + key + "'");
}

// ---- manifest ----

void write_manifest(const std::string& path, const RunConfig& cfg,
                    const std::vector<ManifestEntry>& tracks) {
  std::ofstream os(path);
  if (!os) throw DataError("manifest: cannot open " + path + " for writing");
  os << "# hpss corpus manifest v1\n[config]\n";
  for (const auto& [k, v] : config_items(cfg)) os << k << " = " << v << "\n";
  os << "[tracks]\n";
  os << "id,domain,split,seed,duration_s,labelled\n";
  char buf[512];
  for (const ManifestEntry& e : tracks) {
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%" PRIu64 ",%.17g,%d\n", e.id.c_str(),
                  e.domain.c_str(), e.split.c_str(), e.seed, e.duration_s, e.labelled ? 1 : 0);
    os << buf;
  }
}

std::pair<RunConfig, std::vector<ManifestEntry>> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("manifest: cannot open " + path);
  RunConfig cfg;
  std::vector<ManifestEntry> tracks;
  std::string line;
  enum { none, config, tracklist } section = none;
  bool header_skipped = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line == "[config]") {
      section = config;
      continue;
    }
    if (line == "[tracks]") {
      section = tracklist;
      header_skipped = false;
      continue;
    }
    if (section == config) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError("manifest: malformed config line '" + line + "'");
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t");
        const auto b = s.find_last_not_of(" \t");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      set_config_item(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } else if (section == tracklist) {
      if (!header_skipped) {
        header_skipped = true;
        continue;
      }
      std::stringstream ss(line);
      ManifestEntry e;
      std::string seed_s, dur_s, lab_s;
      if (!std::getline(ss, e.id, ',') || !std::getline(ss, e.domain, ',') ||
          !std::getline(ss, e.split, ',') || !std::getline(ss, seed_s, ',') ||
          !std::getline(ss, dur_s, ',') || !std::getline(ss, lab_s))
        throw DataError("manifest: malformed track line '" + line + "'");
      e.seed = static_cast<uint64_t>(std::stoull(seed_s));
      e.duration_s = std::stod(dur_s);
      e.labelled = lab_s == "1";
      tracks.push_back(std::move(e));
    }
  }
  return {cfg, tracks};
}

// ---- corpus synthesis ----

std::vector<ManifestEntry> synth_corpus(const RunConfig& cfg, const std::string& out_root) {
  cfg.validate();
  fs::create_directories(out_root);
  DetRng root(cfg.seed);
  std::vector<ManifestEntry> entries;

  struct Group {
    const char* corpus;
    const char* split;
    Domain domain;
    int count;
    bool labelled;
    uint64_t stream;
  };
  const Group groups[] = {
      {"domain_a", "train", Domain::A, cfg.tracks_a, true, 1},
      {"domain_a", "test", Domain::A, cfg.tracks_a_test, true, 2},
      {"domain_b", "train", Domain::B, cfg.tracks_b, true, 3},
      {"domain_b", "test", Domain::B, cfg.tracks_b_test, true, 4},
      {"domain_b", "unlabelled", Domain::B, cfg.tracks_b_unlabelled, false, 5},
  };
  for (const Group& g : groups) {
    for (int i = 0; i < g.count; ++i) {
      DetRng group_rng(root.fork(g.stream));
      const uint64_t track_seed = group_rng.fork(static_cast<uint64_t>(i));
      char id[64];
      std::snprintf(id, sizeof id, "track_%03d", i);
      Track t = synth_track(g.domain, track_seed, cfg.duration_s, id);
      if (!g.labelled) {
        t.harmonic.clear();
        t.percussive.clear();
      }
      const fs::path dir = fs::path(out_root) / g.corpus / g.split / id;
      save_track(dir.string(), t);
      ManifestEntry e;
      e.id = id;
      e.domain = domain_name(g.domain);
      e.split = g.split;
      e.seed = track_seed;
      e.duration_s = cfg.duration_s;
      e.labelled = g.labelled;
      entries.push_back(std::move(e));
    }
  }
  write_manifest((fs::path(out_root) / "manifest.txt").string(), cfg, entries);
  return entries;
}

}  // namespace hpss
