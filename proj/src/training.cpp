#include "hpss/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "hpss/errors.hpp"

namespace hpss {

double loss_supervised(const Tensor& est, const Tensor& target, const LossWeights& w) {
  Graph g;
  const int e = g.leaf(est, false);
  const int t = g.leaf(target, false);
  return g.value(g.weighted_mse_pair(e, t, w.lambda_h, w.lambda_p)).v[0];
}

double loss_domain(const std::vector<double>& probs_b, const std::vector<double>& probs_a) {
  if (probs_b.empty() || probs_a.empty())
    throw std::invalid_argument("loss_domain: empty half-batch");
  for (const auto* v : {&probs_b, &probs_a})
    for (double p : *v)
      if (!(p >= 0.0 && p <= 1.0))
        throw std::invalid_argument("loss_domain: probability out of [0,1]");
  Graph g;
  Tensor tb(Shape{static_cast<int>(probs_b.size())}), ta(Shape{static_cast<int>(probs_a.size())});
  for (size_t i = 0; i < probs_b.size(); ++i) tb.v[i] = static_cast<float>(probs_b[i]);
  for (size_t i = 0; i < probs_a.size(); ++i) ta.v[i] = static_cast<float>(probs_a[i]);
  return g.value(g.bce_domain(g.leaf(tb, false), g.leaf(ta, false))).v[0];
}

double encoder_objective(double ls, double lu, const LossWeights& w) {
  if (!std::isfinite(ls) || !std::isfinite(lu))
    throw std::invalid_argument("encoder_objective: non-finite loss value");
  return w.gamma_s * ls - w.gamma_u * lu;
}

void adam_update(NamedTensors& params, const NamedGrads& grads, AdamState& st, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  st.step += 1;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw std::logic_error("adam_update: unknown parameter " + name);
    Tensor& p = it->second;
    if (g.shape != p.shape)
      throw std::invalid_argument("adam_update: gradient shape " + g.shape.str() +
                                  " does not match parameter " + name + " " + p.shape.str());
    for (float x : g.v)
      if (!std::isfinite(x))
        throw NumericalError("adam_update: non-finite gradient for " + name);
    auto& [m, v] = st.moments[name];
    if (m.numel() == 0) {
      m = Tensor(p.shape);
      v = Tensor(p.shape);
    }
    for (size_t i = 0; i < p.v.size(); ++i) {
      const double gi = g.v[i];
      const double mi = b1 * m.v[i] + (1.0 - b1) * gi;
      const double vi = b2 * v.v[i] + (1.0 - b2) * gi * gi;
      m.v[i] = static_cast<float>(mi);
      v.v[i] = static_cast<float>(vi);
      p.v[i] = static_cast<float>(p.v[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
    }
  }
}

bool lr_on_plateau(OptimState& st, double val_loss) {
  if (val_loss < st.best_val - st.improve_eps) {
    st.best_val = val_loss;
    st.plateau_counter = 0;
    st.stop_counter = 0;
    return false;
  }
  ++st.plateau_counter;
  ++st.stop_counter;
  if (st.plateau_counter >= st.plateau_patience) {
    st.lr *= st.plateau_factor;
    st.plateau_counter = 0;
  }
  return st.stop_counter >= st.stop_patience;
}

void write_history_csv(const std::string& path, const TrainHistory& h) {
  std::ofstream os(path);
  if (!os) throw DataError("history: cannot open " + path + " for writing");
  os << "epoch,L_S_train,L_S_val,L_U,disc_accuracy,lr\n";
  char buf[256];
  for (const EpochRecord& r : h.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.epoch, r.ls_train,
                  r.ls_val, r.lu, r.disc_accuracy, r.lr);
    os << buf;
  }
}

const char* train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::source_only: return "source_only";
    case TrainMode::target_only: return "target_only";
    case TrainMode::joint: return "joint";
    case TrainMode::fine_tune: return "fine_tune";
    case TrainMode::uda: return "uda";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& s) {
  for (TrainMode m : {TrainMode::source_only, TrainMode::target_only, TrainMode::joint,
                      TrainMode::fine_tune, TrainMode::uda})
    if (s == train_mode_name(m)) return m;
  throw ConfigError("unknown training mode '" + s + "'");
}

namespace {

NamedGrads gather_grads(const Graph& g, const LeafBindings& bind, const char* prefix) {
  NamedGrads out;
  for (const auto& [name, id] : bind.ids) {
    if (name.rfind(prefix, 0) != 0) continue;
    if (!g.node(id).requires_grad) continue;
    out[name] = g.grad(id);
  }
  return out;
}

// out = sa * a + sb * b, evaluated in double per element
NamedGrads combine_grads(const NamedGrads& a, double sa, const NamedGrads& b, double sb) {
  NamedGrads out = a;
  for (auto& [name, t] : out) {
    const Tensor& tb = b.at(name);
    for (size_t i = 0; i < t.v.size(); ++i)
      t.v[i] = static_cast<float>(sa * static_cast<double>(t.v[i]) +
                                  sb * static_cast<double>(tb.v[i]));
  }
  return out;
}

std::vector<double> probs_of(const Tensor& t) {
  std::vector<double> out(t.v.size());
  for (size_t i = 0; i < t.v.size(); ++i) out[i] = static_cast<double>(t.v[i]);
  return out;
}

// One supervised update of theta_E and theta_D on a labelled batch.
double supervised_step(const Batch& batch, ParamSet& params, OptimState& state,
                       const LossWeights& w) {
  Graph g;
  LeafBindings bind;
  const int x = g.leaf(batch.x, false);
  const int y = g.leaf(batch.y, false);
  const int z = encode(g, x, params, true, &bind);
  const int yh = decode(g, z, params, true, &bind);
  const int ls = g.weighted_mse_pair(yh, y, w.lambda_h, w.lambda_p);
  g.backward(ls);
  adam_update(params.enc, gather_grads(g, bind, "enc."), state.enc, state.lr);
  adam_update(params.dec, gather_grads(g, bind, "dec."), state.dec, state.lr);
  return g.value(ls).v[0];
}

double eval_supervised_loss(const std::vector<PatchTriple>& pool, const ParamSet& params,
                            const LossWeights& w, int batch_size) {
  double total = 0.0;
  long count = 0;
  for (size_t i = 0; i < pool.size(); i += batch_size) {
    std::vector<const PatchTriple*> items;
    for (size_t j = i; j < std::min(pool.size(), i + batch_size); ++j) items.push_back(&pool[j]);
    Batch b = make_batch(items);
    Graph g;
    const int x = g.leaf(b.x, false);
    const int y = g.leaf(b.y, false);
    const int yh = decode(g, encode(g, x, params, false), params, false);
    const double ls = g.value(g.weighted_mse_pair(yh, y, w.lambda_h, w.lambda_p)).v[0];
    total += ls * b.size;
    count += b.size;
  }
  return total / static_cast<double>(count);
}

}  // namespace

StepRecord train_step_uda(const Batch& labelled_a, BatchStream& mix_a, BatchStream& mix_b,
                          ParamSet& params, OptimState& state, const LossWeights& w,
                          int disc_updates, int half_batch, const StepHooks* hooks) {
  if (!labelled_a.has_targets)
    throw std::invalid_argument("train_step_uda: labelled batch has no targets");
  StepRecord rec;

  // phase i: discriminator updates against the frozen encoder
  long correct = 0, seen = 0;
  for (int u = 0; u < disc_updates; ++u) {
    const Tensor xa = mix_a.next_mixtures(half_batch);
    const Tensor xb = mix_b.next_mixtures(half_batch);
    Graph g;
    LeafBindings bind;
    const int za = encode(g, g.leaf(xa, false), params, false, &bind);
    const int zb = encode(g, g.leaf(xb, false), params, false, &bind);
    const int pa = discriminate(g, za, params, true, &bind);
    const int pb = discriminate(g, zb, params, true, &bind);
    const int lu = g.bce_domain(pb, pa);
    g.backward(lu);
    adam_update(params.disc, gather_grads(g, bind, "disc."), state.disc, state.lr);
    for (double p : probs_of(g.value(pa)))
      correct += p <= 0.5, ++seen;
    for (double p : probs_of(g.value(pb)))
      correct += p > 0.5, ++seen;
    ++rec.disc_updates;
    if (hooks && hooks->after_disc_update) hooks->after_disc_update(u);
  }
  rec.disc_accuracy = static_cast<double>(correct) / static_cast<double>(seen);

  // phase ii: one joint theta_D / theta_E update with theta_C frozen
  Graph g;
  LeafBindings bind;
  const int x = g.leaf(labelled_a.x, false);
  const int y = g.leaf(labelled_a.y, false);
  const int z = encode(g, x, params, true, &bind);
  const int yh = decode(g, z, params, true, &bind);
  const int ls = g.weighted_mse_pair(yh, y, w.lambda_h, w.lambda_p);

  const Tensor xa = mix_a.next_mixtures(half_batch);
  const Tensor xb = mix_b.next_mixtures(half_batch);
  const int za = encode(g, g.leaf(xa, false), params, true, &bind);
  const int zb = encode(g, g.leaf(xb, false), params, true, &bind);
  const int pa = discriminate(g, za, params, false, &bind);
  const int pb = discriminate(g, zb, params, false, &bind);
  const int lu = g.bce_domain(pb, pa);

  g.backward(ls);
  NamedGrads ge_s = gather_grads(g, bind, "enc.");
  NamedGrads gd = gather_grads(g, bind, "dec.");
  g.backward(lu);
  NamedGrads ge_u = gather_grads(g, bind, "enc.");

  adam_update(params.enc, combine_grads(ge_s, w.gamma_s, ge_u, -w.gamma_u), state.enc, state.lr);
  adam_update(params.dec, gd, state.dec, state.lr);
  ++rec.main_updates;
  rec.ls = g.value(ls).v[0];
  rec.lu = g.value(lu).v[0];
  if (hooks && hooks->after_main_update) hooks->after_main_update();
  return rec;
}

namespace {

std::vector<PatchTriple> patch_pool(const std::vector<Track>& tracks, const FitConfig& cfg,
                                    uint64_t subsample_seed) {
  std::vector<PatchTriple> pool;
  int tindex = 0;
  for (const Track& t : tracks) {
    auto patches = track_patches(t, cfg.fft_size, cfg.hop, cfg.patch_frames);
    if (cfg.max_patches_per_track > 0 &&
        static_cast<int>(patches.size()) > cfg.max_patches_per_track) {
      DetRng rng(subsample_seed ^ (0x7165ull * (tindex + 1)));
      std::vector<int> order(patches.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.next_u64() % i]);
      order.resize(cfg.max_patches_per_track);
      std::sort(order.begin(), order.end());
      std::vector<PatchTriple> kept;
      for (int i : order) kept.push_back(std::move(patches[i]));
      patches = std::move(kept);
    }
    for (auto& p : patches) pool.push_back(std::move(p));
    ++tindex;
  }
  return pool;
}

}  // namespace

FitResult fit(const FitInputs& data, const FitConfig& cfg) {
  cfg.model.validate();
  if (cfg.fft_size != 2 * cfg.model.patch_h)
    throw ConfigError("fit: fft_size must equal 2 * patch height (fft " +
                      std::to_string(cfg.fft_size) + ", patch height " +
                      std::to_string(cfg.model.patch_h) + ")");
  if (cfg.patch_frames != cfg.model.patch_w)
    throw ConfigError("fit: patch_frames must equal the model patch width");
  if (cfg.batch_size < 1) throw ConfigError("fit: batch_size must be >= 1");
  const bool needs_a = cfg.mode == TrainMode::source_only || cfg.mode == TrainMode::joint ||
                       cfg.mode == TrainMode::uda;
  const bool needs_b = cfg.mode == TrainMode::target_only || cfg.mode == TrainMode::joint ||
                       cfg.mode == TrainMode::fine_tune;
  if (needs_a && data.labelled_a.size() < 2)
    throw DataError("fit: mode " + std::string(train_mode_name(cfg.mode)) +
                    " needs at least 2 labelled domain-A tracks");
  if (needs_b && data.labelled_b.size() < 2)
    throw DataError("fit: mode " + std::string(train_mode_name(cfg.mode)) +
                    " needs at least 2 labelled domain-B tracks");
  if (cfg.mode == TrainMode::uda && data.unlabelled_b.empty())
    throw DataError("fit: uda mode needs unlabelled domain-B mixtures");
  if (cfg.mode == TrainMode::fine_tune && !data.init.has_value())
    throw DataError("fit: fine_tune needs an initial checkpoint");
  if ((cfg.mode == TrainMode::uda || cfg.mode == TrainMode::joint) && cfg.batch_size < 2)
    throw ConfigError("fit: uda/joint modes need batch_size >= 2");

  DetRng root(cfg.seed);
  const uint64_t s_split_a = root.fork(1), s_split_b = root.fork(2), s_init = root.fork(3);
  const uint64_t s_batch_a = root.fork(4), s_batch_b = root.fork(5);
  const uint64_t s_mix_a = root.fork(6), s_mix_b = root.fork(7), s_sub = root.fork(8);

  ParamSet params;
  if (cfg.mode == TrainMode::fine_tune) {
    params = *data.init;
    if (!(params.config == cfg.model))
      throw ConfigError("fit: checkpoint model config does not match the run config");
  } else {
    params = init_params(cfg.model, s_init);
  }

  std::vector<PatchTriple> train_a, val_a, train_b, val_b;
  if (needs_a) {
    DatasetSplit sp = split_tracks(data.labelled_a, cfg.val_fraction, s_split_a);
    train_a = patch_pool(sp.train, cfg, s_sub);
    val_a = patch_pool(sp.validation, cfg, s_sub ^ 0xffull);
  }
  if (needs_b) {
    DatasetSplit sp = split_tracks(data.labelled_b, cfg.val_fraction, s_split_b);
    train_b = patch_pool(sp.train, cfg, s_sub ^ 0x2ull);
    val_b = patch_pool(sp.validation, cfg, s_sub ^ 0x3ull);
  }

  std::optional<BatchStream> stream_a, stream_b, mix_a, mix_b;
  if (!train_a.empty()) stream_a.emplace(train_a, cfg.batch_size, s_batch_a);
  if (!train_b.empty()) stream_b.emplace(train_b, cfg.batch_size, s_batch_b);
  if (cfg.mode == TrainMode::uda) {
    mix_a.emplace(train_a, cfg.batch_size, s_mix_a);
    std::vector<PatchTriple> unlab;
    for (const Track& t : data.unlabelled_b)
      for (auto& p : track_patches(t, cfg.fft_size, cfg.hop, cfg.patch_frames))
        unlab.push_back(std::move(p));
    mix_b.emplace(std::move(unlab), cfg.batch_size, s_mix_b);
  }

  OptimState state;
  state.lr = cfg.lr;
  state.plateau_factor = cfg.plateau_factor;
  state.plateau_patience = cfg.plateau_patience;
  state.stop_patience = cfg.stop_patience;

  FitResult result;
  result.final = params;
  double best_val = std::numeric_limits<double>::infinity();

  const int half = cfg.batch_size / 2;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double epoch_lr = state.lr;
    double ls_sum = 0.0, lu_sum = 0.0, acc_sum = 0.0;
    long ls_n = 0;
    int steps = 0;

    switch (cfg.mode) {
      case TrainMode::source_only:
      case TrainMode::target_only:
      case TrainMode::fine_tune: {
        BatchStream& stream = cfg.mode == TrainMode::source_only ? *stream_a : *stream_b;
        for (const Batch& b : stream.epoch(epoch)) {
          const double ls = supervised_step(b, params, state, cfg.weights);
          ls_sum += ls * b.size;
          ls_n += b.size;
          ++steps;
        }
        break;
      }
      case TrainMode::joint: {
        // both domains in every batch: half from each pool, cycling
        DetRng ra(s_batch_a), rb(s_batch_b);
        DetRng pa_rng(ra.fork(epoch)), pb_rng(rb.fork(epoch));
        std::vector<int> pa(train_a.size()), pb(train_b.size());
        for (size_t i = 0; i < pa.size(); ++i) pa[i] = static_cast<int>(i);
        for (size_t i = 0; i < pb.size(); ++i) pb[i] = static_cast<int>(i);
        for (size_t i = pa.size(); i > 1; --i)
          std::swap(pa[i - 1], pa[pa_rng.next_u64() % i]);
        for (size_t i = pb.size(); i > 1; --i)
          std::swap(pb[i - 1], pb[pb_rng.next_u64() % i]);
        const size_t longest = std::max(train_a.size(), train_b.size());
        const int nbatch = static_cast<int>((longest + half - 1) / half);
        for (int k = 0; k < nbatch; ++k) {
          std::vector<const PatchTriple*> items;
          for (int j = 0; j < half; ++j)
            items.push_back(&train_a[pa[(static_cast<size_t>(k) * half + j) % pa.size()]]);
          for (int j = 0; j < half; ++j)
            items.push_back(&train_b[pb[(static_cast<size_t>(k) * half + j) % pb.size()]]);
          Batch b = make_batch(items);
          const double ls = supervised_step(b, params, state, cfg.weights);
          ls_sum += ls * b.size;
          ls_n += b.size;
          ++steps;
        }
        break;
      }
      case TrainMode::uda: {
        for (const Batch& b : stream_a->epoch(epoch)) {
          StepRecord rec = train_step_uda(b, *mix_a, *mix_b, params, state, cfg.weights,
                                          cfg.disc_updates_per_step, half);
          ls_sum += rec.ls * b.size;
          ls_n += b.size;
          lu_sum += rec.lu;
          acc_sum += rec.disc_accuracy;
          ++steps;
        }
        break;
      }
    }

    // validate on the supervised split(s)
    double val_sum = 0.0;
    long val_n = 0;
    if (!val_a.empty() && (cfg.mode == TrainMode::source_only || cfg.mode == TrainMode::joint ||
                           cfg.mode == TrainMode::uda)) {
      val_sum += eval_supervised_loss(val_a, params, cfg.weights, cfg.batch_size) *
                 static_cast<double>(val_a.size());
      val_n += static_cast<long>(val_a.size());
    }
    if (!val_b.empty() && (cfg.mode == TrainMode::target_only || cfg.mode == TrainMode::joint ||
                           cfg.mode == TrainMode::fine_tune)) {
      val_sum += eval_supervised_loss(val_b, params, cfg.weights, cfg.batch_size) *
                 static_cast<double>(val_b.size());
      val_n += static_cast<long>(val_b.size());
    }
    const double ls_val = val_sum / static_cast<double>(val_n);

    EpochRecord r;
    r.epoch = epoch;
    r.ls_train = ls_sum / static_cast<double>(ls_n);
    r.ls_val = ls_val;
    r.lu = cfg.mode == TrainMode::uda ? lu_sum / steps : 0.0;
    r.disc_accuracy = cfg.mode == TrainMode::uda ? acc_sum / steps : 0.5;
    r.lr = epoch_lr;
    r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back(r);

    if (ls_val < best_val) {
      best_val = ls_val;
      result.best = params;
      result.best_epoch = epoch;
    }
    if (lr_on_plateau(state, ls_val)) break;
  }

  result.final = params;
  if (result.best_epoch < 0) {
    result.best = result.final;
    result.best_epoch = static_cast<int>(result.history.epochs.size()) - 1;
  }
  return result;
}

ParamSet train_discriminator_frozen_encoder(const ParamSet& base, BatchStream& mix_a,
                                            BatchStream& mix_b, int steps, double lr,
                                            uint64_t seed) {
  ParamSet ps = base;
  ParamSet fresh = init_params(base.config, seed);
  ps.disc = std::move(fresh.disc);
  AdamState st;
  const int half = 4;
  for (int s = 0; s < steps; ++s) {
    const Tensor xa = mix_a.next_mixtures(half);
    const Tensor xb = mix_b.next_mixtures(half);
    Graph g;
    LeafBindings bind;
    const int za = encode(g, g.leaf(xa, false), ps, false, &bind);
    const int zb = encode(g, g.leaf(xb, false), ps, false, &bind);
    const int pa = discriminate(g, za, ps, true, &bind);
    const int pb = discriminate(g, zb, ps, true, &bind);
    const int lu = g.bce_domain(pb, pa);
    g.backward(lu);
    adam_update(ps.disc, gather_grads(g, bind, "disc."), st, lr);
  }
  return ps;
}

double discriminator_accuracy(const ParamSet& ps, const std::vector<PatchTriple>& pool_a,
                              const std::vector<PatchTriple>& pool_b) {
  auto pool_acc = [&](const std::vector<PatchTriple>& pool, bool is_b) {
    long correct = 0;
    for (size_t i = 0; i < pool.size(); i += 8) {
      std::vector<const PatchTriple*> items;
      for (size_t j = i; j < std::min(pool.size(), i + 8); ++j) items.push_back(&pool[j]);
      Batch b = make_batch(items);
      Graph g;
      const int p = discriminate(g, encode(g, g.leaf(b.x, false), ps, false), ps, false);
      for (double prob : probs_of(g.value(p))) correct += is_b ? prob > 0.5 : prob <= 0.5;
    }
    return static_cast<double>(correct) / static_cast<double>(pool.size());
  };
  return 0.5 * (pool_acc(pool_a, false) + pool_acc(pool_b, true));
}

}  // namespace hpss
