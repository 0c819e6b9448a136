#include "hpss/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hpss {

namespace {

constexpr double kDbCap = 100.0;

double db_ratio(double num, double den) {
  if (num <= 0.0) return -kDbCap;
  if (den <= 0.0 || den < num * 1e-20) return kDbCap;
  return std::clamp(10.0 * std::log10(num / den), -kDbCap, kDbCap);
}

double energy(const std::vector<double>& x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc;
}

// Cholesky solve of the SPD system G a = b, with a tiny diagonal jitter
// retry for near-singular Grams.
std::vector<double> solve_spd(std::vector<double> g, std::vector<double> b) {
  const size_t n = b.size();
  double maxdiag = 0.0;
  for (size_t i = 0; i < n; ++i) maxdiag = std::max(maxdiag, g[i * n + i]);
  for (int attempt = 0; attempt < 4; ++attempt) {
    std::vector<double> l = g;
    const double jitter = attempt == 0 ? 0.0 : maxdiag * std::pow(10.0, attempt - 13);
    bool ok = true;
    for (size_t i = 0; i < n && ok; ++i) l[i * n + i] += jitter;
    for (size_t i = 0; i < n && ok; ++i) {
      for (size_t j = 0; j <= i; ++j) {
        double s = l[i * n + j];
        for (size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
        if (i == j) {
          if (s <= 0.0) {
            ok = false;
            break;
          }
          l[i * n + i] = std::sqrt(s);
        } else {
          l[i * n + j] = s / l[j * n + j];
        }
      }
    }
    if (!ok) continue;
    std::vector<double> y(n), a(n);
    for (size_t i = 0; i < n; ++i) {
      double s = b[i];
      for (size_t k = 0; k < i; ++k) s -= l[i * n + k] * y[k];
      y[i] = s / l[i * n + i];
    }
    for (size_t ii = n; ii-- > 0;) {
      double s = y[ii];
      for (size_t k = ii + 1; k < n; ++k) s -= l[k * n + ii] * a[k];
      a[ii] = s / l[ii * n + ii];
    }
    return a;
  }
  throw std::runtime_error("bss_eval: projection Gram matrix is singular");
}

// rho(d) = sum_u a[u] * b[u + d], d in [-(L-1), L-1]
std::vector<double> corr_lags(const std::vector<double>& a, const std::vector<double>& b, int L) {
  std::vector<double> rho(2 * L - 1, 0.0);
  const long n = static_cast<long>(a.size());
  for (int d = -(L - 1); d <= L - 1; ++d) {
    double acc = 0.0;
    const long lo = std::max<long>(0, -d);
    const long hi = std::min<long>(n, n - d);
    for (long u = lo; u < hi; ++u) acc += a[u] * b[u + d];
    rho[d + L - 1] = acc;
  }
  return rho;
}

// Filtered synthesis: out[t] += sum_tau coeff[tau] * s[t - tau]
void add_filtered(std::vector<double>& out, const std::vector<double>& s, const double* coeff,
                  int L) {
  const long n = static_cast<long>(s.size());
  for (int tau = 0; tau < L; ++tau) {
    const double c = coeff[tau];
    if (c == 0.0) continue;
    for (long t = 0; t < n; ++t) out[t + tau] += c * s[t];
  }
}

}  // namespace

TrackMetrics bss_eval(const std::array<std::vector<double>, 2>& references,
                      const std::array<std::vector<double>, 2>& estimates, int filter_len,
                      const std::string& track_id,
                      std::array<BssDecomposition, 2>* decomposition) {
  const char* names[2] = {"harmonic", "percussive"};
  if (filter_len < 1) throw std::invalid_argument("bss_eval: filter_len must be >= 1");
  const size_t n = references[0].size();
  for (int j = 0; j < 2; ++j) {
    if (references[j].size() != n || estimates[j].size() != n)
      throw std::invalid_argument("bss_eval: reference/estimate lengths differ");
    if (n < static_cast<size_t>(2 * filter_len))
      throw std::invalid_argument("bss_eval: signals shorter than 2 * filter_len");
    if (energy(references[j]) <= 0.0)
      throw std::invalid_argument(std::string("bss_eval: reference '") + names[j] +
                                  "' has zero energy");
  }

  const int L = filter_len;
  const size_t m = n + L - 1;  // padded length of shifted spans

  // Toeplitz-block Gram of the shifted reference span
  std::vector<double> rho[2][2];
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) rho[i][j] = corr_lags(references[i], references[j], L);
  const size_t dim = 2 * static_cast<size_t>(L);
  std::vector<double> gram(dim * dim);
  for (int i = 0; i < 2; ++i)
    for (int ti = 0; ti < L; ++ti)
      for (int j = 0; j < 2; ++j)
        for (int tj = 0; tj < L; ++tj)
          gram[(static_cast<size_t>(i) * L + ti) * dim + static_cast<size_t>(j) * L + tj] =
              rho[i][j][(ti - tj) + L - 1];

  TrackMetrics out;
  out.track_id = track_id;
  for (int e = 0; e < 2; ++e) {
    // cross-correlations of the estimate with each reference span
    std::vector<double> rhs(dim);
    for (int j = 0; j < 2; ++j) {
      const auto c = corr_lags(references[j], estimates[e], L);
      for (int tau = 0; tau < L; ++tau)
        rhs[static_cast<size_t>(j) * L + tau] = c[tau + L - 1];
    }

    // s_target: least-squares projection onto the matching reference span
    std::vector<double> g_own(static_cast<size_t>(L) * L);
    std::vector<double> rhs_own(L);
    for (int ti = 0; ti < L; ++ti) {
      rhs_own[ti] = rhs[static_cast<size_t>(e) * L + ti];
      for (int tj = 0; tj < L; ++tj)
        g_own[static_cast<size_t>(ti) * L + tj] = rho[e][e][(ti - tj) + L - 1];
    }
    const std::vector<double> a_own = solve_spd(g_own, rhs_own);
    std::vector<double> s_target(m, 0.0);
    add_filtered(s_target, references[e], a_own.data(), L);

    // projection onto the joint span of all references
    const std::vector<double> a_all = solve_spd(gram, rhs);
    std::vector<double> p_all(m, 0.0);
    for (int j = 0; j < 2; ++j)
      add_filtered(p_all, references[j], a_all.data() + static_cast<size_t>(j) * L, L);

    std::vector<double> e_interf(m), e_artif(m), resid(m);
    for (size_t t = 0; t < m; ++t) {
      const double est = t < n ? estimates[e][t] : 0.0;
      e_interf[t] = p_all[t] - s_target[t];
      e_artif[t] = est - p_all[t];
      resid[t] = est - s_target[t];
    }
    const double e_t = energy(s_target);
    out.sdr[e] = db_ratio(e_t, energy(resid));
    out.sir[e] = db_ratio(e_t, energy(e_interf));
    out.sar[e] = db_ratio(energy(p_all), energy(e_artif));
    if (decomposition) {
      (*decomposition)[e].s_target = std::move(s_target);
      (*decomposition)[e].e_interf = std::move(e_interf);
      (*decomposition)[e].e_artif = std::move(e_artif);
    }
  }
  return out;
}

double lower_median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("lower_median: empty input");
  std::sort(values.begin(), values.end());
  return values[(values.size() - 1) / 2];
}

MetricsTable aggregate(std::vector<TrackMetrics> per_track) {
  if (per_track.empty()) throw std::invalid_argument("aggregate: no tracks");
  std::sort(per_track.begin(), per_track.end(),
            [](const TrackMetrics& a, const TrackMetrics& b) { return a.track_id < b.track_id; });
  MetricsTable table;
  table.tracks = std::move(per_track);
  table.median.track_id = "median";
  for (int s = 0; s < 2; ++s) {
    std::vector<double> sdr, sir, sar;
    for (const TrackMetrics& t : table.tracks) {
      sdr.push_back(t.sdr[s]);
      sir.push_back(t.sir[s]);
      sar.push_back(t.sar[s]);
    }
    table.median.sdr[s] = lower_median(sdr);
    table.median.sir[s] = lower_median(sir);
    table.median.sar[s] = lower_median(sar);
  }
  return table;
}

void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, MetricsTable>>& methods) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("metrics: cannot open " + path + " for writing");
  os << "method,track,sdr_harmonic,sir_harmonic,sar_harmonic,sdr_percussive,sir_percussive,"
        "sar_percussive\n";
  char buf[320];
  auto put = [&](const std::string& method, const TrackMetrics& t) {
    std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", method.c_str(),
                  t.track_id.c_str(), t.sdr[0], t.sir[0], t.sar[0], t.sdr[1], t.sir[1], t.sar[1]);
    os << buf;
  };
  for (const auto& [method, table] : methods) {
    for (const TrackMetrics& t : table.tracks) put(method, t);
    put(method, table.median);
  }
}

std::string format_metrics_table(const std::vector<std::pair<std::string, MetricsTable>>& methods,
                                 const std::string& test_set_label) {
  std::ostringstream os;
  char buf[256];
  os << "Test set: " << test_set_label << " (median over tracks, dB)\n";
  std::snprintf(buf, sizeof buf, "%-16s %26s   %26s\n", "", "Percussive", "Harmonic");
  os << buf;
  std::snprintf(buf, sizeof buf, "%-16s %8s %8s %8s   %8s %8s %8s\n", "Method", "SDR", "SIR",
                "SAR", "SDR", "SIR", "SAR");
  os << buf;
  for (const auto& [method, table] : methods) {
    const TrackMetrics& med = table.median;
    std::snprintf(buf, sizeof buf, "%-16s %8.2f %8.2f %8.2f   %8.2f %8.2f %8.2f\n",
                  method.c_str(), med.sdr[1], med.sir[1], med.sar[1], med.sdr[0], med.sir[0],
                  med.sar[0]);
    os << buf;
  }
  return os.str();
}

}  // namespace hpss
