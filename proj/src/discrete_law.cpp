#include "gmr/discrete_law.hpp"

#include <cmath>
#include <random>

namespace gmr {

namespace {
constexpr double kSliceTol = 1e-12;
}

Oracle::Oracle(const DiscreteLaw& law, const ProblemSpec& spec)
    : law_(law), spec_(spec) {
  spec_.validate();
  require(static_cast<int>(law_.l_supports.size()) == spec_.K + 1,
          "law must declare K+1 L-supports");
  require(static_cast<int>(law_.g_tables.size()) == spec_.K + 1,
          "law must declare K+1 g-tables");
  require(law_.K() == spec_.K, "law/spec horizon mismatch");
  for (int k = 1; k <= spec_.K + 1; ++k) {
    require(!law_.l_supports[k - 1].empty(), "empty L-support at k=" + std::to_string(k));
    for (const auto& v : law_.l_supports[k - 1])
      require(v.size() == spec_.l_dims[k - 1], "support block dimension mismatch at L" +
                                                   std::to_string(k));
  }
  long paths = 1;
  for (int k = 1; k <= spec_.K; ++k) {
    paths *= nl(k) * na(k);
    require(paths <= law_.path_cap, "oracle too large: path count exceeds cap");
  }
  paths *= nl(spec_.K + 1);
  require(paths <= law_.path_cap, "oracle too large: path count exceeds cap");

  validate_tables();
  build_caches();
  validate_positivity();
  eta_ = compute_eta_true();
}

int Oracle::a_index(int k, int code) const {
  int idx = spec_.treatment_index(k, code);
  require(idx >= 0, "treatment code not in space at k=" + std::to_string(k));
  return idx;
}

int Oracle::l_index(int k, const Vec& value) const {
  const auto& sup = law_.l_supports[k - 1];
  for (std::size_t i = 0; i < sup.size(); ++i) {
    if ((sup[i] - value).lpNorm<Eigen::Infinity>() <= 1e-9) return static_cast<int>(i);
  }
  throw Error("observed L" + std::to_string(k) + " value is not in the declared support");
}

long Oracle::size_la(int k) const {
  long s = 1;
  for (int j = 1; j <= k; ++j) s *= nl(j) * na(j);
  return s;
}

long Oracle::size_lam(int k) const {
  return k == 0 ? 1 : size_la(k - 1) * nl(k);
}

long Oracle::idx_la(const std::vector<int>& li, const std::vector<int>& ai, int k) const {
  long idx = 0, mult = 1;
  for (int j = 1; j <= k; ++j) {
    idx += li[j - 1] * mult;
    mult *= nl(j);
    idx += ai[j - 1] * mult;
    mult *= na(j);
  }
  return idx;
}

long Oracle::idx_lam(const std::vector<int>& li, const std::vector<int>& ai, int k) const {
  if (k == 0) return 0;
  return idx_la(li, ai, k - 1) + li[k - 1] * size_la(k - 1);
}

namespace {

// Depth-first enumeration of (l_1..l_k, a_1..a_m), m in {k-1, k}, keeping a
// scratch trajectory in sync so regime densities and psi can be evaluated.
template <class F>
void enum_hist(const Oracle& oc, int k, bool include_ak, Trajectory& scratch,
               std::vector<int>& li, std::vector<int>& ai, const F& fn) {
  const int m = include_ak ? k : k - 1;
  // positions: 0..k+m-1, even slots are l_j, odd slots are a_j (1-based j)
  std::function<void(int)> rec = [&](int j) {
    if (j > k) {
      fn(li, ai);
      return;
    }
    for (int lv = 0; lv < oc.nl(j); ++lv) {
      li[j - 1] = lv;
      scratch.mutable_l(j) = oc.law().l_supports[j - 1][lv];
      if (j > m) {
        if (j == k) fn(li, ai);
        else rec(j + 1);  // unreachable for our m choices, kept for clarity
        continue;
      }
      for (int av = 0; av < oc.na(j); ++av) {
        ai[j - 1] = av;
        scratch.set_a(j, oc.a_code(j, av));
        rec(j + 1);
      }
    }
  };
  rec(1);
}

}  // namespace

Trajectory Oracle::make_traj(const std::vector<int>& li, const std::vector<int>& ai) const {
  std::vector<Vec> blocks;
  std::vector<int> avals;
  for (int k = 1; k <= spec_.K + 1; ++k) {
    int idx = (static_cast<int>(li.size()) >= k) ? li[k - 1] : 0;
    blocks.push_back(law_.l_supports[k - 1][idx]);
  }
  for (int k = 1; k <= spec_.K; ++k) {
    int idx = (static_cast<int>(ai.size()) >= k) ? ai[k - 1] : 0;
    avals.push_back(a_code(k, idx));
  }
  return Trajectory(std::move(blocks), std::move(avals));
}

void Oracle::for_each_la(int k, const HistFn& fn) const {
  std::vector<int> li(static_cast<std::size_t>(k), 0), ai(static_cast<std::size_t>(k), 0);
  Trajectory scratch = make_traj({}, {});
  enum_hist(*this, k, true, scratch, li, ai,
            [&](const std::vector<int>& l, const std::vector<int>& a) { fn(l, a); });
}

void Oracle::for_each_lam(int k, const HistFn& fn) const {
  std::vector<int> li(static_cast<std::size_t>(k), 0),
      ai(static_cast<std::size_t>(k - 1), 0);
  Trajectory scratch = make_traj({}, {});
  enum_hist(*this, k, false, scratch, li, ai,
            [&](const std::vector<int>& l, const std::vector<int>& a) { fn(l, a); });
}

double Oracle::g_at(int k, const std::vector<int>& li, const std::vector<int>& ai) const {
  // g_k(l_{k+1} | l_1..l_k, a_1..a_k); li[k] holds l_{k+1}
  return law_.g_tables[k][idx_la(li, ai, k) * nl(k + 1) + li[k]];
}

double Oracle::h_at(int k, const std::vector<int>& li, const std::vector<int>& ai) const {
  return law_.h_tables[k - 1][idx_lam(li, ai, k) * na(k) + ai[k - 1]];
}

double Oracle::hstar_at(int k, const std::vector<int>& li, const std::vector<int>& ai,
                        int a_idx) const {
  return hstar_[k - 1][idx_lam(li, ai, k) * na(k) + a_idx];
}

double Oracle::psi_at(const std::vector<int>& li, const std::vector<int>& ai) const {
  return psi_[idx_lam(li, ai, spec_.K + 1)];
}

double Oracle::gw_prefix(const std::vector<int>& li, const std::vector<int>& ai,
                         int k) const {
  double p = law_.g_tables[0][li[0]];
  for (int j = 1; j < k; ++j) p *= g_at(j, li, ai);
  return p;
}

double Oracle::hw_prefix(const std::vector<int>& li, const std::vector<int>& ai,
                         int k) const {
  double p = 1.0;
  for (int j = 1; j <= k; ++j) p *= h_at(j, li, ai);
  return p;
}

double Oracle::pistar_prefix(const std::vector<int>& li, const std::vector<int>& ai,
                             int k) const {
  double p = 1.0;
  for (int j = 1; j <= k; ++j) p *= hstar_at(j, li, ai, ai[j - 1]);
  return p;
}

void Oracle::validate_tables() const {
  for (int k = 0; k <= spec_.K; ++k) {
    const auto& tab = law_.g_tables[k];
    long cond = (k == 0) ? 1 : size_la(k);
    require(static_cast<long>(tab.size()) == cond * nl(k + 1),
            "g-table size mismatch at k=" + std::to_string(k));
    for (long c = 0; c < cond; ++c) {
      double s = 0.0;
      for (int v = 0; v < nl(k + 1); ++v) {
        double p = tab[c * nl(k + 1) + v];
        require(p >= 0.0, "negative probability in g-table k=" + std::to_string(k));
        s += p;
      }
      require(std::abs(s - 1.0) <= kSliceTol,
              "g-table slice does not sum to 1 at k=" + std::to_string(k) +
                  ", cell " + std::to_string(c));
    }
  }
  for (int k = 1; k <= spec_.K; ++k) {
    const auto& tab = law_.h_tables[k - 1];
    long cond = size_lam(k);
    require(static_cast<long>(tab.size()) == cond * na(k),
            "h-table size mismatch at k=" + std::to_string(k));
    for (long c = 0; c < cond; ++c) {
      double s = 0.0;
      for (int v = 0; v < na(k); ++v) {
        double p = tab[c * na(k) + v];
        require(p >= 0.0, "negative probability in h-table k=" + std::to_string(k));
        s += p;
      }
      require(std::abs(s - 1.0) <= kSliceTol,
              "h-table slice does not sum to 1 at k=" + std::to_string(k) +
                  ", cell " + std::to_string(c));
    }
  }
}

void Oracle::build_caches() {
  hstar_.resize(static_cast<std::size_t>(spec_.K));
  for (int k = 1; k <= spec_.K; ++k) {
    hstar_[k - 1].assign(static_cast<std::size_t>(size_lam(k) * na(k)), 0.0);
    std::vector<int> li(static_cast<std::size_t>(k), 0),
        ai(static_cast<std::size_t>(k - 1), 0);
    Trajectory scratch = make_traj({}, {});
    enum_hist(*this, k, false, scratch, li, ai,
              [&](const std::vector<int>& l, const std::vector<int>& a) {
                long base = idx_lam(l, a, k) * na(k);
                double tot = 0.0;
                for (int av = 0; av < na(k); ++av) {
                  double d = spec_.regime.density(k, a_code(k, av), scratch);
                  require(d >= 0.0, "negative regime density at k=" + std::to_string(k));
                  hstar_[k - 1][base + av] = d;
                  tot += d;
                }
                require(std::abs(tot - 1.0) <= 1e-9,
                        "regime density does not sum to 1 at k=" + std::to_string(k));
              });
  }
  psi_.assign(static_cast<std::size_t>(size_lam(spec_.K + 1)), 0.0);
  {
    std::vector<int> li(static_cast<std::size_t>(spec_.K + 1), 0),
        ai(static_cast<std::size_t>(spec_.K), 0);
    Trajectory scratch = make_traj({}, {});
    enum_hist(*this, spec_.K + 1, false, scratch, li, ai,
              [&](const std::vector<int>& l, const std::vector<int>& a) {
                psi_[idx_lam(l, a, spec_.K + 1)] = spec_.psi(scratch);
              });
  }
}

void Oracle::validate_positivity() const {
  for_each_lam(spec_.K + 1, [&](const std::vector<int>& li, const std::vector<int>& ai) {
    double gw = gw_prefix(li, ai, spec_.K + 1);
    if (gw == 0.0) return;
    double ps = pistar_prefix(li, ai, spec_.K);
    if (ps == 0.0) return;
    double hw = hw_prefix(li, ai, spec_.K);
    require(hw > 0.0,
            "positivity violated: a regime-reachable history has zero probability");
  });
}

EtaTables Oracle::compute_eta_true() const {
  EtaTables out;
  const int K = spec_.K;
  out.eta.resize(static_cast<std::size_t>(K));
  out.y.resize(static_cast<std::size_t>(K));

  // eta_K = E_{g_K}[psi | l_1..l_K, a_1..a_K]
  out.eta[K - 1].assign(static_cast<std::size_t>(size_la(K)), 0.0);
  for_each_la(K, [&](const std::vector<int>& li, const std::vector<int>& ai) {
    std::vector<int> lx = li;
    lx.push_back(0);
    double acc = 0.0;
    for (int v = 0; v < nl(K + 1); ++v) {
      lx[K] = v;
      acc += g_at(K, lx, ai) * psi_at(lx, ai);
    }
    out.eta[K - 1][idx_la(li, ai, K)] = acc;
  });

  // backward: y_{k+1} then eta_k
  for (int k = K; k >= 1; --k) {
    out.y[k - 1].assign(static_cast<std::size_t>(size_lam(k)), 0.0);
    for_each_lam(k, [&](const std::vector<int>& li, const std::vector<int>& ai) {
      std::vector<int> ax = ai;
      ax.push_back(0);
      double acc = 0.0;
      for (int av = 0; av < na(k); ++av) {
        double hs = hstar_at(k, li, ai, av);
        if (hs == 0.0) continue;
        ax[k - 1] = av;
        acc += hs * out.eta[k - 1][idx_la(li, ax, k)];
      }
      out.y[k - 1][idx_lam(li, ai, k)] = acc;
    });
    if (k >= 2) {
      out.eta[k - 2].assign(static_cast<std::size_t>(size_la(k - 1)), 0.0);
      for_each_la(k - 1, [&](const std::vector<int>& li, const std::vector<int>& ai) {
        std::vector<int> lx = li;
        lx.push_back(0);
        double acc = 0.0;
        for (int v = 0; v < nl(k); ++v) {
          lx[k - 1] = v;
          acc += g_at(k - 1, lx, ai) * out.y[k - 1][idx_lam(lx, ai, k)];
        }
        out.eta[k - 2][idx_la(li, ai, k - 1)] = acc;
      });
    }
  }

  double theta = 0.0;
  for (int v = 0; v < nl(1); ++v) {
    std::vector<int> li = {v};
    std::vector<int> ai;
    theta += law_.g_tables[0][v] * out.y[0][idx_lam(li, ai, 1)];
  }
  out.theta = theta;
  return out;
}

double Oracle::g_formula_theta() const {
  double acc = 0.0;
  for_each_lam(spec_.K + 1, [&](const std::vector<int>& li, const std::vector<int>& ai) {
    double gw = gw_prefix(li, ai, spec_.K + 1);
    if (gw == 0.0) return;
    double ps = pistar_prefix(li, ai, spec_.K);
    if (ps == 0.0) return;
    acc += gw * ps * psi_at(li, ai);
  });
  return acc;
}

double Oracle::ipw_identity_value() const {
  double acc = 0.0;
  for_each_lam(spec_.K + 1, [&](const std::vector<int>& li, const std::vector<int>& ai) {
    double gw = gw_prefix(li, ai, spec_.K + 1);
    if (gw == 0.0) return;
    double ps = pistar_prefix(li, ai, spec_.K);
    if (ps == 0.0) return;
    double hw = hw_prefix(li, ai, spec_.K);
    require(hw > 0.0, "positivity violated: pi^K = 0 on a path with pi*^K > 0");
    acc += gw * hw * psi_at(li, ai) * ps / hw;
  });
  return acc;
}

double Oracle::mean_y1(const std::vector<std::vector<double>>& eta_dag) const {
  double acc = 0.0;
  std::vector<int> li(1), ai(1);
  for (int v = 0; v < nl(1); ++v) {
    li[0] = v;
    double g0 = law_.g_tables[0][v];
    if (g0 == 0.0) continue;
    double y1 = 0.0;
    for (int av = 0; av < na(1); ++av) {
      ai[0] = av;
      double hs = hstar_at(1, li, {}, av);
      if (hs == 0.0) continue;
      y1 += hs * eta_dag[0][idx_la(li, ai, 1)];
    }
    acc += g0 * y1;
  }
  return acc;
}

double Oracle::d_g(const std::vector<std::vector<double>>& eta_dag) const {
  const int K = spec_.K;
  double total = 0.0;
  for (int k = 1; k <= K; ++k) {
    for_each_la(k, [&](const std::vector<int>& li, const std::vector<int>& ai) {
      double gw = gw_prefix(li, ai, k);
      if (gw == 0.0) return;
      double ps = pistar_prefix(li, ai, k);
      if (ps == 0.0) return;
      // inner = E_{g_k}[y_{k+1, eta_{k+1}} | history]
      std::vector<int> lx = li;
      lx.push_back(0);
      double inner = 0.0;
      for (int v = 0; v < nl(k + 1); ++v) {
        lx[k] = v;
        double g = g_at(k, lx, ai);
        if (g == 0.0) continue;
        double ynext;
        if (k == K) {
          ynext = psi_at(lx, ai);
        } else {
          std::vector<int> ax = ai;
          ax.push_back(0);
          ynext = 0.0;
          for (int av = 0; av < na(k + 1); ++av) {
            double hs = hstar_at(k + 1, lx, ai, av);
            if (hs == 0.0) continue;
            ax[k] = av;
            ynext += hs * eta_dag[k][idx_la(lx, ax, k + 1)];
          }
        }
        inner += g * ynext;
      }
      total += gw * ps * (eta_dag[k - 1][idx_la(li, ai, k)] - inner);
    });
  }
  return total;
}

std::vector<std::vector<double>> Oracle::w_tables(const NuisanceSet& ns) const {
  const int K = spec_.K;
  std::vector<std::vector<double>> w(static_cast<std::size_t>(K));
  w[K - 1] = eta_.eta[K - 1];  // E[Q_{K+1}|.] = E[psi|.] = eta^g_K
  for (int k = K - 1; k >= 1; --k) {
    w[k - 1].assign(static_cast<std::size_t>(size_la(k)), 0.0);
    for_each_la(k, [&](const std::vector<int>& li, const std::vector<int>& ai) {
      std::vector<int> lx = li;
      lx.push_back(0);
      std::vector<int> ax = ai;
      ax.push_back(0);
      double acc = 0.0;
      for (int v = 0; v < nl(k + 1); ++v) {
        lx[k] = v;
        double g = g_at(k, lx, ai);
        if (g == 0.0) continue;
        // y_{k+1, eta-dagger}(l_1..l_{k+1}, a_1..a_k)
        double ynext = 0.0;
        for (int av = 0; av < na(k + 1); ++av) {
          double hs = hstar_at(k + 1, lx, ai, av);
          if (hs == 0.0) continue;
          ax[k] = av;
          ynext += hs * ns.eta_dag[k][idx_la(lx, ax, k + 1)];
        }
        double inner = ynext;
        for (int av = 0; av < na(k + 1); ++av) {
          double h = law_.h_tables[k][idx_lam(lx, ai, k + 1) * na(k + 1) + av];
          if (h == 0.0) continue;
          double hs = hstar_at(k + 1, lx, ai, av);
          if (hs == 0.0) continue;
          double hd = ns.h_dag[k][idx_lam(lx, ai, k + 1) * na(k + 1) + av];
          require(hd > 0.0, "dagger positivity violated: h-dagger is 0 where h* > 0");
          ax[k] = av;
          long ix = idx_la(lx, ax, k + 1);
          inner += h * (hs / hd) * (w[k][ix] - ns.eta_dag[k][ix]);
        }
        acc += g * inner;
      }
      w[k - 1][idx_la(li, ai, k)] = acc;
    });
  }
  return w;
}

double Oracle::bias_a(const NuisanceSet& ns) const {
  const int K = spec_.K;
  double total = 0.0;
  for (int k = 1; k <= K; ++k) {
    for_each_la(k, [&](const std::vector<int>& li, const std::vector<int>& ai) {
      double ps_prev = pistar_prefix(li, ai, k - 1);
      if (ps_prev == 0.0) return;
      double gw = gw_prefix(li, ai, k);
      if (gw == 0.0) return;
      double hs_k = hstar_at(k, li, ai, ai[k - 1]);
      if (hs_k == 0.0) return;
      double pidag_prev = 1.0, hw_prev = 1.0;
      for (int j = 1; j < k; ++j) {
        pidag_prev *= ns.h_dag[j - 1][idx_lam(li, ai, j) * na(j) + ai[j - 1]];
        hw_prev *= h_at(j, li, ai);
      }
      require(pidag_prev > 0.0, "dagger positivity violated: pi-dagger = 0 where pi* > 0");
      double h_k = h_at(k, li, ai);
      double hd_k = ns.h_dag[k - 1][idx_lam(li, ai, k) * na(k) + ai[k - 1]];
      require(hd_k > 0.0, "dagger positivity violated: h-dagger is 0 where h* > 0");
      long ix = idx_la(li, ai, k);
      // weight * (h*_k/h_k - h*_k/hd_k) with the h_k in the weight cancelled
      total += gw * hw_prev * (ps_prev / pidag_prev) * (hs_k - h_k * hs_k / hd_k) *
               (ns.eta_dag[k - 1][ix] - eta_.eta[k - 1][ix]);
    });
  }
  return total;
}

double Oracle::bias_b(const NuisanceSet& ns) const {
  const int K = spec_.K;
  auto w = w_tables(ns);
  double total = 0.0;
  for (int k = 1; k <= K; ++k) {
    for_each_la(k, [&](const std::vector<int>& li, const std::vector<int>& ai) {
      double ps = pistar_prefix(li, ai, k);
      if (ps == 0.0) return;  // Gamma_k carries a pi*^k factor
      double gw = gw_prefix(li, ai, k);
      if (gw == 0.0) return;
      double h_k = h_at(k, li, ai);
      double hd_k = ns.h_dag[k - 1][idx_lam(li, ai, k) * na(k) + ai[k - 1]];
      require(hd_k > 0.0, "dagger positivity violated: h-dagger is 0 where h* > 0");
      long ix = idx_la(li, ai, k);
      double gamma = ps * (ns.eta_dag[k - 1][ix] - w[k - 1][ix]);
      total += gw * (1.0 - h_k / hd_k) * gamma;
    });
  }
  return total;
}

double Oracle::bias_c(const NuisanceSet& ns) const {
  const int K = spec_.K;
  double total = 0.0;
  for (int k = 1; k <= K; ++k) {
    for_each_la(k, [&](const std::vector<int>& li, const std::vector<int>& ai) {
      double ps = pistar_prefix(li, ai, k);
      if (ps == 0.0) return;  // Delta_k carries a pi*^k factor
      double gw = gw_prefix(li, ai, k);
      if (gw == 0.0) return;
      // Delta_k / pi*^k = eta-dagger_k - E_{g_k}[y_{k+1, eta-dagger_{k+1}} | .]
      std::vector<int> lx = li;
      lx.push_back(0);
      double inner = 0.0;
      for (int v = 0; v < nl(k + 1); ++v) {
        lx[k] = v;
        double g = g_at(k, lx, ai);
        if (g == 0.0) continue;
        double ynext;
        if (k == K) {
          ynext = psi_at(lx, ai);
        } else {
          std::vector<int> ax = ai;
          ax.push_back(0);
          ynext = 0.0;
          for (int av = 0; av < na(k + 1); ++av) {
            double hs = hstar_at(k + 1, lx, ai, av);
            if (hs == 0.0) continue;
            ax[k] = av;
            ynext += hs * ns.eta_dag[k][idx_la(lx, ax, k + 1)];
          }
        }
        inner += g * ynext;
      }
      double delta = ps * (ns.eta_dag[k - 1][idx_la(li, ai, k)] - inner);
      double hw_k = hw_prefix(li, ai, k);
      double pidag_k = 1.0;
      for (int j = 1; j <= k; ++j)
        pidag_k *= ns.h_dag[j - 1][idx_lam(li, ai, j) * na(j) + ai[j - 1]];
      require(pidag_k > 0.0, "dagger positivity violated: pi-dagger = 0 where pi* > 0");
      total += (gw - gw * hw_k / pidag_k) * delta;
    });
  }
  return total;
}

double Oracle::conditional_bias_a_j(const NuisanceSet& ns, int j,
                                    const std::vector<int>& li,
                                    const std::vector<int>& ai) const {
  const int K = spec_.K;
  require(j >= 0 && j <= K, "conditional_bias_a_j: j out of range");
  if (j == K) return 0.0;  // empty sum
  double total = 0.0;
  // Extend the fixed (l_1..l_j, a_1..a_j) with (l_{j+1}, a_{j+1}, ..., l_k, a_k).
  std::vector<int> lx = li, ax = ai;
  for (int k = j + 1; k <= K; ++k) {
    lx.resize(static_cast<std::size_t>(k));
    ax.resize(static_cast<std::size_t>(k));
    std::function<void(int, double, double, double, double)> rec =
        [&](int depth, double gw, double hw_prev, double ps_mid, double pidag_mid) {
          // gw = prod_{r=j}^{depth-1} g_r over the added l's;
          // hw_prev = prod_{r=j+1}^{depth-1} h_r; ps_mid/pidag_mid over the same range.
          if (depth > k) return;
          for (int lv = 0; lv < nl(depth); ++lv) {
            lx[depth - 1] = lv;
            double g = g_at(depth - 1, lx, ax);
            if (g == 0.0) continue;
            for (int av = 0; av < na(depth); ++av) {
              ax[depth - 1] = av;
              double h = h_at(depth, lx, ax);
              double hs = hstar_at(depth, lx, ax, av);
              double hd = ns.h_dag[depth - 1][idx_lam(lx, ax, depth) * na(depth) + av];
              if (depth < k) {
                if (hs > 0.0)
                  require(hd > 0.0, "dagger positivity violated in conditional bias");
                if (h == 0.0 || hs == 0.0) continue;  // both the weight and pi* factor die
                rec(depth + 1, gw * g, hw_prev * h, ps_mid * hs, pidag_mid * hd);
              } else {
                if (hs == 0.0) continue;
                require(hd > 0.0, "dagger positivity violated in conditional bias");
                long ix = idx_la(lx, ax, k);
                total += gw * g * hw_prev * (ps_mid / pidag_mid) *
                         (hs - h * hs / hd) *
                         (ns.eta_dag[k - 1][ix] - eta_.eta[k - 1][ix]);
              }
            }
          }
        };
    rec(j + 1, 1.0, 1.0, 1.0, 1.0);
  }
  return total;
}

double Oracle::expected_Q1(const NuisanceSet& ns) const {
  NuisanceFns fns = nuisance_fns(ns);
  double acc = 0.0;
  for_each_lam(spec_.K + 1, [&](const std::vector<int>& li, const std::vector<int>& ai) {
    double gw = gw_prefix(li, ai, spec_.K + 1);
    if (gw == 0.0) return;
    double hw = hw_prefix(li, ai, spec_.K);
    if (hw == 0.0) return;
    Trajectory t = make_traj(li, ai);
    acc += gw * hw * q_telescoped(t, spec_, fns, 1);
  });
  return acc;
}

DriftReport Oracle::drift_expected(const NuisanceSet& ns, DriftFlavor flavor) const {
  const int K = spec_.K;
  DriftReport rep;
  rep.flavor = flavor;
  if (flavor == DriftFlavor::MR) {
    auto w = w_tables(ns);
    for (int k = 1; k <= K; ++k) {
      double term = 0.0;
      for_each_la(k, [&](const std::vector<int>& li, const std::vector<int>& ai) {
        double ps_prev = pistar_prefix(li, ai, k - 1);
        if (ps_prev == 0.0) return;
        double gw = gw_prefix(li, ai, k);
        if (gw == 0.0) return;
        double hs_k = hstar_at(k, li, ai, ai[k - 1]);
        if (hs_k == 0.0) return;
        double h_k = h_at(k, li, ai);
        double hd_k = ns.h_dag[k - 1][idx_lam(li, ai, k) * na(k) + ai[k - 1]];
        require(hd_k > 0.0, "dagger positivity violated in drift");
        long ix = idx_la(li, ai, k);
        term += gw * ps_prev * (hs_k - h_k * hs_k / hd_k) *
                (ns.eta_dag[k - 1][ix] - w[k - 1][ix]);
      });
      rep.terms.push_back({k, k, term});
      rep.total += term;
    }
    return rep;
  }

  // DR flavor: diagonal terms (j == k) plus cross terms (j < k), with
  // delta_k = eta-dagger_k - E_{g_k}[y_{k+1, eta-dagger_{k+1}} | .].
  for (int k = 1; k <= K; ++k) {
    // cache delta_k over histories
    std::vector<double> delta(static_cast<std::size_t>(size_la(k)), 0.0);
    for_each_la(k, [&](const std::vector<int>& li, const std::vector<int>& ai) {
      std::vector<int> lx = li;
      lx.push_back(0);
      double inner = 0.0;
      for (int v = 0; v < nl(k + 1); ++v) {
        lx[k] = v;
        double g = g_at(k, lx, ai);
        if (g == 0.0) continue;
        double ynext;
        if (k == K) {
          ynext = psi_at(lx, ai);
        } else {
          std::vector<int> ax = ai;
          ax.push_back(0);
          ynext = 0.0;
          for (int av = 0; av < na(k + 1); ++av) {
            double hs = hstar_at(k + 1, lx, ai, av);
            if (hs == 0.0) continue;
            ax[k] = av;
            ynext += hs * ns.eta_dag[k][idx_la(lx, ax, k + 1)];
          }
        }
        inner += g * ynext;
      }
      long ix = idx_la(li, ai, k);
      delta[ix] = ns.eta_dag[k - 1][ix] - inner;
    });

    for (int j = 1; j <= k; ++j) {
      double term = 0.0;
      for_each_la(k, [&](const std::vector<int>& li, const std::vector<int>& ai) {
        double gw = gw_prefix(li, ai, k);
        if (gw == 0.0) return;
        double ps_prev = pistar_prefix(li, ai, j - 1);
        if (ps_prev == 0.0) return;
        double hs_j = hstar_at(j, li, ai, ai[j - 1]);
        if (hs_j == 0.0) return;
        double h_j = h_at(j, li, ai);
        double hd_j = ns.h_dag[j - 1][idx_lam(li, ai, j) * na(j) + ai[j - 1]];
        require(hd_j > 0.0, "dagger positivity violated in drift");
        // pi*_{j+1}^k / pi-dagger_{j+1}^k and the weight h's from j+1..k
        double ps_mid = 1.0, pidag_mid = 1.0, hw_mid = 1.0;
        for (int r = j + 1; r <= k; ++r) {
          ps_mid *= hstar_at(r, li, ai, ai[r - 1]);
          pidag_mid *= ns.h_dag[r - 1][idx_lam(li, ai, r) * na(r) + ai[r - 1]];
          hw_mid *= h_at(r, li, ai);
        }
        if (ps_mid == 0.0) return;
        require(pidag_mid > 0.0, "dagger positivity violated in drift");
        term += gw * ps_prev * (hs_j - h_j * hs_j / hd_j) * hw_mid *
                (ps_mid / pidag_mid) * delta[idx_la(li, ai, k)];
      });
      rep.terms.push_back({j, k, term});
      rep.total += term;
    }
  }
  return rep;
}

Dataset Oracle::sample(int n, std::uint64_t seed) const {
  require(n >= 1, "sample: n >= 1 required");
  Dataset ds;
  ds.rows.reserve(static_cast<std::size_t>(n));
  const int K = spec_.K;
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 eng(seed_stream(seed, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    auto draw = [&](const double* probs, int m) {
      double u = unif(eng), c = 0.0;
      for (int v = 0; v < m; ++v) {
        c += probs[v];
        if (u <= c) return v;
      }
      return m - 1;
    };
    std::vector<int> li, ai;
    li.push_back(draw(law_.g_tables[0].data(), nl(1)));
    for (int k = 1; k <= K; ++k) {
      ai.push_back(draw(&law_.h_tables[k - 1][idx_lam(li, ai, k) * na(k)], na(k)));
      li.push_back(draw(&law_.g_tables[k][idx_la(li, ai, k) * nl(k + 1)], nl(k + 1)));
    }
    ds.rows.push_back(make_traj(li, ai));
  }
  return ds;
}

NuisanceFns Oracle::nuisance_fns(const NuisanceSet& ns) const {
  NuisanceFns fns;
  fns.eta = [this, &ns](int k, int a, const Trajectory& t) {
    std::vector<int> li, ai;
    for (int j = 1; j <= k; ++j) li.push_back(l_index(j, t.l(j)));
    for (int j = 1; j < k; ++j) ai.push_back(a_index(j, t.a(j)));
    ai.push_back(a_index(k, a));
    return ns.eta_dag[k - 1][idx_la(li, ai, k)];
  };
  fns.h = [this, &ns](int k, int a, const Trajectory& t) {
    std::vector<int> li, ai;
    for (int j = 1; j <= k; ++j) li.push_back(l_index(j, t.l(j)));
    for (int j = 1; j < k; ++j) ai.push_back(a_index(j, t.a(j)));
    return ns.h_dag[k - 1][idx_lam(li, ai, k) * na(k) + a_index(k, a)];
  };
  return fns;
}

double Oracle::q_recursion(const Trajectory& traj, const NuisanceSet& ns, int j) const {
  return q_backward(traj, spec_, nuisance_fns(ns), j);
}

NuisanceSet oracle_nuisance(const Oracle& oc) {
  NuisanceSet ns;
  ns.h_dag = oc.law().h_tables;
  ns.eta_dag = oc.eta_true().eta;
  return ns;
}

NuisanceSet random_nuisance(const Oracle& oc, std::uint64_t seed) {
  NuisanceSet ns = oracle_nuisance(oc);
  std::mt19937_64 eng(splitmix64(seed));
  std::uniform_real_distribution<double> eta_noise(-0.3, 0.3);
  std::uniform_real_distribution<double> h_noise(-0.5, 0.5);
  for (auto& tab : ns.eta_dag)
    for (auto& v : tab) v += eta_noise(eng);
  for (int k = 1; k <= oc.K(); ++k) {
    auto& tab = ns.h_dag[k - 1];
    long cells = static_cast<long>(tab.size()) / oc.na(k);
    for (long c = 0; c < cells; ++c) {
      double tot = 0.0;
      for (int a = 0; a < oc.na(k); ++a) {
        double& p = tab[c * oc.na(k) + a];
        if (p > 0.0) p *= std::exp(h_noise(eng));
        tot += p;
      }
      if (tot > 0.0)
        for (int a = 0; a < oc.na(k); ++a) tab[c * oc.na(k) + a] /= tot;
    }
  }
  return ns;
}

double empirical_mle_theta(const Dataset& ds, const ProblemSpec& spec,
                           const std::vector<std::vector<Vec>>& l_supports) {
  ds.validate(spec);
  // An index-only helper law (uniform tables) provides the history indexing.
  DiscreteLaw shell;
  shell.l_supports = l_supports;
  shell.g_tables.resize(static_cast<std::size_t>(spec.K + 1));
  shell.h_tables.resize(static_cast<std::size_t>(spec.K));
  ProblemSpec tmp = spec;  // same spaces; Oracle validates sizes only if tables filled
  // Fill uniform tables so Oracle construction succeeds.
  {
    std::vector<int> nls, nas;
    for (int k = 1; k <= spec.K + 1; ++k) nls.push_back(static_cast<int>(l_supports[k - 1].size()));
    for (int k = 1; k <= spec.K; ++k)
      nas.push_back(static_cast<int>(spec.treatment_spaces[k - 1].size()));
    long cond = 1;
    shell.g_tables[0].assign(static_cast<std::size_t>(nls[0]), 1.0 / nls[0]);
    for (int k = 1; k <= spec.K; ++k) {
      cond *= nls[k - 1] * nas[k - 1];
      shell.g_tables[k].assign(static_cast<std::size_t>(cond * nls[k]), 1.0 / nls[k]);
      long hc = (cond / nas[k - 1]) * nas[k - 1];  // = cond
      shell.h_tables[k - 1].assign(static_cast<std::size_t>(hc), 1.0 / nas[k - 1]);
    }
  }
  Oracle shell_oc(shell, tmp);

  // Count tables.
  std::vector<std::vector<long>> cnt_cond(static_cast<std::size_t>(spec.K + 1));
  std::vector<std::vector<long>> cnt_joint(static_cast<std::size_t>(spec.K + 1));
  cnt_cond[0].assign(1, 0);
  cnt_joint[0].assign(static_cast<std::size_t>(shell_oc.nl(1)), 0);
  for (int k = 1; k <= spec.K; ++k) {
    cnt_cond[k].assign(static_cast<std::size_t>(shell_oc.size_la(k)), 0);
    cnt_joint[k].assign(static_cast<std::size_t>(shell_oc.size_la(k) * shell_oc.nl(k + 1)), 0);
  }
  for (const auto& t : ds.rows) {
    std::vector<int> li, ai;
    for (int k = 1; k <= spec.K + 1; ++k) li.push_back(shell_oc.l_index(k, t.l(k)));
    for (int k = 1; k <= spec.K; ++k) ai.push_back(shell_oc.a_index(k, t.a(k)));
    cnt_cond[0][0]++;
    cnt_joint[0][li[0]]++;
    for (int k = 1; k <= spec.K; ++k) {
      long c = shell_oc.idx_la(li, ai, k);
      cnt_cond[k][c]++;
      cnt_joint[k][c * shell_oc.nl(k + 1) + li[k]]++;
    }
  }

  // DFS over regime-weighted paths with empirical g-tables.
  double acc = 0.0;
  std::vector<int> li(static_cast<std::size_t>(spec.K + 1), 0),
      ai(static_cast<std::size_t>(spec.K), 0);
  std::function<void(int, double)> rec = [&](int k, double w) {
    // invariant: l_1..l_k and a_1..a_{k-1} chosen, w = prod g-hat * prod h*.
    if (k == spec.K + 1) {
      std::vector<int> lfull(li.begin(), li.begin() + spec.K + 1);
      acc += w * shell_oc.psi_at(lfull, ai);
      return;
    }
    for (int av = 0; av < shell_oc.na(k); ++av) {
      ai[k - 1] = av;
      double hs = shell_oc.hstar_at(k, li, ai, av);
      if (hs == 0.0) continue;
      long cell = shell_oc.idx_la(li, ai, k);
      if (cnt_cond[k][cell] == 0) {
        std::string msg = "unidentified cell at k=" + std::to_string(k) + ": l-idx(";
        for (int j = 0; j < k; ++j) msg += (j ? "," : "") + std::to_string(li[j]);
        msg += ") a-idx(";
        for (int j = 0; j < k; ++j) msg += (j ? "," : "") + std::to_string(ai[j]);
        msg += ") was never observed";
        throw Error(msg);
      }
      for (int v = 0; v < shell_oc.nl(k + 1); ++v) {
        double ghat = static_cast<double>(cnt_joint[k][cell * shell_oc.nl(k + 1) + v]) /
                      static_cast<double>(cnt_cond[k][cell]);
        if (ghat == 0.0) continue;
        li[k] = v;
        rec(k + 1, w * hs * ghat);
      }
    }
  };
  for (int v = 0; v < shell_oc.nl(1); ++v) {
    double g0 = static_cast<double>(cnt_joint[0][v]) / static_cast<double>(ds.n());
    if (g0 == 0.0) continue;
    li[0] = v;
    rec(1, g0);
  }
  return acc;
}

}  // namespace gmr
