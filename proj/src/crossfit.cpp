#include "gmr/crossfit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

namespace gmr {

namespace {
constexpr double kEps = 1e-6;

double safe_linpred(Link link, double m) {
  if (link == Link::logit) m = std::min(std::max(m, 1e-12), 1.0 - 1e-12);
  if (link == Link::log) m = std::max(m, 1e-12);
  return link_linpred(link, m);
}

std::vector<std::vector<double>> pistar_table(const Dataset& ds, const ProblemSpec& spec) {
  std::vector<std::vector<double>> pis(static_cast<std::size_t>(ds.n()));
  for (int i = 0; i < ds.n(); ++i) {
    const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
    auto& row = pis[static_cast<std::size_t>(i)];
    row.assign(static_cast<std::size_t>(spec.K) + 1, 1.0);
    for (int k = 1; k <= spec.K; ++k)
      row[static_cast<std::size_t>(k)] =
          row[static_cast<std::size_t>(k) - 1] * spec.regime.density(k, t.a(k), t);
  }
  return pis;
}

double mean_over(const std::vector<int>& rows, const std::vector<double>& v) {
  double s = 0.0;
  for (int r : rows) s += v[static_cast<std::size_t>(r)];
  return s / static_cast<double>(rows.size());
}

}  // namespace

std::vector<int> SplitPlan::split_rows(int u) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(assign.size()); ++i)
    if (assign[static_cast<std::size_t>(i)] == u) out.push_back(i);
  return out;
}

std::vector<int> SplitPlan::train_rows(int u) const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(assign.size()); ++i)
    if (assign[static_cast<std::size_t>(i)] != u) out.push_back(i);
  return out;
}

SplitPlan make_splits(int n, int U, std::uint64_t seed) {
  require(U >= 2, "U >= 2 splits required");
  require(n >= U, "n >= U required to split");
  SplitPlan plan;
  plan.U = U;
  plan.seed = seed;
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 eng(splitmix64(seed));
  std::shuffle(perm.begin(), perm.end(), eng);
  plan.assign.assign(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) plan.assign[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = i % U;
  return plan;
}

bool FittedFn::trained_on(int row) const {
  if (!trained_rows) return false;
  return std::binary_search(trained_rows->begin(), trained_rows->end(), row);
}

// ---------------------------------------------------------------------------
// Series learner
// ---------------------------------------------------------------------------

namespace {

// Continuous feature vector of the depth-k history: all components of L_1..L_k.
EVec history_features(const Trajectory& t, int k) {
  int d = 0;
  for (int j = 1; j <= k; ++j) d += static_cast<int>(t.l(j).size());
  EVec x(d);
  int at = 0;
  for (int j = 1; j <= k; ++j)
    for (int c = 0; c < t.l(j).size(); ++c) x[at++] = t.l(j)[c];
  return x;
}

struct BasisDef {
  SeriesLearnerConfig::Basis family;
  int m = 1;
  EVec lo, hi;  // per-feature training range (histogram / pwlinear)

  int dim(int d) const {
    switch (family) {
      case SeriesLearnerConfig::Basis::polynomial: {
        // monomials of total degree <= m
        long n = 1, num = 1, den = 1;
        for (int i = 1; i <= m; ++i) {
          num = num * (d + i);
          den = den * i;
        }
        n = num / den;
        return static_cast<int>(n);
      }
      case SeriesLearnerConfig::Basis::histogram:
        return 1 + d * (m - 1);
      case SeriesLearnerConfig::Basis::pwlinear:
        return 1 + d * (1 + m);
    }
    return 0;
  }

  EVec eval(const EVec& x) const {
    const int d = static_cast<int>(x.size());
    switch (family) {
      case SeriesLearnerConfig::Basis::polynomial: {
        std::vector<double> out;
        std::vector<int> expo(static_cast<std::size_t>(d), 0);
        std::function<void(int, int, double)> rec = [&](int pos, int left, double acc) {
          if (pos == d) {
            out.push_back(acc);
            return;
          }
          double p = 1.0;
          for (int e = 0; e <= left; ++e) {
            rec(pos + 1, left - e, acc * p);
            p *= x[pos];
          }
        };
        rec(0, m, 1.0);
        return Eigen::Map<EVec>(out.data(), static_cast<Eigen::Index>(out.size()));
      }
      case SeriesLearnerConfig::Basis::histogram: {
        EVec out = EVec::Zero(dim(d));
        out[0] = 1.0;
        int at = 1;
        for (int c = 0; c < d; ++c) {
          double span = hi[c] - lo[c];
          if (span <= 0) span = 1.0;
          double z = std::min(std::max(x[c], lo[c]), hi[c]);
          int bin = std::min(m - 1, static_cast<int>((z - lo[c]) / span * m));
          if (bin >= 1) out[at + bin - 1] = 1.0;  // bin 0 folded into the intercept
          at += m - 1;
        }
        return out;
      }
      case SeriesLearnerConfig::Basis::pwlinear: {
        EVec out = EVec::Zero(dim(d));
        out[0] = 1.0;
        int at = 1;
        for (int c = 0; c < d; ++c) {
          double span = hi[c] - lo[c];
          if (span <= 0) span = 1.0;
          double z = std::min(std::max(x[c], lo[c]), hi[c]);
          out[at++] = z;
          for (int t = 1; t <= m; ++t) {
            double knot = lo[c] + span * t / (m + 1);
            out[at++] = std::max(z - knot, 0.0);
          }
        }
        return out;
      }
    }
    return EVec();
  }
};

// Treatment-combination key for the interaction structure.
std::vector<int> combo_of(const Trajectory& t, int k, bool include_ak, int a_override) {
  std::vector<int> c;
  for (int j = 1; j < k; ++j) c.push_back(t.a(j));
  if (include_ak) c.push_back(a_override);
  return c;
}

struct SeriesModel {
  BasisDef basis;
  bool include_ak = true;
  int k = 1;
  std::map<std::vector<int>, EVec> coef;  // per treatment combo
  double fallback = 0.0;                  // unseen-combo prediction (linear scale)
  Link link = Link::identity;

  double predict_lp(const Trajectory& t, int a_override) const {
    auto it = coef.find(combo_of(t, k, include_ak, a_override));
    if (it == coef.end()) return fallback;
    return it->second.dot(basis.eval(history_features(t, k)));
  }
};

struct CandidateFit {
  SeriesModel model;
  bool ok = false;
  int flags = 0;
};

// One candidate size: per-combo (ridge-stabilized inside CV) fits.
CandidateFit fit_candidate(const Dataset& ds, const ProblemSpec& spec,
                           const std::vector<int>& rows, const std::vector<double>& y,
                           int k, bool include_ak, Link link, const BasisDef& basis,
                           double ridge, bool final_fit) {
  CandidateFit cand;
  cand.model.basis = basis;
  cand.model.include_ak = include_ak;
  cand.model.k = k;
  cand.model.link = link;

  std::map<std::vector<int>, std::vector<int>> groups;
  for (int r : rows) {
    const Trajectory& t = ds.rows[static_cast<std::size_t>(r)];
    groups[combo_of(t, k, include_ak, include_ak ? t.a(k) : 0)].push_back(r);
  }
  if (groups.empty()) return cand;
  const int d = static_cast<int>(
      history_features(ds.rows[static_cast<std::size_t>(rows[0])], k).size());
  const int p = basis.dim(d);

  double ysum = 0.0;
  long m = 0;
  for (const auto& [key, grp] : groups) {
    if (final_fit && static_cast<int>(grp.size()) < p + 1) {
      cand.flags |= 1;  // candidate skipped: more parameters than rows
      return cand;
    }
    Mat X(static_cast<Eigen::Index>(grp.size()), p);
    EVec yy(static_cast<Eigen::Index>(grp.size()));
    for (std::size_t i = 0; i < grp.size(); ++i) {
      const Trajectory& t = ds.rows[static_cast<std::size_t>(grp[i])];
      X.row(static_cast<Eigen::Index>(i)) =
          basis.eval(history_features(t, k)).transpose();
      yy[static_cast<Eigen::Index>(i)] = y[static_cast<std::size_t>(grp[i])];
      ysum += yy[static_cast<Eigen::Index>(i)];
      ++m;
    }
    GlmOptions o;
    o.ridge = final_fit ? 0.0 : ridge;
    o.tol = 1e-9;
    GlmFit fit = fit_glm(X, yy, EVec::Ones(X.rows()), EVec::Zero(X.rows()), link, o);
    if (!fit.converged && !fit.ridge_fallback_used) {
      if (final_fit) return cand;
      // fold-level degeneracy: refit with ridge
      o.ridge = std::max(ridge, 1e-6);
      fit = fit_glm(X, yy, EVec::Ones(X.rows()), EVec::Zero(X.rows()), link, o);
      if (!fit.converged) return cand;
    }
    if (fit.ridge_fallback_used) cand.flags |= 2;
    cand.model.coef[key] = fit.coef;
  }
  double ymean = m > 0 ? ysum / static_cast<double>(m) : 0.0;
  cand.model.fallback = safe_linpred(link, link == Link::identity
                                               ? ymean
                                               : std::min(std::max(ymean, 1e-6), 1.0 - 1e-6));
  cand.ok = true;
  return cand;
}

FittedFn series_fit(const SeriesLearnerConfig& cfg, const Dataset& ds,
                    const ProblemSpec& spec, const std::vector<int>& rows,
                    const std::vector<double>& y, int k, bool include_ak, Link link) {
  require(!rows.empty(), "series learner: no rows to fit");
  const int d = static_cast<int>(
      history_features(ds.rows[static_cast<std::size_t>(rows[0])], k).size());

  // training range per feature (histogram / pwlinear families)
  EVec lo = EVec::Constant(d, std::numeric_limits<double>::infinity());
  EVec hi = EVec::Constant(d, -std::numeric_limits<double>::infinity());
  for (int r : rows) {
    EVec x = history_features(ds.rows[static_cast<std::size_t>(r)], k);
    lo = lo.cwiseMin(x);
    hi = hi.cwiseMax(x);
  }

  // V-fold assignment, deterministic in (cv_seed, k, |rows|)
  const int V = std::max(2, cfg.V);
  std::vector<int> fold(rows.size());
  {
    std::vector<int> perm(rows.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 eng(seed_stream(cfg.cv_seed, 0x5e1fULL * static_cast<std::uint64_t>(k) +
                                                     rows.size()));
    std::shuffle(perm.begin(), perm.end(), eng);
    for (std::size_t i = 0; i < perm.size(); ++i)
      fold[static_cast<std::size_t>(perm[i])] = static_cast<int>(i) % V;
  }

  int best_m = -1;
  double best_loss = std::numeric_limits<double>::infinity();
  int skip_flags = 0;
  for (int m : cfg.m_grid) {
    BasisDef basis{cfg.basis, m, lo, hi};
    // feasibility on the full row set
    CandidateFit probe =
        fit_candidate(ds, spec, rows, y, k, include_ak, link, basis, cfg.ridge, true);
    if (!probe.ok) {
      skip_flags |= probe.flags | 4;
      continue;
    }
    double loss = 0.0;
    long cnt = 0;
    bool valid = true;
    for (int v = 0; v < V && valid; ++v) {
      std::vector<int> tr, te;
      for (std::size_t i = 0; i < rows.size(); ++i)
        (fold[i] == v ? te : tr).push_back(rows[i]);
      if (tr.empty() || te.empty()) continue;
      CandidateFit cf =
          fit_candidate(ds, spec, tr, y, k, include_ak, link, basis, cfg.ridge, false);
      if (!cf.ok) {
        valid = false;
        break;
      }
      for (int r : te) {
        const Trajectory& t = ds.rows[static_cast<std::size_t>(r)];
        double lp = cf.model.predict_lp(t, include_ak ? t.a(k) : 0);
        double yr = y[static_cast<std::size_t>(r)];
        if (link == Link::identity) {
          double e = yr - lp;
          loss += e * e;
        } else {
          double p = link_mean(link, lp);
          p = std::min(std::max(p, 1e-9), 1.0 - 1e-9);
          loss += -(yr * std::log(p) + (1.0 - yr) * std::log(1.0 - p));
        }
        ++cnt;
      }
    }
    if (!valid || cnt == 0) continue;
    loss /= static_cast<double>(cnt);
    if (loss < best_loss - 1e-12) {  // ties resolve toward the smaller m
      best_loss = loss;
      best_m = m;
    }
  }
  require(best_m >= 0,
          "series learner: all candidate sizes were singular or infeasible on this sample");

  BasisDef basis{cfg.basis, best_m, lo, hi};
  CandidateFit fin =
      fit_candidate(ds, spec, rows, y, k, include_ak, link, basis, cfg.ridge, true);
  require(fin.ok, "series learner: final refit failed");

  FittedFn fn;
  auto model = std::make_shared<SeriesModel>(std::move(fin.model));
  fn.f = [model](int a_code, const Trajectory& t) {
    return link_mean(model->link, model->predict_lp(t, a_code));
  };
  auto tr = std::make_shared<std::vector<int>>(rows);
  std::sort(tr->begin(), tr->end());
  fn.trained_rows = tr;
  fn.flags = fin.flags | skip_flags;
  return fn;
}

}  // namespace

SeriesLearner::SeriesLearner(SeriesLearnerConfig cfg) : cfg_(std::move(cfg)) {
  require(!cfg_.m_grid.empty(), "series learner: candidate grid must be nonempty");
  require(cfg_.V >= 2, "series learner: V >= 2 folds required");
}

FittedFn SeriesLearner::fit_conditional_mean(const Dataset& ds, const ProblemSpec& spec,
                                             const std::vector<int>& rows,
                                             const std::vector<double>& outcome,
                                             int k) const {
  return series_fit(cfg_, ds, spec, rows, outcome, k, /*include_ak=*/true,
                    Link::identity);
}

FittedFn SeriesLearner::fit_conditional_density(const Dataset& ds,
                                                const ProblemSpec& spec,
                                                const std::vector<int>& rows,
                                                int k) const {
  const auto& space = spec.treatment_spaces[static_cast<std::size_t>(k) - 1];
  require(space.size() == 2, "series learner densities support binary treatments only");
  std::vector<double> y(static_cast<std::size_t>(ds.n()), 0.0);
  for (int r : rows)
    y[static_cast<std::size_t>(r)] =
        ds.rows[static_cast<std::size_t>(r)].a(k) == space[1] ? 1.0 : 0.0;
  FittedFn p1 = series_fit(cfg_, ds, spec, rows, y, k, /*include_ak=*/false, Link::logit);
  FittedFn fn;
  int hi_code = space[1];
  auto inner = std::make_shared<FittedFn>(std::move(p1));
  fn.f = [inner, hi_code](int a_code, const Trajectory& t) {
    double p = inner->f(0, t);
    return a_code == hi_code ? p : 1.0 - p;
  };
  fn.trained_rows = inner->trained_rows;
  fn.flags = inner->flags;
  return fn;
}

FittedFn OracleLearner::fit_conditional_mean(const Dataset&, const ProblemSpec&,
                                             const std::vector<int>& rows,
                                             const std::vector<double>&, int k) const {
  FittedFn fn;
  const Oracle* oc = &oc_;
  fn.f = [oc, k](int a_code, const Trajectory& t) {
    std::vector<int> li, ai;
    for (int j = 1; j <= k; ++j) li.push_back(oc->l_index(j, t.l(j)));
    for (int j = 1; j < k; ++j) ai.push_back(oc->a_index(j, t.a(j)));
    ai.push_back(oc->a_index(k, a_code));
    return oc->eta_true().eta[static_cast<std::size_t>(k) - 1][oc->idx_la(li, ai, k)];
  };
  auto tr = std::make_shared<std::vector<int>>(rows);
  std::sort(tr->begin(), tr->end());
  fn.trained_rows = tr;
  return fn;
}

FittedFn OracleLearner::fit_conditional_density(const Dataset&, const ProblemSpec&,
                                                const std::vector<int>& rows,
                                                int k) const {
  FittedFn fn;
  const Oracle* oc = &oc_;
  fn.f = [oc, k](int a_code, const Trajectory& t) {
    std::vector<int> li, ai;
    for (int j = 1; j <= k; ++j) li.push_back(oc->l_index(j, t.l(j)));
    for (int j = 1; j < k; ++j) ai.push_back(oc->a_index(j, t.a(j)));
    ai.push_back(oc->a_index(k, a_code));
    return oc->law().h_tables[static_cast<std::size_t>(k) - 1]
                             [oc->idx_lam(li, ai, k) * oc->na(k) + ai.back()];
  };
  auto tr = std::make_shared<std::vector<int>>(rows);
  std::sort(tr->begin(), tr->end());
  fn.trained_rows = tr;
  return fn;
}

// ---------------------------------------------------------------------------
// Cross-fit estimation
// ---------------------------------------------------------------------------

namespace {

NuisanceFns bundle(const std::vector<FittedFn>& etas, const std::vector<FittedFn>& hs) {
  NuisanceFns fns;
  fns.eta = [&etas](int k, int a, const Trajectory& t) {
    return etas[static_cast<std::size_t>(k) - 1].f(a, t);
  };
  fns.h = [&hs](int k, int a, const Trajectory& t) {
    return std::max(hs[static_cast<std::size_t>(k) - 1].f(a, t), kEps);
  };
  return fns;
}

}  // namespace

CrossFitResult cross_fit_six(const Dataset& ds, const ProblemSpec& spec,
                             const Learner& eta_learner, const Learner& h_learner,
                             Link link, int U, std::uint64_t seed) {
  ds.validate(spec);
  SplitPlan plan = make_splits(ds.n(), U, seed);
  const int n = ds.n(), K = spec.K;
  auto pis = pistar_table(ds, spec);

  CrossFitResult out;
  const char* ids[6] = {"dr_cf", "dr_cf_bang", "dr_cf_reg",
                        "mr_cf", "mr_cf_bang", "mr_cf_reg"};
  for (int e = 0; e < 6; ++e) {
    out.reports[static_cast<std::size_t>(e)].estimator = ids[e];
    out.reports[static_cast<std::size_t>(e)].seed = seed;
  }
  long degenerate_fits = 0;

  for (int u = 0; u < U; ++u) {
    std::vector<int> train = plan.train_rows(u), val = plan.split_rows(u);
    require(!val.empty(), "empty validation split");

    // (a) treatment densities on the training sample
    std::vector<FittedFn> hhat;
    for (int k = 1; k <= K; ++k)
      hhat.push_back(h_learner.fit_conditional_density(ds, spec, train, k));
    auto hflo = [&](int k, int a, const Trajectory& t) {
      return std::max(hhat[static_cast<std::size_t>(k) - 1].f(a, t), kEps);
    };
    auto pif = [&](const Trajectory& t, int upto) {
      double p = 1.0;
      for (int r = 1; r <= upto; ++r) p *= hflo(r, t.a(r), t);
      return p;
    };

    // (b) plain iterated outcome regressions
    std::vector<FittedFn> eta_dr;
    eta_dr.resize(static_cast<std::size_t>(K));
    {
      std::vector<double> yhat(static_cast<std::size_t>(n), 0.0);
      for (int i = 0; i < n; ++i)
        yhat[static_cast<std::size_t>(i)] = spec.psi(ds.rows[static_cast<std::size_t>(i)]);
      for (int k = K; k >= 1; --k) {
        std::vector<int> fit_rows;
        for (int r : train)
          if (pis[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)] > 0.0)
            fit_rows.push_back(r);
        require(!fit_rows.empty(), "no training rows with positive regime weight at k=" +
                                       std::to_string(k));
        eta_dr[static_cast<std::size_t>(k) - 1] =
            eta_learner.fit_conditional_mean(ds, spec, fit_rows, yhat, k);
        const FittedFn& fk = eta_dr[static_cast<std::size_t>(k) - 1];
        for (int r : train) {
          const Trajectory& t = ds.rows[static_cast<std::size_t>(r)];
          if (pis[static_cast<std::size_t>(r)][static_cast<std::size_t>(k) - 1] > 0.0)
            yhat[static_cast<std::size_t>(r)] =
                y_under_regime([&](int a) { return fk.f(a, t); }, t, spec, k);
          else
            yhat[static_cast<std::size_t>(r)] = 0.0;
        }
      }
    }

    // (c) multiply robust iterated regressions
    std::vector<FittedFn> eta_mr;
    eta_mr.resize(static_cast<std::size_t>(K));
    {
      std::vector<double> qt(static_cast<std::size_t>(n), 0.0);
      for (int i = 0; i < n; ++i)
        qt[static_cast<std::size_t>(i)] = spec.psi(ds.rows[static_cast<std::size_t>(i)]);
      for (int k = K; k >= 1; --k) {
        std::vector<int> fit_rows;
        for (int r : train)
          if (pis[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)] > 0.0)
            fit_rows.push_back(r);
        require(!fit_rows.empty(), "no training rows with positive regime weight at k=" +
                                       std::to_string(k));
        eta_mr[static_cast<std::size_t>(k) - 1] =
            eta_learner.fit_conditional_mean(ds, spec, fit_rows, qt, k);
        const FittedFn& fk = eta_mr[static_cast<std::size_t>(k) - 1];
        for (int r : train) {
          const Trajectory& t = ds.rows[static_cast<std::size_t>(r)];
          if (pis[static_cast<std::size_t>(r)][static_cast<std::size_t>(k) - 1] <= 0.0) {
            qt[static_cast<std::size_t>(r)] = 0.0;
            continue;
          }
          double yk = y_under_regime([&](int a) { return fk.f(a, t); }, t, spec, k);
          double hs = spec.regime.density(k, t.a(k), t);
          double ratio = hs != 0.0 ? (hs / hflo(k, t.a(k), t)) *
                                         (qt[static_cast<std::size_t>(r)] - fk.f(t.a(k), t))
                                   : 0.0;
          qt[static_cast<std::size_t>(r)] = ratio + yk;
        }
      }
    }

    // no-leakage bookkeeping: every nuisance evaluated on validation rows must
    // have been trained without them
    for (int r : val) {
      for (int k = 1; k <= K; ++k) {
        require(!hhat[static_cast<std::size_t>(k) - 1].trained_on(r),
                "leakage: validation row in the density training set");
        require(!eta_dr[static_cast<std::size_t>(k) - 1].trained_on(r) &&
                    !eta_mr[static_cast<std::size_t>(k) - 1].trained_on(r),
                "leakage: validation row in the regression training set");
      }
    }

    // (d)/(e) validation-split clever-covariate and intercept refits
    struct Variant {
      const std::vector<FittedFn>* etas;
      std::vector<double> ybang, yreg;
      double est_bang = 0.0, est_reg = 0.0;
    };
    Variant variants[2];
    variants[0].etas = &eta_mr;
    variants[1].etas = &eta_dr;
    for (auto& vr : variants) {
      vr.ybang.assign(static_cast<std::size_t>(n), 0.0);
      for (int i = 0; i < n; ++i)
        vr.ybang[static_cast<std::size_t>(i)] =
            spec.psi(ds.rows[static_cast<std::size_t>(i)]);
      vr.yreg = vr.ybang;
      for (int k = K; k >= 1; --k) {
        const FittedFn& ek = (*vr.etas)[static_cast<std::size_t>(k) - 1];
        std::vector<int> vrows;
        for (int r : val)
          if (pis[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)] > 0.0)
            vrows.push_back(r);
        double lam = 0.0, beta = 0.0;
        if (vrows.empty()) {
          ++degenerate_fits;
        } else {
          Eigen::Index m = static_cast<Eigen::Index>(vrows.size());
          EVec yb(m), yr(m), offs(m), z(m), wb(m), wr(m);
          for (Eigen::Index i = 0; i < m; ++i) {
            int r = vrows[static_cast<std::size_t>(i)];
            const Trajectory& t = ds.rows[static_cast<std::size_t>(r)];
            double ps = pis[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)];
            double pk = pif(t, k);
            yb[i] = vr.ybang[static_cast<std::size_t>(r)];
            yr[i] = vr.yreg[static_cast<std::size_t>(r)];
            offs[i] = safe_linpred(link, ek.f(t.a(k), t));
            z[i] = 1.0 / pk;
            wb[i] = ps;
            wr[i] = ps / pk;
          }
          GlmOptions o;
          o.tol = 1e-10;
          try {
            GlmFit fb = fit_scalar_extension(yb, offs, z, wb, link, o);
            if (fb.converged) lam = fb.coef[0];
            else ++degenerate_fits;
          } catch (const Error&) {
            ++degenerate_fits;
          }
          try {
            GlmFit fr = fit_scalar_extension(yr, offs, EVec::Ones(m), wr, link, o);
            if (fr.converged) beta = fr.coef[0];
            else ++degenerate_fits;
          } catch (const Error&) {
            ++degenerate_fits;
          }
        }
        for (int r : val) {
          const Trajectory& t = ds.rows[static_cast<std::size_t>(r)];
          if (pis[static_cast<std::size_t>(r)][static_cast<std::size_t>(k) - 1] <= 0.0) {
            vr.ybang[static_cast<std::size_t>(r)] = 0.0;
            vr.yreg[static_cast<std::size_t>(r)] = 0.0;
            continue;
          }
          double base = pif(t, k - 1);
          vr.ybang[static_cast<std::size_t>(r)] = y_under_regime(
              [&](int a) {
                double pk = base * hflo(k, a, t);
                return link_mean(link, safe_linpred(link, ek.f(a, t)) + lam / pk);
              },
              t, spec, k);
          vr.yreg[static_cast<std::size_t>(r)] = y_under_regime(
              [&](int a) {
                return link_mean(link, safe_linpred(link, ek.f(a, t)) + beta);
              },
              t, spec, k);
        }
      }
      vr.est_bang = mean_over(val, vr.ybang);
      vr.est_reg = mean_over(val, vr.yreg);
    }

    // split estimates
    NuisanceFns fns_mr = bundle(eta_mr, hhat);
    NuisanceFns fns_dr = bundle(eta_dr, hhat);
    double mr_split = 0.0, dr_split = 0.0;
    for (int r : val) {
      const Trajectory& t = ds.rows[static_cast<std::size_t>(r)];
      mr_split += q_backward(t, spec, fns_mr, 1);
      dr_split += q_backward(t, spec, fns_dr, 1);
    }
    mr_split /= static_cast<double>(val.size());
    dr_split /= static_cast<double>(val.size());

    out.reports[0].per_split.push_back(dr_split);
    out.reports[1].per_split.push_back(variants[1].est_bang);
    out.reports[2].per_split.push_back(variants[1].est_reg);
    out.reports[3].per_split.push_back(mr_split);
    out.reports[4].per_split.push_back(variants[0].est_bang);
    out.reports[5].per_split.push_back(variants[0].est_reg);

    out.h_per_split.push_back(hhat);
    out.eta_mr_per_split.push_back(eta_mr);
    out.eta_dr_per_split.push_back(eta_dr);
  }

  for (auto& rep : out.reports) {
    double s = 0.0;
    for (double v : rep.per_split) s += v;
    rep.estimate = s / static_cast<double>(rep.per_split.size());
    rep.diagnostics["U"] = U;
    rep.diagnostics["degenerate_validation_fits"] = degenerate_fits;
    rep.diagnostics["leakage_checked"] = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nested cross-fitting
// ---------------------------------------------------------------------------

EstimateReport two_layer(const Dataset& ds, const ProblemSpec& spec,
                         const Learner& eta_learner, const Learner& h_learner, int U,
                         std::uint64_t seed) {
  ds.validate(spec);
  const int n = ds.n(), K = spec.K;
  SplitPlan plan = make_splits(n, U, seed);
  auto pis = pistar_table(ds, spec);

  EstimateReport rep;
  rep.estimator = "mr_two_layer";
  rep.seed = seed;

  for (int u1 = 0; u1 < U; ++u1) {
    std::vector<int> comp = plan.train_rows(u1), first = plan.split_rows(u1);
    // second-layer partition of the complement into K cells (one per timepoint)
    std::vector<std::vector<int>> cell(static_cast<std::size_t>(K));
    if (K == 1) {
      cell[0] = comp;
    } else {
      std::vector<int> perm = comp;
      std::mt19937_64 eng(seed_stream(seed, 0xA001 + static_cast<std::uint64_t>(u1)));
      std::shuffle(perm.begin(), perm.end(), eng);
      for (std::size_t i = 0; i < perm.size(); ++i)
        cell[i % static_cast<std::size_t>(K)].push_back(perm[i]);
    }
    for (int k = 1; k <= K; ++k)
      require(static_cast<int>(cell[static_cast<std::size_t>(k) - 1].size()) >= 2,
              "undersized second-layer split at k=" + std::to_string(k));

    std::vector<FittedFn> hh(static_cast<std::size_t>(K)), ee(static_cast<std::size_t>(K));
    std::vector<double> qt(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i)
      qt[static_cast<std::size_t>(i)] = spec.psi(ds.rows[static_cast<std::size_t>(i)]);

    for (int k = K; k >= 1; --k) {
      const auto& rows_k = cell[static_cast<std::size_t>(k) - 1];
      hh[static_cast<std::size_t>(k) - 1] =
          h_learner.fit_conditional_density(ds, spec, rows_k, k);
      std::vector<int> fit_rows;
      for (int r : rows_k)
        if (pis[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)] > 0.0)
          fit_rows.push_back(r);
      require(!fit_rows.empty(),
              "undersized second-layer split at k=" + std::to_string(k) +
                  " (no rows with positive regime weight)");
      ee[static_cast<std::size_t>(k) - 1] =
          eta_learner.fit_conditional_mean(ds, spec, fit_rows, qt, k);

      // evaluate Q_k on the cell feeding the next regression (or the
      // first-layer split itself once k = 1)
      NuisanceFns fns = bundle(ee, hh);  // entries below k unused by q_backward(., k)
      const std::vector<int>& target = k >= 2 ? cell[static_cast<std::size_t>(k) - 2] : first;
      for (int r : target) {
        const Trajectory& t = ds.rows[static_cast<std::size_t>(r)];
        if (pis[static_cast<std::size_t>(r)][static_cast<std::size_t>(k) - 1] > 0.0)
          qt[static_cast<std::size_t>(r)] = q_backward(t, spec, fns, k);
      }
    }
    for (int r : first)
      for (int k = 1; k <= K; ++k)
        require(!hh[static_cast<std::size_t>(k) - 1].trained_on(r) &&
                    !ee[static_cast<std::size_t>(k) - 1].trained_on(r),
                "leakage: first-layer row used in a nuisance fit");
    rep.per_split.push_back(mean_over(first, qt));
  }
  double s = 0.0;
  for (double v : rep.per_split) s += v;
  rep.estimate = s / static_cast<double>(rep.per_split.size());
  rep.diagnostics["U"] = U;
  rep.diagnostics["layers"] = 2;
  rep.diagnostics["leakage_checked"] = true;
  return rep;
}

namespace {

long ipow(int b, int e) {
  long r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

FittedFn average_fns(std::vector<FittedFn> parts) {
  require(!parts.empty(), "cannot average zero fits");
  if (parts.size() == 1) return parts[0];
  FittedFn fn;
  auto shared = std::make_shared<std::vector<FittedFn>>(std::move(parts));
  fn.f = [shared](int a, const Trajectory& t) {
    double s = 0.0;
    for (const auto& p : *shared) s += p.f(a, t);
    return s / static_cast<double>(shared->size());
  };
  std::vector<int> uni;
  for (const auto& p : *shared)
    if (p.trained_rows) uni.insert(uni.end(), p.trained_rows->begin(), p.trained_rows->end());
  std::sort(uni.begin(), uni.end());
  uni.erase(std::unique(uni.begin(), uni.end()), uni.end());
  fn.trained_rows = std::make_shared<const std::vector<int>>(std::move(uni));
  return fn;
}

}  // namespace

EstimateReport multi_layer(const Dataset& ds, const ProblemSpec& spec,
                           const Learner& eta_learner, const Learner& h_learner, int U,
                           std::uint64_t seed) {
  ds.validate(spec);
  const int n = ds.n(), K = spec.K;
  require(U >= 2, "U >= 2 splits required");
  long fanout = ipow(U, K);
  require(K <= 3 && U <= 5,
          "multi-layer fan-out cap exceeded: U^K = " + std::to_string(fanout) +
              " leaf splits (cap is 5^3 = 125)");
  auto pis = pistar_table(ds, spec);

  // split tree: level k holds U^k split samples and their c-splits
  std::vector<std::vector<std::vector<int>>> splits(static_cast<std::size_t>(K) + 1);
  std::vector<std::vector<std::vector<int>>> csplits(static_cast<std::size_t>(K) + 1);
  splits[0] = {{}};
  csplits[0].resize(1);
  csplits[0][0].resize(static_cast<std::size_t>(n));
  std::iota(csplits[0][0].begin(), csplits[0][0].end(), 0);
  for (int k = 1; k <= K; ++k) {
    splits[static_cast<std::size_t>(k)].resize(static_cast<std::size_t>(ipow(U, k)));
    csplits[static_cast<std::size_t>(k)].resize(static_cast<std::size_t>(ipow(U, k)));
    for (long p = 0; p < ipow(U, k - 1); ++p) {
      std::vector<int> pool = csplits[static_cast<std::size_t>(k) - 1][static_cast<std::size_t>(p)];
      std::mt19937_64 eng(seed_stream(seed, 0xB000 + 31 * static_cast<std::uint64_t>(k) +
                                                static_cast<std::uint64_t>(p)));
      std::shuffle(pool.begin(), pool.end(), eng);
      std::vector<std::vector<int>> parts(static_cast<std::size_t>(U));
      for (std::size_t i = 0; i < pool.size(); ++i)
        parts[i % static_cast<std::size_t>(U)].push_back(pool[i]);
      for (int u = 0; u < U; ++u) {
        long idx = p + ipow(U, k - 1) * u;
        auto& sp = splits[static_cast<std::size_t>(k)][static_cast<std::size_t>(idx)];
        sp = parts[static_cast<std::size_t>(u)];
        std::sort(sp.begin(), sp.end());
        require(!sp.empty(), "undersized split in the multi-layer tree at level " +
                                 std::to_string(k));
        std::vector<int> rest;
        for (int r : pool)
          if (!std::binary_search(sp.begin(), sp.end(), r)) rest.push_back(r);
        csplits[static_cast<std::size_t>(k)][static_cast<std::size_t>(idx)] = rest;
      }
    }
  }

  // base fits: for r < K at tuples of length r+1 (on splits); for r = K at
  // leaf tuples (on c-splits)
  std::vector<std::vector<FittedFn>> base_h(static_cast<std::size_t>(K) + 1);
  std::vector<std::vector<FittedFn>> base_eta(static_cast<std::size_t>(K) + 1);
  auto base_len = [&](int r) { return r == K ? K : r + 1; };

  // averaged evaluator over all completions of a level-k tuple
  auto averaged = [&](const std::vector<std::vector<FittedFn>>& base, int r, int k,
                      long tuple) {
    int blen = base_len(r);
    long stride = ipow(U, k);
    long count = ipow(U, blen - k);
    std::vector<FittedFn> parts;
    for (long c = 0; c < count; ++c)
      parts.push_back(base[static_cast<std::size_t>(r)]
                          [static_cast<std::size_t>(tuple + stride * c)]);
    return average_fns(std::move(parts));
  };

  // leaves
  base_h[static_cast<std::size_t>(K)].resize(static_cast<std::size_t>(ipow(U, K)));
  base_eta[static_cast<std::size_t>(K)].resize(static_cast<std::size_t>(ipow(U, K)));
  std::vector<double> psi_all(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    psi_all[static_cast<std::size_t>(i)] = spec.psi(ds.rows[static_cast<std::size_t>(i)]);
  for (long t = 0; t < ipow(U, K); ++t) {
    const auto& rows = csplits[static_cast<std::size_t>(K)][static_cast<std::size_t>(t)];
    require(!rows.empty(), "empty leaf c-split in the multi-layer tree");
    base_h[static_cast<std::size_t>(K)][static_cast<std::size_t>(t)] =
        h_learner.fit_conditional_density(ds, spec, rows, K);
    std::vector<int> fit_rows;
    for (int r : rows)
      if (pis[static_cast<std::size_t>(r)][static_cast<std::size_t>(K)] > 0.0)
        fit_rows.push_back(r);
    require(!fit_rows.empty(), "no leaf rows with positive regime weight");
    base_eta[static_cast<std::size_t>(K)][static_cast<std::size_t>(t)] =
        eta_learner.fit_conditional_mean(ds, spec, fit_rows, psi_all, K);
  }

  EstimateReport rep;
  rep.estimator = "mr_multi_layer";
  rep.seed = seed;

  std::vector<double> qt(static_cast<std::size_t>(n), 0.0);
  for (int k = K; k >= 1; --k) {
    if (k >= 2) {
      base_h[static_cast<std::size_t>(k) - 1].resize(static_cast<std::size_t>(ipow(U, k)));
      base_eta[static_cast<std::size_t>(k) - 1].resize(static_cast<std::size_t>(ipow(U, k)));
    }
    for (long t = 0; t < ipow(U, k); ++t) {
      const auto& rows = splits[static_cast<std::size_t>(k)][static_cast<std::size_t>(t)];
      // nuisance bundle for Q_k at this tuple
      std::vector<FittedFn> hh(static_cast<std::size_t>(K)), ee(static_cast<std::size_t>(K));
      for (int r = k; r <= K; ++r) {
        hh[static_cast<std::size_t>(r) - 1] = averaged(base_h, r, k, t);
        ee[static_cast<std::size_t>(r) - 1] = averaged(base_eta, r, k, t);
      }
      NuisanceFns fns = bundle(ee, hh);
      for (int r : rows) {
        const Trajectory& tr = ds.rows[static_cast<std::size_t>(r)];
        if (pis[static_cast<std::size_t>(r)][static_cast<std::size_t>(k) - 1] > 0.0) {
          for (int kk = k; kk <= K; ++kk)
            require(!hh[static_cast<std::size_t>(kk) - 1].trained_on(r) &&
                        !ee[static_cast<std::size_t>(kk) - 1].trained_on(r),
                    "leakage: split row used in its own nuisance fit");
          qt[static_cast<std::size_t>(r)] = q_backward(tr, spec, fns, k);
        }
      }
      if (k >= 2) {
        base_h[static_cast<std::size_t>(k) - 1][static_cast<std::size_t>(t)] =
            h_learner.fit_conditional_density(ds, spec, rows, k - 1);
        std::vector<int> fit_rows;
        for (int r : rows)
          if (pis[static_cast<std::size_t>(r)][static_cast<std::size_t>(k) - 1] > 0.0)
            fit_rows.push_back(r);
        require(!fit_rows.empty(), "no split rows with positive regime weight at level " +
                                       std::to_string(k));
        base_eta[static_cast<std::size_t>(k) - 1][static_cast<std::size_t>(t)] =
            eta_learner.fit_conditional_mean(ds, spec, fit_rows, qt, k - 1);
      }
    }
  }
  for (int u1 = 0; u1 < U; ++u1)
    rep.per_split.push_back(mean_over(splits[1][static_cast<std::size_t>(u1)], qt));
  double s = 0.0;
  for (double v : rep.per_split) s += v;
  rep.estimate = s / static_cast<double>(rep.per_split.size());
  rep.diagnostics["U"] = U;
  rep.diagnostics["layers"] = K;
  rep.diagnostics["leaf_splits"] = fanout;
  rep.diagnostics["leakage_checked"] = true;
  return rep;
}

// ---------------------------------------------------------------------------
// Drift diagnostics
// ---------------------------------------------------------------------------

NuisanceSet tabulate_nuisances(const Oracle& oc, const std::vector<FittedFn>& etas,
                               const std::vector<FittedFn>& hs) {
  NuisanceSet ns;
  const int K = oc.K();
  ns.eta_dag.resize(static_cast<std::size_t>(K));
  ns.h_dag.resize(static_cast<std::size_t>(K));
  for (int k = 1; k <= K; ++k) {
    ns.eta_dag[static_cast<std::size_t>(k) - 1].assign(
        static_cast<std::size_t>(oc.size_la(k)), 0.0);
    oc.for_each_la(k, [&](const std::vector<int>& li, const std::vector<int>& ai) {
      Trajectory t = oc.make_traj(li, ai);
      ns.eta_dag[static_cast<std::size_t>(k) - 1][oc.idx_la(li, ai, k)] =
          etas[static_cast<std::size_t>(k) - 1].f(t.a(k), t);
    });
    ns.h_dag[static_cast<std::size_t>(k) - 1].assign(
        static_cast<std::size_t>(oc.size_lam(k) * oc.na(k)), 0.0);
    oc.for_each_lam(k, [&](const std::vector<int>& li, const std::vector<int>& ai) {
      Trajectory t = oc.make_traj(li, ai);
      long base = oc.idx_lam(li, ai, k) * oc.na(k);
      double tot = 0.0;
      for (int a = 0; a < oc.na(k); ++a) {
        double v = std::max(hs[static_cast<std::size_t>(k) - 1].f(oc.a_code(k, a), t), 0.0);
        ns.h_dag[static_cast<std::size_t>(k) - 1][base + a] = v;
        tot += v;
      }
      require(tot > 0.0, "fitted density vanished on a whole slice");
      for (int a = 0; a < oc.na(k); ++a)
        ns.h_dag[static_cast<std::size_t>(k) - 1][base + a] /= tot;
    });
  }
  return ns;
}

DriftDiagnostic drift_diagnostic(const Oracle& oc,
                                 const std::vector<NuisanceSet>& fitted_per_split,
                                 DriftFlavor flavor) {
  require(!fitted_per_split.empty(), "drift diagnostic needs at least one split");
  DriftDiagnostic out;
  for (const auto& ns : fitted_per_split)
    out.per_split.push_back(oc.drift_expected(ns, flavor));
  out.average.flavor = flavor;
  out.average.terms = out.per_split[0].terms;
  for (auto& t : out.average.terms) t.value = 0.0;
  out.average.total = 0.0;
  for (const auto& rep : out.per_split) {
    for (std::size_t i = 0; i < rep.terms.size(); ++i)
      out.average.terms[i].value += rep.terms[i].value / out.per_split.size();
    out.average.total += rep.total / out.per_split.size();
  }
  return out;
}

}  // namespace gmr
