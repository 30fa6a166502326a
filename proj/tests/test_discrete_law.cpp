#include <cmath>
#include <random>

#include "doctest.h"
#include "gmr/discrete_law.hpp"
#include "gmr/fixtures.hpp"

using namespace gmr;

namespace {

Vec scalar(double v) {
  Vec x(1);
  x[0] = v;
  return x;
}

// Exact conditional expectation given (l_1..l_k, a_1..a_k) of a functional of
// extended histories: enumerates all extensions up to (l_s, a_s), weighting by
// prod g * prod h (true law), and calls term(lx, ax) at depth s. Skips
// zero-mass extensions. Independent of the Oracle's own bias machinery.
double suffix_expect(const Oracle& oc, std::vector<int> li, std::vector<int> ai, int k,
                     int s, const std::function<double(const std::vector<int>&,
                                                       const std::vector<int>&)>& term) {
  const int K = oc.K();
  li.resize(static_cast<std::size_t>(s));
  ai.resize(static_cast<std::size_t>(std::min(s, K)));
  double total = 0.0;
  std::function<void(int, double)> rec = [&](int depth, double wgt) {
    if (depth > s) {
      total += wgt * term(li, ai);
      return;
    }
    for (int lv = 0; lv < oc.nl(depth); ++lv) {
      li[static_cast<std::size_t>(depth) - 1] = lv;
      double g = oc.g_at(depth - 1, li, ai);
      if (g == 0.0) continue;
      if (depth > K) {  // terminal block: no treatment after it
        rec(depth + 1, wgt * g);
        continue;
      }
      for (int av = 0; av < oc.na(depth); ++av) {
        ai[static_cast<std::size_t>(depth) - 1] = av;
        double h = oc.h_at(depth, li, ai);
        if (h == 0.0) continue;
        rec(depth + 1, wgt * g * h);
      }
    }
  };
  rec(k + 1, 1.0);
  return total;
}

}  // namespace

TEST_CASE("k1_basic has the hand-computable target value") {
  Fixture f = make_fixture("k1_basic");
  Oracle oc(f.law, f.spec);
  CHECK(oc.g_formula_theta() == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(oc.eta_true().theta == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("backward recursion, direct summation and the IPW identity agree") {
  for (const auto& id : fixture_ids()) {
    CAPTURE(id);
    Fixture f = make_fixture(id);
    Oracle oc(f.law, f.spec);
    double direct = oc.g_formula_theta();
    CHECK(std::abs(direct - oc.eta_true().theta) < 1e-12);
    CHECK(std::abs(direct - oc.ipw_identity_value()) < 1e-12);
  }
}

TEST_CASE("a regime-free outcome block makes theta regime-invariant") {
  Fixture f = make_fixture("k1_basic");
  // overwrite g_1 so L_2 is independent of (L_1, A_1)
  for (long c = 0; c < 4; ++c) {
    f.law.g_tables[1][static_cast<std::size_t>(c * 2 + 0)] = 0.35;
    f.law.g_tables[1][static_cast<std::size_t>(c * 2 + 1)] = 0.65;
  }
  Oracle oc1(f.law, f.spec);
  double t1 = oc1.g_formula_theta();
  ProblemSpec other = f.spec;
  other.regime = RegimeSpec::all_static(1, 0);
  Oracle oc0(f.law, other);
  CHECK(t1 == doctest::Approx(0.65).epsilon(1e-12));
  CHECK(oc0.g_formula_theta() == doctest::Approx(t1).epsilon(1e-12));
}

TEST_CASE("a point-mass law returns psi at the forced path") {
  Fixture f = make_fixture("k1_basic");
  f.law.g_tables[0] = {0.0, 1.0};  // L1 = 1
  for (long c = 0; c < 4; ++c) {
    f.law.g_tables[1][static_cast<std::size_t>(c * 2 + 0)] = 0.0;
    f.law.g_tables[1][static_cast<std::size_t>(c * 2 + 1)] = 1.0;  // L2 = 1
  }
  Oracle oc(f.law, f.spec);
  CHECK(oc.g_formula_theta() == doctest::Approx(1.0));
}

TEST_CASE("positivity violations are reported") {
  Fixture f = make_fixture("k1_basic");
  // make A1=1 impossible for l1=0 while the static regime demands it
  f.law.h_tables[0][0] = 1.0;
  f.law.h_tables[0][1] = 0.0;
  CHECK_THROWS_WITH_AS(Oracle(f.law, f.spec), doctest::Contains("positivity"), Error);
}

TEST_CASE("corrupted tables are named by the validator") {
  Fixture f = make_fixture("k2_dropout");
  f.law.g_tables[1][0] += 0.25;  // slice no longer sums to 1
  CHECK_THROWS_WITH_AS(Oracle(f.law, f.spec), doctest::Contains("sum to 1"), Error);
}

TEST_CASE("oracle size cap") {
  Fixture f = make_fixture("k3_general");
  f.law.path_cap = 10;
  CHECK_THROWS_WITH_AS(Oracle(f.law, f.spec), doctest::Contains("too large"), Error);
}

TEST_CASE("first-order bias identity holds for arbitrary outcome-regression tables") {
  // E[y_{1,eta_1}] - theta = d^g(eta) for any eta; zero at the truth, and a
  // constant shift at the last timepoint moves both sides equally.
  for (const auto& id : fixture_ids()) {
    CAPTURE(id);
    Fixture f = make_fixture(id);
    Oracle oc(f.law, f.spec);
    double theta = oc.eta_true().theta;

    auto etas = oc.eta_true().eta;
    CHECK(std::abs(oc.d_g(etas)) < 1e-12);

    auto shifted = etas;
    for (auto& v : shifted.back()) v += 0.37;
    double lhs = oc.mean_y1(shifted) - theta;
    CHECK(std::abs(lhs - oc.d_g(shifted)) < 1e-10);

    for (std::uint64_t s = 0; s < 50; ++s) {
      NuisanceSet ns = random_nuisance(oc, 1000 + s);
      double l = oc.mean_y1(ns.eta_dag) - theta;
      CHECK(std::abs(l - oc.d_g(ns.eta_dag)) < 1e-10);
    }
  }
}

TEST_CASE("the three bias decompositions coincide for arbitrary nuisance pairs") {
  for (const auto& id : fixture_ids()) {
    CAPTURE(id);
    Fixture f = make_fixture(id);
    Oracle oc(f.law, f.spec);
    for (std::uint64_t s = 0; s < 50; ++s) {
      NuisanceSet ns = random_nuisance(oc, 7000 + s);
      double a = oc.bias_a(ns);
      double b = oc.bias_b(ns);
      double c = oc.bias_c(ns);
      CHECK(std::abs(a - b) < 1e-10);
      CHECK(std::abs(a - c) < 1e-10);
    }
    // either side correct per timepoint kills the bias
    NuisanceSet ns = oracle_nuisance(oc);
    CHECK(std::abs(oc.bias_a(ns)) < 1e-12);
    NuisanceSet h_only = random_nuisance(oc, 123);
    h_only.h_dag = oc.law().h_tables;  // h correct, eta perturbed
    CHECK(std::abs(oc.bias_a(h_only)) < 1e-10);
    NuisanceSet eta_only = random_nuisance(oc, 456);
    eta_only.eta_dag = oc.eta_true().eta;  // eta correct, h perturbed
    CHECK(std::abs(oc.bias_a(eta_only)) < 1e-10);
  }
}

TEST_CASE("expected Q1 equals theta plus the a-form bias") {
  for (const auto& id : fixture_ids()) {
    CAPTURE(id);
    Fixture f = make_fixture(id);
    Oracle oc(f.law, f.spec);
    double theta = oc.eta_true().theta;
    CHECK(std::abs(oc.expected_Q1(oracle_nuisance(oc)) - theta) < 1e-12);
    for (std::uint64_t s = 0; s < 20; ++s) {
      NuisanceSet ns = random_nuisance(oc, 900 + s);
      CHECK(std::abs(oc.expected_Q1(ns) - theta - oc.bias_a(ns)) < 1e-10);
    }
  }
}

TEST_CASE("per-timepoint partial correctness recovers theta exactly") {
  // K=2: h-dagger correct at k=1, eta-dagger correct at k=2, both other
  // components perturbed.
  Fixture f = make_fixture("k2_dropout");
  Oracle oc(f.law, f.spec);
  NuisanceSet ns = random_nuisance(oc, 31);
  ns.h_dag[0] = oc.law().h_tables[0];
  ns.eta_dag[1] = oc.eta_true().eta[1];
  CHECK(std::abs(oc.expected_Q1(ns) - oc.eta_true().theta) < 1e-10);
}

TEST_CASE("conditional bias identity at every history") {
  for (const auto& id : {std::string("k1_basic"), std::string("k2_dropout"),
                         std::string("k3_general")}) {
    CAPTURE(id);
    Fixture f = make_fixture(id);
    Oracle oc(f.law, f.spec);
    NuisanceSet ns = random_nuisance(oc, 77);
    auto w = oc.w_tables(ns);
    for (int j = 1; j <= oc.K(); ++j) {
      oc.for_each_la(j, [&](const std::vector<int>& li, const std::vector<int>& ai) {
        if (oc.pistar_prefix(li, ai, j) == 0.0) return;
        double direct = oc.conditional_bias_a_j(ns, j, li, ai);
        double via_w = w[static_cast<std::size_t>(j) - 1][oc.idx_la(li, ai, j)] -
                       oc.eta_true().eta[static_cast<std::size_t>(j) - 1]
                                        [oc.idx_la(li, ai, j)];
        CHECK(std::abs(direct - via_w) < 1e-12);
      });
    }
    // j = K: the empty sum
    std::vector<int> li(static_cast<std::size_t>(oc.K()), 0),
        ai(static_cast<std::size_t>(oc.K()), 0);
    CHECK(oc.conditional_bias_a_j(ns, oc.K(), li, ai) == 0.0);
    // h-dagger = h makes every conditional bias vanish
    NuisanceSet hok = random_nuisance(oc, 78);
    hok.h_dag = oc.law().h_tables;
    oc.for_each_la(1, [&](const std::vector<int>& li1, const std::vector<int>& ai1) {
      if (oc.pistar_prefix(li1, ai1, 1) == 0.0) return;
      CHECK(std::abs(oc.conditional_bias_a_j(hok, 1, li1, ai1)) < 1e-12);
    });
  }
}

TEST_CASE("w tables match a brute-force conditional expectation of Q") {
  Fixture f = make_fixture("k2_dropout");
  Oracle oc(f.law, f.spec);
  NuisanceSet ns = random_nuisance(oc, 5);
  auto w = oc.w_tables(ns);
  NuisanceFns fns = oc.nuisance_fns(ns);
  for (int k = 1; k <= oc.K(); ++k) {
    oc.for_each_la(k, [&](const std::vector<int>& li, const std::vector<int>& ai) {
      double brute = suffix_expect(
          oc, li, ai, k, oc.K() + 1,
          [&](const std::vector<int>& lx, const std::vector<int>& ax) {
            Trajectory t = oc.make_traj(lx, ax);
            return q_backward(t, oc.spec(), fns, k + 1);
          });
      CHECK(std::abs(brute - w[static_cast<std::size_t>(k) - 1][oc.idx_la(li, ai, k)]) <
            1e-12);
    });
  }
}

TEST_CASE("pointwise product telescoping over dagger densities") {
  // sum_{k=j+1}^{s-1} pidag_{j+1}^{k-1,-1} (1/h_k - 1/hdag_k) / pi_{k+1}^{s-1}
  //   = 1/pi_{j+1}^{s-1} - 1/pidag_{j+1}^{s-1}
  // and its starred counterpart, on every full history of the K=3 fixture.
  Fixture f = make_fixture("k3_general");
  Oracle oc(f.law, f.spec);
  NuisanceSet ns = random_nuisance(oc, 9);
  const int K = oc.K();
  oc.for_each_la(K, [&](const std::vector<int>& li, const std::vector<int>& ai) {
    auto h = [&](int r) { return oc.h_at(r, li, ai); };
    auto hd = [&](int r) {
      return ns.h_dag[static_cast<std::size_t>(r) - 1]
                     [oc.idx_lam(li, ai, r) * oc.na(r) + ai[static_cast<std::size_t>(r) - 1]];
    };
    auto hs = [&](int r) { return oc.hstar_at(r, li, ai, ai[static_cast<std::size_t>(r) - 1]); };
    auto prod = [&](auto f_, int lo, int hi) {
      double p = 1.0;
      for (int r = lo; r <= hi; ++r) p *= f_(r);
      return p;
    };
    if (prod(h, 1, K) == 0.0) return;  // off the law's support
    for (int j = 0; j <= K - 2; ++j) {
      for (int s = j + 2; s <= K + 1; ++s) {
        double lhs = 0.0;
        for (int k = j + 1; k <= s - 1; ++k)
          lhs += (1.0 / prod(hd, j + 1, k - 1)) * (1.0 / h(k) - 1.0 / hd(k)) /
                 prod(h, k + 1, s - 1);
        double rhs = 1.0 / prod(h, j + 1, s - 1) - 1.0 / prod(hd, j + 1, s - 1);
        CHECK(std::abs(lhs - rhs) < 1e-12);
      }
    }
    // starred variant with pi* factors
    for (int j = 1; j <= K; ++j) {
      double lhs = 0.0;
      for (int k = 1; k <= j; ++k)
        lhs += (prod(hs, 1, k - 1) / prod(hd, 1, k - 1)) * (hs(k) / h(k) - hs(k) / hd(k)) *
               (prod(hs, k + 1, j) / prod(h, k + 1, j));
      double rhs = prod(hs, 1, j) / prod(h, 1, j) - prod(hs, 1, j) / prod(hd, 1, j);
      CHECK(std::abs(lhs - rhs) < 1e-12);
    }
  });
}

TEST_CASE("pointwise Gamma recursion identity") {
  // pi*^k (etadag_k - eta^g_k) = Gamma_k
  //   + sum_{s>k} E[(1/pi_{k+1}^{s-1})(1/h_s - 1/hdag_s) Gamma_s | history_k]
  for (const auto& id : {std::string("k2_dropout"), std::string("k3_general")}) {
    CAPTURE(id);
    Fixture f = make_fixture(id);
    Oracle oc(f.law, f.spec);
    for (std::uint64_t sd = 0; sd < 5; ++sd) {
      NuisanceSet ns = random_nuisance(oc, 40 + sd);
      auto w = oc.w_tables(ns);
      auto gamma_at = [&](int s, const std::vector<int>& lx, const std::vector<int>& ax) {
        long ix = oc.idx_la(lx, ax, s);
        return oc.pistar_prefix(lx, ax, s) *
               (ns.eta_dag[static_cast<std::size_t>(s) - 1][ix] -
                w[static_cast<std::size_t>(s) - 1][ix]);
      };
      for (int k = 1; k <= oc.K(); ++k) {
        oc.for_each_la(k, [&](const std::vector<int>& li, const std::vector<int>& ai) {
          if (oc.hw_prefix(li, ai, k) == 0.0) return;  // condition on reachable histories
          long ix = oc.idx_la(li, ai, k);
          double lhs = oc.pistar_prefix(li, ai, k) *
                       (ns.eta_dag[static_cast<std::size_t>(k) - 1][ix] -
                        oc.eta_true().eta[static_cast<std::size_t>(k) - 1][ix]);
          double rhs = gamma_at(k, li, ai);
          for (int s = k + 1; s <= oc.K(); ++s) {
            rhs += suffix_expect(
                oc, li, ai, k, s,
                [&](const std::vector<int>& lx, const std::vector<int>& ax) {
                  double g = gamma_at(s, lx, ax);
                  if (g == 0.0) return 0.0;
                  double mid = 1.0;
                  for (int r = k + 1; r <= s - 1; ++r) mid *= oc.h_at(r, lx, ax);
                  double hsv = oc.h_at(s, lx, ax);
                  double hdv = ns.h_dag[static_cast<std::size_t>(s) - 1]
                                       [oc.idx_lam(lx, ax, s) * oc.na(s) +
                                        ax[static_cast<std::size_t>(s) - 1]];
                  return (1.0 / mid) * (1.0 / hsv - 1.0 / hdv) * g;
                });
          }
          CHECK(std::abs(lhs - rhs) < 1e-10);
        });
      }
    }
  }
}

TEST_CASE("pointwise residual-expansion identity for eta differences") {
  // etadag_k - eta^g_k = sum_{j>=k} E[(pi*_{k+1}^j/pi_{k+1}^j) delta_j | history_k]
  // on histories with pi*^k > 0, where delta_j = etadag_j - E_{g_j}[y_{j+1}|.].
  Fixture f = make_fixture("k3_general");
  Oracle oc(f.law, f.spec);
  for (std::uint64_t sd = 0; sd < 5; ++sd) {
    NuisanceSet ns = random_nuisance(oc, 60 + sd);
    // delta tables by direct summation
    std::vector<std::vector<double>> delta(static_cast<std::size_t>(oc.K()));
    for (int k = oc.K(); k >= 1; --k) {
      delta[static_cast<std::size_t>(k) - 1].assign(
          static_cast<std::size_t>(oc.size_la(k)), 0.0);
      oc.for_each_la(k, [&](const std::vector<int>& li, const std::vector<int>& ai) {
        std::vector<int> lx = li;
        lx.push_back(0);
        double inner = 0.0;
        for (int v = 0; v < oc.nl(k + 1); ++v) {
          lx[static_cast<std::size_t>(k)] = v;
          double g = oc.g_at(k, lx, ai);
          if (g == 0.0) continue;
          double ynext;
          if (k == oc.K()) {
            ynext = oc.psi_at(lx, ai);
          } else {
            std::vector<int> ax = ai;
            ax.push_back(0);
            ynext = 0.0;
            for (int av = 0; av < oc.na(k + 1); ++av) {
              double hsv = oc.hstar_at(k + 1, lx, ai, av);
              if (hsv == 0.0) continue;
              ax[static_cast<std::size_t>(k)] = av;
              ynext += hsv * ns.eta_dag[static_cast<std::size_t>(k)][oc.idx_la(lx, ax, k + 1)];
            }
          }
          inner += g * ynext;
        }
        long ix = oc.idx_la(li, ai, k);
        delta[static_cast<std::size_t>(k) - 1][ix] =
            ns.eta_dag[static_cast<std::size_t>(k) - 1][ix] - inner;
      });
    }
    for (int k = 1; k <= oc.K(); ++k) {
      oc.for_each_la(k, [&](const std::vector<int>& li, const std::vector<int>& ai) {
        if (oc.pistar_prefix(li, ai, k) == 0.0) return;
        if (oc.hw_prefix(li, ai, k) == 0.0) return;
        long ix = oc.idx_la(li, ai, k);
        double lhs = ns.eta_dag[static_cast<std::size_t>(k) - 1][ix] -
                     oc.eta_true().eta[static_cast<std::size_t>(k) - 1][ix];
        double rhs = delta[static_cast<std::size_t>(k) - 1][ix];
        for (int j = k + 1; j <= oc.K(); ++j) {
          rhs += suffix_expect(oc, li, ai, k, j,
                               [&](const std::vector<int>& lx, const std::vector<int>& ax) {
                                 double ratio = 1.0;
                                 for (int r = k + 1; r <= j; ++r) {
                                   double hsv = oc.hstar_at(
                                       r, lx, ax, ax[static_cast<std::size_t>(r) - 1]);
                                   if (hsv == 0.0) return 0.0;
                                   ratio *= hsv / oc.h_at(r, lx, ax);
                                 }
                                 return ratio * delta[static_cast<std::size_t>(j) - 1]
                                                     [oc.idx_la(lx, ax, j)];
                               });
        }
        CHECK(std::abs(lhs - rhs) < 1e-10);
      });
    }
  }
}

TEST_CASE("q recursion: the three algebraic forms agree per subject") {
  for (const auto& id : fixture_ids()) {
    CAPTURE(id);
    Fixture f = make_fixture(id);
    Oracle oc(f.law, f.spec);
    Dataset ds = oc.sample(50, 2024);
    for (std::uint64_t sd = 0; sd < 5; ++sd) {
      NuisanceSet ns = random_nuisance(oc, 500 + sd);
      NuisanceFns fns = oc.nuisance_fns(ns);
      for (const auto& t : ds.rows) {
        for (int j = 1; j <= oc.K() + 1; ++j) {
          double q3 = q_backward(t, f.spec, fns, j);
          CHECK(std::abs(q3 - q_ipw_sum(t, f.spec, fns, j)) < 1e-10);
          CHECK(std::abs(q3 - q_telescoped(t, f.spec, fns, j)) < 1e-10);
        }
        CHECK(oc.q_recursion(t, ns, oc.K() + 1) == f.spec.psi(t));
      }
    }
  }
}

TEST_CASE("drift tables: term counts, totals, and the single-perturbation pattern") {
  Fixture f = make_fixture("k2_dropout");
  Oracle oc(f.law, f.spec);
  const int K = oc.K();

  SUBCASE("true nuisances give zero drift") {
    NuisanceSet ns = oracle_nuisance(oc);
    for (auto flavor : {DriftFlavor::MR, DriftFlavor::DR}) {
      DriftReport rep = oc.drift_expected(ns, flavor);
      for (const auto& t : rep.terms) CHECK(std::abs(t.value) < 1e-12);
    }
  }

  SUBCASE("totals reproduce the matching bias forms") {
    for (std::uint64_t sd = 0; sd < 10; ++sd) {
      NuisanceSet ns = random_nuisance(oc, 800 + sd);
      DriftReport mr = oc.drift_expected(ns, DriftFlavor::MR);
      DriftReport dr = oc.drift_expected(ns, DriftFlavor::DR);
      CHECK(static_cast<int>(mr.terms.size()) == K);
      CHECK(static_cast<int>(dr.terms.size()) == K + K * (K - 1) / 2);
      CHECK(std::abs(mr.total - oc.bias_b(ns)) < 1e-10);
      CHECK(std::abs(dr.total - oc.bias_c(ns)) < 1e-10);
      CHECK(std::abs(dr.total - oc.bias_a(ns)) < 1e-10);
    }
  }

  SUBCASE("perturbing only the first timepoint leaves one nonzero term") {
    NuisanceSet ns = random_nuisance(oc, 99);
    ns.h_dag[1] = oc.law().h_tables[1];      // k=2 treatment model true
    ns.eta_dag[1] = oc.eta_true().eta[1];    // k=2 outcome model true
    DriftReport mr = oc.drift_expected(ns, DriftFlavor::MR);
    CHECK(std::abs(mr.terms[0].value) > 1e-4);
    CHECK(std::abs(mr.terms[1].value) < 1e-12);
    DriftReport dr = oc.drift_expected(ns, DriftFlavor::DR);
    int nonzero = 0;
    for (const auto& t : dr.terms) nonzero += std::abs(t.value) > 1e-12 ? 1 : 0;
    CHECK(nonzero == 1);
  }
}

TEST_CASE("forward sampling is deterministic and matches the tables") {
  Fixture f = make_fixture("k2_dropout");
  Oracle oc(f.law, f.spec);

  SUBCASE("n must be positive") { CHECK_THROWS_AS(oc.sample(0, 1), Error); }

  SUBCASE("same seed, same data") {
    Dataset a = oc.sample(200, 77), b = oc.sample(200, 77);
    for (int i = 0; i < 200; ++i) {
      CHECK(a.rows[static_cast<std::size_t>(i)].a(1) ==
            b.rows[static_cast<std::size_t>(i)].a(1));
      CHECK(a.rows[static_cast<std::size_t>(i)].l(3)[0] ==
            b.rows[static_cast<std::size_t>(i)].l(3)[0]);
    }
  }

  SUBCASE("a point-mass law yields identical rows") {
    Fixture f1 = make_fixture("k1_basic");
    f1.law.g_tables[0] = {1.0, 0.0};
    f1.law.h_tables[0] = {0.0, 1.0, 0.0, 1.0};
    for (long c = 0; c < 4; ++c) {
      f1.law.g_tables[1][static_cast<std::size_t>(2 * c)] = 1.0;
      f1.law.g_tables[1][static_cast<std::size_t>(2 * c + 1)] = 0.0;
    }
    Oracle oc1(f1.law, f1.spec);
    Dataset ds = oc1.sample(25, 3);
    for (const auto& t : ds.rows) {
      CHECK(t.l(1)[0] == 0.0);
      CHECK(t.a(1) == 1);
      CHECK(t.l(2)[0] == 0.0);
    }
  }

  SUBCASE("empirical marginals approach the law, chi-square sane") {
    const int n = 100000;
    Dataset ds = oc.sample(n, 12345);
    // marginal of L1 and conditional frequency of A1 given L1
    std::vector<long> cl1(3, 0);
    std::vector<long> ca1(3, 0);
    for (const auto& t : ds.rows) {
      int v = oc.l_index(1, t.l(1));
      cl1[static_cast<std::size_t>(v)]++;
      if (t.a(1) == 1) ca1[static_cast<std::size_t>(v)]++;
    }
    double chi2 = 0.0;
    for (int v = 0; v < 3; ++v) {
      double expct = f.law.g_tables[0][static_cast<std::size_t>(v)] * n;
      chi2 += (cl1[static_cast<std::size_t>(v)] - expct) *
              (cl1[static_cast<std::size_t>(v)] - expct) / expct;
      CHECK(std::abs(cl1[static_cast<std::size_t>(v)] / static_cast<double>(n) -
                     f.law.g_tables[0][static_cast<std::size_t>(v)]) < 0.01);
      double phat = static_cast<double>(ca1[static_cast<std::size_t>(v)]) /
                    cl1[static_cast<std::size_t>(v)];
      CHECK(std::abs(phat - f.law.h_tables[0][static_cast<std::size_t>(v * 2 + 1)]) < 0.01);
    }
    CHECK(chi2 < 13.8);  // chi-square(2) at alpha = 0.001
  }
}

TEST_CASE("empirical plug-in theta") {
  Fixture f = make_fixture("k1_basic");
  // dyadic law so an exhaustive dataset reproduces the probabilities exactly
  f.law.g_tables[0] = {0.5, 0.5};
  f.law.h_tables[0] = {0.5, 0.5, 0.25, 0.75};
  f.law.g_tables[1] = {0.75, 0.25, 0.5, 0.5, 0.25, 0.75, 0.125, 0.875};
  Oracle oc(f.law, f.spec);

  SUBCASE("exhaustive enumeration reproduces the exact functional") {
    Dataset ds;
    std::vector<int> li(2), ai(1);
    for (int l1 = 0; l1 < 2; ++l1)
      for (int a1 = 0; a1 < 2; ++a1)
        for (int l2 = 0; l2 < 2; ++l2) {
          li[0] = l1;
          ai[0] = a1;
          li[1] = l2;
          double p = oc.gw_prefix(li, ai, 2) * oc.hw_prefix(li, ai, 1);
          long copies = std::lround(p * 64);
          for (long c = 0; c < copies; ++c) ds.rows.push_back(oc.make_traj(li, ai));
        }
    REQUIRE(ds.n() == 64);
    double mle = empirical_mle_theta(ds, f.spec, f.law.l_supports);
    CHECK(mle == doctest::Approx(oc.g_formula_theta()).epsilon(1e-12));
  }

  SUBCASE("large samples land near the truth") {
    Dataset ds = oc.sample(100000, 8);
    double mle = empirical_mle_theta(ds, f.spec, f.law.l_supports);
    CHECK(std::abs(mle - oc.g_formula_theta()) < 0.01);
  }

  SUBCASE("single deterministic row") {
    Dataset ds;
    ds.rows.push_back(oc.make_traj({1, 1}, {1}));
    double mle = empirical_mle_theta(ds, f.spec, f.law.l_supports);
    CHECK(mle == doctest::Approx(f.spec.psi(ds.rows[0])));
  }

  SUBCASE("empty conditioning cell on a regime path is an error") {
    Dataset ds;
    ds.rows.push_back(oc.make_traj({0, 0}, {0}));
    ds.rows.push_back(oc.make_traj({1, 1}, {0}));
    CHECK_THROWS_WITH_AS(empirical_mle_theta(ds, f.spec, f.law.l_supports),
                         doctest::Contains("unidentified cell"), Error);
  }
}

TEST_CASE("law JSON fixture files round-trip") {
  for (const auto& id : fixture_ids()) {
    Fixture f = make_fixture(id);
    nlohmann::json j = law_to_json(f.law, f.spec);
    DiscreteLaw back = law_from_json(j, f.spec);
    Oracle a(f.law, f.spec), b(back, f.spec);
    CHECK(a.g_formula_theta() == doctest::Approx(b.g_formula_theta()).epsilon(1e-15));
    for (int k = 0; k <= f.spec.K; ++k)
      CHECK(back.g_tables[static_cast<std::size_t>(k)] ==
            f.law.g_tables[static_cast<std::size_t>(k)]);
  }
}
