#include <cmath>

#include "doctest.h"
#include "gmr/discrete_law.hpp"
#include "gmr/fixtures.hpp"
#include "gmr/propensity.hpp"

using namespace gmr;

namespace {

PropensityModel dropout_model() {
  PropensityModel m;
  m.monotone = true;
  m.r.resize(2);
  m.r[0] = [](const Trajectory& t) {
    EVec x(3);
    double l1 = t.l(1)[0];
    x << 1.0, l1, l1 * l1;
    return x;
  };
  m.r[1] = [](const Trajectory& t) {
    EVec x(4);
    double l1 = t.l(1)[0], l2 = t.l(2)[0];
    x << 1.0, l1, l2, l2 * l2;
    return x;
  };
  return m;
}

}  // namespace

TEST_CASE("intercept-only propensity recovers the sample frequency") {
  Fixture f = make_fixture("k1_basic");
  Oracle oc(f.law, f.spec);
  Dataset ds = oc.sample(500, 11);
  PropensityModel m;
  m.r = {[](const Trajectory&) { return EVec::Ones(1); }};
  PropensityFit pf = fit_propensities(ds, f.spec, m);
  long ones = 0;
  for (const auto& t : ds.rows) ones += t.a(1) == 1 ? 1 : 0;
  double freq = static_cast<double>(ones) / ds.n();
  CHECK(pf.h_hat(1, 1, ds.rows[0]) == doctest::Approx(freq).epsilon(1e-8));
}

TEST_CASE("correctly specified fits approach the generating coefficients") {
  DropoutLawCoefs c;
  Fixture f = make_dropout_fixture(c);
  Oracle oc(f.law, f.spec);
  PropensityModel m = dropout_model();
  EVec a_sum = EVec::Zero(3), b_sum = EVec::Zero(4);
  const int R = 5;
  for (int rep = 0; rep < R; ++rep) {
    Dataset ds = oc.sample(10000, 100 + static_cast<std::uint64_t>(rep));
    PropensityFit pf = fit_propensities(ds, f.spec, m);
    a_sum += pf.coef[0].col(0);
    b_sum += pf.coef[1].col(0);
  }
  EVec alpha(3), beta(4);
  alpha << c.alpha[0], c.alpha[1], c.alpha[2];
  beta << c.beta[0], c.beta[1], c.beta[2], c.beta[3];
  CHECK(((a_sum / R) - alpha).lpNorm<Eigen::Infinity>() < 0.05);
  CHECK(((b_sum / R) - beta).lpNorm<Eigen::Infinity>() < 0.05);
}

TEST_CASE("monotone structure forces the off-path density to zero") {
  Fixture f = make_fixture("k2_dropout");
  Oracle oc(f.law, f.spec);
  Dataset ds = oc.sample(2000, 5);
  PropensityFit pf = fit_propensities(ds, f.spec, dropout_model());
  Trajectory dropped = ds.rows[0];
  dropped.set_a(1, 0);
  CHECK(pf.h_hat(2, 1, dropped) == 0.0);
  CHECK(pf.h_hat(2, 0, dropped) == 1.0);

  SUBCASE("normalization at evaluated histories") {
    for (int i = 0; i < 50; ++i) {
      const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
      for (int k = 1; k <= 2; ++k) {
        double tot = pf.h_hat(k, 0, t) + pf.h_hat(k, 1, t);
        CHECK(tot == doctest::Approx(1.0).epsilon(1e-10));
      }
    }
  }

  SUBCASE("pi_hat conventions and telescoping") {
    const Trajectory& t = ds.rows[0];
    CHECK(pf.pi_hat(t, 2, 1) == 1.0);  // empty product
    double h1 = pf.h_hat(1, t.a(1), t), h2 = pf.h_hat(2, t.a(2), t);
    CHECK(pf.pi_hat(t, 1, 2, false) == doctest::Approx(h1 * h2).epsilon(1e-12));
    CHECK(pf.pi_hat(t, 1, 1, false) * pf.pi_hat(t, 2, 2, false) ==
          doctest::Approx(pf.pi_hat(t, 1, 2, false)).epsilon(1e-12));
  }

  SUBCASE("fitted products track the law within sampling error") {
    double acc = 0.0;
    int m = 0;
    for (int i = 0; i < 500; ++i) {
      const Trajectory& t = ds.rows[static_cast<std::size_t>(i)];
      std::vector<int> li = {oc.l_index(1, t.l(1)), oc.l_index(2, t.l(2))};
      std::vector<int> ai = {oc.a_index(1, t.a(1)), oc.a_index(2, t.a(2))};
      acc += std::abs(pf.pi_hat(t, 1, 2, false) - oc.hw_prefix(li, ai, 2));
      ++m;
    }
    CHECK(acc / m < 0.05);
  }
}

TEST_CASE("degenerate fits are reported, not thrown") {
  Fixture f = make_fixture("k2_dropout");
  Oracle oc(f.law, f.spec);
  Dataset ds = oc.sample(60, 5);
  for (auto& t : ds.rows) t.set_a(1, 1);  // everyone continues at k=1
  PropensityModel m = dropout_model();
  PropensityFit pf = fit_propensities(ds, f.spec, m);
  CHECK_FALSE(pf.fit_info[0].converged);
  CHECK(pf.fit_info[0].separation_suspected);
  CHECK_FALSE(pf.all_converged());
}

TEST_CASE("monotone restricted fits need enough rows") {
  Fixture f = make_fixture("k2_dropout");
  Oracle oc(f.law, f.spec);
  Dataset ds = oc.sample(40, 9);
  for (auto& t : ds.rows) t.set_a(1, 0);  // nobody reaches the k=2 fit
  CHECK_THROWS_WITH_AS(fit_propensities(ds, f.spec, dropout_model()),
                       doctest::Contains("k=2"), Error);
}

TEST_CASE("baseline-category fit covers more than two codes") {
  // three-coded treatment, intercept-only: probabilities equal frequencies
  ProblemSpec spec;
  spec.K = 1;
  spec.treatment_spaces = {{0, 1, 2}};
  spec.l_dims = {1, 1};
  spec.psi = [](const Trajectory& t) { return t.l(2)[0]; };
  spec.regime = RegimeSpec::all_static(1, 2);
  Dataset ds;
  auto mkrow = [&](int a) {
    Vec l(1), l2(1);
    l[0] = 0.0;
    l2[0] = 1.0;
    return Trajectory({l, l2}, {a});
  };
  for (int i = 0; i < 10; ++i) ds.rows.push_back(mkrow(0));
  for (int i = 0; i < 30; ++i) ds.rows.push_back(mkrow(1));
  for (int i = 0; i < 60; ++i) ds.rows.push_back(mkrow(2));
  PropensityModel m;
  m.r = {[](const Trajectory&) { return EVec::Ones(1); }};
  PropensityFit pf = fit_propensities(ds, spec, m);
  CHECK(pf.h_hat(1, 0, ds.rows[0]) == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(pf.h_hat(1, 1, ds.rows[0]) == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(pf.h_hat(1, 2, ds.rows[0]) == doctest::Approx(0.6).epsilon(1e-6));
  double tot = pf.h_hat(1, 0, ds.rows[0]) + pf.h_hat(1, 1, ds.rows[0]) +
               pf.h_hat(1, 2, ds.rows[0]);
  CHECK(tot == doctest::Approx(1.0).epsilon(1e-10));
}
