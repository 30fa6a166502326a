#include <cstdio>
#include <fstream>
#include <random>

#include "doctest.h"
#include "gmr/trajectory.hpp"

using namespace gmr;

namespace {

Vec scalar(double v) {
  Vec x(1);
  x[0] = v;
  return x;
}

ProblemSpec dropout_spec(int K) {
  ProblemSpec spec;
  spec.K = K;
  spec.treatment_spaces.assign(static_cast<std::size_t>(K), {0, 1});
  spec.l_dims.assign(static_cast<std::size_t>(K) + 1, 1);
  spec.psi = [K](const Trajectory& t) { return t.l(K + 1)[0]; };
  spec.regime = RegimeSpec::all_static(K, 1);
  return spec;
}

Trajectory traj_with_a(const ProblemSpec& spec, std::vector<int> a) {
  std::vector<Vec> blocks;
  for (int k = 1; k <= spec.K + 1; ++k) blocks.push_back(scalar(0.5 * k));
  return Trajectory(std::move(blocks), std::move(a));
}

}  // namespace

TEST_CASE("pi_star on indicator regimes is the compliance indicator") {
  ProblemSpec spec = dropout_spec(2);
  CHECK(pi_star(traj_with_a(spec, {1, 1}), spec, 1, 2) == 1.0);
  CHECK(pi_star(traj_with_a(spec, {1, 0}), spec, 1, 2) == 0.0);
  CHECK(pi_star(traj_with_a(spec, {0, 1}), spec, 1, 2) == 0.0);
  // empty products
  CHECK(pi_star(traj_with_a(spec, {0, 0}), spec, 1, 0) == 1.0);
  CHECK(pi_star(traj_with_a(spec, {0, 0}), spec, 2, 1) == 1.0);
  CHECK_THROWS_AS(pi_star(traj_with_a(spec, {1, 1}), spec, 0, 2), Error);
  CHECK_THROWS_AS(pi_star(traj_with_a(spec, {1, 1}), spec, 1, 3), Error);
}

TEST_CASE("pi_star multiplies constant stochastic densities") {
  ProblemSpec spec = dropout_spec(2);
  for (auto& tp : spec.regime.points) {
    tp.kind = RegimeSpec::Timepoint::Kind::Stochastic;
    tp.density = [](int, const Trajectory&, int) { return 0.5; };
  }
  CHECK(pi_star(traj_with_a(spec, {1, 0}), spec, 1, 2) == doctest::Approx(0.25));
}

TEST_CASE("pi_star telescopes") {
  ProblemSpec spec = dropout_spec(3);
  std::mt19937_64 eng(5);
  for (auto& tp : spec.regime.points) {
    tp.kind = RegimeSpec::Timepoint::Kind::Stochastic;
    tp.density = [](int a, const Trajectory& t, int k) {
      double p1 = 0.3 + 0.1 * k + 0.05 * t.l(k)[0];
      return a == 1 ? p1 : 1.0 - p1;
    };
  }
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<int> a;
    for (int k = 0; k < 3; ++k) a.push_back(static_cast<int>(eng() % 2));
    Trajectory t = traj_with_a(spec, a);
    for (int j = 1; j <= 3; ++j)
      for (int k = j - 1; k <= 3; ++k)
        for (int m = k + 1; m <= 3; ++m)
          CHECK(pi_star(t, spec, j, k) * pi_star(t, spec, k + 1, m) ==
                doctest::Approx(pi_star(t, spec, j, m)).epsilon(1e-12));
  }
}

TEST_CASE("y_under_regime averages per-treatment values") {
  ProblemSpec spec = dropout_spec(1);
  Trajectory t = traj_with_a(spec, {0});
  SUBCASE("indicator regime selects one treatment") {
    double v = y_under_regime([](int a) { return a == 1 ? 3.25 : -99.0; }, t, spec, 1);
    CHECK(v == 3.25);
  }
  SUBCASE("uniform stochastic regime averages") {
    spec.regime.points[0].kind = RegimeSpec::Timepoint::Kind::Stochastic;
    spec.regime.points[0].density = [](int, const Trajectory&, int) { return 0.5; };
    double v = y_under_regime([](int a) { return a == 1 ? 0.8 : 0.2; }, t, spec, 1);
    CHECK(v == doctest::Approx(0.5));
    // constant functions pass through (regime densities normalize)
    CHECK(y_under_regime([](int) { return 4.2; }, t, spec, 1) == doctest::Approx(4.2));
  }
  SUBCASE("linearity") {
    spec.regime.points[0].kind = RegimeSpec::Timepoint::Kind::Stochastic;
    spec.regime.points[0].density = [](int a, const Trajectory&, int) {
      return a == 1 ? 0.3 : 0.7;
    };
    auto f = [](int a) { return a * 1.7 + 0.1; };
    auto g = [](int a) { return a * a - 2.0; };
    double lhs = y_under_regime([&](int a) { return 2.0 * f(a) + 3.0 * g(a); }, t, spec, 1);
    double rhs = 2.0 * y_under_regime(f, t, spec, 1) + 3.0 * y_under_regime(g, t, spec, 1);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("trajectory validation") {
  ProblemSpec spec = dropout_spec(2);
  Trajectory ok = traj_with_a(spec, {1, 0});
  CHECK_NOTHROW(ok.validate(spec));
  Trajectory bad_code = traj_with_a(spec, {1, 2});
  CHECK_THROWS_WITH_AS(bad_code.validate(spec), doctest::Contains("not a member"), Error);
  Trajectory bad_blocks({scalar(0), scalar(0)}, {1, 1});
  CHECK_THROWS_AS(bad_blocks.validate(spec), Error);
}

TEST_CASE("dataset CSV round trip and parse errors") {
  ProblemSpec spec = dropout_spec(2);
  spec.l_dims = {1, 2, 1};  // a wider middle block
  Dataset ds;
  for (int i = 0; i < 3; ++i) {
    Vec mid(2);
    mid << 0.25 * i, -1.5;
    ds.rows.push_back(
        Trajectory({scalar(1.25 + i), mid, scalar(i % 2)}, {1, i % 2}));
  }
  std::string path = "traj_roundtrip.csv";
  save_dataset(path, ds, spec);
  Dataset back = load_dataset(path, spec);
  REQUIRE(back.n() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(back.rows[i].l(2)[0] == doctest::Approx(ds.rows[i].l(2)[0]));
    CHECK(back.rows[i].a(2) == ds.rows[i].a(2));
  }

  SUBCASE("treatment code outside the declared space") {
    std::ofstream f(path);
    f << "L1_1,A1,L2_1,L2_2,A2,L3_1\n1.0,2,0.0,0.0,1,0.5\n";
    f.close();
    CHECK_THROWS_WITH_AS(load_dataset(path, spec), doctest::Contains("row 2"), Error);
  }
  SUBCASE("missing column") {
    std::ofstream f(path);
    f << "L1_1,A1,L2_1,A2,L3_1\n1.0,1,0.0,1,0.5\n";
    f.close();
    CHECK_THROWS_AS(load_dataset(path, spec), Error);
  }
  SUBCASE("empty file") {
    std::ofstream f(path);
    f << "L1_1,A1,L2_1,L2_2,A2,L3_1\n";
    f.close();
    CHECK_THROWS_WITH_AS(load_dataset(path, spec), doctest::Contains("n >= 1"), Error);
  }
  SUBCASE("unparseable number names the cell") {
    std::ofstream f(path);
    f << "L1_1,A1,L2_1,L2_2,A2,L3_1\n1.0,1,x,0.0,1,0.5\n";
    f.close();
    CHECK_THROWS_WITH_AS(load_dataset(path, spec), doctest::Contains("L2_1"), Error);
  }
  SUBCASE("empty L cells take the sentinel") {
    std::ofstream f(path);
    f << "L1_1,A1,L2_1,L2_2,A2,L3_1\n1.0,0,,,0,\n";
    f.close();
    Dataset d = load_dataset(path, spec, -7.0);
    CHECK(d.rows[0].l(2)[0] == -7.0);
    CHECK(d.rows[0].l(3)[0] == -7.0);
  }
  std::remove(path.c_str());
}
