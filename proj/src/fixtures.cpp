#include "gmr/fixtures.hpp"

#include <cmath>
#include <random>

namespace gmr {

namespace {

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec scalar(double v) {
  Vec x(1);
  x[0] = v;
  return x;
}

// Index arithmetic mirroring Oracle's layout, usable before an Oracle exists.
struct Shape {
  std::vector<int> nl;  // per k = 1..K+1
  std::vector<int> na;  // per k = 1..K
  long size_la(int k) const {
    long s = 1;
    for (int j = 1; j <= k; ++j) s *= nl[j - 1] * na[j - 1];
    return s;
  }
  long size_lam(int k) const { return k == 0 ? 1 : size_la(k - 1) * nl[k - 1]; }
  void decode_la(long idx, int k, std::vector<int>& li, std::vector<int>& ai) const {
    li.assign(static_cast<std::size_t>(k), 0);
    ai.assign(static_cast<std::size_t>(k), 0);
    for (int j = 1; j <= k; ++j) {
      li[j - 1] = static_cast<int>(idx % nl[j - 1]);
      idx /= nl[j - 1];
      ai[j - 1] = static_cast<int>(idx % na[j - 1]);
      idx /= na[j - 1];
    }
  }
  void decode_lam(long idx, int k, std::vector<int>& li, std::vector<int>& ai) const {
    decode_la(idx % size_la(k - 1), k - 1, li, ai);
    li.push_back(static_cast<int>(idx / size_la(k - 1)));
  }
};

Shape shape_of(const DiscreteLaw& law, const ProblemSpec& spec) {
  Shape s;
  for (const auto& sup : law.l_supports) s.nl.push_back(static_cast<int>(sup.size()));
  for (const auto& sp : spec.treatment_spaces) s.na.push_back(static_cast<int>(sp.size()));
  return s;
}

std::string hist_key(const std::vector<int>& li, const std::vector<int>& ai) {
  std::string k = "l:";
  for (std::size_t i = 0; i < li.size(); ++i) k += (i ? "," : "") + std::to_string(li[i]);
  k += "|a:";
  for (std::size_t i = 0; i < ai.size(); ++i) k += (i ? "," : "") + std::to_string(ai[i]);
  return k;
}

Fixture make_k1_basic() {
  Fixture f;
  f.id = "k1_basic";
  f.spec.K = 1;
  f.spec.treatment_spaces = {{0, 1}};
  f.spec.l_dims = {1, 1};
  f.spec.psi = [](const Trajectory& t) { return t.l(2)[0]; };
  f.spec.regime = RegimeSpec::all_static(1, 1);

  f.law.l_supports = {{scalar(0), scalar(1)}, {scalar(0), scalar(1)}};
  f.law.g_tables.resize(2);
  f.law.h_tables.resize(1);
  f.law.g_tables[0] = {0.5, 0.5};
  // h1(1|l1) = 0.5 + 0.2 l1
  f.law.h_tables[0] = {0.5, 0.5, 0.3, 0.7};
  // P(L2=1|l1,a1) = 0.2 + 0.5 a1 + 0.1 l1; cells ordered (l1,a1) = (0,0),(1,0),(0,1),(1,1)
  f.law.g_tables[1] = {0.8, 0.2, 0.7, 0.3, 0.3, 0.7, 0.2, 0.8};
  return f;
}

Fixture make_k3_general() {
  Fixture f;
  f.id = "k3_general";
  f.spec.K = 3;
  f.spec.treatment_spaces = {{0, 1}, {0, 1}, {0, 1}};
  f.spec.l_dims = {1, 1, 1, 1};
  f.spec.psi = [](const Trajectory& t) { return t.l(4)[0]; };
  RegimeSpec reg;
  reg.points.resize(3);
  for (auto& tp : reg.points) {
    tp.kind = RegimeSpec::Timepoint::Kind::Stochastic;
    tp.density = [](int a, const Trajectory& t, int k) {
      double p1 = 0.35 + 0.3 * (t.l(k)[0] > 0.5 ? 1.0 : 0.0);
      return a == 1 ? p1 : 1.0 - p1;
    };
  }
  f.spec.regime = reg;

  f.law.l_supports = {{scalar(0), scalar(1)},
                      {scalar(0), scalar(1), scalar(2)},
                      {scalar(0), scalar(1)},
                      {scalar(0), scalar(0.5), scalar(1)}};
  Shape sh;
  sh.nl = {2, 3, 2, 3};
  sh.na = {2, 2, 2};

  std::mt19937_64 eng(0xC0FFEEULL);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  auto fill_conditional = [&](std::vector<double>& tab, long cells, int arity) {
    tab.assign(static_cast<std::size_t>(cells * arity), 0.0);
    for (long c = 0; c < cells; ++c) {
      double tot = 0.0;
      for (int v = 0; v < arity; ++v) {
        double x = u(eng);
        tab[static_cast<std::size_t>(c * arity + v)] = x;
        tot += x;
      }
      for (int v = 0; v < arity; ++v) tab[static_cast<std::size_t>(c * arity + v)] /= tot;
    }
  };
  f.law.g_tables.resize(4);
  f.law.h_tables.resize(3);
  fill_conditional(f.law.g_tables[0], 1, 2);
  fill_conditional(f.law.g_tables[1], sh.size_la(1), 3);
  fill_conditional(f.law.g_tables[2], sh.size_la(2), 2);
  fill_conditional(f.law.g_tables[3], sh.size_la(3), 3);
  fill_conditional(f.law.h_tables[0], sh.size_lam(1), 2);
  fill_conditional(f.law.h_tables[1], sh.size_lam(2), 2);
  fill_conditional(f.law.h_tables[2], sh.size_lam(3), 2);
  return f;
}

}  // namespace

Fixture make_dropout_fixture(const DropoutLawCoefs& c) {
  Fixture f;
  f.id = "k2_dropout";
  f.spec.K = 2;
  f.spec.treatment_spaces = {{0, 1}, {0, 1}};
  f.spec.l_dims = {1, 1, 1};
  f.spec.psi = [](const Trajectory& t) { return t.l(3)[0]; };
  f.spec.regime = RegimeSpec::all_static(2, 1);

  f.law.l_supports = {{scalar(0), scalar(1), scalar(2)},
                      {scalar(0), scalar(1), scalar(2)},
                      {scalar(0), scalar(1)}};
  Shape sh;
  sh.nl = {3, 3, 2};
  sh.na = {2, 2};

  f.law.g_tables.resize(3);
  f.law.h_tables.resize(2);
  f.law.g_tables[0] = c.pl1;

  // h1(1 | l1) logistic in (1, l1, l1^2)
  f.law.h_tables[0].assign(static_cast<std::size_t>(sh.size_lam(1) * 2), 0.0);
  for (int l1 = 0; l1 < 3; ++l1) {
    double p1 = expit(c.alpha[0] + c.alpha[1] * l1 + c.alpha[2] * l1 * l1);
    f.law.h_tables[0][static_cast<std::size_t>(l1 * 2 + 0)] = 1.0 - p1;
    f.law.h_tables[0][static_cast<std::size_t>(l1 * 2 + 1)] = p1;
  }

  // L2 | l1, a1: table when on study, sentinel point mass otherwise
  const double l2_on[3][3] = {{0.5, 0.3, 0.2}, {0.2, 0.5, 0.3}, {0.3, 0.2, 0.5}};
  f.law.g_tables[1].assign(static_cast<std::size_t>(sh.size_la(1) * 3), 0.0);
  {
    std::vector<int> li(1), ai(1);
    for (long idx = 0; idx < sh.size_la(1); ++idx) {
      sh.decode_la(idx, 1, li, ai);
      for (int v = 0; v < 3; ++v)
        f.law.g_tables[1][static_cast<std::size_t>(idx * 3 + v)] =
            ai[0] == 1 ? l2_on[li[0]][v] : (v == 0 ? 1.0 : 0.0);
    }
  }

  // h2(1 | l1, l2, a1): logistic in (1, l1, l2, l2^2) when a1 = 1, else stay out
  f.law.h_tables[1].assign(static_cast<std::size_t>(sh.size_lam(2) * 2), 0.0);
  {
    std::vector<int> li, ai;
    for (long idx = 0; idx < sh.size_lam(2); ++idx) {
      sh.decode_lam(idx, 2, li, ai);
      double p1 = ai[0] == 1 ? expit(c.beta[0] + c.beta[1] * li[0] + c.beta[2] * li[1] +
                                     c.beta[3] * li[1] * li[1])
                             : 0.0;
      f.law.h_tables[1][static_cast<std::size_t>(idx * 2 + 0)] = 1.0 - p1;
      f.law.h_tables[1][static_cast<std::size_t>(idx * 2 + 1)] = p1;
    }
  }

  // L3 | l1, l2, a1, a2: Bernoulli when fully on study, sentinel otherwise
  f.law.g_tables[2].assign(static_cast<std::size_t>(sh.size_la(2) * 2), 0.0);
  {
    std::vector<int> li, ai;
    for (long idx = 0; idx < sh.size_la(2); ++idx) {
      sh.decode_la(idx, 2, li, ai);
      double p1 = (ai[0] == 1 && ai[1] == 1)
                      ? expit(c.gamma[0] + c.gamma[1] * li[0] + c.gamma[2] * li[1] +
                              c.gamma[3] * li[1] * li[1])
                      : 0.0;
      f.law.g_tables[2][static_cast<std::size_t>(idx * 2 + 0)] = 1.0 - p1;
      f.law.g_tables[2][static_cast<std::size_t>(idx * 2 + 1)] = p1;
    }
  }
  return f;
}

Fixture make_fixture(const std::string& id) {
  if (id == "k1_basic") return make_k1_basic();
  if (id == "k2_dropout") return make_dropout_fixture(DropoutLawCoefs{});
  if (id == "k3_general") return make_k3_general();
  throw Error("unknown fixture id '" + id + "'; available: k1_basic, k2_dropout, k3_general");
}

std::vector<std::string> fixture_ids() { return {"k1_basic", "k2_dropout", "k3_general"}; }

nlohmann::json law_to_json(const DiscreteLaw& law, const ProblemSpec& spec) {
  Shape sh = shape_of(law, spec);
  nlohmann::json j;
  j["schema_version"] = 1;
  j["K"] = spec.K;
  nlohmann::json sup = nlohmann::json::array();
  for (const auto& s : law.l_supports) {
    nlohmann::json lvl = nlohmann::json::array();
    for (const auto& v : s) lvl.push_back(std::vector<double>(v.data(), v.data() + v.size()));
    sup.push_back(lvl);
  }
  j["supports"] = sup;
  j["a_sizes"] = sh.na;

  nlohmann::json g = nlohmann::json::object();
  for (int k = 0; k <= spec.K; ++k) {
    nlohmann::json tab = nlohmann::json::object();
    std::vector<int> li, ai;
    long cells = (k == 0) ? 1 : sh.size_la(k);
    for (long c = 0; c < cells; ++c) {
      sh.decode_la(c, k, li, ai);
      std::vector<double> row(static_cast<std::size_t>(sh.nl[k]));
      for (int v = 0; v < sh.nl[k]; ++v)
        row[static_cast<std::size_t>(v)] = law.g_tables[k][c * sh.nl[k] + v];
      tab[hist_key(li, ai)] = row;
    }
    g[std::to_string(k)] = tab;
  }
  j["g_tables"] = g;

  nlohmann::json h = nlohmann::json::object();
  for (int k = 1; k <= spec.K; ++k) {
    nlohmann::json tab = nlohmann::json::object();
    std::vector<int> li, ai;
    for (long c = 0; c < sh.size_lam(k); ++c) {
      sh.decode_lam(c, k, li, ai);
      std::vector<double> row(static_cast<std::size_t>(sh.na[k - 1]));
      for (int v = 0; v < sh.na[k - 1]; ++v)
        row[static_cast<std::size_t>(v)] = law.h_tables[k - 1][c * sh.na[k - 1] + v];
      tab[hist_key(li, ai)] = row;
    }
    h[std::to_string(k)] = tab;
  }
  j["h_tables"] = h;
  return j;
}

namespace {

// "l:0,1|a:1" -> index via the shape (inverse of hist_key).
long key_to_index(const std::string& key, const Shape& sh, int k, bool with_ak) {
  auto bar = key.find('|');
  require(key.rfind("l:", 0) == 0 && bar != std::string::npos &&
              key.compare(bar + 1, 2, "a:") == 0,
          "malformed history key '" + key + "'");
  auto parse_list = [&](const std::string& s) {
    std::vector<int> out;
    std::string cur;
    for (char ch : s) {
      if (ch == ',') {
        out.push_back(std::stoi(cur));
        cur.clear();
      } else {
        cur += ch;
      }
    }
    if (!cur.empty()) out.push_back(std::stoi(cur));
    return out;
  };
  std::vector<int> li = parse_list(key.substr(2, bar - 2));
  std::vector<int> ai = parse_list(key.substr(bar + 3));
  require(static_cast<int>(li.size()) == k, "history key '" + key + "' has wrong l-arity");
  require(static_cast<int>(ai.size()) == (with_ak ? k : k - 1),
          "history key '" + key + "' has wrong a-arity");
  long idx = 0, mult = 1;
  int m = with_ak ? k : k - 1;
  for (int j = 1; j <= k; ++j) {
    require(li[j - 1] >= 0 && li[j - 1] < sh.nl[j - 1], "l index out of range in key");
    idx += li[j - 1] * mult;
    mult *= sh.nl[j - 1];
    if (j <= m) {
      require(ai[j - 1] >= 0 && ai[j - 1] < sh.na[j - 1], "a index out of range in key");
      idx += ai[j - 1] * mult;
      mult *= sh.na[j - 1];
    }
  }
  return idx;
}

}  // namespace

DiscreteLaw law_from_json(const nlohmann::json& j, const ProblemSpec& spec) {
  require(j.value("K", -1) == spec.K, "law file K does not match the problem spec");
  DiscreteLaw law;
  for (const auto& lvl : j.at("supports")) {
    std::vector<Vec> sup;
    for (const auto& v : lvl) {
      auto vals = v.get<std::vector<double>>();
      Vec x(static_cast<Eigen::Index>(vals.size()));
      for (std::size_t i = 0; i < vals.size(); ++i) x[static_cast<Eigen::Index>(i)] = vals[i];
      sup.push_back(x);
    }
    law.l_supports.push_back(sup);
  }
  require(static_cast<int>(law.l_supports.size()) == spec.K + 1,
          "law file must declare K+1 supports");
  Shape sh = shape_of(law, spec);
  auto asz = j.at("a_sizes").get<std::vector<int>>();
  require(asz == sh.na, "law file treatment-space sizes do not match the problem spec");

  law.g_tables.resize(static_cast<std::size_t>(spec.K + 1));
  for (int k = 0; k <= spec.K; ++k) {
    long cells = (k == 0) ? 1 : sh.size_la(k);
    auto& tab = law.g_tables[static_cast<std::size_t>(k)];
    tab.assign(static_cast<std::size_t>(cells * sh.nl[k]),
               std::numeric_limits<double>::quiet_NaN());
    const auto& src = j.at("g_tables").at(std::to_string(k));
    for (auto it = src.begin(); it != src.end(); ++it) {
      long c = key_to_index(it.key(), sh, k, true);
      auto row = it.value().get<std::vector<double>>();
      require(static_cast<int>(row.size()) == sh.nl[k],
              "g-table row arity mismatch at k=" + std::to_string(k));
      for (int v = 0; v < sh.nl[k]; ++v) tab[c * sh.nl[k] + v] = row[static_cast<std::size_t>(v)];
    }
    for (double x : tab)
      require(!std::isnan(x), "g-table at k=" + std::to_string(k) + " has missing cells");
  }
  law.h_tables.resize(static_cast<std::size_t>(spec.K));
  for (int k = 1; k <= spec.K; ++k) {
    auto& tab = law.h_tables[static_cast<std::size_t>(k - 1)];
    tab.assign(static_cast<std::size_t>(sh.size_lam(k) * sh.na[k - 1]),
               std::numeric_limits<double>::quiet_NaN());
    const auto& src = j.at("h_tables").at(std::to_string(k));
    for (auto it = src.begin(); it != src.end(); ++it) {
      long c = key_to_index(it.key(), sh, k, false);
      auto row = it.value().get<std::vector<double>>();
      require(static_cast<int>(row.size()) == sh.na[k - 1],
              "h-table row arity mismatch at k=" + std::to_string(k));
      for (int v = 0; v < sh.na[k - 1]; ++v)
        tab[c * sh.na[k - 1] + v] = row[static_cast<std::size_t>(v)];
    }
    for (double x : tab)
      require(!std::isnan(x), "h-table at k=" + std::to_string(k) + " has missing cells");
  }
  return law;
}

}  // namespace gmr
