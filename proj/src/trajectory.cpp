#include "gmr/trajectory.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace gmr {

double RegimeSpec::density(int k, int a, const Trajectory& traj) const {
  require(k >= 1 && k <= K(), "regime timepoint out of range: k=" + std::to_string(k));
  const Timepoint& tp = points[static_cast<std::size_t>(k) - 1];
  switch (tp.kind) {
    case Timepoint::Kind::Static:
      return a == tp.static_code ? 1.0 : 0.0;
    case Timepoint::Kind::Dynamic:
      return a == tp.rule(traj, k) ? 1.0 : 0.0;
    case Timepoint::Kind::Stochastic:
      return tp.density(a, traj, k);
  }
  return 0.0;
}

RegimeSpec RegimeSpec::all_static(int K, int code) {
  RegimeSpec r;
  r.points.resize(static_cast<std::size_t>(K));
  for (auto& tp : r.points) {
    tp.kind = Timepoint::Kind::Static;
    tp.static_code = code;
  }
  return r;
}

void ProblemSpec::validate() const {
  require(K >= 1, "K >= 1 required");
  require(static_cast<int>(treatment_spaces.size()) == K,
          "treatment_spaces must have K entries");
  require(static_cast<int>(l_dims.size()) == K + 1, "l_dims must have K+1 entries");
  for (const auto& sp : treatment_spaces)
    require(!sp.empty(), "treatment space must be nonempty");
  require(static_cast<bool>(psi), "psi must be set");
  require(regime.K() == K, "regime must cover all K timepoints");
}

int ProblemSpec::treatment_index(int k, int code) const {
  const auto& sp = treatment_spaces[static_cast<std::size_t>(k) - 1];
  for (std::size_t i = 0; i < sp.size(); ++i)
    if (sp[i] == code) return static_cast<int>(i);
  return -1;
}

void Trajectory::validate(const ProblemSpec& spec) const {
  require(static_cast<int>(a_.size()) == spec.K, "trajectory must carry K treatments");
  require(static_cast<int>(l_.size()) == spec.K + 1,
          "trajectory must carry K+1 covariate blocks");
  for (int k = 1; k <= spec.K + 1; ++k)
    require(l(k).size() == spec.l_dims[static_cast<std::size_t>(k) - 1],
            "block dimension mismatch at L" + std::to_string(k));
  for (int k = 1; k <= spec.K; ++k)
    require(spec.treatment_index(k, a(k)) >= 0,
            "treatment code " + std::to_string(a(k)) +
                " not a member of the declared space at A" + std::to_string(k));
}

void Dataset::validate(const ProblemSpec& spec) const {
  require(!rows.empty(), "n >= 1 required");
  for (const auto& t : rows) t.validate(spec);
}

double pi_star(const Trajectory& traj, const ProblemSpec& spec, int j, int k) {
  require(j >= 1 && k <= spec.K && k >= j - 1,
          "pi_star range violation: j=" + std::to_string(j) + " k=" + std::to_string(k));
  double p = 1.0;
  for (int r = j; r <= k; ++r) {
    p *= spec.regime.density(r, traj.a(r), traj);
    if (p == 0.0) return 0.0;
  }
  return p;
}

double y_under_regime(const std::function<double(int)>& eta_at,
                      const Trajectory& traj, const ProblemSpec& spec, int k) {
  double acc = 0.0;
  for (int code : spec.treatment_spaces[static_cast<std::size_t>(k) - 1]) {
    double w = spec.regime.density(k, code, traj);
    if (w != 0.0) acc += w * eta_at(code);
  }
  return acc;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<std::string> expected_header(const ProblemSpec& spec) {
  std::vector<std::string> cols;
  for (int k = 1; k <= spec.K + 1; ++k) {
    for (int d = 1; d <= spec.l_dims[static_cast<std::size_t>(k) - 1]; ++d)
      cols.push_back("L" + std::to_string(k) + "_" + std::to_string(d));
    if (k <= spec.K) cols.push_back("A" + std::to_string(k));
  }
  return cols;
}

}  // namespace

Dataset load_dataset(const std::string& path, const ProblemSpec& spec, double sentinel) {
  std::ifstream in(path);
  require(in.good(), "cannot open dataset file: " + path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "empty dataset file: " + path);
  auto header = split_csv_line(line);
  auto expected = expected_header(spec);
  require(header.size() == expected.size(),
          "dataset header has " + std::to_string(header.size()) + " columns, expected " +
              std::to_string(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i)
    require(header[i] == expected[i], "unexpected column '" + header[i] + "' at position " +
                                          std::to_string(i + 1) + ", expected '" +
                                          expected[i] + "'");

  Dataset ds;
  int rownum = 1;
  while (std::getline(in, line)) {
    ++rownum;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    require(cells.size() == expected.size(),
            "row " + std::to_string(rownum) + " has " + std::to_string(cells.size()) +
                " cells, expected " + std::to_string(expected.size()));
    std::vector<Vec> blocks;
    std::vector<int> avals;
    std::size_t c = 0;
    for (int k = 1; k <= spec.K + 1; ++k) {
      Vec b(spec.l_dims[static_cast<std::size_t>(k) - 1]);
      for (int d = 0; d < b.size(); ++d, ++c) {
        const std::string& cell = cells[c];
        if (cell.empty()) {
          b[d] = sentinel;
        } else {
          try {
            std::size_t pos = 0;
            b[d] = std::stod(cell, &pos);
            require(pos == cell.size(), "trailing characters");
          } catch (const std::exception&) {
            throw Error("row " + std::to_string(rownum) + ", column '" + expected[c] +
                        "': cannot parse '" + cell + "' as a number");
          }
        }
      }
      blocks.push_back(std::move(b));
      if (k <= spec.K) {
        const std::string& cell = cells[c];
        int code = 0;
        try {
          std::size_t pos = 0;
          code = std::stoi(cell, &pos);
          require(pos == cell.size(), "trailing characters");
        } catch (const std::exception&) {
          throw Error("row " + std::to_string(rownum) + ", column '" + expected[c] +
                      "': cannot parse '" + cell + "' as a treatment code");
        }
        require(spec.treatment_index(k, code) >= 0,
                "row " + std::to_string(rownum) + ", column '" + expected[c] + "': code " +
                    std::to_string(code) + " is not in the declared treatment space");
        avals.push_back(code);
        ++c;
      }
    }
    ds.rows.emplace_back(std::move(blocks), std::move(avals));
  }
  require(!ds.rows.empty(), "n >= 1 required: dataset has no data rows");
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds, const ProblemSpec& spec) {
  std::ofstream out(path);
  require(out.good(), "cannot open for writing: " + path);
  auto cols = expected_header(spec);
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << "\n";
  out.precision(17);
  for (const auto& t : ds.rows) {
    bool first = true;
    for (int k = 1; k <= spec.K + 1; ++k) {
      for (int d = 0; d < t.l(k).size(); ++d) {
        out << (first ? "" : ",") << t.l(k)[d];
        first = false;
      }
      if (k <= spec.K) out << "," << t.a(k);
    }
    out << "\n";
  }
}

}  // namespace gmr
