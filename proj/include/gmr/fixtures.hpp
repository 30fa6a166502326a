#ifndef GMR_FIXTURES_HPP
#define GMR_FIXTURES_HPP

#include <string>
#include <vector>

#include "json.hpp"

#include "gmr/discrete_law.hpp"

namespace gmr {

// A named (law, problem) pair used by the verification suites and the
// simulation scenarios.
struct Fixture {
  std::string id;
  DiscreteLaw law;
  ProblemSpec spec;
};

Fixture make_fixture(const std::string& id);
std::vector<std::string> fixture_ids();

// Law fixture file schema: supports, g_tables and h_tables keyed by
// stringified histories ("l:i,j,...|a:u,v,..." over support/space indices).
nlohmann::json law_to_json(const DiscreteLaw& law, const ProblemSpec& spec);
DiscreteLaw law_from_json(const nlohmann::json& j, const ProblemSpec& spec);

// Dropout-style law used by the K=2 fixtures and simulation scenarios;
// monotone treatment with logistic continuation models and a binary outcome.
struct DropoutLawCoefs {
  std::vector<double> pl1 = {0.3, 0.4, 0.3};       // marginal of L1 on {0,1,2}
  std::vector<double> alpha = {0.2, 1.2, -0.55};   // h1: 1, l1, l1^2
  std::vector<double> beta = {0.1, 0.4, 0.9, -0.45};  // h2: 1, l1, l2, l2^2
  std::vector<double> gamma = {-0.8, 0.5, 1.1, -0.5}; // P(L3=1): 1, l1, l2, l2^2
};
Fixture make_dropout_fixture(const DropoutLawCoefs& c);

}  // namespace gmr

#endif
