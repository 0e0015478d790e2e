#pragma once

// Quick release gate: scan oracle equivalence, fusion factorisation,
// finite-difference gradients on the tiny config and the gate truth tables.

#include <string>
#include <vector>

namespace hym::selftest {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

std::vector<SuiteResult> run_all(unsigned long long seed);

}  // namespace hym::selftest
