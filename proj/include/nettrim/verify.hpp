// Self-check groups behind `nettrim verify`: fast invariants that exercise
// the differentiation engine, the gate algebra, the complexity calculus (with
// a deliberately broken mutant that must fail), pruning, and serialization.
#pragma once

#include <string>
#include <vector>

namespace nettrim {

struct VerifyResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Runs every group; each entry reports one named invariant family.
std::vector<VerifyResult> run_verify();

}  // namespace nettrim
