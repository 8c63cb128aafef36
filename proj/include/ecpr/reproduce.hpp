#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ecpr/config.hpp"

namespace ecpr {

struct ReproduceResult {
  bool pass = true;
  std::vector<std::string> assertion_lines;  // "PASS ..." / "FAIL ..."
};

// Canned desk-scale experiments. Each claim simulates per-seed datasets,
// trains the relevant model grid with matched gradient-step budgets over
// 3 seeds, writes reports under out_dir and checks the directional findings
// on seed means. claim is one of: ssb, rcs, ablation.
ReproduceResult reproduce_claim(const std::string& claim, const ExperimentConfig& base,
                                const std::string& out_dir, std::ostream& log);

}  // namespace ecpr
