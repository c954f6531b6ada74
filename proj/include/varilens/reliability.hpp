#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "varilens/causal.hpp"

namespace varilens::reliability {

struct ReliabilityParams {
  double confidence_z = 1.96;
  double margin_e = 0.05;
  double rare_alpha = 0.05;
  double rare_prevalence = 0.01;
};

// required_n and achieved_margin are absent when the observed proportion is
// degenerate (0 or 1): the normal approximation has nothing to say there and
// the rare-branch bound is the meaningful guard.
struct BranchReliability {
  std::string target;
  double observed_p = 0.0;
  std::optional<std::size_t> required_n;
  std::size_t deficit = 0;
  std::optional<double> achieved_margin;
};

enum class Verdict { sufficient, insufficient };
const char* to_string(Verdict v);

struct ReliabilityReport {
  std::string gateway_id;
  std::size_t traversing_runs = 0;
  std::vector<BranchReliability> per_branch;
  std::size_t rare_branch_required_n = 0;
  std::size_t rare_branch_deficit = 0;
  Verdict verdict = Verdict::insufficient;
};

// Minimum sample size for estimating proportion p within margin_e at
// confidence_z: the ceiling of Z^2 p (1-p) / E^2.
std::size_t required_runs_proportion(double p, const ReliabilityParams& params = {});

// Margin of error actually achieved by n runs at proportion p.
double achieved_margin(double p, std::size_t n,
                       const ReliabilityParams& params = {});

// Smallest n with (1 - prevalence)^n strictly below rare_alpha.
std::size_t required_runs_rare_branch(double prevalence,
                                      const ReliabilityParams& params = {});

ReliabilityReport assess_gateway(const causal::Gateway& gateway,
                                 const ReliabilityParams& params = {});

}  // namespace varilens::reliability
