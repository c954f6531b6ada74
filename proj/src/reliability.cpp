#include "varilens/reliability.hpp"

#include <cmath>
#include <sstream>

#include "varilens/error.hpp"

namespace varilens::reliability {

namespace {

// Soaks up representation noise like 157.00000000000003 before the ceiling;
// exact-integer boundaries must not be pushed up a whole run.
constexpr double kCeilGuard = 1e-9;

void validate(const ReliabilityParams& params) {
  if (params.confidence_z <= 0.0) {
    throw analysis_error("confidence_z must be positive");
  }
  if (params.margin_e <= 0.0 || params.margin_e >= 1.0) {
    throw analysis_error("margin_e must lie in (0,1)");
  }
  if (params.rare_alpha <= 0.0 || params.rare_alpha >= 1.0) {
    throw analysis_error("rare_alpha must lie in (0,1)");
  }
  if (params.rare_prevalence <= 0.0 || params.rare_prevalence >= 1.0) {
    throw analysis_error("rare_prevalence must lie in (0,1)");
  }
}

}  // namespace

const char* to_string(Verdict v) {
  return v == Verdict::sufficient ? "sufficient" : "insufficient";
}

std::size_t required_runs_proportion(double p, const ReliabilityParams& params) {
  validate(params);
  if (p <= 0.0 || p >= 1.0) {
    std::ostringstream msg;
    msg << "proportion must lie strictly in (0,1), got " << p;
    throw analysis_error(msg.str());
  }
  const double z = params.confidence_z;
  const double e = params.margin_e;
  const double n = z * z * p * (1.0 - p) / (e * e);
  const double up = std::ceil(n - kCeilGuard);
  return up < 1.0 ? 1 : static_cast<std::size_t>(up);
}

double achieved_margin(double p, std::size_t n,
                       const ReliabilityParams& params) {
  validate(params);
  if (p <= 0.0 || p >= 1.0) {
    throw analysis_error("proportion must lie strictly in (0,1)");
  }
  if (n == 0) throw analysis_error("achieved margin needs at least one run");
  return params.confidence_z *
         std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

std::size_t required_runs_rare_branch(double prevalence,
                                      const ReliabilityParams& params) {
  validate(params);
  if (prevalence <= 0.0 || prevalence >= 1.0) {
    throw analysis_error("prevalence must lie strictly in (0,1)");
  }
  const double alpha = params.rare_alpha;
  const double q = 1.0 - prevalence;
  double guess = std::floor(std::log(alpha) / std::log(q)) + 1.0;
  if (guess < 1.0) guess = 1.0;
  std::size_t n = static_cast<std::size_t>(guess);
  // The closed form can land either side of the strict boundary; settle it
  // with the same pow the definition uses.
  while (n > 1 && std::pow(q, static_cast<double>(n - 1)) < alpha) --n;
  while (std::pow(q, static_cast<double>(n)) >= alpha) ++n;
  return n;
}

ReliabilityReport assess_gateway(const causal::Gateway& gateway,
                                 const ReliabilityParams& params) {
  validate(params);
  if (gateway.traversing_runs == 0) {
    throw analysis_error("gateway " + gateway.id +
                         " has no traversing runs to assess");
  }

  ReliabilityReport report;
  report.gateway_id = gateway.id;
  report.traversing_runs = gateway.traversing_runs;

  bool any_deficit = false;
  for (const auto& branch : gateway.branches) {
    BranchReliability br;
    br.target = branch.target;
    br.observed_p = branch.proportion;
    if (branch.proportion > 0.0 && branch.proportion < 1.0) {
      const std::size_t need =
          required_runs_proportion(branch.proportion, params);
      br.required_n = need;
      br.deficit =
          need > gateway.traversing_runs ? need - gateway.traversing_runs : 0;
      br.achieved_margin =
          achieved_margin(branch.proportion, gateway.traversing_runs, params);
    }
    if (br.deficit > 0) any_deficit = true;
    report.per_branch.push_back(std::move(br));
  }

  report.rare_branch_required_n =
      required_runs_rare_branch(params.rare_prevalence, params);
  report.rare_branch_deficit =
      report.rare_branch_required_n > gateway.traversing_runs
          ? report.rare_branch_required_n - gateway.traversing_runs
          : 0;

  report.verdict = (!any_deficit && report.rare_branch_deficit == 0)
                       ? Verdict::sufficient
                       : Verdict::insufficient;
  return report;
}

}  // namespace varilens::reliability
