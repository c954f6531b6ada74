#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "varilens/causal.hpp"
#include "varilens/trajlog.hpp"

namespace varilens::simgen {

enum class DistKind { constant, uniform, exponential };

// Durations are in seconds. Families are deliberately non-Gaussian: the
// causal engine is only identifiable under non-Gaussian noise, and logs
// generated here serve as its oracles.
struct DurationDist {
  DistKind kind = DistKind::constant;
  double c = 0.0;     // constant
  double lo = 0.0;    // uniform
  double hi = 0.0;    // uniform
  double mean = 0.0;  // exponential
};

struct Step {
  std::string id;
  std::string agent;
  std::string tool;
  DurationDist duration;
};

struct Branch {
  std::string next;
  double prob = 1.0;  // XOR: categorical; OR: inclusion; AND: ignored
};

struct ControlNode {
  std::string at;  // step id
  causal::GatewayType gtype = causal::GatewayType::XOR;
  std::vector<Branch> branches;
};

struct GroundTruthModel {
  std::vector<std::string> agents;
  std::vector<Step> steps;
  std::vector<ControlNode> control;
  std::string entry;
  std::vector<std::string> terminals;

  static GroundTruthModel from_json(const std::string& text);
  static GroundTruthModel from_json_file(const std::string& path);
  std::string to_json() const;
};

struct SimConfig {
  std::size_t runs = 1;
  std::uint64_t seed = 0;
  std::int64_t start_time_ms = 1735689600000;  // 2025-01-01T00:00:00Z
  std::int64_t inter_run_gap_ms = 60000;
};

// Stateless counter-based generator: every draw is a pure function of
// (seed, run, counter), so any run can be regenerated in isolation.
std::uint64_t counter_rng_u64(std::uint64_t seed, std::uint64_t run,
                              std::uint64_t counter);
double counter_rng_unit(std::uint64_t seed, std::uint64_t run,
                        std::uint64_t counter);

// Throws an analysis error listing every violated invariant at once.
void validate_model(const GroundTruthModel& model);

std::vector<trajlog::TrajectoryEvent> simulate(const GroundTruthModel& model,
                                               const SimConfig& config);

struct GroundTruthGateway {
  std::string source;  // activity
  causal::GatewayType gtype = causal::GatewayType::XOR;
  std::vector<std::pair<std::string, double>> branches;  // activity, prob
};

// Oracle view of the model projected onto activities. dfg_edges are the
// control-graph successions plus START/END anchors; concurrent interleavings
// in actual logs can add adjacencies beyond these.
struct GroundTruth {
  std::vector<std::pair<std::string, std::string>> dfg_edges;
  std::vector<std::pair<std::string, std::string>> causal_edges;
  std::vector<GroundTruthGateway> gateways;
};

GroundTruth ground_truth(const GroundTruthModel& model);

}  // namespace varilens::simgen
