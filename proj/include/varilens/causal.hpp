#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "varilens/trajlog.hpp"

namespace varilens::causal {

// Per-trace first-occurrence offsets, in seconds from the trace's first
// event. NaN marks activities absent from a trace.
struct OccurrenceMatrix {
  std::vector<std::string> activities;  // lexicographic
  std::vector<std::string> trace_ids;   // aligned with rows
  std::vector<std::vector<double>> rows;

  static bool is_missing(double v);
};

struct CausalConfig {
  double edge_weight_threshold = 0.05;  // standardized-coefficient magnitude
  double precedence_fraction = 0.95;
  std::size_t min_pairwise_traces = 10;
  double xor_tolerance = 0.05;

  // JSON object; absent fields keep their defaults.
  static CausalConfig from_json_file(const std::string& path);
};

struct CausalEdge {
  std::string cause;
  std::string effect;
  double weight = 0.0;      // standardized regression coefficient
  std::size_t support = 0;  // co-occurring traces with cause before effect
};

struct CausalDag {
  std::vector<std::string> order;  // causal order, causes first
  std::vector<CausalEdge> edges;   // forward in the order, hence acyclic

  std::vector<std::string> successors(const std::string& activity) const;
};

enum class GatewayType { XOR, AND, OR };
const char* to_string(GatewayType t);
GatewayType gateway_type_from_string(const std::string& text);

struct GatewayBranch {
  std::string target;
  std::size_t count = 0;  // traversing runs in which the target follows
  double proportion = 0.0;
};

// A split point. Ids are "XOR_k"/"AND_k"/"OR_k" with k counted per type in
// causal-order position of the source, starting at 0.
struct Gateway {
  std::string id;
  GatewayType gtype = GatewayType::XOR;
  std::string source;
  std::vector<GatewayBranch> branches;  // count desc, then target asc
  std::size_t traversing_runs = 0;
};

struct CausalModel {
  CausalDag dag;
  std::vector<Gateway> gateways;
  CausalConfig config;
  std::size_t log_traces = 0;
  std::size_t log_activities = 0;
};

// Refuses synthetic-time logs: fabricated instants would fabricate causality.
OccurrenceMatrix build_occurrence_matrix(const trajlog::EventLog& log);

// DirectLiNGAM-style iterative exogenous-variable extraction on
// pairwise-complete, column-standardized occurrence times. Requires at
// least activities + 2 rows.
std::vector<std::string> discover_causal_order(const OccurrenceMatrix& matrix,
                                               const CausalConfig& config = {});

// Regresses each activity on all earlier ones (pairwise-complete,
// standardized) and keeps edges passing both the coefficient threshold and
// the temporal-precedence filter.
CausalDag estimate_edges(const OccurrenceMatrix& matrix,
                         const std::vector<std::string>& order,
                         const CausalConfig& config = {});

// Classifies every node with out-degree >= 2 by its per-trace follower sets:
// XOR when almost every traversing run follows exactly one branch, AND when
// almost every run follows all of them, OR otherwise.
std::vector<Gateway> detect_gateways(const CausalDag& dag,
                                     const trajlog::EventLog& log,
                                     const CausalConfig& config = {});

CausalModel discover(const trajlog::EventLog& log,
                     const CausalConfig& config = {});

// Deterministic DOT rendering: activity boxes clustered by agent, diamond
// gateway nodes splicing the raw split edges.
std::string to_dot(const CausalModel& model);

std::string to_json(const CausalModel& model);
CausalModel model_from_json(const std::string& text);
CausalModel model_from_json_file(const std::string& path);

}  // namespace varilens::causal
