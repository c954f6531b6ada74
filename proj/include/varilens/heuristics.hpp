#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "varilens/trajlog.hpp"

namespace varilens::heuristics {

// Artificial endpoints. Real activity ids always contain "::", so these
// names cannot collide.
inline constexpr const char* kStart = "START";
inline constexpr const char* kEnd = "END";

// Directly-follows counts over all traces, including START>first and
// last>END successions. Each trace of length L contributes L+1 counts.
struct DfgCounts {
  std::vector<std::string> activities;  // START, sorted ids..., END
  std::vector<std::vector<std::uint64_t>> follows;
  std::map<std::string, std::size_t> index;
  std::map<std::string, std::uint64_t> occurrences;  // trace count for START/END
  std::size_t trace_count = 0;

  std::uint64_t at(const std::string& a, const std::string& b) const;
};

struct MinerConfig {
  double dependency_threshold = 0.5;
  std::uint64_t min_edge_frequency = 1;
  bool keep_self_loops = true;
};

struct DependencyEdge {
  double dependency = 0.0;
  std::uint64_t frequency = 0;
};

struct DependencyGraph {
  std::map<std::string, std::uint64_t> nodes;  // activity -> occurrence count
  std::map<std::pair<std::string, std::string>, DependencyEdge> edges;
};

DfgCounts count_directly_follows(const trajlog::EventLog& log);

// (|a>b| - |b>a|) / (|a>b| + |b>a| + 1) for a != b,
// |a>a| / (|a>a| + 1) for self-loops. Unknown activities are a lookup error.
double dependency_measure(const DfgCounts& counts, const std::string& a,
                          const std::string& b);

// Threshold-based edge selection without connectivity repair. Every retained
// edge has positive directly-follows count.
DependencyGraph select_edges(const DfgCounts& counts, const MinerConfig& config);

// Re-adds the best incoming/outgoing edges so that every node is reachable
// from START and reaches END.
void repair_connectivity(DependencyGraph& graph, const DfgCounts& counts);

DependencyGraph discover(const trajlog::EventLog& log,
                         const MinerConfig& config = {});

// Deterministic Graphviz digraph; nodes and edges in lexicographic order.
std::string to_dot(const DependencyGraph& graph);

}  // namespace varilens::heuristics
