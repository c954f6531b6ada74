#include "varilens/heuristics.hpp"

#include <algorithm>
#include <cstdio>
#include <deque>
#include <set>

#include "varilens/error.hpp"

namespace varilens::heuristics {

namespace {

std::size_t index_of(const DfgCounts& counts, const std::string& a) {
  auto it = counts.index.find(a);
  if (it == counts.index.end())
    throw analysis_error("unknown activity '" + a + "'");
  return it->second;
}

std::string dot_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out;
}

std::string format_dependency(double dep) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", dep);
  return buf;
}

// Nodes reachable from `from` following edges forward (or backward).
std::set<std::string> reachable(const DependencyGraph& graph,
                                const std::string& from, bool forward) {
  std::set<std::string> seen{from};
  std::deque<std::string> queue{from};
  while (!queue.empty()) {
    std::string cur = queue.front();
    queue.pop_front();
    for (const auto& [key, edge] : graph.edges) {
      (void)edge;
      const std::string& src = forward ? key.first : key.second;
      const std::string& dst = forward ? key.second : key.first;
      if (src == cur && !seen.count(dst)) {
        seen.insert(dst);
        queue.push_back(dst);
      }
    }
  }
  return seen;
}

}  // namespace

std::uint64_t DfgCounts::at(const std::string& a, const std::string& b) const {
  return follows[index_of(*this, a)][index_of(*this, b)];
}

DfgCounts count_directly_follows(const trajlog::EventLog& log) {
  if (log.traces.empty()) throw analysis_error("empty log");

  DfgCounts counts;
  counts.trace_count = log.traces.size();
  counts.activities.push_back(kStart);
  for (const auto& a : log.activity_alphabet) counts.activities.push_back(a);
  counts.activities.push_back(kEnd);
  for (std::size_t i = 0; i < counts.activities.size(); ++i)
    counts.index[counts.activities[i]] = i;

  const std::size_t n = counts.activities.size();
  counts.follows.assign(n, std::vector<std::uint64_t>(n, 0));
  counts.occurrences[kStart] = log.traces.size();
  counts.occurrences[kEnd] = log.traces.size();

  const std::size_t start = counts.index.at(kStart);
  const std::size_t end = counts.index.at(kEnd);
  for (const auto& trace : log.traces) {
    std::size_t prev = start;
    for (const auto& ev : trace.events) {
      std::size_t cur = counts.index.at(ev.activity);
      counts.follows[prev][cur] += 1;
      counts.occurrences[ev.activity] += 1;
      prev = cur;
    }
    counts.follows[prev][end] += 1;
  }
  return counts;
}

double dependency_measure(const DfgCounts& counts, const std::string& a,
                          const std::string& b) {
  std::uint64_t ab = counts.follows[index_of(counts, a)][index_of(counts, b)];
  if (a == b)
    return static_cast<double>(ab) / static_cast<double>(ab + 1);
  std::uint64_t ba = counts.follows[index_of(counts, b)][index_of(counts, a)];
  return (static_cast<double>(ab) - static_cast<double>(ba)) /
         static_cast<double>(ab + ba + 1);
}

DependencyGraph select_edges(const DfgCounts& counts, const MinerConfig& config) {
  if (config.dependency_threshold < 0.0 || config.dependency_threshold > 1.0)
    throw analysis_error("dependency_threshold must lie in [0,1]");

  DependencyGraph graph;
  for (const auto& [activity, freq] : counts.occurrences)
    graph.nodes[activity] = freq;

  const std::size_t n = counts.activities.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      std::uint64_t freq = counts.follows[i][j];
      if (freq == 0) continue;
      const std::string& a = counts.activities[i];
      const std::string& b = counts.activities[j];
      if (i == j && !config.keep_self_loops) continue;
      if (freq < config.min_edge_frequency) continue;
      double dep = dependency_measure(counts, a, b);
      if (dep < config.dependency_threshold) continue;
      graph.edges[{a, b}] = DependencyEdge{dep, freq};
    }
  }
  return graph;
}

void repair_connectivity(DependencyGraph& graph, const DfgCounts& counts) {
  // Best candidate edge (by dependency, then lexicographic) among positive
  // directly-follows pairs touching `node`, optionally restricted to
  // endpoints inside `anchor`.
  auto best_edge = [&](const std::string& node, bool incoming,
                       const std::set<std::string>* anchor)
      -> std::optional<std::pair<std::string, std::string>> {
    std::optional<std::pair<std::string, std::string>> best;
    double best_dep = 0.0;
    for (const auto& other : counts.activities) {
      if (other == node) continue;
      const std::string& src = incoming ? other : node;
      const std::string& dst = incoming ? node : other;
      if (counts.at(src, dst) == 0) continue;
      if (anchor && !anchor->count(other)) continue;
      double dep = dependency_measure(counts, src, dst);
      if (!best || dep > best_dep ||
          (dep == best_dep && std::make_pair(src, dst) < *best)) {
        best = std::make_pair(src, dst);
        best_dep = dep;
      }
    }
    return best;
  };

  auto add_edge = [&](const std::pair<std::string, std::string>& key) {
    graph.edges[key] = DependencyEdge{
        dependency_measure(counts, key.first, key.second),
        counts.at(key.first, key.second)};
  };

  // forward = reachability from START; backward = co-reachability of END.
  for (bool forward : {true, false}) {
    const std::string root = forward ? kStart : kEnd;
    for (std::size_t guard = 0; guard <= counts.activities.size(); ++guard) {
      auto seen = reachable(graph, root, forward);
      std::vector<std::string> missing;
      for (const auto& a : counts.activities)
        if (a != kStart && a != kEnd && !seen.count(a)) missing.push_back(a);
      if (missing.empty()) break;

      bool progressed = false;
      for (const auto& node : missing) {
        auto edge = best_edge(node, forward, nullptr);
        if (edge && !graph.edges.count(*edge)) {
          add_edge(*edge);
          progressed = true;
        }
      }
      if (!progressed) {
        // The best edges formed a detached cycle; attach the first missing
        // node straight to the connected part.
        auto edge = best_edge(missing.front(), forward, &seen);
        if (!edge) break;  // cannot happen for counts built from real traces
        add_edge(*edge);
      }
    }
  }
}

DependencyGraph discover(const trajlog::EventLog& log, const MinerConfig& config) {
  DfgCounts counts = count_directly_follows(log);
  DependencyGraph graph = select_edges(counts, config);
  repair_connectivity(graph, counts);
  return graph;
}

std::string to_dot(const DependencyGraph& graph) {
  std::string out = "digraph dependency_net {\n";
  out += "  rankdir=TB;\n";
  for (const auto& [activity, freq] : graph.nodes) {
    out += "  \"" + dot_escape(activity) + "\"";
    if (activity == kStart || activity == kEnd) {
      out += " [shape=circle, style=filled, fillcolor=lightgray, label=\"" +
             std::string(activity) + "\"];\n";
    } else {
      out += " [shape=box, label=\"" + dot_escape(activity) + " (" +
             std::to_string(freq) + ")\"];\n";
    }
  }
  for (const auto& [key, edge] : graph.edges) {
    out += "  \"" + dot_escape(key.first) + "\" -> \"" + dot_escape(key.second) +
           "\" [label=\"" + format_dependency(edge.dependency) + " | " +
           std::to_string(edge.frequency) + "\"];\n";
  }
  out += "}\n";
  return out;
}

}  // namespace varilens::heuristics
