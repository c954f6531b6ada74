#include "varilens/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "varilens/error.hpp"
#include "varilens/heuristics.hpp"

namespace varilens::simgen {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::size_t kStepBudget = 10000;  // per run, stops runaway cycles

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double sample_duration_s(const DurationDist& d, double u) {
  switch (d.kind) {
    case DistKind::constant:
      return d.c;
    case DistKind::uniform:
      return d.lo + u * (d.hi - d.lo);
    case DistKind::exponential:
      return -d.mean * std::log(1.0 - u);
  }
  return 0.0;
}

std::string activity_of(const Step& s) {
  return trajlog::make_activity(s.agent, s.tool);
}

DurationDist dist_from_json(const ordered_json& j) {
  DurationDist d;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "constant") {
    d.kind = DistKind::constant;
    d.c = j.at("c").get<double>();
  } else if (kind == "uniform") {
    d.kind = DistKind::uniform;
    d.lo = j.at("lo").get<double>();
    d.hi = j.at("hi").get<double>();
  } else if (kind == "exponential") {
    d.kind = DistKind::exponential;
    d.mean = j.at("mean").get<double>();
  } else {
    throw parse_error("unknown duration kind: " + kind);
  }
  return d;
}

ordered_json dist_to_json(const DurationDist& d) {
  switch (d.kind) {
    case DistKind::constant:
      return {{"kind", "constant"}, {"c", d.c}};
    case DistKind::uniform:
      return {{"kind", "uniform"}, {"lo", d.lo}, {"hi", d.hi}};
    case DistKind::exponential:
      return {{"kind", "exponential"}, {"mean", d.mean}};
  }
  return nullptr;
}

// Tarjan-style SCC over step ids, used for the unguarded-cycle check.
struct SccFinder {
  const std::map<std::string, std::vector<std::string>>& adj;
  std::map<std::string, int> index;
  std::map<std::string, int> low;
  std::map<std::string, bool> on_stack;
  std::vector<std::string> stack;
  int next_index = 0;
  std::vector<std::vector<std::string>> components;

  explicit SccFinder(const std::map<std::string, std::vector<std::string>>& a)
      : adj(a) {}

  void run() {
    for (const auto& [node, _] : adj) {
      if (index.find(node) == index.end()) strongconnect(node);
    }
  }

  void strongconnect(const std::string& v) {
    index[v] = next_index;
    low[v] = next_index;
    ++next_index;
    stack.push_back(v);
    on_stack[v] = true;
    const auto it = adj.find(v);
    if (it != adj.end()) {
      for (const auto& w : it->second) {
        if (index.find(w) == index.end()) {
          strongconnect(w);
          low[v] = std::min(low[v], low[w]);
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], index[w]);
        }
      }
    }
    if (low[v] == index[v]) {
      std::vector<std::string> comp;
      while (true) {
        const std::string w = stack.back();
        stack.pop_back();
        on_stack[w] = false;
        comp.push_back(w);
        if (w == v) break;
      }
      components.push_back(std::move(comp));
    }
  }
};

}  // namespace

std::uint64_t counter_rng_u64(std::uint64_t seed, std::uint64_t run,
                              std::uint64_t counter) {
  return splitmix64(splitmix64(splitmix64(seed) ^ run) ^ counter);
}

double counter_rng_unit(std::uint64_t seed, std::uint64_t run,
                        std::uint64_t counter) {
  return static_cast<double>(counter_rng_u64(seed, run, counter) >> 11) *
         0x1.0p-53;
}

GroundTruthModel GroundTruthModel::from_json(const std::string& text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw parse_error(std::string("invalid model JSON: ") + e.what());
  }
  GroundTruthModel m;
  try {
    m.agents = doc.at("agents").get<std::vector<std::string>>();
    for (const auto& s : doc.at("steps")) {
      Step step;
      step.id = s.at("id").get<std::string>();
      step.agent = s.at("agent").get<std::string>();
      step.tool = s.at("tool").get<std::string>();
      step.duration = dist_from_json(s.at("duration_dist"));
      m.steps.push_back(std::move(step));
    }
    for (const auto& c : doc.at("control")) {
      ControlNode node;
      node.at = c.at("at").get<std::string>();
      node.gtype =
          causal::gateway_type_from_string(c.at("gtype").get<std::string>());
      for (const auto& b : c.at("branches")) {
        node.branches.push_back(Branch{b.at("next").get<std::string>(),
                                       b.value("prob", 1.0)});
      }
      m.control.push_back(std::move(node));
    }
    m.entry = doc.at("entry").get<std::string>();
    m.terminals = doc.at("terminals").get<std::vector<std::string>>();
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw parse_error(std::string("malformed model: ") + e.what());
  }
  return m;
}

GroundTruthModel GroundTruthModel::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open model file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::string GroundTruthModel::to_json() const {
  ordered_json doc;
  doc["agents"] = agents;
  ordered_json steps_json = ordered_json::array();
  for (const auto& s : steps) {
    steps_json.push_back({{"id", s.id},
                          {"agent", s.agent},
                          {"tool", s.tool},
                          {"duration_dist", dist_to_json(s.duration)}});
  }
  doc["steps"] = std::move(steps_json);
  ordered_json control_json = ordered_json::array();
  for (const auto& c : control) {
    ordered_json branches = ordered_json::array();
    for (const auto& b : c.branches) {
      branches.push_back({{"next", b.next}, {"prob", b.prob}});
    }
    control_json.push_back({{"at", c.at},
                            {"gtype", causal::to_string(c.gtype)},
                            {"branches", std::move(branches)}});
  }
  doc["control"] = std::move(control_json);
  doc["entry"] = entry;
  doc["terminals"] = terminals;
  return doc.dump(2) + "\n";
}

void validate_model(const GroundTruthModel& model) {
  std::vector<std::string> faults;
  std::set<std::string> agent_set(model.agents.begin(), model.agents.end());
  std::set<std::string> step_ids;

  for (const auto& s : model.steps) {
    if (s.id.empty()) faults.push_back("step with empty id");
    if (!step_ids.insert(s.id).second) {
      faults.push_back("duplicate step id: " + s.id);
    }
    if (agent_set.find(s.agent) == agent_set.end()) {
      faults.push_back("step " + s.id + " references unknown agent: " +
                       s.agent);
    }
    switch (s.duration.kind) {
      case DistKind::constant:
        if (s.duration.c < 0.0) {
          faults.push_back("step " + s.id + " has negative constant duration");
        }
        break;
      case DistKind::uniform:
        if (s.duration.lo < 0.0 || s.duration.hi < s.duration.lo) {
          faults.push_back("step " + s.id + " has invalid uniform bounds");
        }
        break;
      case DistKind::exponential:
        if (s.duration.mean <= 0.0) {
          faults.push_back("step " + s.id +
                           " has non-positive exponential mean");
        }
        break;
    }
  }
  if (model.steps.empty()) faults.push_back("model has no steps");
  if (step_ids.find(model.entry) == step_ids.end()) {
    faults.push_back("entry step does not exist: " + model.entry);
  }
  for (const auto& t : model.terminals) {
    if (step_ids.find(t) == step_ids.end()) {
      faults.push_back("terminal step does not exist: " + t);
    }
  }

  std::set<std::string> controlled;
  std::map<std::string, std::vector<std::string>> adj;
  for (const auto& id : step_ids) adj[id];
  for (const auto& c : model.control) {
    if (step_ids.find(c.at) == step_ids.end()) {
      faults.push_back("control node at unknown step: " + c.at);
      continue;
    }
    if (!controlled.insert(c.at).second) {
      faults.push_back("multiple control nodes at step: " + c.at);
    }
    if (c.branches.empty()) {
      faults.push_back("control node at " + c.at + " has no branches");
    }
    double prob_sum = 0.0;
    for (const auto& b : c.branches) {
      if (step_ids.find(b.next) == step_ids.end()) {
        faults.push_back("control node at " + c.at +
                         " targets unknown step: " + b.next);
        continue;
      }
      if (b.prob < 0.0 || b.prob > 1.0) {
        faults.push_back("control node at " + c.at +
                         " has branch probability outside [0,1]");
      }
      prob_sum += b.prob;
      adj[c.at].push_back(b.next);
    }
    if (c.gtype == causal::GatewayType::XOR &&
        std::fabs(prob_sum - 1.0) > 1e-9) {
      std::ostringstream msg;
      msg << "XOR at " << c.at << " has branch probabilities summing to "
          << prob_sum << ", expected 1";
      faults.push_back(msg.str());
    }
  }

  if (step_ids.find(model.entry) != step_ids.end()) {
    std::set<std::string> reachable;
    std::deque<std::string> queue{model.entry};
    reachable.insert(model.entry);
    while (!queue.empty()) {
      const std::string cur = queue.front();
      queue.pop_front();
      for (const auto& nxt : adj[cur]) {
        if (reachable.insert(nxt).second) queue.push_back(nxt);
      }
    }
    for (const auto& id : step_ids) {
      if (reachable.find(id) == reachable.end()) {
        faults.push_back("step unreachable from entry: " + id);
      }
    }
  }

  // Every cycle must be escapable through a XOR branch leaving its component.
  SccFinder scc(adj);
  scc.run();
  for (const auto& comp : scc.components) {
    const std::set<std::string> members(comp.begin(), comp.end());
    bool cyclic = comp.size() > 1;
    if (!cyclic) {
      for (const auto& nxt : adj[comp.front()]) {
        if (nxt == comp.front()) cyclic = true;
      }
    }
    if (!cyclic) continue;
    bool guarded = false;
    for (const auto& c : model.control) {
      if (members.find(c.at) == members.end()) continue;
      if (c.gtype != causal::GatewayType::XOR) continue;
      for (const auto& b : c.branches) {
        if (members.find(b.next) == members.end()) guarded = true;
      }
    }
    if (!guarded) {
      faults.push_back("unguarded cycle through step: " + comp.front());
    }
  }

  if (!faults.empty()) {
    std::string joined = "invalid model: ";
    for (std::size_t i = 0; i < faults.size(); ++i) {
      if (i > 0) joined += "; ";
      joined += faults[i];
    }
    throw analysis_error(joined);
  }
}

std::vector<trajlog::TrajectoryEvent> simulate(const GroundTruthModel& model,
                                               const SimConfig& config) {
  validate_model(model);
  if (config.runs == 0) throw analysis_error("runs must be at least 1");

  std::map<std::string, const Step*> step_by_id;
  for (const auto& s : model.steps) step_by_id[s.id] = &s;
  std::map<std::string, const ControlNode*> control_by_step;
  for (const auto& c : model.control) control_by_step[c.at] = &c;

  std::vector<trajlog::TrajectoryEvent> out;
  for (std::size_t r = 0; r < config.runs; ++r) {
    const std::string run_id = "run_" + std::to_string(r);
    std::int64_t now = config.start_time_ms +
                       static_cast<std::int64_t>(r) * config.inter_run_gap_ms;
    std::uint64_t draw = 0;
    std::size_t seq = 0;

    std::deque<std::string> frontier{model.entry};
    while (!frontier.empty()) {
      if (seq >= kStepBudget) {
        throw analysis_error("run " + run_id + " exceeded the step budget of " +
                             std::to_string(kStepBudget));
      }
      const std::string id = frontier.front();
      frontier.pop_front();
      const Step& step = *step_by_id.at(id);

      const double u = counter_rng_unit(config.seed, r, draw++);
      const double dur_s = sample_duration_s(step.duration, u);
      now += static_cast<std::int64_t>(std::llround(dur_s * 1000.0));

      trajlog::TrajectoryEvent ev;
      ev.run_id = run_id;
      ev.seq = seq++;
      ev.timestamp_ms = now;
      ev.agent = step.agent;
      ev.action_kind = trajlog::ActionKind::tool_invocation;
      ev.tool = step.tool;
      out.push_back(std::move(ev));

      const auto ctrl = control_by_step.find(id);
      if (ctrl == control_by_step.end()) continue;
      const ControlNode& node = *ctrl->second;
      switch (node.gtype) {
        case causal::GatewayType::XOR: {
          const double pick = counter_rng_unit(config.seed, r, draw++);
          double acc = 0.0;
          std::string chosen = node.branches.back().next;
          for (const auto& b : node.branches) {
            acc += b.prob;
            if (pick < acc) {
              chosen = b.next;
              break;
            }
          }
          frontier.push_back(chosen);
          break;
        }
        case causal::GatewayType::AND: {
          for (const auto& b : node.branches) frontier.push_back(b.next);
          break;
        }
        case causal::GatewayType::OR: {
          std::vector<const Branch*> included;
          const Branch* best = &node.branches.front();
          for (const auto& b : node.branches) {
            const double pick = counter_rng_unit(config.seed, r, draw++);
            if (pick < b.prob) included.push_back(&b);
            if (b.prob > best->prob) best = &b;
          }
          // OR takes a nonempty subset; an empty draw falls back to the
          // likeliest branch.
          if (included.empty()) included.push_back(best);
          for (const Branch* b : included) frontier.push_back(b->next);
          break;
        }
      }
    }
  }
  return out;
}

GroundTruth ground_truth(const GroundTruthModel& model) {
  validate_model(model);
  std::map<std::string, std::string> act;
  for (const auto& s : model.steps) act[s.id] = activity_of(s);

  std::set<std::pair<std::string, std::string>> dfg;
  std::set<std::pair<std::string, std::string>> causal_edges;
  dfg.insert({heuristics::kStart, act.at(model.entry)});
  for (const auto& t : model.terminals) {
    dfg.insert({act.at(t), heuristics::kEnd});
  }

  GroundTruth gt;
  for (const auto& c : model.control) {
    std::set<std::string> targets;
    for (const auto& b : c.branches) {
      dfg.insert({act.at(c.at), act.at(b.next)});
      causal_edges.insert({act.at(c.at), act.at(b.next)});
      targets.insert(act.at(b.next));
    }
    if (targets.size() < 2) continue;
    GroundTruthGateway gw;
    gw.source = act.at(c.at);
    gw.gtype = c.gtype;
    for (const auto& b : c.branches) {
      gw.branches.emplace_back(act.at(b.next), b.prob);
    }
    gt.gateways.push_back(std::move(gw));
  }
  gt.dfg_edges.assign(dfg.begin(), dfg.end());
  gt.causal_edges.assign(causal_edges.begin(), causal_edges.end());
  return gt;
}

}  // namespace varilens::simgen
