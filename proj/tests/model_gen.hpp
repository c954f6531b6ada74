#pragma once

// Random ground-truth model construction for oracle tests. Models are small
// branching chains: a backbone, up to two gateways, disjoint branch tails.
// Every step carries a unique tool so activities map 1:1 onto step ids.

#include <cstdint>
#include <string>
#include <vector>

#include "varilens/simgen.hpp"

namespace testutil {

struct ModelRng {
  std::uint64_t state;
  double unit() {
    state ^= state << 13;
    state ^= state >> 7;
    state ^= state << 17;
    return static_cast<double>(state >> 11) * 0x1.0p-53;
  }
  double between(double lo, double hi) { return lo + unit() * (hi - lo); }
  std::size_t below(std::size_t n) {
    unit();
    return static_cast<std::size_t>(state % n);
  }
};

inline varilens::simgen::GroundTruthModel random_model(
    ModelRng& rng, std::size_t max_steps = 8, std::size_t max_gateways = 2) {
  using varilens::causal::GatewayType;
  using varilens::simgen::Branch;
  using varilens::simgen::ControlNode;
  using varilens::simgen::DistKind;
  using varilens::simgen::GroundTruthModel;
  using varilens::simgen::Step;

  GroundTruthModel model;
  model.agents = {"Alpha", "Beta"};

  auto add_step = [&]() {
    Step s;
    s.id = "s" + std::to_string(model.steps.size());
    s.agent = model.agents[rng.below(2)];
    s.tool = "t" + std::to_string(model.steps.size());
    s.duration.kind = DistKind::uniform;
    // variance grows with depth so chained offsets decorrelate
    const double lo = 1.0 + rng.between(0.0, 1.0);
    s.duration.lo = lo;
    s.duration.hi = lo + 2.0 * (1.0 + double(model.steps.size()));
    model.steps.push_back(s);
    return s.id;
  };

  auto link = [&](const std::string& from, const std::string& to) {
    ControlNode node;
    node.at = from;
    node.gtype = GatewayType::XOR;
    node.branches = {Branch{to, 1.0}};
    model.control.push_back(node);
  };

  model.entry = add_step();
  std::string tail = model.entry;
  if (rng.below(2) == 0 && model.steps.size() < max_steps) {
    const std::string next = add_step();
    link(tail, next);
    tail = next;
  }

  const std::size_t want_gateways = rng.below(max_gateways + 1);
  for (std::size_t g = 0; g < want_gateways; ++g) {
    const std::size_t fan = 2 + rng.below(2);
    if (model.steps.size() + fan > max_steps) break;

    ControlNode node;
    node.at = tail;
    const std::size_t pick = rng.below(3);
    node.gtype = pick == 0   ? GatewayType::XOR
                 : pick == 1 ? GatewayType::AND
                             : GatewayType::OR;

    std::vector<std::string> targets;
    std::vector<double> weights;
    double weight_sum = 0.0;
    for (std::size_t b = 0; b < fan; ++b) {
      targets.push_back(add_step());
      const double w = rng.between(1.0, 4.0);
      weights.push_back(w);
      weight_sum += w;
    }
    for (std::size_t b = 0; b < fan; ++b) {
      double prob = 1.0;
      if (node.gtype == GatewayType::XOR) {
        prob = weights[b] / weight_sum;
      } else if (node.gtype == GatewayType::OR) {
        prob = rng.between(0.35, 0.85);
      }
      node.branches.push_back(Branch{targets[b], prob});
    }
    if (node.gtype == GatewayType::XOR) {
      // re-normalize exactly; floating error must not trip validation
      double s = 0.0;
      for (const auto& br : node.branches) s += br.prob;
      for (auto& br : node.branches) br.prob /= s;
      double acc = 0.0;
      for (std::size_t b = 0; b + 1 < node.branches.size(); ++b) {
        acc += node.branches[b].prob;
      }
      node.branches.back().prob = 1.0 - acc;
    }
    model.control.push_back(node);

    // the next gateway, if any, grows out of the first branch
    tail = targets.front();
    if (model.steps.size() < max_steps && rng.below(2) == 0) {
      const std::string ext = add_step();
      link(tail, ext);
      tail = ext;
    }
  }

  // terminals are exactly the steps without a control node
  for (const auto& s : model.steps) {
    bool controlled = false;
    for (const auto& c : model.control) {
      if (c.at == s.id) controlled = true;
    }
    if (!controlled) model.terminals.push_back(s.id);
  }
  return model;
}

}  // namespace testutil
