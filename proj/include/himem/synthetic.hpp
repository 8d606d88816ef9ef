#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "himem/errors.hpp"
#include "himem/rng.hpp"
#include "himem/tensor.hpp"

namespace himem {

// Scenario shapes, named agents-by-tasks. Two agents can collaborate on a
// shared task set; multi-task agents alternate between two class subsets.
enum class Scenario { kOneByOne, kOneByTwo, kTwoByOne, kTwoByTwo };

inline std::size_t scenario_agents(Scenario s) {
  return (s == Scenario::kTwoByOne || s == Scenario::kTwoByTwo) ? 2 : 1;
}

inline std::size_t scenario_tasks(Scenario s) {
  return (s == Scenario::kOneByTwo || s == Scenario::kTwoByTwo) ? 2 : 1;
}

inline std::string format_scenario(Scenario s) {
  return std::to_string(scenario_agents(s)) + "x" +
         std::to_string(scenario_tasks(s));
}

inline Scenario parse_scenario(const std::string& text) {
  if (text == "1x1") return Scenario::kOneByOne;
  if (text == "1x2") return Scenario::kOneByTwo;
  if (text == "2x1") return Scenario::kTwoByOne;
  if (text == "2x2") return Scenario::kTwoByTwo;
  throw ValidationError("unknown scenario '" + text +
                        "' (expected 1x1, 1x2, 2x1, or 2x2)");
}

inline std::uint32_t scenario_code(Scenario s) {
  return static_cast<std::uint32_t>(scenario_agents(s) * 10 +
                                    scenario_tasks(s));
}

inline Scenario scenario_from_code(std::uint32_t code) {
  switch (code) {
    case 11: return Scenario::kOneByOne;
    case 12: return Scenario::kOneByTwo;
    case 21: return Scenario::kTwoByOne;
    case 22: return Scenario::kTwoByTwo;
    default:
      throw ValidationError("unknown scenario code " + std::to_string(code));
  }
}

struct ScenarioSpec {
  Scenario scenario = Scenario::kTwoByOne;
  std::size_t action_classes = 10;  // labels run 0..K, 0 reserved background
  std::size_t dim = 64;
  double coupling = 0.0;  // chance a boundary of agent 2 copies the rule
  double noise = 0.1;
  double mean_duration = 8.0;  // frames per action segment
  std::size_t frames = 512;
  std::uint64_t seed = 0;        // label tracks and feature noise
  std::uint64_t world_seed = 0;  // class prototypes and task chains

  // Episodes meant to be comparable (train vs held-out eval) must share
  // world_seed and differ only in seed; otherwise the class-to-feature
  // mapping changes under the model and generalization is impossible.

  std::size_t agents() const { return scenario_agents(scenario); }
  std::size_t tasks() const { return scenario_tasks(scenario); }

  void validate() const {
    if (action_classes < 3) {
      throw ValidationError("need at least 3 action classes");
    }
    if (tasks() == 2 && action_classes < 4) {
      throw ValidationError(
          "two disjoint task subsets need at least 4 action classes");
    }
    if (dim == 0) throw ValidationError("feature dim must be positive");
    if (coupling < 0.0 || coupling > 1.0) {
      throw ValidationError("coupling must lie in [0, 1]");
    }
    if (coupling > 0.0 && agents() != 2) {
      throw ValidationError("coupling needs two agents");
    }
    if (noise < 0.0) throw ValidationError("noise must be nonnegative");
    if (mean_duration < 1.0) {
      throw ValidationError("mean duration must be at least one frame");
    }
    if (frames < 2) throw ValidationError("episode needs at least 2 frames");
  }
};

// One task: a first-order chain over its class subset. The matrix covers all
// labels 0..K; row 0 is the entry distribution, rows outside the subset are
// self-loops so every row stays a distribution.
struct TaskScript {
  std::vector<int> classes;
  std::vector<std::vector<double>> transition;  // [K+1][K+1]
};

inline double quantize_f32(double x) {
  return static_cast<double>(static_cast<float>(x));
}

struct ScenarioModel {
  ScenarioSpec spec;
  std::vector<TaskScript> tasks;
  std::vector<std::vector<double>> prototypes;  // (K+1) x dim, ~unit norm

  // Collaboration rule: the class agent 2 adopts, as a pure function of
  // agent 1's current class and the task agent 2 is entering. "Current"
  // means the frame on which the boundary decision is made, the last frame
  // of the ending segment, so the rule input is observable history.
  int coupling_rule(int agent1_class, std::size_t entering_task) const {
    const auto& subset = tasks[entering_task].classes;
    return subset[static_cast<std::size_t>(agent1_class) % subset.size()];
  }
};

namespace synth_detail {

constexpr std::uint64_t kTagChains = 0x4348414900000000ULL;
constexpr std::uint64_t kTagProtos = 0x50524f5400000000ULL;
constexpr std::uint64_t kTagLabels = 0x4c41424c00000000ULL;
constexpr std::uint64_t kTagFpv = 0x4650560000000000ULL;
constexpr std::uint64_t kTagTpv = 0x5450560000000000ULL;

inline std::size_t sample_row(const std::vector<double>& row, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (row[j] <= 0.0) continue;
    acc += row[j];
    last = j;
    if (u < acc) return j;
  }
  return last;
}

inline std::size_t sample_duration(double mean, Rng& rng) {
  if (mean <= 1.0) return 1;
  const double p = 1.0 / mean;
  const double u = rng.uniform();
  return 1 + static_cast<std::size_t>(
                 std::floor(std::log1p(-u) / std::log1p(-p)));
}

}  // namespace synth_detail

inline ScenarioModel build_scenario_model(const ScenarioSpec& spec) {
  spec.validate();
  ScenarioModel model;
  model.spec = spec;

  const std::size_t k = spec.action_classes;
  const std::size_t n_tasks = spec.tasks();
  Rng root(spec.world_seed);

  // Contiguous partition of 1..K into the task subsets.
  std::vector<std::vector<int>> subsets(n_tasks);
  for (std::size_t c = 1; c <= k; ++c) {
    subsets[(c - 1) * n_tasks / k].push_back(static_cast<int>(c));
  }

  for (std::size_t t = 0; t < n_tasks; ++t) {
    TaskScript task;
    task.classes = subsets[t];
    task.transition.assign(k + 1, std::vector<double>(k + 1, 0.0));
    for (std::size_t r = 0; r <= k; ++r) task.transition[r][r] = 1.0;

    Rng chain_rng = root.derive(synth_detail::kTagChains + t);
    auto fill_row = [&](std::size_t row, int skip) {
      auto& weights = task.transition[row];
      std::fill(weights.begin(), weights.end(), 0.0);
      double total = 0.0;
      for (int c : task.classes) {
        if (c == skip) continue;
        weights[c] = chain_rng.uniform(0.1, 1.0);
        total += weights[c];
      }
      for (int c : task.classes) weights[c] /= total;
    };
    fill_row(0, -1);  // entry distribution, used for the first segment
    for (int c : task.classes) fill_row(c, c);
    model.tasks.push_back(std::move(task));
  }

  Rng proto_rng = root.derive(synth_detail::kTagProtos);
  model.prototypes.assign(k + 1, std::vector<double>(spec.dim, 0.0));
  for (auto& proto : model.prototypes) {
    double norm2 = 0.0;
    for (auto& x : proto) {
      x = proto_rng.gaussian();
      norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& x : proto) x = quantize_f32(x * inv);
  }
  return model;
}

// Per-agent label tracks. Agent streams are derived independently, so agent
// 1's track never depends on agent 2's existence; at each of agent 2's
// boundaries the coupling rule reads the class agent 1 held on the previous
// frame. The opening segment has no previous frame and is never coupled.
inline std::vector<std::vector<int>> generate_labels(
    const ScenarioModel& model) {
  const ScenarioSpec& spec = model.spec;
  const std::size_t total = spec.frames;
  Rng root(spec.seed);

  std::vector<std::vector<int>> labels(spec.agents(),
                                       std::vector<int>(total, 0));
  for (std::size_t a = 0; a < spec.agents(); ++a) {
    Rng rng = root.derive(synth_detail::kTagLabels + a);
    std::vector<int> task_state(model.tasks.size(), 0);  // 0 = entry row
    std::size_t t = 0;
    std::size_t segment = 0;
    while (t < total) {
      const std::size_t task_idx = segment % model.tasks.size();
      const TaskScript& task = model.tasks[task_idx];

      int next;
      const bool coupled = a == 1 && t > 0 && spec.coupling > 0.0 &&
                           rng.uniform() < spec.coupling;
      if (coupled) {
        next = model.coupling_rule(labels[0][t - 1], task_idx);
      } else {
        next = static_cast<int>(synth_detail::sample_row(
            task.transition[task_state[task_idx]], rng));
      }
      task_state[task_idx] = next;

      const std::size_t duration =
          synth_detail::sample_duration(spec.mean_duration, rng);
      for (std::size_t i = 0; i < duration && t < total; ++i, ++t) {
        labels[a][t] = next;
      }
      ++segment;
    }
  }
  return labels;
}

struct Episode {
  Scenario scenario = Scenario::kOneByOne;
  std::uint64_t seed = 0;
  std::size_t action_classes = 0;  // labels run 0..action_classes
  Tensor context_features;         // [T, D]
  std::vector<Tensor> agent_features;
  std::vector<std::vector<int>> labels;

  std::size_t agents() const { return agent_features.size(); }
  std::size_t frames() const { return context_features.dim(0); }
  std::size_t dim() const { return context_features.dim(1); }
};

// Prototype-plus-noise emission, quantized to 32-bit storage precision so a
// disk round-trip reproduces features bit for bit.
inline Episode emit_features(const ScenarioModel& model,
                             const std::vector<std::vector<int>>& labels) {
  const ScenarioSpec& spec = model.spec;
  if (labels.size() != spec.agents()) {
    throw ValidationError("label tracks do not match the agent count");
  }
  const std::size_t total = spec.frames;
  Rng root(spec.seed);

  Episode ep;
  ep.scenario = spec.scenario;
  ep.seed = spec.seed;
  ep.action_classes = spec.action_classes;
  ep.labels = labels;

  for (std::size_t a = 0; a < spec.agents(); ++a) {
    if (labels[a].size() != total) {
      throw ValidationError("label track length mismatch");
    }
    Rng rng = root.derive(synth_detail::kTagFpv + a);
    Tensor feats = Tensor::zeros({total, spec.dim});
    for (std::size_t t = 0; t < total; ++t) {
      const auto& proto = model.prototypes[labels[a][t]];
      for (std::size_t d = 0; d < spec.dim; ++d) {
        feats.data()[t * spec.dim + d] =
            quantize_f32(proto[d] + rng.gaussian() * spec.noise);
      }
    }
    ep.agent_features.push_back(feats);
  }

  Rng ctx_rng = root.derive(synth_detail::kTagTpv);
  ep.context_features = Tensor::zeros({total, spec.dim});
  const double inv_agents = 1.0 / static_cast<double>(spec.agents());
  for (std::size_t t = 0; t < total; ++t) {
    for (std::size_t d = 0; d < spec.dim; ++d) {
      double mean = 0.0;
      for (std::size_t a = 0; a < spec.agents(); ++a) {
        mean += model.prototypes[labels[a][t]][d];
      }
      ep.context_features.data()[t * spec.dim + d] = quantize_f32(
          mean * inv_agents + ctx_rng.gaussian() * spec.noise);
    }
  }
  return ep;
}

inline Episode generate_episode(const ScenarioSpec& spec) {
  ScenarioModel model = build_scenario_model(spec);
  return emit_features(model, generate_labels(model));
}

}  // namespace himem
