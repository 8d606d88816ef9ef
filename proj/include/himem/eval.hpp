#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "himem/config.hpp"
#include "himem/errors.hpp"
#include "himem/model.hpp"
#include "himem/stream.hpp"
#include "himem/synthetic.hpp"
#include "himem/tensor.hpp"

namespace himem {

// Flat score/label store shared by the pooled and per-offset rankings.
struct ScoredFrames {
  std::size_t classes = 0;
  std::vector<double> scores;  // row-major [frames, classes]
  std::vector<int> labels;

  std::size_t frames() const { return labels.size(); }

  void add(const double* row, int label) {
    scores.insert(scores.end(), row, row + classes);
    labels.push_back(label);
  }
};

struct ClassAp {
  std::size_t cls = 0;
  double ap = 0.0;
  std::size_t positives = 0;
};

struct MapResult {
  std::vector<ClassAp> per_class;  // only classes with at least one positive
  double map = 0.0;
};

// Macro AP over non-background classes. Per class: rank every frame by that
// class score, ties broken by frame index, and average the precision at each
// positive. Classes that never occur are skipped rather than scored zero.
inline MapResult per_frame_map(const ScoredFrames& frames) {
  if (frames.frames() == 0) throw EvalError("no frames to evaluate");
  if (frames.classes < 2) {
    throw EvalError("need background plus at least one action class");
  }
  const std::size_t n = frames.frames();

  MapResult out;
  std::vector<std::size_t> order(n);
  for (std::size_t c = 1; c < frames.classes; ++c) {
    std::size_t positives = 0;
    for (int l : frames.labels) positives += (static_cast<std::size_t>(l) == c);
    if (positives == 0) continue;

    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double sa = frames.scores[a * frames.classes + c];
      const double sb = frames.scores[b * frames.classes + c];
      if (sa != sb) return sa > sb;
      return a < b;
    });

    double precision_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 0; rank < n; ++rank) {
      if (static_cast<std::size_t>(frames.labels[order[rank]]) == c) {
        ++hits;
        precision_sum +=
            static_cast<double>(hits) / static_cast<double>(rank + 1);
      }
    }
    out.per_class.push_back(
        {c, precision_sum / static_cast<double>(positives), positives});
  }

  if (out.per_class.empty()) {
    throw EvalError("every class has zero positives");
  }
  double sum = 0.0;
  for (const auto& c : out.per_class) sum += c.ap;
  out.map = sum / static_cast<double>(out.per_class.size());
  return out;
}

struct EvalReport {
  std::string scenario;
  std::size_t episodes = 0;
  MapResult pooled;
  std::vector<MapResult> per_offset;
  std::string config_echo;
};

namespace eval_detail {

inline void softmax_row(const double* logits, std::size_t n, double* out) {
  double peak = logits[0];
  for (std::size_t i = 1; i < n; ++i) peak = std::max(peak, logits[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(logits[i] - peak);
    sum += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= sum;
}

}  // namespace eval_detail

inline void check_dataset_compatibility(const ExperimentConfig& cfg,
                                        const std::vector<Episode>& episodes) {
  if (episodes.empty()) throw EvalError("no episodes to evaluate");
  const auto model_cfg = cfg.to_model_config();
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& ep = episodes[i];
    const std::string tag = "episode " + std::to_string(i);
    if (ep.dim() != cfg.D) {
      throw ValidationError(tag + " has feature dim " +
                            std::to_string(ep.dim()) + ", config D = " +
                            std::to_string(cfg.D));
    }
    if (ep.action_classes != cfg.K) {
      throw ValidationError(tag + " has K = " +
                            std::to_string(ep.action_classes) +
                            ", config K = " + std::to_string(cfg.K));
    }
    if (ep.agents() != model_cfg.agents) {
      throw ValidationError(tag + " has " + std::to_string(ep.agents()) +
                            " agents, config scenario expects " +
                            std::to_string(model_cfg.agents));
    }
  }
}

inline AnchoredInputs anchored_inputs(const Episode& ep, std::size_t anchor,
                                      const StreamConfig& stream) {
  AnchoredInputs in;
  for (std::size_t a = 0; a < ep.agents(); ++a) {
    in.agent_long.push_back(long_window(ep.agent_features[a], anchor, stream));
    in.agent_short.push_back(
        short_window(ep.agent_features[a], anchor, stream));
  }
  in.ctx_long = long_window(ep.context_features, anchor, stream);
  in.ctx_short = short_window(ep.context_features, anchor, stream);
  return in;
}

// Scores every anchor t with t + N_F <= T across all episodes and agents.
// Row order is fixed (episode, anchor, agent, offset) so aggregation is
// reproducible bit for bit.
inline EvalReport evaluate(HiMemFormer& model,
                           const std::vector<Episode>& episodes,
                           const ExperimentConfig& cfg) {
  check_dataset_compatibility(cfg, episodes);
  const auto stream = cfg.to_stream_config();
  stream.validate();
  const std::size_t horizon = stream.anticipation_steps();
  const std::size_t classes = cfg.K + 1;

  ScoredFrames pooled;
  pooled.classes = classes;
  std::vector<ScoredFrames> per_offset(horizon);
  for (auto& s : per_offset) s.classes = classes;

  std::vector<double> probs(classes);
  for (const auto& ep : episodes) {
    if (ep.frames() <= horizon) {
      throw EvalError("episode shorter than the anticipation horizon");
    }
    for (std::size_t anchor = 1; anchor + horizon <= ep.frames(); ++anchor) {
      Tape tape;
      const auto inputs = anchored_inputs(ep, anchor, stream);
      const auto pred = model.forward(tape, inputs);
      for (std::size_t a = 0; a < ep.agents(); ++a) {
        const auto& logits = pred.fine_logits[a];
        for (std::size_t j = 0; j < horizon; ++j) {
          eval_detail::softmax_row(logits.data().data() + j * classes,
                                   classes, probs.data());
          const int label = ep.labels[a][anchor + j];
          pooled.add(probs.data(), label);
          per_offset[j].add(probs.data(), label);
        }
      }
    }
  }

  EvalReport report;
  report.scenario = format_scenario(episodes.front().scenario);
  report.episodes = episodes.size();
  report.pooled = per_frame_map(pooled);
  report.per_offset.reserve(horizon);
  for (const auto& s : per_offset) report.per_offset.push_back(per_frame_map(s));
  report.config_echo = serialize_config(cfg);
  return report;
}

inline std::string format_ap(double v) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << v;
  return out.str();
}

inline std::string map_report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "scenario,class,ap,map\n";
  for (const auto& c : report.pooled.per_class) {
    out << report.scenario << ',' << c.cls << ',' << format_ap(c.ap) << ','
        << format_ap(report.pooled.map) << '\n';
  }
  return out.str();
}

inline std::string per_offset_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "scenario,offset,class,ap,map\n";
  for (std::size_t j = 0; j < report.per_offset.size(); ++j) {
    const auto& r = report.per_offset[j];
    for (const auto& c : r.per_class) {
      out << report.scenario << ',' << (j + 1) << ',' << c.cls << ','
          << format_ap(c.ap) << ',' << format_ap(r.map) << '\n';
    }
  }
  return out.str();
}

inline std::string map_report_table(const EvalReport& report) {
  std::ostringstream out;
  out << "scenario " << report.scenario << ", " << report.episodes
      << " episodes\n";
  out << "  class      ap  positives\n";
  for (const auto& c : report.pooled.per_class) {
    out << "  " << c.cls << (c.cls < 10 ? "    " : "   ") << format_ap(c.ap)
        << "  " << c.positives << '\n';
  }
  out << "  mAP " << format_ap(report.pooled.map) << '\n';
  return out.str();
}

}  // namespace himem
