#pragma once

#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "himem/config.hpp"
#include "himem/errors.hpp"
#include "himem/eval.hpp"
#include "himem/model.hpp"
#include "himem/rng.hpp"
#include "himem/train.hpp"

namespace himem {

enum class AblationAxis { kShortMemory, kLongMemory, kSampleRate, kContext };

inline AblationAxis parse_axis(const std::string& name) {
  if (name == "ms") return AblationAxis::kShortMemory;
  if (name == "ml") return AblationAxis::kLongMemory;
  if (name == "sr") return AblationAxis::kSampleRate;
  if (name == "context") return AblationAxis::kContext;
  throw ValidationError("unknown ablation axis '" + name +
                        "' (expected ms, ml, sr, or context)");
}

inline std::string format_axis(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::kShortMemory: return "ms";
    case AblationAxis::kLongMemory: return "ml";
    case AblationAxis::kSampleRate: return "sr";
    case AblationAxis::kContext: return "context";
  }
  throw ValidationError("unknown ablation axis");
}

struct AblationRow {
  std::string value;
  std::vector<std::string> cells;  // aligned with scenario column order
  std::string note;                // nonempty when the row was skipped
};

struct AblationGrid {
  AblationAxis axis = AblationAxis::kShortMemory;
  std::vector<std::string> scenarios;
  std::vector<AblationRow> rows;
  std::string csv;
};

namespace ablation_detail {

inline std::vector<std::string> axis_values(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::kShortMemory: return {"2", "5", "10"};
    case AblationAxis::kLongMemory: return {"32", "64", "128", "256"};
    case AblationAxis::kSampleRate: return {"1", "4", "8", "16"};
    case AblationAxis::kContext: return {"on", "off"};
  }
  throw ValidationError("unknown ablation axis");
}

inline ExperimentConfig apply_axis(const ExperimentConfig& base,
                                   AblationAxis axis,
                                   const std::string& value) {
  ExperimentConfig cfg = base;
  switch (axis) {
    case AblationAxis::kShortMemory:
      cfg.m_S = std::stod(value);
      break;
    case AblationAxis::kLongMemory:
      cfg.m_L = std::stod(value);
      break;
    case AblationAxis::kSampleRate:
      cfg.SR = static_cast<std::size_t>(std::stoul(value));
      break;
    case AblationAxis::kContext:
      cfg.context_enabled = (value == "on");
      if (!cfg.context_enabled) cfg.lambda_a = 0.0;
      break;
  }
  return cfg;
}

}  // namespace ablation_detail

// Trains and evaluates one model per (axis value, scenario) cell. Every cell
// sees identical data for its scenario: the axis only moves window geometry
// or the context path, never the generator, and seeds come from the base
// config alone.
inline AblationGrid ablation_grid(const ExperimentConfig& base,
                                  AblationAxis axis,
                                  std::ostream* progress = nullptr) {
  AblationGrid grid;
  grid.axis = axis;
  grid.scenarios = {"1x1", "1x2", "2x1", "2x2"};

  struct Dataset {
    std::vector<Episode> train, eval;
  };
  std::map<std::string, Dataset> data;

  for (const auto& value : ablation_detail::axis_values(axis)) {
    AblationRow row;
    row.value = value;
    for (const auto& scenario : grid.scenarios) {
      auto cfg = ablation_detail::apply_axis(base, axis, value);
      cfg.scenario = scenario;
      try {
        cfg.validate();
      } catch (const ConfigError& e) {
        row.cells.assign(grid.scenarios.size(), "-");
        row.note = e.what();
        break;
      }

      auto [it, fresh] = data.try_emplace(scenario);
      if (fresh) {
        it->second.train = generate_dataset(cfg, cfg.episodes_train);
        it->second.eval =
            generate_dataset(cfg, cfg.episodes_eval, kEvalSeedOffset);
      }

      if (progress) {
        *progress << format_axis(axis) << '=' << value << ' ' << scenario
                  << "...\n"
                  << std::flush;
      }
      Rng rng(cfg.seed);
      HiMemFormer model(cfg.to_model_config(), rng);
      train(model, it->second.train, cfg);
      const auto report = evaluate(model, it->second.eval, cfg);
      row.cells.push_back(format_ap(report.pooled.map));
    }
    grid.rows.push_back(row);
  }

  std::ostringstream csv;
  csv << "value";
  for (const auto& s : grid.scenarios) csv << ',' << s;
  csv << ",note\n";
  for (const auto& row : grid.rows) {
    csv << row.value;
    for (const auto& cell : row.cells) csv << ',' << cell;
    csv << ',' << row.note << '\n';
  }
  grid.csv = csv.str();
  return grid;
}

}  // namespace himem
