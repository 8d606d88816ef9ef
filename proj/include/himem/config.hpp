#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <string>

#include "himem/errors.hpp"
#include "himem/model.hpp"
#include "himem/stream.hpp"
#include "himem/synthetic.hpp"

namespace himem {

// Flat key=value experiment configuration. Every tunable lives here; the
// typed sub-configs are derived on demand so nothing is stored twice.
struct ExperimentConfig {
  double f = 4.0;     // feature frames per second
  double m_L = 64.0;  // long memory horizon, seconds
  double m_S = 5.0;   // short memory horizon, seconds
  std::size_t SR = 4;
  double tau_f = 2.0;  // anticipation horizon, seconds

  std::size_t D = 64;
  std::size_t H = 4;
  std::size_t units_per_stage = 2;
  std::size_t D_ff = 256;
  std::size_t n1 = 16;
  std::size_t n2 = 8;
  std::size_t K = 10;  // action classes 1..K; class 0 stays background

  double lambda_a = 1.0;
  double lambda_b = 1.0;
  bool context_enabled = true;
  bool share_classifier = true;

  double lr_peak = 7e-5;
  std::size_t warmup_epochs = 10;
  double wd = 1e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 25;
  std::size_t anchors_per_episode = 32;
  std::uint64_t seed = 0;

  std::string scenario = "2x1";
  double rho = 0.0;
  double sigma = 0.1;
  double mean_duration = 8.0;
  std::size_t T = 512;
  std::size_t episodes_train = 8;
  std::size_t episodes_eval = 4;

  std::string data_dir;
  std::string out_dir;

  bool operator==(const ExperimentConfig&) const = default;

  StreamConfig to_stream_config() const {
    return StreamConfig{f, m_L, m_S, SR, tau_f};
  }

  ModelConfig to_model_config() const {
    const auto stream = to_stream_config();
    ModelConfig model;
    model.dim = D;
    model.heads = H;
    model.units_per_stage = units_per_stage;
    model.ffn_dim = D_ff;
    model.latent1 = n1;
    model.latent2 = n2;
    model.classes = K + 1;
    model.agents = scenario_agents(parse_scenario(scenario));
    model.future_steps = stream.anticipation_steps();
    model.lambda_coarse = lambda_a;
    model.lambda_fine = lambda_b;
    model.context_enabled = context_enabled;
    model.share_classifier = share_classifier;
    model.max_positions =
        std::max(stream.long_tokens(), stream.short_tokens());
    return model;
  }

  ScenarioSpec to_scenario_spec() const {
    ScenarioSpec spec;
    spec.scenario = parse_scenario(scenario);
    spec.action_classes = K;
    spec.dim = D;
    spec.coupling = rho;
    spec.noise = sigma;
    spec.mean_duration = mean_duration;
    spec.frames = T;
    spec.seed = seed;
    // One experiment is one world: every episode drawn under this config
    // shares prototypes and chains, train and eval splits included.
    spec.world_seed = seed;
    return spec;
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    try {
      to_stream_config().validate();
      to_model_config().validate();
      to_scenario_spec().validate();
    } catch (const ValidationError& e) {
      fail(e.what());
    }
    if (!(lr_peak > 0.0)) fail("lr_peak must be positive");
    if (wd < 0.0) fail("wd must be nonnegative");
    if (lambda_a < 0.0 || lambda_b < 0.0) {
      fail("loss weights must be nonnegative");
    }
    if (!context_enabled && lambda_a != 0.0) {
      fail("context_enabled=0 requires lambda_a=0");
    }
    if (batch_size == 0) fail("batch_size must be positive");
    if (epochs == 0) fail("epochs must be positive");
    if (anchors_per_episode == 0) fail("anchors_per_episode must be positive");
    if (episodes_train == 0) fail("episodes_train must be positive");
    if (episodes_eval == 0) fail("episodes_eval must be positive");
    const auto horizon = to_stream_config().anticipation_steps();
    if (T <= horizon) {
      fail("T = " + std::to_string(T) +
           " leaves no anchor ahead of the anticipation horizon " +
           std::to_string(horizon));
    }
  }
};

// Train and eval sets draw from disjoint seed ranges so enlarging one set
// never changes the other's episodes.
inline constexpr std::uint64_t kEvalSeedOffset = 1u << 20;

inline std::vector<Episode> generate_dataset(const ExperimentConfig& cfg,
                                             std::size_t count,
                                             std::uint64_t seed_offset = 0) {
  auto spec = cfg.to_scenario_spec();
  std::vector<Episode> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    spec.seed = cfg.seed + seed_offset + i;
    out.push_back(generate_episode(spec));
  }
  return out;
}

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

[[noreturn]] inline void bad_value(int line, const std::string& key,
                                   const char* want,
                                   const std::string& value) {
  throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                    "': expected " + want + ", got '" + value + "'");
}

inline double as_double(int line, const std::string& key,
                        const std::string& value) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    bad_value(line, key, "a number", value);
  }
  if (used != value.size()) bad_value(line, key, "a number", value);
  return out;
}

inline std::uint64_t as_u64(int line, const std::string& key,
                            const std::string& value) {
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    if (!value.empty() && value[0] == '-') throw std::invalid_argument("neg");
    out = std::stoull(value, &used);
  } catch (const std::exception&) {
    bad_value(line, key, "a nonnegative integer", value);
  }
  if (used != value.size()) bad_value(line, key, "a nonnegative integer", value);
  return out;
}

inline std::size_t as_size(int line, const std::string& key,
                           const std::string& value) {
  return static_cast<std::size_t>(as_u64(line, key, value));
}

inline bool as_bool(int line, const std::string& key,
                    const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  bad_value(line, key, "0/1/true/false", value);
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void set_key(ExperimentConfig& cfg, const std::string& key,
                    const std::string& value, int line) {
  if (key == "f") cfg.f = as_double(line, key, value);
  else if (key == "m_L") cfg.m_L = as_double(line, key, value);
  else if (key == "m_S") cfg.m_S = as_double(line, key, value);
  else if (key == "SR") cfg.SR = as_size(line, key, value);
  else if (key == "tau_f") cfg.tau_f = as_double(line, key, value);
  else if (key == "D") cfg.D = as_size(line, key, value);
  else if (key == "H") cfg.H = as_size(line, key, value);
  else if (key == "units_per_stage") cfg.units_per_stage = as_size(line, key, value);
  else if (key == "D_ff") cfg.D_ff = as_size(line, key, value);
  else if (key == "n1") cfg.n1 = as_size(line, key, value);
  else if (key == "n2") cfg.n2 = as_size(line, key, value);
  else if (key == "K") cfg.K = as_size(line, key, value);
  else if (key == "lambda_a") cfg.lambda_a = as_double(line, key, value);
  else if (key == "lambda_b") cfg.lambda_b = as_double(line, key, value);
  else if (key == "context_enabled") cfg.context_enabled = as_bool(line, key, value);
  else if (key == "share_classifier") cfg.share_classifier = as_bool(line, key, value);
  else if (key == "lr_peak") cfg.lr_peak = as_double(line, key, value);
  else if (key == "warmup_epochs") cfg.warmup_epochs = as_size(line, key, value);
  else if (key == "wd") cfg.wd = as_double(line, key, value);
  else if (key == "batch_size") cfg.batch_size = as_size(line, key, value);
  else if (key == "epochs") cfg.epochs = as_size(line, key, value);
  else if (key == "anchors_per_episode") cfg.anchors_per_episode = as_size(line, key, value);
  else if (key == "seed") cfg.seed = as_u64(line, key, value);
  else if (key == "scenario") cfg.scenario = value;
  else if (key == "rho") cfg.rho = as_double(line, key, value);
  else if (key == "sigma") cfg.sigma = as_double(line, key, value);
  else if (key == "mean_duration") cfg.mean_duration = as_double(line, key, value);
  else if (key == "T") cfg.T = as_size(line, key, value);
  else if (key == "episodes_train") cfg.episodes_train = as_size(line, key, value);
  else if (key == "episodes_eval") cfg.episodes_eval = as_size(line, key, value);
  else if (key == "data_dir") cfg.data_dir = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else {
    throw ConfigError("line " + std::to_string(line) + ": unknown key '" +
                      key + "'");
  }
}

}  // namespace config_detail

inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream stream(text);
  std::string raw;
  int line = 0;
  while (std::getline(stream, raw)) {
    ++line;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const auto stripped = config_detail::trim(raw);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line) +
                        ": expected 'key = value', got '" + stripped + "'");
    }
    const auto key = config_detail::trim(stripped.substr(0, eq));
    const auto value = config_detail::trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("line " + std::to_string(line) + ": empty key");
    }
    config_detail::set_key(cfg, key, value, line);
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("config constraint: " + std::string(e.what()));
  }
  return cfg;
}

inline std::string serialize_config(const ExperimentConfig& cfg) {
  using config_detail::fmt_double;
  std::ostringstream out;
  out << "f = " << fmt_double(cfg.f) << '\n'
      << "m_L = " << fmt_double(cfg.m_L) << '\n'
      << "m_S = " << fmt_double(cfg.m_S) << '\n'
      << "SR = " << cfg.SR << '\n'
      << "tau_f = " << fmt_double(cfg.tau_f) << '\n'
      << "D = " << cfg.D << '\n'
      << "H = " << cfg.H << '\n'
      << "units_per_stage = " << cfg.units_per_stage << '\n'
      << "D_ff = " << cfg.D_ff << '\n'
      << "n1 = " << cfg.n1 << '\n'
      << "n2 = " << cfg.n2 << '\n'
      << "K = " << cfg.K << '\n'
      << "lambda_a = " << fmt_double(cfg.lambda_a) << '\n'
      << "lambda_b = " << fmt_double(cfg.lambda_b) << '\n'
      << "context_enabled = " << (cfg.context_enabled ? 1 : 0) << '\n'
      << "share_classifier = " << (cfg.share_classifier ? 1 : 0) << '\n'
      << "lr_peak = " << fmt_double(cfg.lr_peak) << '\n'
      << "warmup_epochs = " << cfg.warmup_epochs << '\n'
      << "wd = " << fmt_double(cfg.wd) << '\n'
      << "batch_size = " << cfg.batch_size << '\n'
      << "epochs = " << cfg.epochs << '\n'
      << "anchors_per_episode = " << cfg.anchors_per_episode << '\n'
      << "seed = " << cfg.seed << '\n'
      << "scenario = " << cfg.scenario << '\n'
      << "rho = " << fmt_double(cfg.rho) << '\n'
      << "sigma = " << fmt_double(cfg.sigma) << '\n'
      << "mean_duration = " << fmt_double(cfg.mean_duration) << '\n'
      << "T = " << cfg.T << '\n'
      << "episodes_train = " << cfg.episodes_train << '\n'
      << "episodes_eval = " << cfg.episodes_eval << '\n'
      << "data_dir = " << cfg.data_dir << '\n'
      << "out_dir = " << cfg.out_dir << '\n';
  return out.str();
}

}  // namespace himem
