#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "himem/ablation.hpp"
#include "himem/checkpoint.hpp"
#include "himem/config.hpp"
#include "himem/dataset_io.hpp"
#include "himem/errors.hpp"
#include "himem/eval.hpp"
#include "himem/gradcheck.hpp"
#include "himem/model.hpp"
#include "himem/plot.hpp"
#include "himem/rng.hpp"
#include "himem/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw himem::StreamError("cannot open '" + path + "' for writing");
  file << text;
  if (!file.good()) throw himem::StreamError("short write to '" + path + "'");
}

himem::ExperimentConfig load_config(const std::string& path) {
  if (path.empty()) return himem::parse_config("");
  std::ifstream file(path);
  if (!file) throw himem::StreamError("cannot open config '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(file)),
                   std::istreambuf_iterator<char>());
  return himem::parse_config(text);
}

// Paths are per-invocation plumbing: they never enter echoes or
// checkpoints, so identical compute configs persist identically no matter
// where the artifacts land.
std::string resolve_path(const std::string& flag, const std::string& from_cfg,
                         const char* what) {
  if (!flag.empty()) return flag;
  if (!from_cfg.empty()) return from_cfg;
  throw himem::UsageError(std::string("missing ") + what);
}

void echo_config(const himem::ExperimentConfig& cfg, const std::string& path) {
  const auto text = himem::serialize_config(cfg);
  write_text(path, text);
  std::cout << "resolved config (" << path << "):\n" << text;
}

int cmd_generate(const std::string& config_path, const std::string& scenario,
                 const std::string& out_flag, std::size_t count,
                 bool have_seed, std::uint64_t seed) {
  auto cfg = load_config(config_path);
  if (!scenario.empty()) cfg.scenario = scenario;
  if (have_seed) cfg.seed = seed;
  const auto out_dir = resolve_path(out_flag, cfg.out_dir, "--out");
  cfg.data_dir.clear();
  cfg.out_dir.clear();
  cfg.validate();
  if (count == 0) count = cfg.episodes_train;

  const auto episodes = himem::generate_dataset(cfg, count);
  himem::write_dataset(episodes, out_dir);
  echo_config(cfg, (std::filesystem::path(out_dir) / "config.echo").string());
  std::cout << "wrote " << episodes.size() << " episodes to " << out_dir
            << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_flag,
              const std::string& out_flag, const std::string& plot_path) {
  auto cfg = load_config(config_path);
  const auto data_dir = resolve_path(data_flag, cfg.data_dir, "--data");
  const auto out_ckpt = resolve_path(out_flag, cfg.out_dir, "--out");
  cfg.data_dir.clear();
  cfg.out_dir.clear();
  cfg.validate();

  const auto episodes = himem::read_dataset(data_dir);
  himem::Rng rng(cfg.seed);
  himem::HiMemFormer model(cfg.to_model_config(), rng);
  const auto result = himem::train(model, episodes, cfg);

  const auto params = himem::collect_params(model.params());
  himem::save_checkpoint(out_ckpt, cfg, params);
  write_text(out_ckpt + ".loss.csv", result.loss_csv);
  echo_config(cfg, out_ckpt + ".config");

  if (!plot_path.empty()) {
    std::vector<double> steps(result.steps);
    for (std::size_t i = 0; i < steps.size(); ++i) {
      steps[i] = static_cast<double>(i + 1);
    }
    const std::vector<himem::PlotSeries> series = {
        {"coarse", steps, result.coarse_by_step},
        {"fine", steps, result.fine_by_step},
        {"total", steps, result.total_by_step},
    };
    write_text(plot_path,
               himem::svg_line_chart(series, "training loss", "step", "loss"));
  }

  std::cout << "trained " << result.steps << " steps on " << episodes.size()
            << " episodes; checkpoint " << out_ckpt << ", losses "
            << out_ckpt + ".loss.csv" << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& report_path) {
  const auto ck = himem::load_checkpoint(ckpt_path);
  auto model = himem::model_from_checkpoint(ck);
  const auto episodes = himem::read_dataset(data_dir);
  const auto report = himem::evaluate(model, episodes, ck.config);

  write_text(report_path, himem::map_report_csv(report));
  write_text(report_path + ".offsets.csv", himem::per_offset_csv(report));
  echo_config(ck.config, report_path + ".config");
  std::cout << himem::map_report_table(report);
  std::cout << "report " << report_path << "\n";
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& axis_name,
               const std::string& out_flag, const std::string& plot_path) {
  auto cfg = load_config(config_path);
  const auto out_csv = resolve_path(out_flag, cfg.out_dir, "--out");
  cfg.data_dir.clear();
  cfg.out_dir.clear();
  const auto axis = himem::parse_axis(axis_name);
  const auto grid = himem::ablation_grid(cfg, axis, &std::cout);

  write_text(out_csv, grid.csv);
  echo_config(cfg, out_csv + ".config");

  if (!plot_path.empty()) {
    std::vector<himem::PlotSeries> series;
    for (std::size_t s = 0; s < grid.scenarios.size(); ++s) {
      himem::PlotSeries line;
      line.name = grid.scenarios[s];
      for (std::size_t r = 0; r < grid.rows.size(); ++r) {
        if (!grid.rows[r].note.empty()) continue;
        line.x.push_back(static_cast<double>(r));
        line.y.push_back(std::stod(grid.rows[r].cells[s]));
      }
      if (!line.x.empty()) series.push_back(std::move(line));
    }
    write_text(plot_path,
               himem::svg_line_chart(series, "ablation " + axis_name,
                                     axis_name + " value index", "mAP"));
  }

  std::cout << grid.csv;
  std::cout << "grid " << out_csv << "\n";
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed) {
  const auto blocks = himem::run_gradcheck(seed);
  double worst = 0.0;
  for (const auto& b : blocks) {
    std::printf("%-18s max rel err %.3e over %zu tensors  %s\n",
                b.name.c_str(), b.max_rel_err, b.tensors,
                b.max_rel_err < 1e-4 ? "ok" : "FAIL");
    worst = std::max(worst, b.max_rel_err);
  }
  if (!himem::gradcheck_passes(blocks)) {
    std::cout << "gradcheck FAILED, worst " << worst << "\n";
    return kExitNumeric;
  }
  std::cout << "gradcheck passed, worst " << worst << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical memory transformer for online multi-agent "
               "action anticipation"};
  app.require_subcommand(1);

  std::string config_path, scenario, out_dir, data_dir, ckpt_path;
  std::string report_path, out_csv, axis_name, plot_path;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  bool have_seed = false;

  auto* generate = app.add_subcommand("generate", "write synthetic episodes");
  generate->add_option("--config", config_path, "key=value config file");
  generate->add_option("--scenario", scenario, "1x1, 1x2, 2x1, or 2x2");
  generate->add_option("--out", out_dir, "output directory");
  generate->add_option("--count", count, "episodes (default episodes_train)");
  generate->add_option("--seed", seed, "override config seed")
      ->each([&](const std::string&) { have_seed = true; });

  auto* train = app.add_subcommand("train", "train a model on a dataset");
  train->add_option("--config", config_path, "key=value config file");
  train->add_option("--data", data_dir, "dataset directory");
  train->add_option("--out", ckpt_path, "checkpoint path");
  train->add_option("--emit-plot", plot_path, "loss-curve SVG path");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--report", report_path, "report CSV path")->required();

  auto* ablate = app.add_subcommand("ablate", "run one ablation axis");
  ablate->add_option("--config", config_path, "key=value config file");
  ablate->add_option("--axis", axis_name, "ms, ml, sr, or context")
      ->required();
  ablate->add_option("--out", out_csv, "grid CSV path");
  ablate->add_option("--emit-plot", plot_path, "mAP-curve SVG path");

  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference self check");
  gradcheck->add_option("--seed", seed, "toy model seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (generate->parsed()) {
      return cmd_generate(config_path, scenario, out_dir, count, have_seed,
                          seed);
    }
    if (train->parsed()) {
      return cmd_train(config_path, data_dir, ckpt_path, plot_path);
    }
    if (eval->parsed()) {
      return cmd_eval(ckpt_path, data_dir, report_path);
    }
    if (ablate->parsed()) {
      return cmd_ablate(config_path, axis_name, out_csv, plot_path);
    }
    if (gradcheck->parsed()) {
      return cmd_gradcheck(seed);
    }
    std::cerr << "no subcommand\n";
    return kExitUsage;
  } catch (const himem::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const himem::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const himem::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
