// Minimal end-to-end tour: synthesize a two-agent episode, stream its frames
// into the memory banks, anticipate both agents' next actions at a few
// anchors, then train briefly and watch the predictions sharpen.

#include <cstdio>
#include <string>
#include <vector>

#include "himem/config.hpp"
#include "himem/eval.hpp"
#include "himem/model.hpp"
#include "himem/rng.hpp"
#include "himem/train.hpp"

int main() {
  auto cfg = himem::parse_config(
      "scenario = 2x1\n"
      "rho = 0.9\n"          // agent 2's next action tracks agent 1
      "K = 6\n"
      "D = 32\n"
      "H = 4\n"
      "units_per_stage = 1\n"
      "D_ff = 64\n"
      "n1 = 8\nn2 = 4\n"
      "f = 4\nm_L = 4\nm_S = 1\nSR = 2\ntau_f = 0.5\n"
      "T = 96\n"
      "mean_duration = 6\n"
      "episodes_train = 4\n"
      "epochs = 30\nbatch_size = 8\nanchors_per_episode = 16\n"
      "lr_peak = 0.002\nwarmup_epochs = 3\n"
      "seed = 11\n");

  auto episodes = himem::generate_dataset(cfg, cfg.episodes_train);
  const auto stream = cfg.to_stream_config();
  const std::size_t horizon = stream.anticipation_steps();

  himem::Rng rng(cfg.seed);
  himem::HiMemFormer model(cfg.to_model_config(), rng);

  auto show = [&](const char* stage) {
    const himem::Episode& ep = episodes.front();
    std::printf("%s\n", stage);
    for (std::size_t anchor : {std::size_t{24}, std::size_t{56}}) {
      himem::Tape tape;
      auto pred =
          model.forward(tape, himem::anchored_inputs(ep, anchor, stream));
      for (std::size_t a = 0; a < ep.agents(); ++a) {
        std::printf("  anchor %2zu agent %zu:", anchor, a);
        for (std::size_t k = 0; k < horizon; ++k) {
          const double* row =
              pred.fine_logits[a].data().data() + k * (cfg.K + 1);
          std::size_t arg = 0;
          for (std::size_t c = 1; c <= cfg.K; ++c) {
            if (row[c] > row[arg]) arg = c;
          }
          std::printf(" t+%zu pred %zu true %d |", k + 1, arg,
                      ep.labels[a][anchor + k]);
        }
        std::printf("\n");
      }
    }
  };

  show("untrained:");
  auto result = himem::train(model, episodes, cfg);
  std::printf("trained %zu steps, final total loss %.3f\n", result.steps,
              result.total_by_step.back());
  show("trained:");

  auto report = himem::evaluate(model, episodes, cfg);
  std::printf("training-set mAP %.3f over %zu offsets\n", report.pooled.map,
              report.per_offset.size());
  return 0;
}
