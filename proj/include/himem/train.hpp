#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "himem/config.hpp"
#include "himem/errors.hpp"
#include "himem/eval.hpp"
#include "himem/model.hpp"
#include "himem/optim.hpp"
#include "himem/rng.hpp"
#include "himem/synthetic.hpp"
#include "himem/tensor.hpp"

namespace himem {

namespace train_detail {

inline constexpr std::uint64_t kTagSampling = 0x5452414e00000000ull;

struct Sample {
  std::size_t episode, agent, anchor;
};

}  // namespace train_detail

struct TrainResult {
  std::size_t steps = 0;
  std::size_t steps_per_epoch = 0;
  std::size_t warmup_steps = 0;
  std::vector<double> coarse_by_step;
  std::vector<double> fine_by_step;
  std::vector<double> total_by_step;
  std::string loss_csv;
};

// One optimizer step per batch of (episode, agent, anchor) samples. Anchors
// are drawn uniformly over every frame that still has the full anticipation
// horizon ahead of it; the whole schedule is a pure function of the seed.
inline TrainResult train(HiMemFormer& model,
                         const std::vector<Episode>& episodes,
                         const ExperimentConfig& cfg) {
  cfg.validate();
  check_dataset_compatibility(cfg, episodes);
  const auto stream = cfg.to_stream_config();
  const std::size_t horizon = stream.anticipation_steps();
  const std::size_t agents = episodes.front().agents();
  for (const auto& ep : episodes) {
    if (ep.frames() <= horizon) {
      throw ValidationError("episode shorter than the anticipation horizon");
    }
  }

  auto params = collect_params(model.params());
  OptimState opt;
  opt.weight_decay = cfg.wd;

  const std::size_t samples_per_epoch =
      episodes.size() * cfg.anchors_per_episode;
  const std::size_t steps_per_epoch =
      (samples_per_epoch + cfg.batch_size - 1) / cfg.batch_size;
  const Schedule schedule{cfg.lr_peak, cfg.warmup_epochs * steps_per_epoch};

  TrainResult result;
  result.steps_per_epoch = steps_per_epoch;
  result.warmup_steps = schedule.warmup_steps;

  std::ostringstream csv;
  csv << "step,loss_coarse,loss_fine,total\n";
  csv.precision(12);

  Rng sampler = Rng(cfg.seed).derive(train_detail::kTagSampling);
  std::vector<std::vector<int>> labels(agents);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<train_detail::Sample> samples;
    samples.reserve(samples_per_epoch);
    for (std::size_t e = 0; e < episodes.size(); ++e) {
      const std::size_t anchors = episodes[e].frames() - horizon;
      for (std::size_t k = 0; k < cfg.anchors_per_episode; ++k) {
        samples.push_back({e, sampler.uniform_index(agents),
                           1 + sampler.uniform_index(anchors)});
      }
    }
    sampler.shuffle(samples);

    for (std::size_t begin = 0; begin < samples.size();
         begin += cfg.batch_size) {
      const std::size_t end =
          std::min(begin + cfg.batch_size, samples.size());
      const double inv_batch = 1.0 / static_cast<double>(end - begin);

      zero_grads(params);
      double coarse_sum = 0.0, fine_sum = 0.0, total_sum = 0.0;
      for (std::size_t s = begin; s < end; ++s) {
        const auto& sample = samples[s];
        const auto& ep = episodes[sample.episode];
        Tape tape;
        const auto inputs = anchored_inputs(ep, sample.anchor, stream);
        const auto pred =
            model.forward_anticipate(tape, inputs, sample.agent);
        for (std::size_t a = 0; a < agents; ++a) {
          labels[a].assign(
              ep.labels[a].begin() + static_cast<std::ptrdiff_t>(sample.anchor),
              ep.labels[a].begin() +
                  static_cast<std::ptrdiff_t>(sample.anchor + horizon));
        }
        const auto loss = model.loss(tape, pred, labels, sample.agent);
        if (loss.coarse.defined()) coarse_sum += loss.coarse.value();
        fine_sum += loss.fine.value();
        total_sum += loss.total.value();
        const auto scaled = scale(tape, loss.total, inv_batch);
        tape.backward(scaled);
      }

      ++step;
      adamw_step(params, opt, lr_at(step, schedule));

      result.coarse_by_step.push_back(coarse_sum * inv_batch);
      result.fine_by_step.push_back(fine_sum * inv_batch);
      result.total_by_step.push_back(total_sum * inv_batch);
      csv << step << ',' << coarse_sum * inv_batch << ','
          << fine_sum * inv_batch << ',' << total_sum * inv_batch << '\n';
    }
  }

  result.steps = step;
  result.loss_csv = csv.str();
  return result;
}

}  // namespace himem
