#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "himem/model.hpp"
#include "himem/rng.hpp"
#include "himem/stream.hpp"
#include "himem/tensor.hpp"

namespace himem {

struct GradCheckBlock {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t tensors = 0;
};

namespace gradcheck_detail {

inline MemoryView random_view(std::size_t tokens, std::size_t dim,
                              std::size_t pad, Rng& rng) {
  MemoryView view;
  view.features = Tensor::uniform({tokens, dim}, -1.0, 1.0, rng, false);
  view.mask.assign(tokens, 1);
  for (std::size_t i = 0; i < pad && i < tokens; ++i) {
    view.mask[i] = 0;
    for (std::size_t d = 0; d < dim; ++d) {
      view.features.data()[i * dim + d] = 0.0;
    }
  }
  return view;
}

inline AnchoredInputs random_inputs(const ModelConfig& cfg,
                                    std::size_t long_tokens,
                                    std::size_t short_tokens, Rng& rng,
                                    std::size_t pad) {
  AnchoredInputs in;
  for (std::size_t a = 0; a < cfg.agents; ++a) {
    in.agent_long.push_back(random_view(long_tokens, cfg.dim, pad, rng));
    in.agent_short.push_back(random_view(short_tokens, cfg.dim, pad, rng));
  }
  in.ctx_long = random_view(long_tokens, cfg.dim, pad, rng);
  in.ctx_short = random_view(short_tokens, cfg.dim, pad, rng);
  return in;
}

inline std::size_t block_index(const std::string& param,
                               const std::vector<GradCheckBlock>& blocks) {
  auto starts = [&](const char* prefix) {
    return param.rfind(prefix, 0) == 0;
  };
  const char* name = nullptr;
  if (starts("enc.latent")) name = "latent-queries";
  else if (starts("enc.compress1.")) name = "compress-stage-1";
  else if (starts("enc.compress2.")) name = "compress-stage-2";
  else if (starts("enc.enhance.")) name = "context-enhance";
  else if (starts("dec.future") || starts("dec.coarse.")) name = "coarse-decode";
  else if (starts("dec.fine.")) name = "fine-decode";
  else if (starts("cls.")) name = "classifier";
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (name && blocks[i].name == name) return i;
  }
  throw ValidationError("parameter '" + param + "' fits no gradcheck block");
}

}  // namespace gradcheck_detail

// Central-difference check of every parameter of a toy model against the
// tape's gradients, grouped into architectural blocks. Masked padding rows
// are present in every view so the masked paths are exercised too.
inline std::vector<GradCheckBlock> run_gradcheck(std::uint64_t seed = 0) {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.heads = 2;
  cfg.units_per_stage = 1;
  cfg.ffn_dim = 16;
  cfg.latent1 = 4;
  cfg.latent2 = 3;
  cfg.classes = 4;
  cfg.agents = 2;
  cfg.future_steps = 2;
  cfg.max_positions = 16;

  Rng rng(splitmix64(seed) | 1);
  HiMemFormer model(cfg, rng);
  AnchoredInputs in =
      gradcheck_detail::random_inputs(cfg, 8, 4, rng, 1);
  for (auto& v : in.agent_long) v.features.impl()->requires_grad = true;
  for (auto& v : in.agent_short) v.features.impl()->requires_grad = true;
  in.ctx_long.features.impl()->requires_grad = true;
  in.ctx_short.features.impl()->requires_grad = true;

  std::vector<std::vector<int>> labels(cfg.agents);
  for (std::size_t a = 0; a < cfg.agents; ++a) {
    for (std::size_t i = 0; i < cfg.future_steps; ++i) {
      labels[a].push_back(static_cast<int>((a + i + 1) % cfg.classes));
    }
  }

  std::vector<GradCheckBlock> blocks = {
      {"latent-queries"},  {"compress-stage-1"}, {"compress-stage-2"},
      {"context-enhance"}, {"coarse-decode"},    {"fine-decode"},
      {"classifier"},      {"inputs"},           {"context-off-path"},
  };

  auto loss_fn = [&](Tape& tape) {
    return model.loss(tape, model.forward_anticipate(tape, in, 0), labels, 0)
        .total;
  };
  auto record = [&](std::size_t idx, double err) {
    blocks[idx].max_rel_err = std::max(blocks[idx].max_rel_err, err);
    ++blocks[idx].tensors;
  };

  model.params().for_each_param([&](const std::string& name, Tensor& t) {
    record(gradcheck_detail::block_index(name, blocks),
           finite_diff_check(loss_fn, t, 1e-5));
  });

  const std::size_t inputs_block = 7;
  for (auto& v : in.agent_long) {
    record(inputs_block, finite_diff_check(loss_fn, v.features, 1e-5));
  }
  for (auto& v : in.agent_short) {
    record(inputs_block, finite_diff_check(loss_fn, v.features, 1e-5));
  }
  record(inputs_block, finite_diff_check(loss_fn, in.ctx_long.features, 1e-5));
  record(inputs_block, finite_diff_check(loss_fn, in.ctx_short.features, 1e-5));

  // The agent-only bypass reaches the fine decoder through a different
  // memory, so its gradients get their own pass.
  ModelConfig off_cfg = cfg;
  off_cfg.context_enabled = false;
  off_cfg.lambda_coarse = 0.0;
  Rng off_rng(splitmix64(seed ^ 0x5a5a5a5a) | 1);
  HiMemFormer off_model(off_cfg, off_rng);
  auto off_loss = [&](Tape& tape) {
    return off_model
        .loss(tape, off_model.forward_anticipate(tape, in, 1), labels, 1)
        .total;
  };
  const std::size_t off_block = 8;
  off_model.params().for_each_param([&](const std::string& name, Tensor& t) {
    if (name.rfind("dec.fine.", 0) == 0 || name.rfind("cls.", 0) == 0 ||
        name == "enc.latent1" || name == "dec.future") {
      record(off_block, finite_diff_check(off_loss, t, 1e-5));
    }
  });

  return blocks;
}

inline bool gradcheck_passes(const std::vector<GradCheckBlock>& blocks,
                             double tolerance = 1e-4) {
  for (const auto& b : blocks) {
    if (b.tensors == 0 || !(b.max_rel_err < tolerance)) return false;
  }
  return true;
}

}  // namespace himem
