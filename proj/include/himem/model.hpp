#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "himem/errors.hpp"
#include "himem/rng.hpp"
#include "himem/stream.hpp"
#include "himem/tensor.hpp"
#include "himem/transformer.hpp"

namespace himem {

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t units_per_stage = 2;
  std::size_t ffn_dim = 256;
  std::size_t latent1 = 16;
  std::size_t latent2 = 8;
  std::size_t classes = 10;  // class 0 is background
  std::size_t agents = 2;
  std::size_t future_steps = 8;
  double lambda_coarse = 1.0;
  double lambda_fine = 1.0;
  bool context_enabled = true;
  bool share_classifier = true;
  std::size_t max_positions = 512;

  void validate() const {
    if (dim == 0 || heads == 0 || dim % heads != 0) {
      throw ValidationError("model dim " + std::to_string(dim) +
                            " not divisible by heads " +
                            std::to_string(heads));
    }
    if (units_per_stage == 0) throw ValidationError("need at least one unit");
    if (ffn_dim == 0) throw ValidationError("ffn dim must be positive");
    if (latent1 == 0 || latent2 == 0) {
      throw ValidationError("latent token counts must be positive");
    }
    if (classes < 2) throw ValidationError("need background plus one class");
    if (agents == 0) throw ValidationError("need at least one agent");
    if (future_steps == 0) throw ValidationError("need a future horizon");
    if (lambda_coarse < 0.0 || lambda_fine < 0.0) {
      throw ValidationError("loss weights must be nonnegative");
    }
    if (lambda_coarse == 0.0 && lambda_fine == 0.0) {
      throw ValidationError("at least one loss weight must be positive");
    }
    if (max_positions == 0) throw ValidationError("max positions must be > 0");
  }
};

struct StageParams {
  std::vector<DecoderUnitParams> units;

  static StageParams init(const ModelConfig& cfg, Rng& rng) {
    StageParams s;
    for (std::size_t i = 0; i < cfg.units_per_stage; ++i) {
      s.units.push_back(
          DecoderUnitParams::init(cfg.dim, cfg.heads, cfg.ffn_dim, rng));
    }
    return s;
  }

  template <typename Fn>
  void for_each_param(const std::string& prefix, Fn&& fn) {
    for (std::size_t i = 0; i < units.size(); ++i) {
      units[i].for_each_param(prefix + ".u" + std::to_string(i), fn);
    }
  }
};

struct HiMemFormerParams {
  Tensor latent_q1;  // [latent1, D]
  Tensor latent_q2;  // [latent2, D]
  StageParams compress1;
  StageParams compress2;
  StageParams enhance;
  Tensor future_q;  // [future_steps, D]
  StageParams coarse;
  StageParams fine;
  Tensor cls_w, cls_b;
  Tensor cls_fine_w, cls_fine_b;  // defined only without a shared head

  static HiMemFormerParams init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    HiMemFormerParams p;
    p.latent_q1 = Tensor::scaled_uniform({cfg.latent1, cfg.dim}, rng, true);
    p.latent_q2 = Tensor::scaled_uniform({cfg.latent2, cfg.dim}, rng, true);
    p.compress1 = StageParams::init(cfg, rng);
    p.compress2 = StageParams::init(cfg, rng);
    p.enhance = StageParams::init(cfg, rng);
    p.future_q = Tensor::scaled_uniform({cfg.future_steps, cfg.dim}, rng, true);
    p.coarse = StageParams::init(cfg, rng);
    p.fine = StageParams::init(cfg, rng);
    p.cls_w = Tensor::scaled_uniform({cfg.dim, cfg.classes}, rng, true);
    p.cls_b = Tensor::zeros({cfg.classes}, true);
    if (!cfg.share_classifier) {
      p.cls_fine_w = Tensor::scaled_uniform({cfg.dim, cfg.classes}, rng, true);
      p.cls_fine_b = Tensor::zeros({cfg.classes}, true);
    }
    return p;
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) {
    fn("enc.latent1", latent_q1);
    fn("enc.latent2", latent_q2);
    compress1.for_each_param("enc.compress1", fn);
    compress2.for_each_param("enc.compress2", fn);
    enhance.for_each_param("enc.enhance", fn);
    fn("dec.future", future_q);
    coarse.for_each_param("dec.coarse", fn);
    fine.for_each_param("dec.fine", fn);
    fn("cls.w", cls_w);
    fn("cls.b", cls_b);
    if (cls_fine_w.defined()) {
      fn("cls.fine.w", cls_fine_w);
      fn("cls.fine.b", cls_fine_b);
    }
  }

  std::size_t param_count() {
    std::size_t n = 0;
    for_each_param([&](const std::string&, Tensor&) { ++n; });
    return n;
  }
};

// Everything the model sees at one anchor: per-agent first-person views plus
// the shared third-person context, each split into the two horizons.
struct AnchoredInputs {
  std::vector<MemoryView> agent_long;
  std::vector<MemoryView> agent_short;
  MemoryView ctx_long;
  MemoryView ctx_short;
};

struct CoarseOutput {
  Tensor decoded;  // [short_tokens + future_steps, D]
  ValidityMask decoded_mask;
  Tensor refined_queries;  // [future_steps, D]
  Tensor logits;           // [future_steps, classes]
};

struct Prediction {
  CoarseOutput coarse;
  std::vector<Tensor> fine_logits;  // one [future_steps, classes] per agent

  bool has_coarse() const { return coarse.logits.defined(); }
};

// One training sample refines a single target agent; the coarse path still
// pools every agent.
struct AgentPrediction {
  CoarseOutput coarse;
  Tensor fine_logits;  // [future_steps, classes]

  bool has_coarse() const { return coarse.logits.defined(); }
};

struct LossBreakdown {
  Tensor total;
  Tensor coarse;  // undefined when the context path is off
  Tensor fine;
};

// Normalized multi-hot over every agent's next actions; each row is a
// distribution, so agents sharing a class stack onto one bin.
inline Tensor coarse_target(const std::vector<std::vector<int>>& labels,
                            std::size_t classes) {
  if (labels.empty()) throw ValidationError("coarse target needs agents");
  const std::size_t steps = labels.front().size();
  Tensor target = Tensor::zeros({steps, classes});
  const double weight = 1.0 / static_cast<double>(labels.size());
  for (const auto& agent : labels) {
    if (agent.size() != steps) {
      throw ValidationError("agents disagree on future horizon");
    }
    for (std::size_t i = 0; i < steps; ++i) {
      if (agent[i] < 0 || static_cast<std::size_t>(agent[i]) >= classes) {
        throw ValidationError("label " + std::to_string(agent[i]) +
                              " outside [0, " + std::to_string(classes) + ")");
      }
      target.data()[i * classes + agent[i]] += weight;
    }
  }
  return target;
}

inline Tensor fine_target(const std::vector<int>& labels,
                          std::size_t classes) {
  return coarse_target({labels}, classes);
}

class HiMemFormer {
 public:
  HiMemFormer(const ModelConfig& cfg, Rng& rng)
      : cfg_(cfg),
        params_(HiMemFormerParams::init(cfg, rng)),
        table_(cfg.max_positions, cfg.dim) {}

  const ModelConfig& config() const { return cfg_; }
  HiMemFormerParams& params() { return params_; }
  const PositionalTable& positions() const { return table_; }

  // Two-stage compression of one agent's long view into latent2 tokens,
  // independent of how many frames the view holds.
  Tensor encode_agent_long(Tape& tape, const MemoryView& agent_long) const {
    check_view(agent_long, "agent long view");
    Tensor stage1 = apply_stage(tape, params_.latent_q1, agent_long.features,
                                params_.compress1, nullptr, &agent_long.mask);
    return apply_stage(tape, params_.latent_q2, stage1, params_.compress2,
                       nullptr, nullptr);
  }

  // Context-long tokens re-read against the pooled agent summaries.
  MemoryView enhance_context(Tape& tape, const MemoryView& ctx_long,
                             const std::vector<Tensor>& encoded_agents) const {
    check_view(ctx_long, "context long view");
    if (encoded_agents.empty()) {
      throw ValidationError("context enhancement needs encoded agents");
    }
    Tensor pooled = encoded_agents.front();
    for (std::size_t a = 1; a < encoded_agents.size(); ++a) {
      pooled = concat_rows(tape, pooled, encoded_agents[a]);
    }
    Tensor queries = positional_add(tape, ctx_long.features, table_);
    Tensor out = apply_stage(tape, queries, pooled, params_.enhance,
                             &ctx_long.mask, nullptr);
    return MemoryView{out, ctx_long.mask};
  }

  CoarseOutput decode_coarse(Tape& tape, const MemoryView& ctx_short,
                             const MemoryView& enhanced) const {
    check_view(ctx_short, "context short view");
    Tensor queries = concat_rows(
        tape, positional_add(tape, ctx_short.features, table_),
        params_.future_q);
    ValidityMask q_mask = ctx_short.mask;
    q_mask.insert(q_mask.end(), cfg_.future_steps, 1);

    Tensor decoded = apply_stage(tape, queries, enhanced.features,
                                 params_.coarse, &q_mask, &enhanced.mask);
    const std::size_t rows = decoded.dim(0);
    Tensor refined =
        slice_rows(tape, decoded, rows - cfg_.future_steps, rows);
    return CoarseOutput{decoded, q_mask, refined,
                        classify(tape, refined, false)};
  }

  // Target-agent refinement: the agent's own recent frames plus the refined
  // future tokens, read against `memory` (coarse output, or the agent's own
  // compressed memory when the context path is off).
  Tensor decode_fine(Tape& tape, const MemoryView& agent_short,
                     const Tensor& future_queries, const Tensor& memory,
                     const ValidityMask& memory_mask) const {
    check_view(agent_short, "agent short view");
    Tensor queries = concat_rows(
        tape, positional_add(tape, agent_short.features, table_),
        future_queries);
    ValidityMask q_mask = agent_short.mask;
    q_mask.insert(q_mask.end(), cfg_.future_steps, 1);

    Tensor decoded = apply_stage(tape, queries, memory, params_.fine, &q_mask,
                                 &memory_mask);
    const std::size_t rows = decoded.dim(0);
    Tensor out = slice_rows(tape, decoded, rows - cfg_.future_steps, rows);
    return classify(tape, out, true);
  }

  Prediction forward(Tape& tape, const AnchoredInputs& inputs) const {
    check_inputs(inputs);
    std::vector<Tensor> encoded = encode_all(tape, inputs);

    Prediction pred;
    if (cfg_.context_enabled) {
      MemoryView enhanced = enhance_context(tape, inputs.ctx_long, encoded);
      pred.coarse = decode_coarse(tape, inputs.ctx_short, enhanced);
      for (std::size_t a = 0; a < cfg_.agents; ++a) {
        pred.fine_logits.push_back(
            decode_fine(tape, inputs.agent_short[a],
                        pred.coarse.refined_queries, pred.coarse.decoded,
                        pred.coarse.decoded_mask));
      }
    } else {
      for (std::size_t a = 0; a < cfg_.agents; ++a) {
        pred.fine_logits.push_back(
            decode_fine(tape, inputs.agent_short[a], params_.future_q,
                        encoded[a], all_valid(cfg_.latent2)));
      }
    }
    return pred;
  }

  AgentPrediction forward_anticipate(Tape& tape, const AnchoredInputs& inputs,
                                     std::size_t target_agent) const {
    check_inputs(inputs);
    if (target_agent >= cfg_.agents) {
      throw ValidationError("target agent " + std::to_string(target_agent) +
                            " out of range");
    }
    std::vector<Tensor> encoded = encode_all(tape, inputs);

    AgentPrediction pred;
    if (cfg_.context_enabled) {
      MemoryView enhanced = enhance_context(tape, inputs.ctx_long, encoded);
      pred.coarse = decode_coarse(tape, inputs.ctx_short, enhanced);
      pred.fine_logits =
          decode_fine(tape, inputs.agent_short[target_agent],
                      pred.coarse.refined_queries, pred.coarse.decoded,
                      pred.coarse.decoded_mask);
    } else {
      pred.fine_logits =
          decode_fine(tape, inputs.agent_short[target_agent],
                      params_.future_q, encoded[target_agent],
                      all_valid(cfg_.latent2));
    }
    return pred;
  }

  // total = lambda_coarse * coarse + lambda_fine * fine. The coarse term
  // supervises with every agent's labels, the fine term with the target
  // agent's alone.
  LossBreakdown loss(Tape& tape, const AgentPrediction& pred,
                     const std::vector<std::vector<int>>& labels,
                     std::size_t target_agent) const {
    if (labels.size() != cfg_.agents) {
      throw ValidationError("labels for " + std::to_string(labels.size()) +
                            " agents, model has " +
                            std::to_string(cfg_.agents));
    }
    for (const auto& agent : labels) {
      if (agent.size() != cfg_.future_steps) {
        throw ValidationError("future labels must cover " +
                              std::to_string(cfg_.future_steps) + " steps");
      }
    }
    if (target_agent >= cfg_.agents) {
      throw ValidationError("target agent " + std::to_string(target_agent) +
                            " out of range");
    }

    LossBreakdown out;
    out.fine =
        cross_entropy_soft(tape, pred.fine_logits,
                           fine_target(labels[target_agent], cfg_.classes));

    if (pred.has_coarse()) {
      out.coarse = cross_entropy_soft(tape, pred.coarse.logits,
                                      coarse_target(labels, cfg_.classes));
      out.total = add(tape, scale(tape, out.coarse, cfg_.lambda_coarse),
                      scale(tape, out.fine, cfg_.lambda_fine));
    } else {
      if (cfg_.lambda_coarse != 0.0) {
        throw ValidationError(
            "coarse supervision weighted but the context path is off");
      }
      out.total = scale(tape, out.fine, cfg_.lambda_fine);
    }
    return out;
  }

 private:
  void check_inputs(const AnchoredInputs& inputs) const {
    if (inputs.agent_long.size() != cfg_.agents ||
        inputs.agent_short.size() != cfg_.agents) {
      throw ShapeError("expected " + std::to_string(cfg_.agents) +
                       " agents, got " +
                       std::to_string(inputs.agent_long.size()) + " long / " +
                       std::to_string(inputs.agent_short.size()) + " short");
    }
  }

  std::vector<Tensor> encode_all(Tape& tape,
                                 const AnchoredInputs& inputs) const {
    std::vector<Tensor> encoded;
    encoded.reserve(cfg_.agents);
    for (const auto& view : inputs.agent_long) {
      encoded.push_back(encode_agent_long(tape, view));
    }
    return encoded;
  }

  Tensor apply_stage(Tape& tape, const Tensor& queries, const Tensor& memory,
                     const StageParams& stage, const ValidityMask* q_mask,
                     const ValidityMask* mem_mask) const {
    Tensor x = queries;
    for (const auto& unit : stage.units) {
      x = decoder_unit(tape, x, memory, unit, q_mask, mem_mask);
    }
    return x;
  }

  Tensor classify(Tape& tape, const Tensor& features, bool fine_head) const {
    const bool separate = fine_head && params_.cls_fine_w.defined();
    const Tensor& w = separate ? params_.cls_fine_w : params_.cls_w;
    const Tensor& b = separate ? params_.cls_fine_b : params_.cls_b;
    return add_rowvec(tape, matmul(tape, features, w), b);
  }

  void check_view(const MemoryView& view, const char* what) const {
    if (!view.features.defined() || view.features.rank() != 2 ||
        view.features.dim(1) != cfg_.dim) {
      throw ShapeError(std::string(what) + " must be [tokens, " +
                       std::to_string(cfg_.dim) + "]");
    }
    if (view.mask.size() != view.features.dim(0)) {
      throw ShapeError(std::string(what) + " mask length mismatch");
    }
  }

  ModelConfig cfg_;
  HiMemFormerParams params_;
  PositionalTable table_;
};

}  // namespace himem
