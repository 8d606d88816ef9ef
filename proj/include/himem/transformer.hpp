#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "himem/tensor.hpp"

namespace himem {

// Per-token validity; invalid rows are zero padding that attention must
// never select.
using ValidityMask = std::vector<std::uint8_t>;

inline ValidityMask all_valid(std::size_t n) { return ValidityMask(n, 1); }

// Additive score bias excluding masked key/value rows from attention.
inline Tensor mask_score_bias(const ValidityMask& mask) {
  Tensor bias = Tensor::zeros({mask.size()});
  for (std::size_t i = 0; i < mask.size(); ++i) {
    bias.data()[i] = mask[i] ? 0.0 : -1e9;
  }
  return bias;
}

struct AttentionParams {
  std::vector<Tensor> w_q;  // per head [D, D/H]
  std::vector<Tensor> w_k;
  std::vector<Tensor> w_v;
  Tensor w_o;  // [D, D]

  std::size_t heads() const { return w_q.size(); }
  std::size_t dim() const { return w_o.dim(0); }

  static AttentionParams init(std::size_t dim, std::size_t heads, Rng& rng) {
    if (heads == 0 || dim % heads != 0) {
      throw ShapeError("attention dim " + std::to_string(dim) +
                       " not divisible by heads " + std::to_string(heads));
    }
    const std::size_t head_dim = dim / heads;
    AttentionParams p;
    for (std::size_t h = 0; h < heads; ++h) {
      p.w_q.push_back(Tensor::scaled_uniform({dim, head_dim}, rng, true));
      p.w_k.push_back(Tensor::scaled_uniform({dim, head_dim}, rng, true));
      p.w_v.push_back(Tensor::scaled_uniform({dim, head_dim}, rng, true));
    }
    p.w_o = Tensor::scaled_uniform({dim, dim}, rng, true);
    return p;
  }

  template <typename Fn>
  void for_each_param(const std::string& prefix, Fn&& fn) {
    for (std::size_t h = 0; h < w_q.size(); ++h) {
      const std::string hp = prefix + ".h" + std::to_string(h);
      fn(hp + ".wq", w_q[h]);
      fn(hp + ".wk", w_k[h]);
      fn(hp + ".wv", w_v[h]);
    }
    fn(prefix + ".wo", w_o);
  }
};

struct DecoderUnitParams {
  AttentionParams self_attn;
  AttentionParams cross_attn;
  Tensor ffn_w1, ffn_b1;  // [D, D_ff], [D_ff]
  Tensor ffn_w2, ffn_b2;  // [D_ff, D], [D]
  Tensor norm1_gain, norm1_bias;
  Tensor norm2_gain, norm2_bias;
  Tensor norm3_gain, norm3_bias;

  static DecoderUnitParams init(std::size_t dim, std::size_t heads,
                                std::size_t ffn_dim, Rng& rng) {
    DecoderUnitParams p;
    p.self_attn = AttentionParams::init(dim, heads, rng);
    p.cross_attn = AttentionParams::init(dim, heads, rng);
    p.ffn_w1 = Tensor::scaled_uniform({dim, ffn_dim}, rng, true);
    p.ffn_b1 = Tensor::zeros({ffn_dim}, true);
    p.ffn_w2 = Tensor::scaled_uniform({ffn_dim, dim}, rng, true);
    p.ffn_b2 = Tensor::zeros({dim}, true);
    p.norm1_gain = Tensor::ones({dim}, true);
    p.norm1_bias = Tensor::zeros({dim}, true);
    p.norm2_gain = Tensor::ones({dim}, true);
    p.norm2_bias = Tensor::zeros({dim}, true);
    p.norm3_gain = Tensor::ones({dim}, true);
    p.norm3_bias = Tensor::zeros({dim}, true);
    return p;
  }

  template <typename Fn>
  void for_each_param(const std::string& prefix, Fn&& fn) {
    self_attn.for_each_param(prefix + ".self", fn);
    cross_attn.for_each_param(prefix + ".cross", fn);
    fn(prefix + ".ffn.w1", ffn_w1);
    fn(prefix + ".ffn.b1", ffn_b1);
    fn(prefix + ".ffn.w2", ffn_w2);
    fn(prefix + ".ffn.b2", ffn_b2);
    fn(prefix + ".norm1.gain", norm1_gain);
    fn(prefix + ".norm1.bias", norm1_bias);
    fn(prefix + ".norm2.gain", norm2_gain);
    fn(prefix + ".norm2.bias", norm2_bias);
    fn(prefix + ".norm3.gain", norm3_gain);
    fn(prefix + ".norm3.bias", norm3_bias);
  }
};

// Fixed sinusoidal positions. Row t holds sin/cos pairs of t scaled by the
// usual 10000^(2i/D) frequency bands; row 0 is [0, 1, 0, 1, ...].
class PositionalTable {
 public:
  PositionalTable(std::size_t max_len, std::size_t dim)
      : table_(Tensor::zeros({max_len, dim})) {
    for (std::size_t t = 0; t < max_len; ++t) {
      for (std::size_t j = 0; j < dim; ++j) {
        const double band = static_cast<double>(j / 2) * 2.0;
        const double freq =
            std::pow(10000.0, -band / static_cast<double>(dim));
        const double angle = static_cast<double>(t) * freq;
        table_.data()[t * dim + j] =
            (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
      }
    }
  }

  std::size_t max_len() const { return table_.dim(0); }
  std::size_t dim() const { return table_.dim(1); }
  const Tensor& table() const { return table_; }

 private:
  Tensor table_;
};

// Adds table rows [offset, offset+n) to the n token rows.
inline Tensor positional_add(Tape& tape, const Tensor& tokens,
                             const PositionalTable& table,
                             std::size_t offset = 0) {
  if (tokens.rank() != 2 || tokens.dim(1) != table.dim()) {
    throw ShapeError("positional_add: tokens " + shape_str(tokens.shape()) +
                     " vs table dim " + std::to_string(table.dim()));
  }
  const std::size_t n = tokens.dim(0);
  if (offset + n > table.max_len()) {
    throw RangeError("positional_add: rows [" + std::to_string(offset) + "," +
                     std::to_string(offset + n) + ") exceed table length " +
                     std::to_string(table.max_len()));
  }
  Tensor rows = Tensor::zeros({n, table.dim()});
  std::copy(table.table().data().begin() + offset * table.dim(),
            table.table().data().begin() + (offset + n) * table.dim(),
            rows.data().begin());
  return add(tape, tokens, rows);
}

// Scaled dot-product attention, heads concatenated then projected by w_o.
// kv_mask rows marked invalid receive -1e9 score bias and are never selected.
inline Tensor multi_head_attention(Tape& tape, const Tensor& queries,
                                   const Tensor& keys_values,
                                   const AttentionParams& params,
                                   const ValidityMask* kv_mask = nullptr) {
  const std::size_t dim = params.dim();
  if (queries.rank() != 2 || keys_values.rank() != 2 ||
      queries.dim(1) != dim || keys_values.dim(1) != dim) {
    throw ShapeError("attention feature dims must be " + std::to_string(dim) +
                     ", got " + shape_str(queries.shape()) + " and " +
                     shape_str(keys_values.shape()));
  }
  if (kv_mask && kv_mask->size() != keys_values.dim(0)) {
    throw ShapeError("attention kv mask length mismatch");
  }
  const std::size_t head_dim = dim / params.heads();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Tensor bias;
  if (kv_mask) bias = mask_score_bias(*kv_mask);

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(params.heads());
  for (std::size_t h = 0; h < params.heads(); ++h) {
    Tensor q = matmul(tape, queries, params.w_q[h]);
    Tensor k = matmul(tape, keys_values, params.w_k[h]);
    Tensor v = matmul(tape, keys_values, params.w_v[h]);
    Tensor scores = scale(tape, matmul(tape, q, transpose(tape, k)), inv_sqrt);
    if (kv_mask) scores = add_rowvec(tape, scores, bias);
    Tensor weights = softmax_lastdim(tape, scores);
    head_outputs.push_back(matmul(tape, weights, v));
  }
  Tensor merged = params.heads() == 1 ? head_outputs[0]
                                      : concat_cols(tape, head_outputs);
  return matmul(tape, merged, params.w_o);
}

// Post-norm transformer decoder unit:
//   self-attention -> residual+norm -> cross-attention over memory ->
//   residual+norm -> FFN -> residual+norm.
// query_mask guards padded query rows on the key/value side of
// self-attention; memory_mask guards padded memory rows in cross-attention.
inline Tensor decoder_unit(Tape& tape, const Tensor& queries,
                           const Tensor& memory,
                           const DecoderUnitParams& params,
                           const ValidityMask* query_mask = nullptr,
                           const ValidityMask* memory_mask = nullptr,
                           double ln_eps = 1e-5) {
  Tensor self_out =
      multi_head_attention(tape, queries, queries, params.self_attn, query_mask);
  Tensor h1 = layer_norm(tape, add(tape, queries, self_out), params.norm1_gain,
                         params.norm1_bias, ln_eps);

  Tensor cross_out =
      multi_head_attention(tape, h1, memory, params.cross_attn, memory_mask);
  Tensor h2 = layer_norm(tape, add(tape, h1, cross_out), params.norm2_gain,
                         params.norm2_bias, ln_eps);

  Tensor ff = add_rowvec(
      tape,
      matmul(tape,
             gelu(tape, add_rowvec(tape, matmul(tape, h2, params.ffn_w1),
                                   params.ffn_b1)),
             params.ffn_w2),
      params.ffn_b2);
  return layer_norm(tape, add(tape, h2, ff), params.norm3_gain,
                    params.norm3_bias, ln_eps);
}

}  // namespace himem
