#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "visor/image.hpp"
#include "visor/tape.hpp"
#include "visor/tokenizer.hpp"

namespace visor::vlm {

struct ModelSpec {
  int height = 32;
  int width = 32;
  int patch_size = 8;
  int dim = 64;
  int layers = 6;
  int vocab = 49;
  int heads = 4;
  int max_seq_len = 96;

  int visual_tokens() const { return (height / patch_size) * (width / patch_size); }
  int head_dim() const { return dim / heads; }
  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

struct BlockParams {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor w_mlp_in, b_mlp_in, w_mlp_out, b_mlp_out;
};

// LLaVA-shaped miniature: patch embedding -> 2-layer MLP projector -> visual
// tokens prepended to text tokens -> pre-LN transformer -> unembedding.
struct ModelParams {
  ModelSpec spec;
  Tensor patch_embed_w;  // [patch^2*3, d]
  Tensor patch_embed_b;  // [d]
  Tensor proj_w1, proj_b1;  // [d, d], [d]
  Tensor proj_w2, proj_b2;
  Tensor token_embed;    // [V, d]
  Tensor pos_embed;      // [max_seq_len, d]
  std::vector<BlockParams> blocks;
  Tensor final_ln_gain, final_ln_bias;
  Tensor unembed;        // [d, V]

  static ModelParams init(const ModelSpec& spec, std::uint64_t seed);

  // Visits every parameter tensor in the fixed serialization order.
  template <typename Fn>
  void for_each_named(Fn&& fn) {
    fn("patch_embed.w", patch_embed_w);
    fn("patch_embed.b", patch_embed_b);
    fn("projector.w1", proj_w1);
    fn("projector.b1", proj_b1);
    fn("projector.w2", proj_w2);
    fn("projector.b2", proj_b2);
    fn("token_embed", token_embed);
    fn("pos_embed", pos_embed);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const std::string p = "block" + std::to_string(l) + ".";
      BlockParams& b = blocks[l];
      fn(p + "ln1.gain", b.ln1_gain);
      fn(p + "ln1.bias", b.ln1_bias);
      fn(p + "attn.wq", b.wq);
      fn(p + "attn.bq", b.bq);
      fn(p + "attn.wk", b.wk);
      fn(p + "attn.bk", b.bk);
      fn(p + "attn.wv", b.wv);
      fn(p + "attn.bv", b.bv);
      fn(p + "attn.wo", b.wo);
      fn(p + "attn.bo", b.bo);
      fn(p + "ln2.gain", b.ln2_gain);
      fn(p + "ln2.bias", b.ln2_bias);
      fn(p + "mlp.w_in", b.w_mlp_in);
      fn(p + "mlp.b_in", b.b_mlp_in);
      fn(p + "mlp.w_out", b.w_mlp_out);
      fn(p + "mlp.b_out", b.b_mlp_out);
    }
    fn("final_ln.gain", final_ln_gain);
    fn("final_ln.bias", final_ln_bias);
    fn("unembed", unembed);
  }
  template <typename Fn>
  void for_each_named(Fn&& fn) const {
    const_cast<ModelParams*>(this)->for_each_named(
        [&fn](const std::string& name, Tensor& t) { fn(name, static_cast<const Tensor&>(t)); });
  }
};

// On-tape mirror of ModelParams (leaf Var per tensor).
struct BlockVars {
  Var ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo;
  Var ln2_gain, ln2_bias, w_mlp_in, b_mlp_in, w_mlp_out, b_mlp_out;
};
struct ParamVars {
  Var patch_embed_w, patch_embed_b;
  Var proj_w1, proj_b1, proj_w2, proj_b2;
  Var token_embed, pos_embed;
  std::vector<BlockVars> blocks;
  Var final_ln_gain, final_ln_bias, unembed;

  // Same traversal order as ModelParams::for_each_named.
  template <typename Fn>
  void for_each_var(Fn&& fn) const {
    fn(patch_embed_w);
    fn(patch_embed_b);
    fn(proj_w1);
    fn(proj_b1);
    fn(proj_w2);
    fn(proj_b2);
    fn(token_embed);
    fn(pos_embed);
    for (const BlockVars& b : blocks) {
      fn(b.ln1_gain);
      fn(b.ln1_bias);
      fn(b.wq);
      fn(b.bq);
      fn(b.wk);
      fn(b.bk);
      fn(b.wv);
      fn(b.bv);
      fn(b.wo);
      fn(b.bo);
      fn(b.ln2_gain);
      fn(b.ln2_bias);
      fn(b.w_mlp_in);
      fn(b.b_mlp_in);
      fn(b.w_mlp_out);
      fn(b.b_mlp_out);
    }
    fn(final_ln_gain);
    fn(final_ln_bias);
    fn(unembed);
  }
};

ParamVars register_params(Tape& tape, const ModelParams& params, bool requires_grad);

// Per-layer direction added into the residual stream (Var-free carrier so
// extraction metadata lives elsewhere).
struct SteeringDelta {
  int layer = 0;
  Tensor direction;  // [d]
};

// h^(l)[k] += alpha * direction for k >= from_position, applied to the
// residual stream after block `layer`. from_position < 0 means "first text
// token" (the visual prefix stays unsteered).
struct SteeringSpec {
  std::vector<SteeringDelta> deltas;
  double alpha = 0.0;
  int from_position = -1;
};

// Residual-stream taps: h^(l)[k] is the output of block l at position k,
// recorded after any steering addition at that layer.
struct ActivationTrace {
  const Tape* tape = nullptr;
  std::map<std::pair<int, int>, Var> taps;

  bool has(int layer, int position) const;
  Var var(int layer, int position) const;
  Tensor value(int layer, int position) const;  // [d]
};

using TapSet = std::vector<std::pair<int, int>>;

struct ForwardOutput {
  Var logits;  // [seq, V]
  ActivationTrace trace;
};

// Pre-projection patch embeddings, one row per patch. [P, d]
Var patch_embeddings(Tape& tape, Var image, const ParamVars& pv, const ModelSpec& spec);
// Projected visual token embeddings fed to the transformer. [P, d]
Var encode_image(Tape& tape, Var image, const ParamVars& pv, const ModelSpec& spec);

ForwardOutput forward(Tape& tape, Var image, const data::TokenSequence& text,
                      const ParamVars& pv, const ModelSpec& spec, const TapSet& taps = {},
                      const SteeringSpec* steering = nullptr);

// No-grad convenience: logits plus tap values.
struct InferenceResult {
  Tensor logits;
  std::map<std::pair<int, int>, Tensor> taps;
};
InferenceResult run_inference(const ModelParams& params, const Image& image,
                              const data::TokenSequence& text, const TapSet& taps = {},
                              const SteeringSpec* steering = nullptr);

// Sum over completion tokens of log P(token | visual prefix, prompt, earlier
// completion tokens). Always <= 0.
double sequence_logprob(const ModelParams& params, const Image& image,
                        const data::TokenSequence& prompt, const data::TokenSequence& completion,
                        const SteeringSpec* steering = nullptr);

}  // namespace visor::vlm
