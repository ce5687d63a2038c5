#include "visor/model.hpp"

#include <cmath>

#include "visor/error.hpp"

namespace visor::vlm {

void ModelSpec::validate() const {
  if (height <= 0 || width <= 0 || patch_size <= 0 || dim <= 0 || layers <= 0 || vocab <= 1 ||
      heads <= 0 || max_seq_len <= 0) {
    throw Error("model spec: all dimensions must be positive");
  }
  if (height % patch_size != 0 || width % patch_size != 0) {
    throw Error("model spec: image size must be divisible by patch size");
  }
  if (dim % heads != 0) throw Error("model spec: dim must be divisible by heads");
  if (max_seq_len <= visual_tokens()) {
    throw Error("model spec: max_seq_len must exceed the visual token count");
  }
}

ModelParams ModelParams::init(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const int d = spec.dim;
  const Scalar w_std = 0.05;
  ModelParams p;
  p.spec = spec;
  p.patch_embed_w = Tensor::randn({spec.patch_size * spec.patch_size * 3, d}, rng, w_std);
  p.patch_embed_b = Tensor({d});
  p.proj_w1 = Tensor::randn({d, d}, rng, w_std);
  p.proj_b1 = Tensor({d});
  p.proj_w2 = Tensor::randn({d, d}, rng, w_std);
  p.proj_b2 = Tensor({d});
  p.token_embed = Tensor::randn({spec.vocab, d}, rng, w_std);
  p.pos_embed = Tensor::randn({spec.max_seq_len, d}, rng, w_std);
  p.blocks.resize(static_cast<std::size_t>(spec.layers));
  for (auto& b : p.blocks) {
    b.ln1_gain = Tensor::full({d}, 1.0);
    b.ln1_bias = Tensor({d});
    b.wq = Tensor::randn({d, d}, rng, w_std);
    b.bq = Tensor({d});
    b.wk = Tensor::randn({d, d}, rng, w_std);
    b.bk = Tensor({d});
    b.wv = Tensor::randn({d, d}, rng, w_std);
    b.bv = Tensor({d});
    b.wo = Tensor::randn({d, d}, rng, w_std);
    b.bo = Tensor({d});
    b.ln2_gain = Tensor::full({d}, 1.0);
    b.ln2_bias = Tensor({d});
    b.w_mlp_in = Tensor::randn({d, 4 * d}, rng, w_std);
    b.b_mlp_in = Tensor({4 * d});
    b.w_mlp_out = Tensor::randn({4 * d, d}, rng, w_std);
    b.b_mlp_out = Tensor({d});
  }
  p.final_ln_gain = Tensor::full({d}, 1.0);
  p.final_ln_bias = Tensor({d});
  p.unembed = Tensor::randn({d, spec.vocab}, rng, w_std);
  return p;
}

ParamVars register_params(Tape& tape, const ModelParams& params, bool requires_grad) {
  ParamVars pv;
  pv.patch_embed_w = tape.input(params.patch_embed_w, requires_grad);
  pv.patch_embed_b = tape.input(params.patch_embed_b, requires_grad);
  pv.proj_w1 = tape.input(params.proj_w1, requires_grad);
  pv.proj_b1 = tape.input(params.proj_b1, requires_grad);
  pv.proj_w2 = tape.input(params.proj_w2, requires_grad);
  pv.proj_b2 = tape.input(params.proj_b2, requires_grad);
  pv.token_embed = tape.input(params.token_embed, requires_grad);
  pv.pos_embed = tape.input(params.pos_embed, requires_grad);
  for (const auto& b : params.blocks) {
    BlockVars bv;
    bv.ln1_gain = tape.input(b.ln1_gain, requires_grad);
    bv.ln1_bias = tape.input(b.ln1_bias, requires_grad);
    bv.wq = tape.input(b.wq, requires_grad);
    bv.bq = tape.input(b.bq, requires_grad);
    bv.wk = tape.input(b.wk, requires_grad);
    bv.bk = tape.input(b.bk, requires_grad);
    bv.wv = tape.input(b.wv, requires_grad);
    bv.bv = tape.input(b.bv, requires_grad);
    bv.wo = tape.input(b.wo, requires_grad);
    bv.bo = tape.input(b.bo, requires_grad);
    bv.ln2_gain = tape.input(b.ln2_gain, requires_grad);
    bv.ln2_bias = tape.input(b.ln2_bias, requires_grad);
    bv.w_mlp_in = tape.input(b.w_mlp_in, requires_grad);
    bv.b_mlp_in = tape.input(b.b_mlp_in, requires_grad);
    bv.w_mlp_out = tape.input(b.w_mlp_out, requires_grad);
    bv.b_mlp_out = tape.input(b.b_mlp_out, requires_grad);
    pv.blocks.push_back(bv);
  }
  pv.final_ln_gain = tape.input(params.final_ln_gain, requires_grad);
  pv.final_ln_bias = tape.input(params.final_ln_bias, requires_grad);
  pv.unembed = tape.input(params.unembed, requires_grad);
  return pv;
}

bool ActivationTrace::has(int layer, int position) const {
  return taps.count({layer, position}) > 0;
}

Var ActivationTrace::var(int layer, int position) const {
  auto it = taps.find({layer, position});
  if (it == taps.end()) {
    throw Error("activation trace: no tap at layer " + std::to_string(layer) + " position " +
                std::to_string(position));
  }
  return it->second;
}

Tensor ActivationTrace::value(int layer, int position) const {
  if (tape == nullptr) throw Error("activation trace: detached from tape");
  return tape->value(var(layer, position));
}

Var patch_embeddings(Tape& tape, Var image, const ParamVars& pv, const ModelSpec& spec) {
  const Tensor& img = tape.value(image);
  const Shape expect = {spec.height, spec.width, 3};
  if (img.shape() != expect) {
    throw Error("encode_image: image shape " + shape_str(img.shape()) + " does not match spec " +
                shape_str(expect));
  }
  const int ps = spec.patch_size;
  std::vector<Var> rows;
  for (int pr = 0; pr < spec.height / ps; ++pr) {
    for (int pc = 0; pc < spec.width / ps; ++pc) {
      Var patch = tape.slice(image, {pr * ps, pc * ps, 0}, {ps, ps, 3});
      rows.push_back(tape.reshape(patch, {1, ps * ps * 3}));
    }
  }
  Var pixels = tape.concat(rows, 0);  // [P, ps*ps*3]
  return tape.add(tape.matmul(pixels, pv.patch_embed_w), pv.patch_embed_b);
}

Var encode_image(Tape& tape, Var image, const ParamVars& pv, const ModelSpec& spec) {
  Var pre = patch_embeddings(tape, image, pv, spec);
  Var h = tape.gelu(tape.add(tape.matmul(pre, pv.proj_w1), pv.proj_b1));
  return tape.add(tape.matmul(h, pv.proj_w2), pv.proj_b2);
}

namespace {

Tensor causal_mask(int seq) {
  Tensor m({seq, seq});
  for (int i = 0; i < seq; ++i) {
    for (int j = 0; j < seq; ++j) {
      m.at(static_cast<std::int64_t>(i) * seq + j) = j <= i ? 0.0 : -1e30;
    }
  }
  return m;
}

Var attention(Tape& tape, Var x, const BlockVars& b, const ModelSpec& spec, Var mask, int seq) {
  const int d = spec.dim, dh = spec.head_dim();
  Var q = tape.add(tape.matmul(x, b.wq), b.bq);
  Var k = tape.add(tape.matmul(x, b.wk), b.bk);
  Var v = tape.add(tape.matmul(x, b.wv), b.bv);
  std::vector<Var> heads;
  for (int h = 0; h < spec.heads; ++h) {
    Var qh = tape.slice(q, {0, h * dh}, {seq, dh});
    Var kh = tape.slice(k, {0, h * dh}, {seq, dh});
    Var vh = tape.slice(v, {0, h * dh}, {seq, dh});
    Var scores = tape.mul_scalar(tape.matmul(qh, tape.transpose(kh)), 1.0 / std::sqrt(static_cast<Scalar>(dh)));
    Var att = tape.softmax(tape.add(scores, mask));
    heads.push_back(tape.matmul(att, vh));
  }
  Var merged = spec.heads == 1 ? heads[0] : tape.concat(heads, 1);  // [seq, d]
  (void)d;
  return tape.add(tape.matmul(merged, b.wo), b.bo);
}

Var mlp(Tape& tape, Var x, const BlockVars& b) {
  Var h = tape.gelu(tape.add(tape.matmul(x, b.w_mlp_in), b.b_mlp_in));
  return tape.add(tape.matmul(h, b.w_mlp_out), b.b_mlp_out);
}

constexpr Scalar kLnEps = 1e-5;

}  // namespace

ForwardOutput forward(Tape& tape, Var image, const data::TokenSequence& text,
                      const ParamVars& pv, const ModelSpec& spec, const TapSet& taps,
                      const SteeringSpec* steering) {
  const int p = spec.visual_tokens();
  const int seq = p + static_cast<int>(text.size());
  if (text.empty()) throw Error("forward: empty text sequence");
  if (seq > spec.max_seq_len) {
    throw Error("forward: sequence length " + std::to_string(seq) + " exceeds max_seq_len " +
                std::to_string(spec.max_seq_len));
  }
  for (auto [layer, pos] : taps) {
    if (layer < 0 || layer >= spec.layers || pos < 0 || pos >= seq) {
      throw Error("forward: tap (layer " + std::to_string(layer) + ", position " +
                  std::to_string(pos) + ") out of range");
    }
  }
  if (steering != nullptr) {
    for (const auto& delta : steering->deltas) {
      if (delta.layer < 0 || delta.layer >= spec.layers) {
        throw Error("steering: layer " + std::to_string(delta.layer) + " out of range");
      }
      if (delta.direction.shape() != Shape{spec.dim}) {
        throw Error("steering: direction shape " + shape_str(delta.direction.shape()) +
                    " does not match model dim " + std::to_string(spec.dim));
      }
    }
  }

  Var vis = encode_image(tape, image, pv, spec);
  Var tok = tape.embedding(pv.token_embed, text);
  Var x = tape.concat({vis, tok}, 0);
  x = tape.add(x, tape.slice(pv.pos_embed, {0, 0}, {seq, spec.dim}));

  Var mask = tape.constant(causal_mask(seq));

  ForwardOutput out;
  out.trace.tape = &tape;
  for (int l = 0; l < spec.layers; ++l) {
    const BlockVars& b = pv.blocks[static_cast<std::size_t>(l)];
    x = tape.add(x, attention(tape, tape.layer_norm(x, b.ln1_gain, b.ln1_bias, kLnEps), b, spec, mask, seq));
    x = tape.add(x, mlp(tape, tape.layer_norm(x, b.ln2_gain, b.ln2_bias, kLnEps), b));

    if (steering != nullptr && steering->alpha != 0.0) {
      for (const auto& delta : steering->deltas) {
        if (delta.layer != l) continue;
        Tensor scaled({spec.dim});
        for (int j = 0; j < spec.dim; ++j) {
          scaled.at(j) = steering->alpha * delta.direction.at(j);
        }
        const int from = steering->from_position < 0 ? p : steering->from_position;
        Var dir = tape.constant(scaled);
        if (from <= 0) {
          x = tape.add(x, dir);
        } else if (from < seq) {
          Var head = tape.slice(x, {0, 0}, {from, spec.dim});
          Var tail = tape.slice(x, {from, 0}, {seq - from, spec.dim});
          x = tape.concat({head, tape.add(tail, dir)}, 0);
        }
      }
    }

    for (auto [layer, pos] : taps) {
      if (layer != l) continue;
      Var row = tape.reshape(tape.slice(x, {pos, 0}, {1, spec.dim}), {spec.dim});
      out.trace.taps[{layer, pos}] = row;
    }
  }

  Var xf = tape.layer_norm(x, pv.final_ln_gain, pv.final_ln_bias, kLnEps);
  out.logits = tape.matmul(xf, pv.unembed);
  return out;
}

InferenceResult run_inference(const ModelParams& params, const Image& image,
                              const data::TokenSequence& text, const TapSet& taps,
                              const SteeringSpec* steering) {
  Tape tape(false);
  ParamVars pv = register_params(tape, params, false);
  Var img = tape.constant(image.to_tensor());
  ForwardOutput fwd = forward(tape, img, text, pv, params.spec, taps, steering);
  InferenceResult res;
  res.logits = tape.value(fwd.logits).clone();
  for (const auto& [key, var] : fwd.trace.taps) res.taps[key] = tape.value(var).clone();
  return res;
}

double sequence_logprob(const ModelParams& params, const Image& image,
                        const data::TokenSequence& prompt, const data::TokenSequence& completion,
                        const SteeringSpec* steering) {
  if (prompt.empty()) throw Error("sequence_logprob: empty prompt");
  if (completion.empty()) throw Error("sequence_logprob: empty completion");
  data::TokenSequence text = prompt;
  text.insert(text.end(), completion.begin(), completion.end());
  const InferenceResult res = run_inference(params, image, text, {}, steering);

  const int p = params.spec.visual_tokens();
  const int v = params.spec.vocab;
  double lp = 0.0;
  for (std::size_t j = 0; j < completion.size(); ++j) {
    const std::int64_t row = p + static_cast<std::int64_t>(prompt.size()) + static_cast<std::int64_t>(j) - 1;
    const Scalar* logits = res.logits.data() + row * v;
    Scalar mx = logits[0];
    for (int t = 1; t < v; ++t) mx = std::max(mx, logits[t]);
    Scalar s = 0;
    for (int t = 0; t < v; ++t) s += std::exp(logits[t] - mx);
    lp += logits[completion[j]] - mx - std::log(s);
  }
  return lp;
}

}  // namespace visor::vlm
