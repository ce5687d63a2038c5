#include "visor/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "visor/error.hpp"
#include "visor/hash.hpp"

namespace visor::vlm {

namespace {
// Seed streams for the different image families.
constexpr std::uint64_t kSignalStream = 0x100000;
constexpr std::uint64_t kNeutralStream = 0x200000;
constexpr std::uint64_t kRetentionStream = 0x300000;
}  // namespace

std::vector<TrainExample> build_training_examples(
    const std::vector<data::ContrastivePair>& pairs,
    const std::vector<data::RetentionItem>& retention, const ModelSpec& spec, std::uint64_t seed,
    double signal_shift, double system_prompt_fraction, const SystemPromptTexts* system_prompts) {
  data::Tokenizer tok;
  std::vector<TrainExample> out;
  const auto n_instructed =
      static_cast<std::size_t>(system_prompt_fraction * static_cast<double>(pairs.size()));
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    TrainExample pos;
    pos.image = data::behavior_signal_image(spec.height, spec.width,
                                            mix_seed(seed, kSignalStream + 2 * i), true,
                                            signal_shift);
    pos.prompt = p.prompt;
    pos.completion = p.positive;
    out.push_back(std::move(pos));

    TrainExample neg;
    neg.image = data::behavior_signal_image(spec.height, spec.width,
                                            mix_seed(seed, kSignalStream + 2 * i + 1), false,
                                            signal_shift);
    neg.prompt = p.prompt;
    neg.completion = p.negative;
    out.push_back(std::move(neg));

    if (system_prompts != nullptr && i < n_instructed) {
      TrainExample ins_pos;
      ins_pos.image = noisy_grey_image(spec.height, spec.width,
                                       mix_seed(seed, kNeutralStream + 2 * i), 0.1, 0.0);
      ins_pos.prompt = data::with_instruction(tok, system_prompts->positive, p.prompt);
      ins_pos.completion = p.positive;
      out.push_back(std::move(ins_pos));

      TrainExample ins_neg;
      ins_neg.image = noisy_grey_image(spec.height, spec.width,
                                       mix_seed(seed, kNeutralStream + 2 * i + 1), 0.1, 0.0);
      ins_neg.prompt = data::with_instruction(tok, system_prompts->negative, p.prompt);
      ins_neg.completion = p.negative;
      out.push_back(std::move(ins_neg));
    }
  }
  for (std::size_t j = 0; j < retention.size(); ++j) {
    const auto& item = retention[j];
    TrainExample ex;
    ex.image = noisy_grey_image(spec.height, spec.width, mix_seed(seed, kRetentionStream + j),
                                0.1, 0.0);
    ex.prompt = item.prompt;
    ex.completion = item.choices[static_cast<std::size_t>(item.answer_index)];
    out.push_back(std::move(ex));
  }
  return out;
}

TrainResult train_toy_model(const std::vector<TrainExample>& examples, const ModelSpec& spec,
                            const TrainConfig& config) {
  if (examples.empty()) throw Error("train: empty example list");
  if (config.steps < 0 || config.batch_size < 1) throw Error("train: bad steps/batch_size");

  TrainResult result;
  result.params = ModelParams::init(spec, config.seed);
  ModelParams& params = result.params;

  std::vector<Tensor*> param_list;
  params.for_each_named([&param_list](const std::string&, Tensor& t) { param_list.push_back(&t); });
  std::vector<Tensor> velocity;
  for (Tensor* t : param_list) velocity.emplace_back(t->shape());

  std::mt19937_64 shuffle_rng(mix_seed(config.seed, 0x5347444dULL));
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  std::size_t cursor = 0;

  const int p = spec.visual_tokens();
  const int v = spec.vocab;

  for (int step = 0; step < config.steps; ++step) {
    if (cursor >= order.size()) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      cursor = 0;
    }
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(config.batch_size),
                                                   order.size() - cursor);
    std::vector<Tensor> grad_accum;
    for (Tensor* t : param_list) grad_accum.emplace_back(t->shape());
    double batch_loss = 0.0;

    try {
      for (std::size_t b = 0; b < take; ++b) {
        const TrainExample& ex = examples[order[cursor + b]];
        Tape tape(true);
        ParamVars pv = register_params(tape, params, true);
        Var img = tape.constant(ex.image.to_tensor());
        data::TokenSequence text = ex.prompt;
        text.insert(text.end(), ex.completion.begin(), ex.completion.end());
        ForwardOutput fwd = forward(tape, img, text, pv, spec);

        const int plen = static_cast<int>(ex.prompt.size());
        const int clen = static_cast<int>(ex.completion.size());
        Var rows = tape.slice(fwd.logits, {p + plen - 1, 0}, {clen, v});
        Var picked = tape.pick(tape.log_softmax(rows), ex.completion);
        Var loss = tape.mul_scalar(tape.sum(picked), -1.0 / clen);
        batch_loss += tape.value(loss).item();

        const Gradients grads = tape.backward(loss);
        const double scale = 1.0 / static_cast<double>(take);
        std::size_t pi = 0;
        pv.for_each_var([&](Var pvar) {
          if (grads.nonzero(pvar)) {
            const Tensor& g = grads.grad(pvar);
            Tensor& acc = grad_accum[pi];
            for (std::int64_t i = 0; i < acc.size(); ++i) acc.at(i) += scale * g.at(i);
          }
          ++pi;
        });
      }
    } catch (const Error& e) {
      throw Error("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    batch_loss /= static_cast<double>(take);
    if (!std::isfinite(batch_loss)) {
      throw Error("training diverged at step " + std::to_string(step) + ": non-finite loss");
    }
    cursor += take;

    for (std::size_t i = 0; i < param_list.size(); ++i) {
      Tensor& vel = velocity[i];
      Tensor& par = *param_list[i];
      const Tensor& acc = grad_accum[i];
      for (std::int64_t j = 0; j < par.size(); ++j) {
        vel.at(j) = config.momentum * vel.at(j) + acc.at(j);
        par.at(j) -= config.learning_rate * vel.at(j);
      }
    }
    result.loss_history.push_back(batch_loss);
    if (config.log_every > 0 && (step + 1) % config.log_every == 0) {
      std::printf("step %d/%d loss %.4f\n", step + 1, config.steps, batch_loss);
      std::fflush(stdout);
    }
  }
  return result;
}

double completion_token_accuracy(const ModelParams& params,
                                 const std::vector<TrainExample>& examples) {
  if (examples.empty()) throw Error("accuracy: empty example list");
  const int p = params.spec.visual_tokens();
  const int v = params.spec.vocab;
  std::int64_t correct = 0, total = 0;
  for (const TrainExample& ex : examples) {
    data::TokenSequence text = ex.prompt;
    text.insert(text.end(), ex.completion.begin(), ex.completion.end());
    const InferenceResult res = run_inference(params, ex.image, text);
    for (std::size_t j = 0; j < ex.completion.size(); ++j) {
      const std::int64_t row = p + static_cast<std::int64_t>(ex.prompt.size()) + static_cast<std::int64_t>(j) - 1;
      const Scalar* logits = res.logits.data() + row * v;
      int best = 0;
      for (int t = 1; t < v; ++t) {
        if (logits[t] > logits[best]) best = t;
      }
      if (best == ex.completion[j]) ++correct;
      ++total;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

double behavior_flip_rate(const ModelParams& params,
                          const std::vector<data::ContrastivePair>& pairs, std::uint64_t seed,
                          double signal_shift) {
  if (pairs.empty()) throw Error("behavior_flip_rate: empty pair list");
  int flipped = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& pr = pairs[i];
    const Image pos_img = data::behavior_signal_image(
        params.spec.height, params.spec.width, mix_seed(seed, kSignalStream + 2 * i), true,
        signal_shift);
    const Image neg_img = data::behavior_signal_image(
        params.spec.height, params.spec.width, mix_seed(seed, kSignalStream + 2 * i + 1), false,
        signal_shift);
    const bool pos_ok = sequence_logprob(params, pos_img, pr.prompt, pr.positive) >
                        sequence_logprob(params, pos_img, pr.prompt, pr.negative);
    const bool neg_ok = sequence_logprob(params, neg_img, pr.prompt, pr.negative) >
                        sequence_logprob(params, neg_img, pr.prompt, pr.positive);
    if (pos_ok && neg_ok) ++flipped;
  }
  return static_cast<double>(flipped) / static_cast<double>(pairs.size());
}

}  // namespace visor::vlm
