// whispr/trainer.hpp
//
// CTC training loops: pre-training on a training mix and layer-wise transfer
// fine-tuning that unfreezes only the bottom-k layer groups.
//
// A batch is a list of utterances processed independently; per-utterance
// gradients are reduced in index order, so results do not depend on the
// number of worker threads.

#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "whispr/augment.hpp"
#include "whispr/corpus.hpp"
#include "whispr/ctc.hpp"
#include "whispr/encoder.hpp"
#include "whispr/optim.hpp"
#include "whispr/scoring.hpp"

namespace whispr {

struct Utterance {
  std::string id;
  FeatureMatrix features;
  LabelSequence labels;
};

inline std::vector<Utterance> load_utterances(const Manifest& m, const Vocabulary& vocab, const FeatureConfig& cfg) {
  std::vector<Utterance> out;
  out.reserve(m.size());
  for (const auto& r : m.records) out.push_back({r.id, load_record_features(r, cfg), vocab.encode(r.transcript)});
  return out;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Aggregate greedy-decoding error rate (percent) of a model on a set.
inline double evaluate_cer(const Encoder& model, const std::vector<Utterance>& data, std::size_t threads = 1,
                           std::vector<ScoreRow>* rows_out = nullptr) {
  std::vector<ScoreRow> rows(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const auto hyp = greedy_decode(model.forward(data[i].features).log_probs);
    rows[i] = {data[i].id, data[i].labels.size(), edit_distance(data[i].labels, hyp)};
  });
  if (rows_out) *rows_out = rows;
  return error_rate(rows);
}

struct TrainLogRow {
  std::size_t step = 0;
  double mean_loss = 0.0;
  double dev_cer = -1.0;  // negative when not evaluated
  double wall_ms = 0.0;
};

struct TrainOptions {
  OptimizerConfig opt;
  std::optional<MaskPolicy> augment;
  std::size_t log_every = 50;
  std::size_t eval_every = 0;  // 0: evaluate dev only at the end
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;
  std::size_t threads = 1;
  std::ostream* log_csv = nullptr;
  std::ostream* warn = nullptr;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::vector<double> step_loss;
  std::size_t skipped = 0;
  std::vector<std::string> checkpoints;
};

/// Minimizes mean CTC loss over `train`; dev CER is logged when `dev` is set.
inline TrainResult train_ctc(Encoder& model, const std::vector<Utterance>& train, const std::vector<Utterance>* dev,
                             const TrainOptions& o) {
  o.opt.validate();
  if (train.empty()) throw RuntimeError("training set is empty");
  TrainResult res;
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& u = train[i];
    const bool ok = u.features.frames() >= 4 && model.output_frames(u.features.frames()) >= min_frames_for(u.labels) &&
                    !u.labels.empty();
    if (ok) {
      usable.push_back(i);
    } else {
      ++res.skipped;
      if (o.warn) *o.warn << "warning: skipping infeasible utterance " << u.id << '\n';
    }
  }
  if (res.skipped * 2 > train.size()) {
    throw RuntimeError("aborting: " + std::to_string(res.skipped) + " of " + std::to_string(train.size()) +
                       " utterances are infeasible for CTC");
  }
  if (o.augment) o.augment->validate(model.config().n_mels);
  if (o.log_csv) *o.log_csv << "step,mean_loss,dev_cer,wall_ms\n";

  Optimizer opt(o.opt, model.params());
  Rng order_rng(mix_seed(o.opt.seed, 1));
  std::vector<std::size_t> order = usable;
  std::size_t cursor = order.size();
  const auto t0 = std::chrono::steady_clock::now();
  double window_loss = 0.0;
  std::size_t window_n = 0;

  auto emit = [&](std::size_t step, bool eval) {
    TrainLogRow row;
    row.step = step;
    row.mean_loss = window_n ? window_loss / static_cast<double>(window_n) : 0.0;
    if (eval && dev && !dev->empty()) row.dev_cer = evaluate_cer(model, *dev, o.threads);
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(row);
    if (o.log_csv) {
      *o.log_csv << row.step << ',' << row.mean_loss << ',';
      if (row.dev_cer >= 0.0) *o.log_csv << row.dev_cer;
      *o.log_csv << ',' << static_cast<long long>(row.wall_ms) << '\n';
    }
    window_loss = 0.0;
    window_n = 0;
  };

  for (std::size_t step = 1; step <= o.opt.max_steps; ++step) {
    std::vector<std::size_t> batch;
    for (std::size_t b = 0; b < std::min(o.opt.batch_size, usable.size()); ++b) {
      if (cursor == order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    std::vector<GradBuffer> grads(batch.size());
    std::vector<double> losses(batch.size());
    parallel_for(batch.size(), o.threads, [&](std::size_t k) {
      const auto& u = train[batch[k]];
      Encoder::Tape tape;
      Posteriorgram y;
      if (o.augment) {
        Rng aug_rng(mix_seed(o.opt.seed, step * 1000003ULL + k));
        y = model.forward(augment(u.features, *o.augment, aug_rng), &tape);
      } else {
        y = model.forward(u.features, &tape);
      }
      const auto ctc = ctc_loss(y.log_probs, u.labels);
      grads[k] = make_grad_buffer(model.params());
      model.backward(tape, ctc.grad, grads[k]);
      losses[k] = ctc.loss;
    });
    GradBuffer total = make_grad_buffer(model.params());
    double loss = 0.0;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      add_into(total, grads[k]);
      loss += losses[k];
    }
    loss /= static_cast<double>(batch.size());
    load_grads(model.params(), total, 1.0 / static_cast<double>(batch.size()));
    opt.step(model.params());
    res.step_loss.push_back(loss);
    window_loss += loss;
    ++window_n;

    const bool last = step == o.opt.max_steps;
    if ((o.log_every && step % o.log_every == 0) || last) {
      emit(step, last || (o.eval_every && step % o.eval_every == 0));
    }
    if (o.checkpoint_every && step % o.checkpoint_every == 0 && !o.checkpoint_dir.empty()) {
      const auto p = o.checkpoint_dir / ("step" + std::to_string(step) + ".wck");
      save_checkpoint(p, model.params());
      res.checkpoints.push_back(p.string());
    }
  }
  if (o.opt.max_steps == 0 && dev && !dev->empty()) emit(0, true);
  return res;
}

/// Fresh model trained on a mix of utterances.
inline Encoder pretrain(const std::vector<Utterance>& mix, const EncoderConfig& enc_cfg,
                        const std::optional<MaskPolicy>& mask_policy, const TrainOptions& opts,
                        const std::vector<Utterance>* dev = nullptr, TrainResult* result = nullptr) {
  Encoder model(enc_cfg);
  TrainOptions o = opts;
  o.augment = mask_policy;
  auto r = train_ctc(model, mix, dev, o);
  if (result) *result = std::move(r);
  return model;
}

// ---------------------------------------------------------------------------
// Layer-wise transfer

struct TransferPlan {
  std::string pretrained;               // checkpoint path (informational)
  std::size_t finetune_bottom_k = 3;    // layer groups counted from the extractor up
  bool include_extractor = true;
  bool include_output_layer = false;
};

/// Unfreezes groups [0, k) (minus the extractor when excluded) and, if asked,
/// the output projection; everything else is frozen.
inline void apply_transfer_plan(ParamStore& ps, const TransferPlan& plan, std::size_t n_groups) {
  if (plan.finetune_bottom_k > n_groups) {
    throw ConfigError("transfer plan: bottom-k " + std::to_string(plan.finetune_bottom_k) + " exceeds the " +
                      std::to_string(n_groups) + " layer groups of the model");
  }
  const auto top = static_cast<std::uint32_t>(n_groups - 1);
  for (auto& e : ps.entries()) {
    bool train = e.layer_index < plan.finetune_bottom_k;
    if (e.layer_index == 0 && !plan.include_extractor) train = false;
    if (e.layer_index == top && plan.include_output_layer) train = true;
    e.frozen = !train;
  }
}

/// Fine-tunes a copy of `pretrained` on whispered data under `plan`. The
/// returned model carries the pretrained model's freeze flags, so frozen
/// entries are bit-identical to the input.
inline Encoder finetune_layerwise(const TransferPlan& plan, const Encoder& pretrained,
                                  const std::vector<Utterance>& whisper_data, const TrainOptions& opts,
                                  const std::vector<Utterance>* dev = nullptr, TrainResult* result = nullptr) {
  Encoder model = pretrained;
  const auto n_groups = model.config().n_groups();
  apply_transfer_plan(model.params(), plan, n_groups);
  if (!model.params().all_frozen()) {
    TrainOptions o = opts;
    auto r = train_ctc(model, whisper_data, dev, o);
    if (result) *result = std::move(r);
  } else if (result) {
    *result = {};
  }
  for (std::size_t i = 0; i < model.params().size(); ++i) model.params()[i].frozen = pretrained.params()[i].frozen;
  return model;
}

}  // namespace whispr
