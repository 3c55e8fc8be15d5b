#pragma once

#include <fstream>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dmmd/data.hpp"
#include "dmmd/dissimilarity.hpp"
#include "dmmd/eval.hpp"
#include "dmmd/losses.hpp"
#include "dmmd/optimizer.hpp"

namespace dmmd {

struct TrainConfig {
  int epochs_supervised = 30;  // phase-1 epochs on labeled source
  int epochs_uda = 40;         // phase-2 epochs on paired batches
  SamplerConfig sampler;
  SupervisedLossConfig supervised;
  KernelConfig kernel;
  DmmdToggles toggles;
  AdamConfig adam;
  int eval_every = 0;  // 0 disables the in-training evaluation hook
  // Phase 2 starts with fresh optimizer moments unless disabled.
  bool reset_optimizer_between_phases = true;

  void validate() const {
    detail::require(epochs_supervised >= 0 && epochs_uda >= 0,
                    "trainer: epoch counts must be >= 0");
    sampler.validate();
    supervised.validate();
    adam.validate();
  }
};

struct EpochRecord {
  int epoch = 0;
  double lces = 0.0;
  double ltri = 0.0;
  double lmmd_wc = 0.0;
  double lmmd_bc = 0.0;
  double lmmd_feat = 0.0;
  double total = 0.0;
  double lr = 0.0;
  double rank1 = std::numeric_limits<double>::quiet_NaN();
  double map = std::numeric_limits<double>::quiet_NaN();
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  void save(const std::string& path) const {
    std::ofstream out(path);
    detail::check(out.good(), "cannot write train log: " + path);
    out << "epoch\tlces\tltri\tlmmd_wc\tlmmd_bc\tlmmd_feat\ttotal\tlr\trank1\tmap\n";
    for (const EpochRecord& r : epochs) {
      out << r.epoch << '\t' << detail::format_double(r.lces) << '\t'
          << detail::format_double(r.ltri) << '\t'
          << detail::format_double(r.lmmd_wc) << '\t'
          << detail::format_double(r.lmmd_bc) << '\t'
          << detail::format_double(r.lmmd_feat) << '\t'
          << detail::format_double(r.total) << '\t'
          << detail::format_double(r.lr) << '\t'
          << detail::format_double(r.rank1) << '\t'
          << detail::format_double(r.map) << '\n';
    }
    detail::check(out.good(), "train log write failed: " + path);
  }
};

using EpochCallback = std::function<void(const EpochRecord&)>;

namespace detail {

inline void run_eval_hook(const TrainConfig& config, const Backbone& model,
                          const DatasetBundle* eval_data, EpochRecord& record,
                          int epoch) {
  if (config.eval_every <= 0 || !eval_data) return;
  if ((epoch + 1) % config.eval_every != 0) return;
  if (eval_data->query.empty() || eval_data->gallery.empty()) return;
  EvalReport r = evaluate(model, eval_data->query, eval_data->gallery);
  record.rank1 = r.rank1;
  record.map = r.map;
}

}  // namespace detail

// Phase 1: supervised training on the labeled source domain. Per batch:
// smoothed cross-entropy plus weighted batch-hard triplet loss, one Adam
// step. Pass a state to keep optimizer moments across calls.
inline TrainLog train_source(Backbone& model, const DatasetBundle& source,
                             const TrainConfig& config,
                             const EpochCallback& on_epoch = {},
                             const DatasetBundle* eval_data = nullptr,
                             AdamState* state = nullptr) {
  config.validate();
  TrainLog log;
  if (config.epochs_supervised == 0) return log;

  ClassIndex classes(source.train);
  detail::require(classes.size() == model.num_classes(),
                  "train_source: model head expects " +
                      std::to_string(model.num_classes()) + " classes, data has " +
                      std::to_string(classes.size()));
  PkSampler sampler(source.train, config.sampler, GroupKey::identity);
  AdamState local = AdamState::init(model);
  AdamState& opt = state ? *state : local;

  for (int epoch = 0; epoch < config.epochs_supervised; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.lr = config.adam.learning_rate(epoch);
    std::size_t batches = 0;
    for (const Batch& batch : sampler.epoch()) {
      std::vector<int> labels(batch.identities.size());
      for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = classes(batch.identities[i]);
      Tape tape;
      BoundBackbone bound = model.bind(tape);
      Value emb = bound.embed(tape, batch.features);
      Value logits = bound.classify(tape, emb);
      Value ces =
          cross_entropy_smoothed(tape, logits, labels, config.supervised.epsilon);
      Value tri =
          triplet_batch_hard(tape, emb, labels, config.supervised.margin);
      Value loss = tape.add(ces, tape.scale(tri, config.supervised.lambda));
      double loss_value = tape.scalar_value(loss);
      detail::check(std::isfinite(loss_value),
                    "train_source: non-finite loss at epoch " +
                        std::to_string(epoch) + " batch " +
                        std::to_string(batches));
      tape.backward(loss);
      adam_step(model, opt, tape, bound, config.adam, epoch);
      record.lces += tape.scalar_value(ces);
      record.ltri += tape.scalar_value(tri);
      record.total += loss_value;
      ++batches;
    }
    if (batches > 0) {
      record.lces /= static_cast<double>(batches);
      record.ltri /= static_cast<double>(batches);
      record.total /= static_cast<double>(batches);
    }
    detail::run_eval_hook(config, model, eval_data, record, epoch);
    log.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  return log;
}

// Phase 2: unsupervised adaptation. Source batches are grouped by identity,
// target batches by tracklet, zipped per epoch (the shorter stream wins).
// Per pair: the distance-distribution and feature alignment terms on both
// batches, the supervised loss on the source batch only, one Adam step on
// the sum.
inline TrainLog adapt(Backbone& model, const DatasetBundle& source,
                      const DatasetBundle& target, const TrainConfig& config,
                      const EpochCallback& on_epoch = {},
                      const DatasetBundle* eval_data = nullptr,
                      AdamState* carried_state = nullptr) {
  config.validate();
  TrainLog log;
  if (config.epochs_uda == 0) return log;

  ClassIndex classes(source.train);
  detail::require(classes.size() == model.num_classes(),
                  "adapt: model head expects " +
                      std::to_string(model.num_classes()) + " classes, data has " +
                      std::to_string(classes.size()));
  PkSampler source_sampler(source.train, config.sampler, GroupKey::identity);
  // Same seed on both streams: when target data coincides with source data
  // (and tracklets with identities) the paired batches match exactly and the
  // alignment terms vanish.
  PkSampler target_sampler(target.train, config.sampler, GroupKey::tracklet);
  AdamState local = AdamState::init(model);
  AdamState& opt = (carried_state && !config.reset_optimizer_between_phases)
                       ? *carried_state
                       : local;
  bool dmmd_active = config.toggles.wc || config.toggles.bc || config.toggles.feature;

  for (int epoch = 0; epoch < config.epochs_uda; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.lr = config.adam.learning_rate(epoch);
    std::vector<Batch> source_batches = source_sampler.epoch();
    std::vector<Batch> target_batches = target_sampler.epoch();
    std::size_t pairs = std::min(source_batches.size(), target_batches.size());
    for (std::size_t b = 0; b < pairs; ++b) {
      const Batch& bs = source_batches[b];
      const Batch& bt = target_batches[b];
      std::vector<int> labels(bs.identities.size());
      for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = classes(bs.identities[i]);

      Tape tape;
      BoundBackbone bound = model.bind(tape);
      Value source_emb = bound.embed(tape, bs.features);
      Value logits = bound.classify(tape, source_emb);
      Value ces =
          cross_entropy_smoothed(tape, logits, labels, config.supervised.epsilon);
      Value tri =
          triplet_batch_hard(tape, source_emb, labels, config.supervised.margin);
      Value supervised = tape.add(ces, tape.scale(tri, config.supervised.lambda));

      DmmdTerms terms;
      if (dmmd_active) {
        Value target_emb = bound.embed(tape, bt.features);
        terms = dmmd_loss(tape, source_emb, bs.groups, target_emb, bt.groups,
                          config.kernel, config.toggles);
      } else {
        terms.wc_term = tape.constant(0.0);
        terms.bc_term = tape.constant(0.0);
        terms.feature_term = tape.constant(0.0);
        terms.total = tape.constant(0.0);
      }
      Value loss = tape.add(supervised, terms.total);
      double loss_value = tape.scalar_value(loss);
      detail::check(std::isfinite(loss_value),
                    "adapt: non-finite loss at epoch " + std::to_string(epoch) +
                        " batch " + std::to_string(b));
      tape.backward(loss);
      adam_step(model, opt, tape, bound, config.adam, epoch);

      record.lces += tape.scalar_value(ces);
      record.ltri += tape.scalar_value(tri);
      record.lmmd_wc += tape.scalar_value(terms.wc_term);
      record.lmmd_bc += tape.scalar_value(terms.bc_term);
      record.lmmd_feat += tape.scalar_value(terms.feature_term);
      record.total += loss_value;
    }
    if (pairs > 0) {
      double n = static_cast<double>(pairs);
      record.lces /= n;
      record.ltri /= n;
      record.lmmd_wc /= n;
      record.lmmd_bc /= n;
      record.lmmd_feat /= n;
      record.total /= n;
    }
    detail::run_eval_hook(config, model, eval_data, record, epoch);
    log.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  return log;
}

}  // namespace dmmd
