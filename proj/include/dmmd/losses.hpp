#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dmmd/autodiff.hpp"

namespace dmmd {

struct SupervisedLossConfig {
  double epsilon = 0.1;  // label smoothing, in [0, 1]
  double margin = 0.3;   // triplet margin, > 0
  double lambda = 1.0;   // triplet weight, >= 0

  void validate() const {
    detail::require(epsilon >= 0.0 && epsilon <= 1.0,
                    "epsilon must lie in [0, 1]");
    detail::require(margin > 0.0, "margin must be positive");
    detail::require(lambda >= 0.0, "lambda must be nonnegative");
  }
};

// Label-smoothed softmax cross-entropy over a batch of logits:
//   (1 - epsilon) * L_ce + epsilon / N
// where L_ce is the mean negative log-softmax of the true class. The
// epsilon/N regularizer is a literal additive constant, so reported values
// match hand calculations.
inline Value cross_entropy_smoothed(Tape& tape, Value logits,
                                    std::span<const int> labels,
                                    double epsilon) {
  const Tensor& lg = tape.value(logits);
  detail::require(lg.rank() == 2, "cross_entropy_smoothed: logits must be KxN");
  std::size_t batch = lg.rows(), classes = lg.cols();
  detail::require(labels.size() == batch,
                  "cross_entropy_smoothed: one label per row required");
  detail::require(epsilon >= 0.0 && epsilon <= 1.0,
                  "cross_entropy_smoothed: epsilon outside [0, 1]");

  std::vector<std::size_t> picks(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    int y = labels[i];
    detail::require(y >= 0 && static_cast<std::size_t>(y) < classes,
                    "cross_entropy_smoothed: label " + std::to_string(y) +
                        " out of range for " + std::to_string(classes) +
                        " classes");
    picks[i] = i * classes + static_cast<std::size_t>(y);
  }

  Value log_probs = tape.log_softmax(logits);
  Value ce = tape.scale(tape.mean(tape.gather(log_probs, std::move(picks))), -1.0);
  return tape.shift(tape.scale(ce, 1.0 - epsilon),
                    epsilon / static_cast<double>(classes));
}

// Batch-hard triplet loss: for each anchor, hinge on
//   margin + (hardest positive distance) - (hardest negative distance)
// averaged over all anchors. Distances are Euclidean on raw embeddings.
// Ties in the hardest positive/negative pick the first occurrence, which
// keeps gradients deterministic.
inline Value triplet_batch_hard(Tape& tape, Value embeddings,
                                std::span<const int> labels, double margin) {
  const Tensor& emb = tape.value(embeddings);
  detail::require(emb.rank() == 2, "triplet_batch_hard: embeddings must be KxF");
  std::size_t batch = emb.rows();
  detail::require(labels.size() == batch,
                  "triplet_batch_hard: one label per row required");

  std::unordered_map<int, int> counts;
  for (int y : labels) ++counts[y];
  detail::require(counts.size() >= 2,
                  "triplet_batch_hard: at least two identities required");
  for (const auto& [id, c] : counts)
    detail::require(c >= 2, "triplet_batch_hard: identity " +
                                std::to_string(id) +
                                " has a single sample; hardest positive "
                                "undefined");

  Value dist = tape.pairwise_distances(embeddings);
  const Tensor& d = tape.value(dist);

  std::vector<std::size_t> hardest_pos(batch), hardest_neg(batch);
  for (std::size_t a = 0; a < batch; ++a) {
    std::size_t best_pos = Tape::npos, best_neg = Tape::npos;
    for (std::size_t j = 0; j < batch; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (best_pos == Tape::npos || d(a, j) > d(a, best_pos)) best_pos = j;
      } else {
        if (best_neg == Tape::npos || d(a, j) < d(a, best_neg)) best_neg = j;
      }
    }
    hardest_pos[a] = a * batch + best_pos;
    hardest_neg[a] = a * batch + best_neg;
  }

  Value pos = tape.gather(dist, std::move(hardest_pos));
  Value neg = tape.gather(dist, std::move(hardest_neg));
  Value hinge = tape.relu(tape.shift(tape.subtract(pos, neg), margin));
  return tape.mean(hinge);
}

// L_ces + lambda * L_tri
inline Value supervised_loss(Tape& tape, Value logits, Value embeddings,
                             std::span<const int> labels,
                             const SupervisedLossConfig& config) {
  config.validate();
  Value ces = cross_entropy_smoothed(tape, logits, labels, config.epsilon);
  Value tri = triplet_batch_hard(tape, embeddings, labels, config.margin);
  return tape.add(ces, tape.scale(tri, config.lambda));
}

}  // namespace dmmd
