#include <doctest.h>

#include <cmath>
#include <vector>

#include "dmmd/losses.hpp"
#include "dmmd/random.hpp"

using namespace dmmd;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Direct evaluation of the smoothed cross-entropy, independent of the tape.
double reference_ces(const Tensor& logits, const std::vector<int>& labels,
                     double epsilon) {
  std::size_t k = logits.rows(), n = logits.cols();
  double ce = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double hi = logits(i, 0);
    for (std::size_t c = 1; c < n; ++c) hi = std::max(hi, logits(i, c));
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(logits(i, c) - hi);
    ce += hi + std::log(z) - logits(i, static_cast<std::size_t>(labels[i]));
  }
  ce /= static_cast<double>(k);
  return (1.0 - epsilon) * ce + epsilon / static_cast<double>(n);
}

}  // namespace

TEST_CASE("cross entropy on uniform logits") {
  std::size_t n = 10;
  Tensor logits({4, n});
  std::vector<int> labels{0, 3, 7, 9};

  Tape t0;
  Value l0 = cross_entropy_smoothed(t0, t0.leaf(logits), labels, 0.0);
  CHECK(t0.scalar_value(l0) == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  Tape t1;
  Value l1 = cross_entropy_smoothed(t1, t1.leaf(logits), labels, 0.1);
  CHECK(t1.scalar_value(l1) ==
        doctest::Approx(0.9 * std::log(10.0) + 0.01).epsilon(1e-9));
  CHECK(t1.scalar_value(l1) == doctest::Approx(2.082327).epsilon(1e-6));
}

TEST_CASE("cross entropy approaches epsilon/N when the correct logit dominates") {
  Tensor logits({1, 10});
  logits(0, 2) = 60.0;  // softmax is effectively one-hot at the label
  std::vector<int> labels{2};
  Tape tape;
  Value loss = cross_entropy_smoothed(tape, tape.leaf(logits), labels, 0.1);
  CHECK(tape.scalar_value(loss) == doctest::Approx(0.01).epsilon(1e-9));
}

TEST_CASE("epsilon zero equals plain cross entropy on random logits") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor logits = random_tensor(rng, {6, 8}, -3.0, 3.0);
    std::vector<int> labels;
    for (int i = 0; i < 6; ++i) labels.push_back(static_cast<int>(rng.index(8)));
    Tape tape;
    Value loss = cross_entropy_smoothed(tape, tape.leaf(logits), labels, 0.0);
    CHECK(std::abs(tape.scalar_value(loss) - reference_ces(logits, labels, 0.0)) <
          1e-12);
  }
}

TEST_CASE("cross entropy is invariant to shifting a row by a constant") {
  Rng rng(37);
  Tensor logits = random_tensor(rng, {5, 7}, -2.0, 2.0);
  std::vector<int> labels{0, 1, 2, 3, 4};
  Tape t0;
  double base =
      t0.scalar_value(cross_entropy_smoothed(t0, t0.leaf(logits), labels, 0.1));
  Tensor shifted = logits;
  for (std::size_t r = 0; r < shifted.rows(); ++r) {
    double c = rng.uniform(-40.0, 40.0);
    for (std::size_t col = 0; col < shifted.cols(); ++col) shifted(r, col) += c;
  }
  Tape t1;
  double moved =
      t1.scalar_value(cross_entropy_smoothed(t1, t1.leaf(shifted), labels, 0.1));
  CHECK(moved == doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("label out of range is rejected") {
  Tensor logits({2, 4});
  std::vector<int> bad{0, 4};
  Tape tape;
  CHECK_THROWS_AS(cross_entropy_smoothed(tape, tape.leaf(logits), bad, 0.1),
                  std::invalid_argument);
  std::vector<int> negative{-1, 0};
  Tape tape2;
  CHECK_THROWS_AS(
      cross_entropy_smoothed(tape2, tape2.leaf(logits), negative, 0.1),
      std::invalid_argument);
}

TEST_CASE("triplet loss on well separated clusters is zero") {
  // two tight clusters, intra distance 1, inter distance ~10
  Tensor emb({4, 1}, {0.0, 1.0, 10.0, 11.0});
  std::vector<int> labels{0, 0, 1, 1};
  Tape tape;
  Value loss = triplet_batch_hard(tape, tape.leaf(emb), labels, 0.3);
  CHECK(tape.scalar_value(loss) == 0.0);
}

TEST_CASE("triplet loss hand fixture evaluates to 1.3") {
  Tensor emb({4, 1}, {0.0, 2.0, 1.0, 3.0});
  std::vector<int> labels{0, 0, 1, 1};
  Tape tape;
  Value loss = triplet_batch_hard(tape, tape.leaf(emb), labels, 0.3);
  CHECK(tape.scalar_value(loss) == doctest::Approx(1.3).epsilon(1e-9));
}

TEST_CASE("triplet loss at fully collapsed embeddings equals the margin") {
  Tensor emb({4, 2});
  std::vector<int> labels{0, 0, 1, 1};
  Tape tape;
  Value loss = triplet_batch_hard(tape, tape.leaf(emb), labels, 0.3);
  CHECK(tape.scalar_value(loss) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("triplet loss preconditions") {
  Tape tape;
  Tensor emb({3, 1}, {0.0, 1.0, 2.0});
  std::vector<int> lone{0, 0, 1};  // identity 1 has one sample
  CHECK_THROWS_AS(triplet_batch_hard(tape, tape.leaf(emb), lone, 0.3),
                  std::invalid_argument);
  std::vector<int> single{0, 0, 0};  // single identity
  Tape tape2;
  CHECK_THROWS_AS(triplet_batch_hard(tape2, tape2.leaf(emb), single, 0.3),
                  std::invalid_argument);
}

TEST_CASE("triplet loss is nonnegative and zero iff margins are satisfied") {
  Rng rng(41);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor emb = random_tensor(rng, {8, 3}, -2.0, 2.0);
    std::vector<int> labels{0, 0, 1, 1, 2, 2, 3, 3};
    Tape tape;
    Value loss = triplet_batch_hard(tape, tape.leaf(emb), labels, 0.3);
    double v = tape.scalar_value(loss);
    CHECK(v >= 0.0);

    // recompute hinge actives by brute force
    const Tensor& d = tape.value(tape.pairwise_distances(tape.leaf(emb)));
    bool any_active = false;
    for (std::size_t a = 0; a < 8; ++a) {
      double worst_pos = 0.0, best_neg = 1e300;
      for (std::size_t j = 0; j < 8; ++j) {
        if (j == a) continue;
        if (labels[j] == labels[a]) worst_pos = std::max(worst_pos, d(a, j));
        else best_neg = std::min(best_neg, d(a, j));
      }
      if (0.3 + worst_pos - best_neg > 0.0) any_active = true;
    }
    CHECK((v > 0.0) == any_active);
  }
}

TEST_CASE("supervised loss combines the terms linearly in lambda") {
  Tensor logits({4, 10});
  Tensor emb({4, 1}, {0.0, 2.0, 1.0, 3.0});
  std::vector<int> labels{0, 0, 1, 1};

  auto total = [&](double lambda) {
    SupervisedLossConfig cfg;
    cfg.epsilon = 0.1;
    cfg.margin = 0.3;
    cfg.lambda = lambda;
    Tape tape;
    return tape.scalar_value(supervised_loss(tape, tape.leaf(logits),
                                             tape.leaf(emb), labels, cfg));
  };

  double ces = 0.9 * std::log(10.0) + 0.01;
  CHECK(total(0.0) == doctest::Approx(ces).epsilon(1e-9));
  CHECK(total(1.0) == doctest::Approx(ces + 1.3).epsilon(1e-9));
  CHECK(total(2.0) == doctest::Approx(ces + 2.6).epsilon(1e-9));
}

TEST_CASE("loss gradients pass finite-difference checks at generic points") {
  Rng rng(43);
  std::vector<int> labels{0, 0, 1, 1, 2, 2};
  for (int trial = 0; trial < 5; ++trial) {
    Tensor logits = random_tensor(rng, {6, 4}, -2.0, 2.0);
    double err = gradient_check(
        [&](Tape& t, Value x) {
          return cross_entropy_smoothed(t, x, labels, 0.1);
        },
        logits, 1e-5);
    CHECK(err < 1e-4);

    Tensor emb = random_tensor(rng, {6, 5}, -2.0, 2.0);
    err = gradient_check(
        [&](Tape& t, Value x) { return triplet_batch_hard(t, x, labels, 0.3); },
        emb, 1e-5);
    CHECK(err < 1e-4);
  }
}
