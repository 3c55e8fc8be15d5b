#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "dmmd/autodiff.hpp"

namespace dmmd {

enum class PairKind { within_class, between_class };

// Flat collection of pairwise distances for one domain, kept as a single 1-D
// node so gradients flow back into the embeddings that produced them.
struct DistanceDistribution {
  Value values;  // 1-D node, one entry per unordered pair
  std::size_t count = 0;
  PairKind kind = PairKind::within_class;
  Domain domain = Domain::source;
};

struct KernelConfig {
  // Explicit Gaussian RBF bandwidths, or the median heuristic: five
  // bandwidths {m/4, m/2, m, 2m, 4m} around the median pairwise gap of the
  // joined sample, recomputed per call and treated as a constant.
  std::vector<double> bandwidths;
  bool median_heuristic = true;

  void validate() const {
    if (!median_heuristic) {
      detail::require(!bandwidths.empty(),
                      "kernel: at least one bandwidth required");
      for (double s : bandwidths)
        detail::require(s > 0.0, "kernel: bandwidths must be positive");
    }
  }

  static KernelConfig median() { return KernelConfig{}; }
  static KernelConfig fixed(std::vector<double> sigmas) {
    return KernelConfig{std::move(sigmas), false};
  }
};

struct DmmdToggles {
  bool wc = true;
  bool bc = true;
  bool feature = true;
};

struct DmmdTerms {
  Value wc_term;
  Value bc_term;
  Value feature_term;
  Value total;
};

struct DistanceOpCount {
  std::uint64_t wc = 0;
  std::uint64_t bc = 0;
  std::uint64_t total = 0;
};

namespace detail {

inline std::vector<std::size_t> pair_indices(std::span<const int> groups,
                                             std::size_t batch, bool same_group) {
  std::vector<std::size_t> flat;
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t j = i + 1; j < batch; ++j)
      if ((groups[i] == groups[j]) == same_group) flat.push_back(i * batch + j);
  return flat;
}

inline std::size_t distinct_groups(std::span<const int> groups) {
  std::vector<int> g(groups.begin(), groups.end());
  std::sort(g.begin(), g.end());
  return static_cast<std::size_t>(std::unique(g.begin(), g.end()) - g.begin());
}

// Median of pairwise sample gaps over the joined sample, for the bandwidth
// heuristic. Zero gaps are kept; a degenerate (all-equal) sample falls back
// to bandwidth 1.
inline double median_pairwise_gap(const Tensor& a, const Tensor& b) {
  std::size_t d = a.rank() == 2 ? a.cols() : 1;
  std::vector<const double*> rows;
  for (std::size_t i = 0; i < (a.rank() == 2 ? a.rows() : a.size()); ++i)
    rows.push_back(a.data().data() + i * d);
  for (std::size_t i = 0; i < (b.rank() == 2 ? b.rows() : b.size()); ++i)
    rows.push_back(b.data().data() + i * d);

  std::vector<double> gaps;
  gaps.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        double diff = rows[i][c] - rows[j][c];
        s += diff * diff;
      }
      gaps.push_back(std::sqrt(s));
    }
  if (gaps.empty()) return 1.0;
  std::nth_element(gaps.begin(), gaps.begin() + gaps.size() / 2, gaps.end());
  double med = gaps[gaps.size() / 2];
  return med > 0.0 ? med : 1.0;
}

inline std::vector<double> resolve_bandwidths(const Tensor& a, const Tensor& b,
                                              const KernelConfig& kernel) {
  kernel.validate();
  if (!kernel.median_heuristic) return kernel.bandwidths;
  double med = median_pairwise_gap(a, b);
  return {med / 4.0, med / 2.0, med, 2.0 * med, 4.0 * med};
}

}  // namespace detail

// Within-class distances: one per unordered same-group pair.
inline DistanceDistribution wc_distances(Tape& tape, Value embeddings,
                                         std::span<const int> groups,
                                         Domain domain = Domain::source) {
  const Tensor& emb = tape.value(embeddings);
  detail::require(emb.rank() == 2 && emb.rows() > 0,
                  "wc_distances: nonempty batch required");
  detail::require(groups.size() == emb.rows(),
                  "wc_distances: one group label per row required");
  Value dist = tape.pairwise_distances(embeddings);
  auto idx = detail::pair_indices(groups, emb.rows(), true);
  std::size_t n = idx.size();
  return {tape.gather(dist, std::move(idx)), n, PairKind::within_class, domain};
}

// Between-class distances: one per unordered cross-group pair.
inline DistanceDistribution bc_distances(Tape& tape, Value embeddings,
                                         std::span<const int> groups,
                                         Domain domain = Domain::source) {
  const Tensor& emb = tape.value(embeddings);
  detail::require(emb.rank() == 2 && emb.rows() > 0,
                  "bc_distances: nonempty batch required");
  detail::require(groups.size() == emb.rows(),
                  "bc_distances: one group label per row required");
  detail::require(detail::distinct_groups(groups) >= 2,
                  "bc_distances: at least two groups required");
  Value dist = tape.pairwise_distances(embeddings);
  auto idx = detail::pair_indices(groups, emb.rows(), false);
  std::size_t n = idx.size();
  return {tape.gather(dist, std::move(idx)), n, PairKind::between_class, domain};
}

// Both splits off a single shared distance matrix.
inline std::pair<DistanceDistribution, DistanceDistribution> wc_bc_distances(
    Tape& tape, Value embeddings, std::span<const int> groups, Domain domain) {
  const Tensor& emb = tape.value(embeddings);
  detail::require(emb.rank() == 2 && emb.rows() > 0,
                  "wc_bc_distances: nonempty batch required");
  detail::require(groups.size() == emb.rows(),
                  "wc_bc_distances: one group label per row required");
  detail::require(detail::distinct_groups(groups) >= 2,
                  "wc_bc_distances: at least two groups required");
  Value dist = tape.pairwise_distances(embeddings);
  auto wc_idx = detail::pair_indices(groups, emb.rows(), true);
  auto bc_idx = detail::pair_indices(groups, emb.rows(), false);
  std::size_t nw = wc_idx.size(), nb = bc_idx.size();
  return {{tape.gather(dist, std::move(wc_idx)), nw, PairKind::within_class, domain},
          {tape.gather(dist, std::move(bc_idx)), nb, PairKind::between_class, domain}};
}

// MMD between two sample lists (scalars or row vectors), Gaussian kernel.
inline Value mmd(Tape& tape, Value a, Value b, const KernelConfig& kernel) {
  auto sigmas = detail::resolve_bandwidths(tape.value(a), tape.value(b), kernel);
  return tape.gaussian_mmd(a, b, std::move(sigmas));
}

inline Value mmd(Tape& tape, const DistanceDistribution& a,
                 const DistanceDistribution& b, const KernelConfig& kernel) {
  return mmd(tape, a.values, b.values, kernel);
}

// MMD between two embedding batches in feature space.
inline Value feature_mmd(Tape& tape, Value source_embeddings,
                         Value target_embeddings, const KernelConfig& kernel) {
  detail::require(tape.value(source_embeddings).rank() == 2 &&
                      tape.value(target_embeddings).rank() == 2,
                  "feature_mmd: rank-2 embedding batches required");
  return mmd(tape, source_embeddings, target_embeddings, kernel);
}

// Composite loss: MMD between the domains' within-class distance
// distributions, their between-class distance distributions, and their
// feature distributions, equally weighted. Target groups come from tracklet
// ids. Disabled terms contribute a constant zero.
inline DmmdTerms dmmd_loss(Tape& tape, Value source_embeddings,
                           std::span<const int> source_groups,
                           Value target_embeddings,
                           std::span<const int> target_groups,
                           const KernelConfig& kernel,
                           const DmmdToggles& toggles = {}) {
  DmmdTerms terms;
  if (toggles.wc || toggles.bc) {
    auto [wc_s, bc_s] =
        wc_bc_distances(tape, source_embeddings, source_groups, Domain::source);
    auto [wc_t, bc_t] =
        wc_bc_distances(tape, target_embeddings, target_groups, Domain::target);
    terms.wc_term = toggles.wc ? mmd(tape, wc_s, wc_t, kernel) : tape.constant(0.0);
    terms.bc_term = toggles.bc ? mmd(tape, bc_s, bc_t, kernel) : tape.constant(0.0);
  } else {
    terms.wc_term = tape.constant(0.0);
    terms.bc_term = tape.constant(0.0);
  }
  terms.feature_term =
      toggles.feature
          ? feature_mmd(tape, source_embeddings, target_embeddings, kernel)
          : tape.constant(0.0);
  terms.total = tape.add(tape.add(terms.wc_term, terms.bc_term), terms.feature_term);
  return terms;
}

// Distance-calculation count per batch, as the complexity formula states it:
//   wc = (N_o - 1)! * (|B| / N_o),  bc = N_o * (|B| / N_o - 1)^2.
// Reporting utility only; actual pair extraction enumerates every unordered
// pair, which differs from this count away from N_o = 4.
inline DistanceOpCount distance_op_count(std::uint64_t batch_size,
                                         std::uint64_t occurrences) {
  detail::require(occurrences >= 2, "distance_op_count: occurrences must be >= 2");
  detail::require(batch_size % occurrences == 0,
                  "distance_op_count: occurrences must divide the batch size");
  std::uint64_t factorial = 1;
  for (std::uint64_t i = 2; i < occurrences; ++i) factorial *= i;
  std::uint64_t groups = batch_size / occurrences;
  DistanceOpCount count;
  count.wc = factorial * groups;
  count.bc = occurrences * (groups - 1) * (groups - 1);
  count.total = count.wc + count.bc;
  return count;
}

struct HistogramBin {
  double left = 0.0;
  double right = 0.0;
  std::uint64_t count = 0;
};

// Fixed 50-bin histogram over [0, max]; values at the top edge land in the
// last bin.
inline std::vector<HistogramBin> histogram(std::span<const double> values,
                                           std::size_t bins = 50) {
  detail::require(!values.empty(), "histogram: empty distribution");
  double top = *std::max_element(values.begin(), values.end());
  double width = top > 0.0 ? top / static_cast<double>(bins) : 1.0;
  std::vector<HistogramBin> h(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    h[i].left = width * static_cast<double>(i);
    h[i].right = width * static_cast<double>(i + 1);
  }
  for (double v : values) {
    auto b = static_cast<std::size_t>(v / width);
    if (b >= bins) b = bins - 1;
    ++h[b].count;
  }
  return h;
}

inline void write_histogram(std::span<const double> values,
                            const std::string& path, std::size_t bins = 50) {
  std::ofstream out(path);
  detail::check(out.good(), "cannot write histogram file: " + path);
  out << "bin_left\tbin_right\tcount\n";
  for (const HistogramBin& b : histogram(values, bins))
    out << detail::format_double(b.left) << '\t'
        << detail::format_double(b.right) << '\t' << b.count << '\n';
  detail::check(out.good(), "write failed: " + path);
}

// Plain forward-only distance extraction for diagnostics (no tape).
inline std::vector<double> pair_distance_values(const Tensor& embeddings,
                                                std::span<const int> groups,
                                                PairKind kind) {
  detail::require(embeddings.rank() == 2, "rank-2 embeddings required");
  detail::require(groups.size() == embeddings.rows(),
                  "one group label per row required");
  bool same = kind == PairKind::within_class;
  std::size_t k = embeddings.rows(), f = embeddings.cols();
  std::vector<double> out;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      if ((groups[i] == groups[j]) != same) continue;
      double s = 0.0;
      for (std::size_t c = 0; c < f; ++c) {
        double diff = embeddings(i, c) - embeddings(j, c);
        s += diff * diff;
      }
      out.push_back(s > 0.0 ? std::sqrt(s) : 0.0);
    }
  return out;
}

}  // namespace dmmd
