#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "dmmd/backbone.hpp"
#include "dmmd/data.hpp"
#include "dmmd/dissimilarity.hpp"

namespace dmmd {

struct EvalConfig {
  // Exclude gallery items sharing both identity and camera with the query,
  // the standard re-identification protocol.
  bool same_camera_filter = true;
};

struct EvalReport {
  double rank1 = 0.0;
  double rank5 = 0.0;
  double rank10 = 0.0;
  double map = 0.0;
  std::vector<double> per_query_ap;
  double wc_bc_overlap = std::numeric_limits<double>::quiet_NaN();

  void save(const std::string& path) const {
    std::ofstream out(path);
    detail::check(out.good(), "cannot write report: " + path);
    out << "rank1 " << detail::format_double(rank1) << "\n";
    out << "rank5 " << detail::format_double(rank5) << "\n";
    out << "rank10 " << detail::format_double(rank10) << "\n";
    out << "map " << detail::format_double(map) << "\n";
    out << "wc_bc_overlap " << detail::format_double(wc_bc_overlap) << "\n";
    detail::check(out.good(), "report write failed: " + path);
  }
};

// Histogram intersection of two distance distributions over a shared 50-bin
// grid on [0, max]: sum of min(p_wc, p_bc) with normalized bin masses.
inline double overlap_coefficient(std::span<const double> wc,
                                  std::span<const double> bc,
                                  std::size_t bins = 50) {
  detail::require(!wc.empty() && !bc.empty(),
                  "overlap_coefficient: empty distribution");
  double top = 0.0;
  for (double v : wc) top = std::max(top, v);
  for (double v : bc) top = std::max(top, v);
  double width = top > 0.0 ? top / static_cast<double>(bins) : 1.0;
  std::vector<double> pw(bins, 0.0), pb(bins, 0.0);
  auto bin_of = [&](double v) {
    auto b = static_cast<std::size_t>(v / width);
    return b >= bins ? bins - 1 : b;
  };
  for (double v : wc) pw[bin_of(v)] += 1.0 / static_cast<double>(wc.size());
  for (double v : bc) pb[bin_of(v)] += 1.0 / static_cast<double>(bc.size());
  double overlap = 0.0;
  for (std::size_t b = 0; b < bins; ++b) overlap += std::min(pw[b], pb[b]);
  return overlap;
}

// CMC rank-k and mAP over embedded query/gallery sets. Gallery lists are
// ranked by ascending Euclidean distance; ties keep gallery index order.
inline EvalReport evaluate_embeddings(
    const Tensor& query_emb, std::span<const int> query_ids,
    std::span<const int> query_cams, const Tensor& gallery_emb,
    std::span<const int> gallery_ids, std::span<const int> gallery_cams,
    const EvalConfig& config = {}) {
  detail::require(query_emb.rank() == 2 && gallery_emb.rank() == 2 &&
                      query_emb.cols() == gallery_emb.cols(),
                  "evaluate: embedding widths differ");
  detail::require(gallery_emb.rows() >= 1, "evaluate: empty gallery");
  detail::require(query_ids.size() == query_emb.rows() &&
                      query_cams.size() == query_emb.rows(),
                  "evaluate: query metadata size mismatch");
  detail::require(gallery_ids.size() == gallery_emb.rows() &&
                      gallery_cams.size() == gallery_emb.rows(),
                  "evaluate: gallery metadata size mismatch");

  std::size_t n_query = query_emb.rows();
  std::size_t n_gallery = gallery_emb.rows();
  std::size_t f = query_emb.cols();

  EvalReport report;
  report.per_query_ap.reserve(n_query);
  std::size_t hit1 = 0, hit5 = 0, hit10 = 0;

  std::vector<std::size_t> candidates;
  std::vector<double> dist;
  for (std::size_t q = 0; q < n_query; ++q) {
    candidates.clear();
    dist.clear();
    for (std::size_t g = 0; g < n_gallery; ++g) {
      if (config.same_camera_filter && gallery_ids[g] == query_ids[q] &&
          gallery_cams[g] == query_cams[q])
        continue;
      double s = 0.0;
      for (std::size_t c = 0; c < f; ++c) {
        double diff = query_emb(q, c) - gallery_emb(g, c);
        s += diff * diff;
      }
      candidates.push_back(g);
      dist.push_back(s);
    }
    std::size_t relevant = 0;
    for (std::size_t g : candidates)
      if (gallery_ids[g] == query_ids[q]) ++relevant;
    detail::require(relevant > 0,
                    "evaluate: query identity " +
                        std::to_string(query_ids[q]) +
                        " has no gallery match");

    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                       return dist[a] < dist[b];
                     });

    double ap = 0.0;
    std::size_t seen_matches = 0;
    std::size_t first_hit = order.size();
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      if (gallery_ids[candidates[order[rank]]] == query_ids[q]) {
        ++seen_matches;
        ap += static_cast<double>(seen_matches) /
              static_cast<double>(rank + 1);
        if (first_hit == order.size()) first_hit = rank;
      }
    }
    ap /= static_cast<double>(relevant);
    report.per_query_ap.push_back(ap);
    if (first_hit < 1) ++hit1;
    if (first_hit < 5) ++hit5;
    if (first_hit < 10) ++hit10;
  }

  double nq = static_cast<double>(n_query);
  report.rank1 = static_cast<double>(hit1) / nq;
  report.rank5 = static_cast<double>(hit5) / nq;
  report.rank10 = static_cast<double>(hit10) / nq;
  report.map = std::accumulate(report.per_query_ap.begin(),
                               report.per_query_ap.end(), 0.0) / nq;
  return report;
}

inline EvalReport evaluate(const Backbone& model,
                           std::span<const Sample> query,
                           std::span<const Sample> gallery,
                           const EvalConfig& config = {}) {
  detail::require(!query.empty(), "evaluate: empty query set");
  detail::require(!gallery.empty(), "evaluate: empty gallery set");
  Tensor query_emb = model.embed_values(features_tensor(query));
  Tensor gallery_emb = model.embed_values(features_tensor(gallery));
  auto q_ids = identities_of(query), q_cams = cameras_of(query);
  auto g_ids = identities_of(gallery), g_cams = cameras_of(gallery);
  EvalReport report = evaluate_embeddings(query_emb, q_ids, q_cams,
                                          gallery_emb, g_ids, g_cams, config);

  // Diagnostic: within/between-class distance overlap over the whole
  // evaluation pool.
  std::vector<Sample> pool(query.begin(), query.end());
  pool.insert(pool.end(), gallery.begin(), gallery.end());
  Tensor pool_emb = model.embed_values(features_tensor(pool));
  auto ids = identities_of(pool);
  auto wc = pair_distance_values(pool_emb, ids, PairKind::within_class);
  auto bc = pair_distance_values(pool_emb, ids, PairKind::between_class);
  if (!wc.empty() && !bc.empty())
    report.wc_bc_overlap = overlap_coefficient(wc, bc);
  return report;
}

}  // namespace dmmd
