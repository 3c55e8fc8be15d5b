#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "dmmd/common.hpp"
#include "dmmd/random.hpp"
#include "dmmd/tensor.hpp"

namespace dmmd {

struct Sample {
  std::vector<double> features;
  int identity = 0;
  int tracklet = 0;
  Domain domain = Domain::source;
  int camera = 0;

  bool operator==(const Sample&) const = default;
};

struct GenerationConfig {
  std::uint64_t seed = 42;
  std::size_t num_identities = 50;  // per domain; source/target ids disjoint
  std::size_t num_cameras = 2;
  std::size_t frames_per_tracklet = 8;
  std::size_t feature_dim = 16;
  double identity_spread = 1.2;
  double camera_spread = 0.15;
  double tracklet_spread = 0.15;
  double noise_scale = 0.6;
  double shift_severity = 1.0;     // 0 = no domain shift
  double translation_scale = 2.5;
  std::size_t eval_gallery_frames = 2;
  std::size_t eval_query_frames = 2;

  bool operator==(const GenerationConfig&) const = default;

  void validate() const {
    detail::require(num_identities >= 4, "generate: at least 4 identities");
    detail::require(num_cameras >= 1, "generate: at least 1 camera");
    detail::require(frames_per_tracklet >= 2,
                    "generate: at least 2 frames per tracklet");
    detail::require(feature_dim >= 2, "generate: feature_dim >= 2");
    detail::require(shift_severity >= 0.0, "generate: severity must be >= 0");
  }
};

struct DatasetBundle {
  std::vector<Sample> train;
  std::vector<Sample> gallery;
  std::vector<Sample> query;
  GenerationConfig config;

  bool operator==(const DatasetBundle&) const = default;
};

struct SyntheticDataset {
  DatasetBundle source;
  DatasetBundle target;
};

namespace detail {

// Fixed affine domain-shift transform: plane rotations, anisotropic scale
// and a translation, all fading to the identity as severity goes to 0.
struct DomainShift {
  std::vector<std::pair<std::size_t, std::size_t>> planes;
  std::vector<double> angles;
  std::vector<double> axis_scale;
  std::vector<double> translation;

  static DomainShift draw(Rng& rng, std::size_t dim, double severity) {
    DomainShift t;
    std::vector<std::size_t> axes(dim);
    for (std::size_t i = 0; i < dim; ++i) axes[i] = i;
    rng.shuffle(axes);
    for (std::size_t i = 0; i + 1 < dim; i += 2) {
      t.planes.emplace_back(axes[i], axes[i + 1]);
      t.angles.push_back(severity * rng.uniform(0.15, 0.45) * std::numbers::pi *
                         (rng.uniform() < 0.5 ? -1.0 : 1.0));
    }
    for (std::size_t c = 0; c < dim; ++c) {
      t.axis_scale.push_back(1.0 + severity * rng.uniform(-0.35, 0.35));
      t.translation.push_back(severity * rng.normal());
    }
    return t;
  }

  void apply(std::vector<double>& x, double translation_scale) const {
    for (std::size_t c = 0; c < x.size(); ++c) x[c] *= axis_scale[c];
    for (std::size_t p = 0; p < planes.size(); ++p) {
      auto [i, j] = planes[p];
      double ci = std::cos(angles[p]), si = std::sin(angles[p]);
      double xi = x[i], xj = x[j];
      x[i] = ci * xi - si * xj;
      x[j] = si * xi + ci * xj;
    }
    for (std::size_t c = 0; c < x.size(); ++c)
      x[c] += translation_scale * translation[c];
  }
};

}  // namespace detail

// Synthetic open-set re-identification data: each identity is a Gaussian
// cluster in feature space, frames are drawn per tracklet (one tracklet per
// identity-camera episode), and the whole target domain passes through a
// fixed affine shift. Deterministic under the seed.
inline SyntheticDataset generate_synthetic(const GenerationConfig& config) {
  config.validate();
  Rng base(config.seed);
  Rng shift_rng = base.fork(1);
  detail::DomainShift shift = detail::DomainShift::draw(
      shift_rng, config.feature_dim, config.shift_severity);

  SyntheticDataset out;
  int next_tracklet = 0;

  // Camera biases are shared between the domains: at severity 0 the domains
  // differ only in which identities were sampled.
  Rng camera_rng = base.fork(4);
  std::vector<std::vector<double>> camera_bias(config.num_cameras);
  for (auto& bias : camera_bias) {
    bias.resize(config.feature_dim);
    for (double& v : bias) v = config.camera_spread * camera_rng.normal();
  }

  for (Domain domain : {Domain::source, Domain::target}) {
    Rng rng = base.fork(domain == Domain::source ? 2 : 3);
    DatasetBundle& bundle = domain == Domain::source ? out.source : out.target;
    bundle.config = config;
    int id_base = domain == Domain::source
                      ? 0
                      : static_cast<int>(config.num_identities);

    for (std::size_t id = 0; id < config.num_identities; ++id) {
      std::vector<double> center(config.feature_dim);
      for (double& v : center) v = config.identity_spread * rng.normal();

      for (std::size_t cam = 0; cam < config.num_cameras; ++cam) {
        auto emit_tracklet = [&](std::size_t frames,
                                 std::vector<Sample>* first_split,
                                 std::size_t first_count,
                                 std::vector<Sample>* rest_split) {
          int tracklet_id = next_tracklet++;
          std::vector<double> offset(config.feature_dim);
          for (double& v : offset) v = config.tracklet_spread * rng.normal();
          for (std::size_t f = 0; f < frames; ++f) {
            Sample s;
            s.identity = id_base + static_cast<int>(id);
            s.tracklet = tracklet_id;
            s.domain = domain;
            s.camera = static_cast<int>(cam);
            s.features.resize(config.feature_dim);
            for (std::size_t c = 0; c < config.feature_dim; ++c)
              s.features[c] = center[c] + camera_bias[cam][c] + offset[c] +
                              config.noise_scale * rng.normal();
            if (domain == Domain::target)
              shift.apply(s.features, config.translation_scale);
            (f < first_count ? first_split : rest_split)->push_back(std::move(s));
          }
        };

        emit_tracklet(config.frames_per_tracklet, &bundle.train,
                      config.frames_per_tracklet, &bundle.train);
        std::size_t eval_frames =
            config.eval_gallery_frames + config.eval_query_frames;
        if (eval_frames > 0)
          emit_tracklet(eval_frames, &bundle.gallery,
                        config.eval_gallery_frames, &bundle.query);
      }
    }
  }
  return out;
}

enum class GroupKey { identity, tracklet };

struct SamplerConfig {
  std::size_t batch_size = 32;
  std::size_t occurrences = 4;  // samples per group in a batch
  std::uint64_t seed = 1;

  void validate() const {
    detail::require(occurrences >= 2, "sampler: occurrences must be >= 2");
    detail::require(batch_size % occurrences == 0,
                    "sampler: occurrences must divide batch size");
    detail::require(batch_size / occurrences >= 2,
                    "sampler: at least two groups per batch required");
  }
};

struct Batch {
  Tensor features;                  // batch_size x feature_dim
  std::vector<int> groups;          // sampling group id per row
  std::vector<int> identities;      // true identity per row
  std::vector<std::size_t> rows;    // source row index in the partition
};

// P x K batch sampler: each batch holds batch_size/occurrences distinct
// groups with occurrences samples each, drawn without replacement under an
// epoch-level shuffle. When grouping by tracklet, two tracklets of the same
// identity never share a batch.
class PkSampler {
 public:
  PkSampler(std::span<const Sample> partition, SamplerConfig config,
            GroupKey key)
      : partition_(partition), config_(config), key_(key), rng_(config.seed) {
    config_.validate();
    std::map<int, std::vector<std::size_t>> by_group;
    for (std::size_t i = 0; i < partition.size(); ++i) {
      const Sample& s = partition[i];
      by_group[key == GroupKey::identity ? s.identity : s.tracklet].push_back(i);
    }
    for (auto& [gid, members] : by_group)
      if (members.size() >= config_.occurrences)
        groups_.push_back({gid, std::move(members)});
    detail::require(groups_.size() >= config_.batch_size / config_.occurrences,
                    "sampler: insufficient groups with " +
                        std::to_string(config_.occurrences) + " members: have " +
                        std::to_string(groups_.size()) + ", need " +
                        std::to_string(config_.batch_size / config_.occurrences));
  }

  std::size_t batches_per_epoch() const {
    return groups_.size() / (config_.batch_size / config_.occurrences);
  }

  std::vector<Batch> epoch() {
    std::size_t per_batch = config_.batch_size / config_.occurrences;
    std::vector<std::size_t> order(groups_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng_.shuffle(order);

    std::vector<Batch> batches;
    std::vector<bool> used(order.size(), false);
    std::size_t cursor = 0;
    while (true) {
      std::vector<std::size_t> chosen;
      std::unordered_set<int> batch_identities;
      for (std::size_t k = cursor; k < order.size() && chosen.size() < per_batch;
           ++k) {
        if (used[k]) continue;
        const Group& g = groups_[order[k]];
        int gid_identity = partition_[g.members.front()].identity;
        if (key_ == GroupKey::tracklet &&
            batch_identities.count(gid_identity))
          continue;
        chosen.push_back(k);
        batch_identities.insert(gid_identity);
      }
      if (chosen.size() < per_batch) break;
      for (std::size_t k : chosen) used[k] = true;
      while (cursor < order.size() && used[cursor]) ++cursor;
      batches.push_back(assemble(chosen, order));
    }
    return batches;
  }

 private:
  struct Group {
    int id;
    std::vector<std::size_t> members;
  };

  Batch assemble(const std::vector<std::size_t>& chosen,
                 const std::vector<std::size_t>& order) {
    Batch b;
    std::size_t dim = partition_[0].features.size();
    b.features = Tensor({config_.batch_size, dim});
    std::size_t row = 0;
    for (std::size_t k : chosen) {
      const Group& g = groups_[order[k]];
      std::vector<std::size_t> members = g.members;
      rng_.shuffle(members);
      for (std::size_t m = 0; m < config_.occurrences; ++m, ++row) {
        const Sample& s = partition_[members[m]];
        for (std::size_t c = 0; c < dim; ++c) b.features(row, c) = s.features[c];
        b.groups.push_back(g.id);
        b.identities.push_back(s.identity);
        b.rows.push_back(members[m]);
      }
    }
    return b;
  }

  std::span<const Sample> partition_;
  SamplerConfig config_;
  GroupKey key_;
  Rng rng_;
  std::vector<Group> groups_;
};

namespace detail {

inline void write_config_comments(std::ofstream& out,
                                  const GenerationConfig& c) {
  out << "# dmmd-dataset v1\n";
  out << "# seed " << c.seed << "\n";
  out << "# num_identities " << c.num_identities << "\n";
  out << "# num_cameras " << c.num_cameras << "\n";
  out << "# frames_per_tracklet " << c.frames_per_tracklet << "\n";
  out << "# feature_dim " << c.feature_dim << "\n";
  out << "# identity_spread " << format_double(c.identity_spread) << "\n";
  out << "# camera_spread " << format_double(c.camera_spread) << "\n";
  out << "# tracklet_spread " << format_double(c.tracklet_spread) << "\n";
  out << "# noise_scale " << format_double(c.noise_scale) << "\n";
  out << "# shift_severity " << format_double(c.shift_severity) << "\n";
  out << "# translation_scale " << format_double(c.translation_scale) << "\n";
  out << "# eval_gallery_frames " << c.eval_gallery_frames << "\n";
  out << "# eval_query_frames " << c.eval_query_frames << "\n";
}

inline void parse_config_comment(const std::string& line, GenerationConfig& c) {
  std::istringstream ls(line);
  std::string hash, key;
  ls >> hash >> key;
  if (key == "dmmd-dataset") return;
  if (key == "seed") ls >> c.seed;
  else if (key == "num_identities") ls >> c.num_identities;
  else if (key == "num_cameras") ls >> c.num_cameras;
  else if (key == "frames_per_tracklet") ls >> c.frames_per_tracklet;
  else if (key == "feature_dim") ls >> c.feature_dim;
  else if (key == "identity_spread") ls >> c.identity_spread;
  else if (key == "camera_spread") ls >> c.camera_spread;
  else if (key == "tracklet_spread") ls >> c.tracklet_spread;
  else if (key == "noise_scale") ls >> c.noise_scale;
  else if (key == "shift_severity") ls >> c.shift_severity;
  else if (key == "translation_scale") ls >> c.translation_scale;
  else if (key == "eval_gallery_frames") ls >> c.eval_gallery_frames;
  else if (key == "eval_query_frames") ls >> c.eval_query_frames;
}

}  // namespace detail

// Tab-delimited text with a commented generation-config header, one sample
// per row. The split column tags the partition; everything round-trips
// exactly.
inline void save_dataset(const DatasetBundle& bundle, const std::string& path) {
  std::ofstream out(path);
  detail::check(out.good(), "cannot write dataset: " + path);
  detail::write_config_comments(out, bundle.config);
  out << "split\tid\ttracklet\tdomain\tcamera";
  for (std::size_t c = 0; c < bundle.config.feature_dim; ++c) out << "\tf" << c;
  out << "\n";
  auto write_rows = [&](const std::vector<Sample>& rows, const char* split) {
    for (const Sample& s : rows) {
      out << split << '\t' << s.identity << '\t' << s.tracklet << '\t'
          << to_string(s.domain) << '\t' << s.camera;
      for (double v : s.features) out << '\t' << detail::format_double(v);
      out << '\n';
    }
  };
  write_rows(bundle.train, "train");
  write_rows(bundle.gallery, "gallery");
  write_rows(bundle.query, "query");
  detail::check(out.good(), "dataset write failed: " + path);
}

inline DatasetBundle load_dataset(const std::string& path) {
  std::ifstream in(path);
  detail::check(in.good(), "cannot read dataset: " + path);
  DatasetBundle bundle;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t columns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      detail::parse_config_comment(line, bundle.config);
      continue;
    }
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    if (!header_seen) {
      detail::check(fields.size() >= 6 && fields[0] == "split",
                    path + ":" + std::to_string(line_no) +
                        ": malformed dataset header");
      columns = fields.size();
      detail::check(columns == 5 + bundle.config.feature_dim,
                    path + ":" + std::to_string(line_no) +
                        ": header width does not match feature_dim");
      header_seen = true;
      continue;
    }
    detail::check(fields.size() == columns,
                  path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(columns) + " fields, got " +
                      std::to_string(fields.size()));
    Sample s;
    try {
      s.identity = std::stoi(fields[1]);
      s.tracklet = std::stoi(fields[2]);
      s.domain = domain_from_string(fields[3]);
      s.camera = std::stoi(fields[4]);
      for (std::size_t c = 5; c < columns; ++c)
        s.features.push_back(std::stod(fields[c]));
    } catch (const std::exception& e) {
      detail::check(false, path + ":" + std::to_string(line_no) +
                               ": malformed row (" + e.what() + ")");
    }
    if (fields[0] == "train") bundle.train.push_back(std::move(s));
    else if (fields[0] == "gallery") bundle.gallery.push_back(std::move(s));
    else if (fields[0] == "query") bundle.query.push_back(std::move(s));
    else
      detail::check(false, path + ":" + std::to_string(line_no) +
                               ": unknown split '" + fields[0] + "'");
  }
  detail::check(header_seen, path + ": missing dataset header");
  return bundle;
}

inline Tensor features_tensor(std::span<const Sample> samples) {
  detail::require(!samples.empty(), "features_tensor: empty sample list");
  std::size_t dim = samples[0].features.size();
  Tensor t({samples.size(), dim});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    detail::require(samples[i].features.size() == dim,
                    "features_tensor: inconsistent feature widths");
    for (std::size_t c = 0; c < dim; ++c) t(i, c) = samples[i].features[c];
  }
  return t;
}

inline std::vector<int> identities_of(std::span<const Sample> samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(s.identity);
  return out;
}

inline std::vector<int> tracklets_of(std::span<const Sample> samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(s.tracklet);
  return out;
}

inline std::vector<int> cameras_of(std::span<const Sample> samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(s.camera);
  return out;
}

// Contiguous class indices for the classifier head, in ascending identity
// order.
class ClassIndex {
 public:
  explicit ClassIndex(std::span<const Sample> samples) {
    std::map<int, int> ids;
    for (const Sample& s : samples) ids.emplace(s.identity, 0);
    int next = 0;
    for (auto& [id, idx] : ids) idx = next++;
    map_ = std::move(ids);
  }

  int operator()(int identity) const {
    auto it = map_.find(identity);
    detail::require(it != map_.end(),
                    "unknown identity " + std::to_string(identity));
    return it->second;
  }

  std::size_t size() const { return map_.size(); }

 private:
  std::map<int, int> map_;
};

}  // namespace dmmd
