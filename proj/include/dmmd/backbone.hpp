#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dmmd/autodiff.hpp"
#include "dmmd/random.hpp"

namespace dmmd {

struct BackboneConfig {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t embedding_dim = 32;
  std::size_t num_classes = 2;
  std::uint64_t seed = 7;

  void validate() const {
    detail::require(input_dim > 0 && embedding_dim > 0 && num_classes > 0,
                    "backbone: dimensions must be positive");
  }
};

class Backbone;

// Backbone parameters registered as leaves on one tape, plus the forward
// graph builders. Valid only while both the tape and backbone are alive.
struct BoundBackbone {
  const Backbone* model = nullptr;
  std::vector<Value> params;

  Value embed(Tape& tape, const Tensor& inputs) const;
  Value classify(Tape& tape, Value embeddings) const;
};

// MLP embedding network with ReLU after every layer, plus a linear
// classification head. The embedding is the last ReLU output, so feature
// coordinates are nonnegative, matching a pooled-CNN-style representation.
class Backbone {
 public:
  explicit Backbone(BackboneConfig config) : config_(std::move(config)) {
    config_.validate();
    Rng rng(config_.seed);
    auto dims = layer_dims();
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      add_parameter("layer" + std::to_string(l) + ".weight",
                    he_uniform(rng, dims[l], dims[l + 1]));
      add_parameter("layer" + std::to_string(l) + ".bias",
                    Tensor({dims[l + 1]}));
    }
    add_parameter("head.weight",
                  he_uniform(rng, config_.embedding_dim, config_.num_classes));
    add_parameter("head.bias", Tensor({config_.num_classes}));
  }

  const BackboneConfig& config() const { return config_; }
  std::size_t embedding_dim() const { return config_.embedding_dim; }
  std::size_t num_classes() const { return config_.num_classes; }

  std::size_t parameter_count() const { return params_.size(); }
  Tensor& parameter(std::size_t i) { return params_[i]; }
  const Tensor& parameter(std::size_t i) const { return params_[i]; }
  const std::string& parameter_name(std::size_t i) const { return names_[i]; }

  BoundBackbone bind(Tape& tape) const {
    BoundBackbone bound;
    bound.model = this;
    bound.params.reserve(params_.size());
    for (const Tensor& p : params_) bound.params.push_back(tape.leaf(p));
    return bound;
  }

  // Forward without a tape, for inference over snapshots.
  Tensor embed_values(const Tensor& inputs) const {
    detail::require(inputs.rank() == 2 && inputs.cols() == config_.input_dim,
                    "embed: input width " +
                        std::to_string(inputs.rank() == 2 ? inputs.cols() : 0) +
                        " does not match first layer width " +
                        std::to_string(config_.input_dim));
    Tensor h = inputs;
    std::size_t layers = hidden_layer_count();
    for (std::size_t l = 0; l < layers; ++l) {
      const Tensor& w = params_[2 * l];
      const Tensor& b = params_[2 * l + 1];
      Tensor next({h.rows(), w.cols()});
      for (std::size_t i = 0; i < h.rows(); ++i)
        for (std::size_t k = 0; k < w.rows(); ++k) {
          double hv = h(i, k);
          if (hv == 0.0) continue;
          for (std::size_t j = 0; j < w.cols(); ++j)
            next(i, j) += hv * w(k, j);
        }
      for (std::size_t i = 0; i < next.rows(); ++i)
        for (std::size_t j = 0; j < next.cols(); ++j) {
          double v = next(i, j) + b[j];
          next(i, j) = v > 0.0 ? v : 0.0;
        }
      h = std::move(next);
    }
    return h;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    detail::check(out.good(), "cannot write checkpoint: " + path);
    out << "dmmd-checkpoint v1\n";
    out << "input_dim " << config_.input_dim << "\n";
    out << "hidden";
    for (std::size_t h : config_.hidden) out << " " << h;
    out << "\n";
    out << "embedding_dim " << config_.embedding_dim << "\n";
    out << "num_classes " << config_.num_classes << "\n";
    out << "seed " << config_.seed << "\n";
    out << "params " << params_.size() << "\n";
    char buf[48];
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Tensor& p = params_[i];
      out << "param " << names_[i] << " " << p.rank();
      for (std::size_t d : p.shape()) out << " " << d;
      out << "\n";
      for (std::size_t j = 0; j < p.size(); ++j) {
        // hexfloat round-trips bit-exactly
        std::snprintf(buf, sizeof(buf), "%a", p[j]);
        out << (j ? " " : "") << buf;
      }
      out << "\n";
    }
    out << "end\n";
    detail::check(out.good(), "checkpoint write failed: " + path);
  }

  static Backbone load(const std::string& path) {
    std::ifstream in(path);
    detail::check(in.good(), "cannot read checkpoint: " + path);
    std::string line;
    std::getline(in, line);
    detail::check(line == "dmmd-checkpoint v1",
                  "unsupported checkpoint header in " + path + ": '" + line + "'");
    BackboneConfig cfg;
    cfg.hidden.clear();
    std::size_t param_count = 0;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string key;
      ls >> key;
      if (key == "input_dim") ls >> cfg.input_dim;
      else if (key == "hidden") {
        std::size_t h;
        while (ls >> h) cfg.hidden.push_back(h);
      } else if (key == "embedding_dim") ls >> cfg.embedding_dim;
      else if (key == "num_classes") ls >> cfg.num_classes;
      else if (key == "seed") ls >> cfg.seed;
      else if (key == "params") {
        ls >> param_count;
        break;
      } else
        detail::check(false, "unexpected checkpoint line: '" + line + "'");
    }
    Backbone model(cfg);
    detail::check(param_count == model.params_.size(),
                  "checkpoint parameter count does not match architecture");
    for (std::size_t i = 0; i < param_count; ++i) {
      std::getline(in, line);
      std::istringstream hs(line);
      std::string tag, name;
      std::size_t rank;
      hs >> tag >> name >> rank;
      detail::check(tag == "param" && name == model.names_[i],
                    "checkpoint parameter order mismatch at '" + line + "'");
      std::vector<std::size_t> shape(rank);
      for (std::size_t d = 0; d < rank; ++d) hs >> shape[d];
      detail::check(shape == model.params_[i].shape(),
                    "checkpoint shape mismatch for " + name);
      detail::check(static_cast<bool>(std::getline(in, line)),
                    "truncated checkpoint: " + path);
      const char* p = line.c_str();
      char* endp = nullptr;
      for (std::size_t j = 0; j < model.params_[i].size(); ++j) {
        double v = std::strtod(p, &endp);
        detail::check(endp != p, "malformed checkpoint values for " + name);
        model.params_[i][j] = v;
        p = endp;
      }
    }
    std::getline(in, line);
    detail::check(line == "end", "truncated checkpoint: " + path);
    return model;
  }

  bool operator==(const Backbone& other) const {
    return params_ == other.params_;
  }

 private:
  friend struct BoundBackbone;

  std::vector<std::size_t> layer_dims() const {
    std::vector<std::size_t> dims{config_.input_dim};
    dims.insert(dims.end(), config_.hidden.begin(), config_.hidden.end());
    dims.push_back(config_.embedding_dim);
    return dims;
  }

  std::size_t hidden_layer_count() const { return config_.hidden.size() + 1; }

  void add_parameter(std::string name, Tensor t) {
    names_.push_back(std::move(name));
    params_.push_back(std::move(t));
  }

  static Tensor he_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor w({fan_in, fan_out});
    for (double& v : w.data()) v = rng.uniform(-limit, limit);
    return w;
  }

  BackboneConfig config_;
  std::vector<std::string> names_;
  std::vector<Tensor> params_;
};

inline Value BoundBackbone::embed(Tape& tape, const Tensor& inputs) const {
  detail::require(inputs.rank() == 2 &&
                      inputs.cols() == model->config().input_dim,
                  "embed: input width does not match first layer width");
  Value h = tape.leaf(inputs);
  std::size_t layers = model->hidden_layer_count();
  for (std::size_t l = 0; l < layers; ++l) {
    h = tape.relu(tape.add_row_vector(tape.matmul(h, params[2 * l]),
                                      params[2 * l + 1]));
  }
  return h;
}

inline Value BoundBackbone::classify(Tape& tape, Value embeddings) const {
  detail::require(tape.value(embeddings).rank() == 2 &&
                      tape.value(embeddings).cols() == model->embedding_dim(),
                  "classify: embedding width does not match head");
  std::size_t n = params.size();
  return tape.add_row_vector(tape.matmul(embeddings, params[n - 2]),
                             params[n - 1]);
}

}  // namespace dmmd
