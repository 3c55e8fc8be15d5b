#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dmmd/data.hpp"
#include "dmmd/eval.hpp"
#include "dmmd/trainer.hpp"

namespace dmmd {

// Whole-experiment configuration, serialized as a sectioned key-value file.
// Every key is written explicitly, so a parsed config re-serializes
// byte-identically and nothing falls back to a hidden default.
struct ExperimentConfig {
  GenerationConfig data;
  TrainConfig train;
  EvalConfig eval;

  std::string serialize() const {
    std::ostringstream out;
    auto d = [&](double v) { return detail::format_double(v); };
    auto b = [&](bool v) { return v ? "true" : "false"; };
    out << "[data]\n";
    out << "seed = " << data.seed << "\n";
    out << "num_identities = " << data.num_identities << "\n";
    out << "num_cameras = " << data.num_cameras << "\n";
    out << "frames_per_tracklet = " << data.frames_per_tracklet << "\n";
    out << "feature_dim = " << data.feature_dim << "\n";
    out << "identity_spread = " << d(data.identity_spread) << "\n";
    out << "camera_spread = " << d(data.camera_spread) << "\n";
    out << "tracklet_spread = " << d(data.tracklet_spread) << "\n";
    out << "noise_scale = " << d(data.noise_scale) << "\n";
    out << "shift_severity = " << d(data.shift_severity) << "\n";
    out << "translation_scale = " << d(data.translation_scale) << "\n";
    out << "eval_gallery_frames = " << data.eval_gallery_frames << "\n";
    out << "eval_query_frames = " << data.eval_query_frames << "\n";
    out << "[sampler]\n";
    out << "batch_size = " << train.sampler.batch_size << "\n";
    out << "occurrences = " << train.sampler.occurrences << "\n";
    out << "seed = " << train.sampler.seed << "\n";
    out << "[loss]\n";
    out << "epsilon = " << d(train.supervised.epsilon) << "\n";
    out << "margin = " << d(train.supervised.margin) << "\n";
    out << "lambda = " << d(train.supervised.lambda) << "\n";
    out << "[kernel]\n";
    out << "median_heuristic = " << b(train.kernel.median_heuristic) << "\n";
    out << "bandwidths =";
    for (std::size_t i = 0; i < train.kernel.bandwidths.size(); ++i)
      out << (i ? "," : " ") << d(train.kernel.bandwidths[i]);
    out << "\n";
    out << "[dmmd]\n";
    out << "wc = " << b(train.toggles.wc) << "\n";
    out << "bc = " << b(train.toggles.bc) << "\n";
    out << "feature = " << b(train.toggles.feature) << "\n";
    out << "[optimizer]\n";
    out << "base_lr = " << d(train.adam.base_lr) << "\n";
    out << "beta1 = " << d(train.adam.beta1) << "\n";
    out << "beta2 = " << d(train.adam.beta2) << "\n";
    out << "eps = " << d(train.adam.eps) << "\n";
    out << "schedule_period = " << train.adam.schedule_period << "\n";
    out << "schedule_factor = " << d(train.adam.schedule_factor) << "\n";
    out << "[trainer]\n";
    out << "epochs_supervised = " << train.epochs_supervised << "\n";
    out << "epochs_uda = " << train.epochs_uda << "\n";
    out << "eval_every = " << train.eval_every << "\n";
    out << "reset_optimizer = " << b(train.reset_optimizer_between_phases) << "\n";
    out << "[eval]\n";
    out << "same_camera_filter = " << b(eval.same_camera_filter) << "\n";
    return out.str();
  }

  static ExperimentConfig parse(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string trimmed = trim(line);
      if (trimmed.empty() || trimmed[0] == '#') continue;
      if (trimmed.front() == '[' && trimmed.back() == ']') {
        section = trimmed.substr(1, trimmed.size() - 2);
        continue;
      }
      auto eq = trimmed.find('=');
      detail::check(eq != std::string::npos,
                    "config line " + std::to_string(line_no) +
                        ": expected 'key = value', got '" + trimmed + "'");
      std::string key = trim(trimmed.substr(0, eq));
      std::string value = trim(trimmed.substr(eq + 1));
      cfg.set(section, key, value, line_no);
    }
    return cfg;
  }

  static ExperimentConfig load(const std::string& path) {
    std::ifstream in(path);
    detail::check(in.good(), "cannot read config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    detail::check(out.good(), "cannot write config: " + path);
    out << serialize();
    detail::check(out.good(), "config write failed: " + path);
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  static bool parse_bool(const std::string& v, std::size_t line_no) {
    if (v == "true") return true;
    if (v == "false") return false;
    detail::check(false, "config line " + std::to_string(line_no) +
                             ": expected true/false, got '" + v + "'");
    return false;
  }

  void set(const std::string& section, const std::string& key,
           const std::string& value, std::size_t line_no) {
    auto fail = [&]() {
      detail::check(false, "config line " + std::to_string(line_no) +
                               ": unknown key '" + key + "' in section [" +
                               section + "]");
    };
    try {
      if (section == "data") {
        if (key == "seed") data.seed = std::stoull(value);
        else if (key == "num_identities") data.num_identities = std::stoull(value);
        else if (key == "num_cameras") data.num_cameras = std::stoull(value);
        else if (key == "frames_per_tracklet")
          data.frames_per_tracklet = std::stoull(value);
        else if (key == "feature_dim") data.feature_dim = std::stoull(value);
        else if (key == "identity_spread") data.identity_spread = std::stod(value);
        else if (key == "camera_spread") data.camera_spread = std::stod(value);
        else if (key == "tracklet_spread") data.tracklet_spread = std::stod(value);
        else if (key == "noise_scale") data.noise_scale = std::stod(value);
        else if (key == "shift_severity") data.shift_severity = std::stod(value);
        else if (key == "translation_scale")
          data.translation_scale = std::stod(value);
        else if (key == "eval_gallery_frames")
          data.eval_gallery_frames = std::stoull(value);
        else if (key == "eval_query_frames")
          data.eval_query_frames = std::stoull(value);
        else fail();
      } else if (section == "sampler") {
        if (key == "batch_size") train.sampler.batch_size = std::stoull(value);
        else if (key == "occurrences") train.sampler.occurrences = std::stoull(value);
        else if (key == "seed") train.sampler.seed = std::stoull(value);
        else fail();
      } else if (section == "loss") {
        if (key == "epsilon") train.supervised.epsilon = std::stod(value);
        else if (key == "margin") train.supervised.margin = std::stod(value);
        else if (key == "lambda") train.supervised.lambda = std::stod(value);
        else fail();
      } else if (section == "kernel") {
        if (key == "median_heuristic")
          train.kernel.median_heuristic = parse_bool(value, line_no);
        else if (key == "bandwidths") {
          train.kernel.bandwidths.clear();
          std::istringstream vs(value);
          std::string item;
          while (std::getline(vs, item, ','))
            if (!trim(item).empty())
              train.kernel.bandwidths.push_back(std::stod(trim(item)));
        } else fail();
      } else if (section == "dmmd") {
        if (key == "wc") train.toggles.wc = parse_bool(value, line_no);
        else if (key == "bc") train.toggles.bc = parse_bool(value, line_no);
        else if (key == "feature") train.toggles.feature = parse_bool(value, line_no);
        else fail();
      } else if (section == "optimizer") {
        if (key == "base_lr") train.adam.base_lr = std::stod(value);
        else if (key == "beta1") train.adam.beta1 = std::stod(value);
        else if (key == "beta2") train.adam.beta2 = std::stod(value);
        else if (key == "eps") train.adam.eps = std::stod(value);
        else if (key == "schedule_period")
          train.adam.schedule_period = std::stoi(value);
        else if (key == "schedule_factor")
          train.adam.schedule_factor = std::stod(value);
        else fail();
      } else if (section == "trainer") {
        if (key == "epochs_supervised") train.epochs_supervised = std::stoi(value);
        else if (key == "epochs_uda") train.epochs_uda = std::stoi(value);
        else if (key == "eval_every") train.eval_every = std::stoi(value);
        else if (key == "reset_optimizer")
          train.reset_optimizer_between_phases = parse_bool(value, line_no);
        else fail();
      } else if (section == "eval") {
        if (key == "same_camera_filter")
          eval.same_camera_filter = parse_bool(value, line_no);
        else fail();
      } else {
        detail::check(false, "config line " + std::to_string(line_no) +
                                 ": unknown section [" + section + "]");
      }
    } catch (const std::invalid_argument&) {
      detail::check(false, "config line " + std::to_string(line_no) +
                               ": malformed value '" + value + "' for key '" +
                               key + "'");
    }
  }
};

}  // namespace dmmd
