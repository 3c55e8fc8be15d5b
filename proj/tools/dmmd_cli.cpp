#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include "dmmd/dmmd.hpp"

namespace fs = std::filesystem;

namespace {

enum class LogLevel { error = 0, info = 1, debug = 2 };

LogLevel log_level() {
  const char* env = std::getenv("DMMD_LOG_LEVEL");
  if (!env) return LogLevel::info;
  std::string v(env);
  if (v == "error") return LogLevel::error;
  if (v == "info") return LogLevel::info;
  if (v == "debug") return LogLevel::debug;
  std::fprintf(stderr, "warning: unknown DMMD_LOG_LEVEL '%s', using info\n",
               env);
  return LogLevel::info;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::fprintf(stderr, "%s\n", msg.c_str());
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug) std::fprintf(stderr, "%s\n", msg.c_str());
}

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

// One --seed drives every stream: dataset generation, the batch sampler and
// the backbone init, so outputs are bit-reproducible.
void apply_seed(dmmd::ExperimentConfig& cfg, std::optional<std::uint64_t> seed) {
  if (!seed) return;
  cfg.data.seed = *seed;
  cfg.train.sampler.seed = *seed + 1;
}

dmmd::ExperimentConfig load_config(const CommonOptions& opts) {
  dmmd::ExperimentConfig cfg;
  if (!opts.config_path.empty()) cfg = dmmd::ExperimentConfig::load(opts.config_path);
  apply_seed(cfg, opts.seed);
  return cfg;
}

void ensure_out_dir(const std::string& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  dmmd::detail::check(!ec, "cannot create output directory: " + dir);
}

std::uint64_t backbone_seed(const dmmd::ExperimentConfig& cfg) {
  return cfg.data.seed + 2;
}

dmmd::BackboneConfig backbone_config(const dmmd::ExperimentConfig& cfg,
                                     std::size_t num_classes) {
  dmmd::BackboneConfig b;
  b.input_dim = cfg.data.feature_dim;
  b.hidden = {64, 64};
  b.embedding_dim = 32;
  b.num_classes = num_classes;
  b.seed = backbone_seed(cfg);
  return b;
}

double raw_feature_mmd(const dmmd::DatasetBundle& a,
                       const dmmd::DatasetBundle& b) {
  dmmd::Tape tape;
  dmmd::Value fa = tape.leaf(dmmd::features_tensor(a.train));
  dmmd::Value fb = tape.leaf(dmmd::features_tensor(b.train));
  return tape.scalar_value(
      dmmd::mmd(tape, fa, fb, dmmd::KernelConfig::median()));
}

void print_bundle_row(const char* name, const dmmd::DatasetBundle& bundle) {
  std::set<int> ids;
  std::set<int> cams;
  for (const dmmd::Sample& s : bundle.train) {
    ids.insert(s.identity);
    cams.insert(s.camera);
  }
  std::printf("%-8s %6zu %9zu %8zu %9zu %7zu\n", name, ids.size(), cams.size(),
              bundle.train.size(), bundle.gallery.size(), bundle.query.size());
}

int cmd_generate(const CommonOptions& opts, std::optional<double> severity) {
  dmmd::ExperimentConfig cfg = load_config(opts);
  if (severity) cfg.data.shift_severity = *severity;
  ensure_out_dir(opts.out_dir);

  log_debug("generating synthetic dataset, seed " + std::to_string(cfg.data.seed));
  dmmd::SyntheticDataset data = dmmd::generate_synthetic(cfg.data);
  std::string source_path = opts.out_dir + "/source.tsv";
  std::string target_path = opts.out_dir + "/target.tsv";
  dmmd::save_dataset(data.source, source_path);
  dmmd::save_dataset(data.target, target_path);
  cfg.save(opts.out_dir + "/config.txt");

  std::printf("%-8s %6s %9s %8s %9s %7s\n", "domain", "ids", "cameras", "train",
              "gallery", "query");
  print_bundle_row("source", data.source);
  print_bundle_row("target", data.target);
  std::printf("raw_feature_mmd %s\n",
              dmmd::detail::format_double(raw_feature_mmd(data.source,
                                                          data.target)).c_str());
  log_info("wrote " + source_path + " and " + target_path);
  return 0;
}

dmmd::DatasetBundle load_bundle(const std::string& data_dir, const char* name) {
  std::string path = data_dir + "/" + name + ".tsv";
  dmmd::detail::check(fs::exists(path),
                      "dataset file not found: " + path +
                          " (run the generate command first)");
  return dmmd::load_dataset(path);
}

int cmd_train(const CommonOptions& opts, const std::string& data_dir,
              std::optional<int> epochs) {
  dmmd::ExperimentConfig cfg = load_config(opts);
  if (epochs) cfg.train.epochs_supervised = *epochs;
  ensure_out_dir(opts.out_dir);

  dmmd::DatasetBundle source = load_bundle(data_dir, "source");
  dmmd::ClassIndex classes(source.train);
  dmmd::Backbone model(backbone_config(cfg, classes.size()));

  log_info("phase 1: supervised training, " +
           std::to_string(cfg.train.epochs_supervised) + " epochs");
  dmmd::TrainLog log = dmmd::train_source(
      model, source, cfg.train,
      [](const dmmd::EpochRecord& r) {
        log_debug("epoch " + std::to_string(r.epoch) + " lces " +
                  dmmd::detail::format_double(r.lces) + " ltri " +
                  dmmd::detail::format_double(r.ltri));
      },
      &source);

  model.save(opts.out_dir + "/checkpoint.txt");
  log.save(opts.out_dir + "/train_log.tsv");
  cfg.save(opts.out_dir + "/config.txt");
  log_info("wrote " + opts.out_dir + "/checkpoint.txt");
  return 0;
}

int cmd_adapt(const CommonOptions& opts, const std::string& data_dir,
              const std::string& checkpoint, std::optional<int> epochs,
              std::optional<bool> wc, std::optional<bool> bc,
              std::optional<bool> feature) {
  dmmd::ExperimentConfig cfg = load_config(opts);
  if (epochs) cfg.train.epochs_uda = *epochs;
  if (wc) cfg.train.toggles.wc = *wc;
  if (bc) cfg.train.toggles.bc = *bc;
  if (feature) cfg.train.toggles.feature = *feature;
  ensure_out_dir(opts.out_dir);

  dmmd::detail::check(fs::exists(checkpoint),
                      "checkpoint not found: " + checkpoint +
                          " (run the train command first)");
  dmmd::DatasetBundle source = load_bundle(data_dir, "source");
  dmmd::DatasetBundle target = load_bundle(data_dir, "target");
  dmmd::Backbone model = dmmd::Backbone::load(checkpoint);

  log_info("phase 2: adaptation, " + std::to_string(cfg.train.epochs_uda) +
           " epochs");
  dmmd::TrainLog log = dmmd::adapt(
      model, source, target, cfg.train,
      [](const dmmd::EpochRecord& r) {
        log_debug("epoch " + std::to_string(r.epoch) + " dmmd " +
                  dmmd::detail::format_double(r.lmmd_wc + r.lmmd_bc +
                                              r.lmmd_feat));
      },
      &target);

  model.save(opts.out_dir + "/checkpoint.txt");
  log.save(opts.out_dir + "/adapt_log.tsv");
  cfg.save(opts.out_dir + "/config.txt");
  log_info("wrote " + opts.out_dir + "/checkpoint.txt");
  return 0;
}

int cmd_eval(const CommonOptions& opts, const std::string& data_dir,
             const std::string& checkpoint, const std::string& domain) {
  dmmd::ExperimentConfig cfg = load_config(opts);
  dmmd::detail::check(fs::exists(checkpoint),
                      "checkpoint not found: " + checkpoint +
                          " (run the train command first)");
  dmmd::DatasetBundle bundle = load_bundle(data_dir, domain.c_str());
  dmmd::Backbone model = dmmd::Backbone::load(checkpoint);

  dmmd::EvalReport report =
      dmmd::evaluate(model, bundle.query, bundle.gallery, cfg.eval);
  std::printf("rank1 %s\n", dmmd::detail::format_double(report.rank1).c_str());
  std::printf("rank5 %s\n", dmmd::detail::format_double(report.rank5).c_str());
  std::printf("rank10 %s\n", dmmd::detail::format_double(report.rank10).c_str());
  std::printf("map %s\n", dmmd::detail::format_double(report.map).c_str());
  std::printf("wc_bc_overlap %s\n",
              dmmd::detail::format_double(report.wc_bc_overlap).c_str());
  if (!opts.out_dir.empty()) {
    ensure_out_dir(opts.out_dir);
    report.save(opts.out_dir + "/eval_report.txt");
  }
  return 0;
}

int cmd_plot_distributions(const CommonOptions& opts,
                           const std::string& data_dir,
                           const std::string& checkpoint) {
  dmmd::detail::check(fs::exists(checkpoint),
                      "checkpoint not found: " + checkpoint);
  ensure_out_dir(opts.out_dir);
  dmmd::DatasetBundle source = load_bundle(data_dir, "source");
  dmmd::DatasetBundle target = load_bundle(data_dir, "target");
  dmmd::Backbone model = dmmd::Backbone::load(checkpoint);

  // Source pairs carry ground-truth identities; target pairs only the
  // tracklet grouping a tracker would provide.
  dmmd::Tensor source_emb =
      model.embed_values(dmmd::features_tensor(source.train));
  dmmd::Tensor target_emb =
      model.embed_values(dmmd::features_tensor(target.train));
  auto src_groups = dmmd::identities_of(source.train);
  auto tgt_groups = dmmd::tracklets_of(target.train);

  auto src_wc = dmmd::pair_distance_values(source_emb, src_groups,
                                           dmmd::PairKind::within_class);
  auto src_bc = dmmd::pair_distance_values(source_emb, src_groups,
                                           dmmd::PairKind::between_class);
  auto tgt_wc = dmmd::pair_distance_values(target_emb, tgt_groups,
                                           dmmd::PairKind::within_class);
  auto tgt_bc = dmmd::pair_distance_values(target_emb, tgt_groups,
                                           dmmd::PairKind::between_class);

  dmmd::write_histogram(src_wc, opts.out_dir + "/source_wc.tsv");
  dmmd::write_histogram(src_bc, opts.out_dir + "/source_bc.tsv");
  dmmd::write_histogram(tgt_wc, opts.out_dir + "/target_wc.tsv");
  dmmd::write_histogram(tgt_bc, opts.out_dir + "/target_bc.tsv");

  double src_overlap = dmmd::overlap_coefficient(src_wc, src_bc);
  double tgt_overlap = dmmd::overlap_coefficient(tgt_wc, tgt_bc);
  {
    std::ofstream out(opts.out_dir + "/overlap.txt");
    dmmd::detail::check(out.good(), "cannot write overlap file");
    out << "source " << dmmd::detail::format_double(src_overlap) << "\n";
    out << "target " << dmmd::detail::format_double(tgt_overlap) << "\n";
  }
  std::printf("source_overlap %s\n",
              dmmd::detail::format_double(src_overlap).c_str());
  std::printf("target_overlap %s\n",
              dmmd::detail::format_double(tgt_overlap).c_str());
  return 0;
}

int cmd_op_count(std::uint64_t batch, std::uint64_t occurrences) {
  dmmd::DistanceOpCount c = dmmd::distance_op_count(batch, occurrences);
  std::printf("wc %llu\n", static_cast<unsigned long long>(c.wc));
  std::printf("bc %llu\n", static_cast<unsigned long long>(c.bc));
  std::printf("total %llu\n", static_cast<unsigned long long>(c.total));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dissimilarity-space domain adaptation for re-identification"};
  app.require_subcommand(1);

  CommonOptions opts;
  std::optional<double> severity;
  std::optional<int> epochs_supervised, epochs_uda;
  std::optional<bool> toggle_wc, toggle_bc, toggle_feat;
  std::string data_dir = ".";
  std::string checkpoint;
  std::string domain = "target";
  std::uint64_t batch = 128, occurrences = 4;

  auto add_common = [&](CLI::App* cmd, bool with_out) {
    cmd->add_option("--config", opts.config_path, "experiment config file");
    cmd->add_option("--seed", opts.seed, "master seed override");
    if (with_out) cmd->add_option("--out", opts.out_dir, "output directory")->required();
  };

  CLI::App* generate = app.add_subcommand("generate", "write synthetic source/target datasets");
  add_common(generate, true);
  generate->add_option("--severity", severity, "domain shift severity override");

  CLI::App* train = app.add_subcommand("train", "phase 1: supervised training on source");
  add_common(train, true);
  train->add_option("--data", data_dir, "directory with source.tsv/target.tsv")->required();
  train->add_option("--epochs-supervised", epochs_supervised, "override epoch count");

  CLI::App* adapt = app.add_subcommand("adapt", "phase 2: align target with the D-MMD loss");
  add_common(adapt, true);
  adapt->add_option("--data", data_dir, "directory with source.tsv/target.tsv")->required();
  adapt->add_option("--checkpoint", checkpoint, "phase-1 checkpoint")->required();
  adapt->add_option("--epochs-uda", epochs_uda, "override epoch count");
  adapt->add_option("--toggle-wc", toggle_wc, "enable the within-class term");
  adapt->add_option("--toggle-bc", toggle_bc, "enable the between-class term");
  adapt->add_option("--toggle-feat", toggle_feat, "enable the feature-space term");

  CLI::App* eval = app.add_subcommand("eval", "CMC rank-k and mAP on a domain's query/gallery");
  add_common(eval, false);
  eval->add_option("--out", opts.out_dir, "optional output directory");
  eval->add_option("--data", data_dir, "directory with source.tsv/target.tsv")->required();
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval->add_option("--domain", domain, "source or target")->check(CLI::IsMember({"source", "target"}));

  CLI::App* plot = app.add_subcommand("plot-distributions", "export WC/BC distance histograms");
  add_common(plot, true);
  plot->add_option("--data", data_dir, "directory with source.tsv/target.tsv")->required();
  plot->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

  CLI::App* op_count = app.add_subcommand("op-count", "distance-calculation counts per batch");
  op_count->add_option("--batch", batch, "batch size");
  op_count->add_option("--occurrences", occurrences, "occurrences per identity");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(opts, severity);
    if (train->parsed()) return cmd_train(opts, data_dir, epochs_supervised);
    if (adapt->parsed())
      return cmd_adapt(opts, data_dir, checkpoint, epochs_uda, toggle_wc,
                       toggle_bc, toggle_feat);
    if (eval->parsed()) return cmd_eval(opts, data_dir, checkpoint, domain);
    if (plot->parsed()) return cmd_plot_distributions(opts, data_dir, checkpoint);
    if (op_count->parsed()) return cmd_op_count(batch, occurrences);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
