// Acceptance suite: runs every release criterion at its pinned tolerance and
// prints one PASS/FAIL line per criterion. Exits nonzero if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "dmmd/dmmd.hpp"

namespace fs = std::filesystem;
using namespace dmmd;

namespace {

int g_failures = 0;

void report(int criterion, const char* name, bool ok, const std::string& info) {
  std::printf("[%s] criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", criterion,
              name, info.empty() ? "" : " — ", info.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity: analytic vs central finite differences, F=8, |B|=16,
//    20 trials, relative error < 1e-4, runtime < 30 s.
void criterion_gradient_fidelity() {
  auto start = std::chrono::steady_clock::now();
  const double tol = 1e-4;
  const double step = 1e-5;
  const std::size_t batch = 16, f = 8;
  std::vector<int> labels;
  for (int g = 0; g < 4; ++g)
    for (int o = 0; o < 4; ++o) labels.push_back(g);
  KernelConfig kernel = KernelConfig::fixed({0.5, 1.0, 2.0});

  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor logits = random_tensor(rng, {batch, f});
    worst = std::max(worst, gradient_check(
        [&](Tape& t, Value x) {
          return cross_entropy_smoothed(t, x, labels, 0.1);
        },
        logits, step));

    Tensor emb = random_tensor(rng, {batch, f});
    worst = std::max(worst, gradient_check(
        [&](Tape& t, Value x) { return triplet_batch_hard(t, x, labels, 0.3); },
        emb, step));

    Tensor a = random_tensor(rng, {batch});
    Tensor b = random_tensor(rng, {batch}, -0.5, 1.5);
    worst = std::max(worst, gradient_check(
        [&](Tape& t, Value x) { return mmd(t, x, t.leaf(b), kernel); }, a,
        step));

    Tensor fa = random_tensor(rng, {batch, f});
    Tensor fb = random_tensor(rng, {batch, f}, -0.5, 1.5);
    worst = std::max(worst, gradient_check(
        [&](Tape& t, Value x) {
          return feature_mmd(t, x, t.leaf(fb), kernel);
        },
        fa, step));

    Tensor src = random_tensor(rng, {batch, f});
    Tensor tgt = random_tensor(rng, {batch, f}, -0.5, 1.5);
    worst = std::max(worst, gradient_check(
        [&](Tape& t, Value x) {
          return dmmd_loss(t, x, labels, t.leaf(tgt), labels, kernel).total;
        },
        src, step));
    worst = std::max(worst, gradient_check(
        [&](Tape& t, Value x) {
          return dmmd_loss(t, t.leaf(src), labels, x, labels, kernel).total;
        },
        tgt, step));
  }
  double seconds = elapsed_seconds(start);
  std::ostringstream info;
  info << "max relative error " << worst << ", " << seconds << " s";
  report(1, "gradient fidelity", worst < tol && seconds < 30.0, info.str());
}

// ---------------------------------------------------------------------------
// 2. MMD oracle values.
void criterion_mmd_oracles() {
  Tape tape;
  Value a = tape.leaf(Tensor({1}, {0.0}));
  Value b = tape.leaf(Tensor({1}, {1.0}));
  double v = tape.scalar_value(mmd(tape, a, b, KernelConfig::fixed({1.0})));
  double expected = 2.0 - 2.0 * std::exp(-0.5);
  bool point_ok = std::abs(v - expected) < 1e-9;

  Rng rng(7);
  bool self_ok = true, symmetric_ok = true;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor ta = random_tensor(rng, {12}, -2.0, 2.0);
    Tensor tb = random_tensor(rng, {9}, -1.0, 3.0);
    Tape t;
    Value va = t.leaf(ta), vb = t.leaf(tb), va2 = t.leaf(ta);
    KernelConfig kernel = KernelConfig::fixed({0.7, 1.3});
    if (std::abs(t.scalar_value(mmd(t, va, va2, kernel))) >= 1e-12)
      self_ok = false;
    double ab = t.scalar_value(mmd(t, va, vb, kernel));
    double ba = t.scalar_value(mmd(t, vb, va, kernel));
    if (ab != ba) symmetric_ok = false;
  }
  std::ostringstream info;
  info << "mmd({0},{1}) = " << v << " vs " << expected;
  report(2, "MMD oracle values", point_ok && self_ok && symmetric_ok, info.str());
}

// ---------------------------------------------------------------------------
// 3. Loss oracle values.
void criterion_loss_oracles() {
  Tensor logits({4, 10});
  std::vector<int> labels{0, 1, 2, 3};
  Tape t0;
  double ces = t0.scalar_value(
      cross_entropy_smoothed(t0, t0.leaf(logits), labels, 0.1));
  bool ces_ok = std::abs(ces - 2.082327) < 1e-6;

  Tensor emb({4, 1}, {0.0, 2.0, 1.0, 3.0});
  std::vector<int> ids{0, 0, 1, 1};
  Tape t1;
  double tri =
      t1.scalar_value(triplet_batch_hard(t1, t1.leaf(emb), ids, 0.3));
  bool tri_ok = std::abs(tri - 1.3) < 1e-9;

  std::ostringstream info;
  info << "ces = " << ces << ", triplet = " << tri;
  report(3, "loss oracle values", ces_ok && tri_ok, info.str());
}

// ---------------------------------------------------------------------------
// 4. Pair bookkeeping.
void criterion_pair_bookkeeping() {
  bool ok = true;
  std::ostringstream info;

  // 128/4 split counts
  {
    Rng rng(3);
    Tensor emb = random_tensor(rng, {128, 4});
    std::vector<int> groups;
    for (int g = 0; g < 32; ++g)
      for (int o = 0; o < 4; ++o) groups.push_back(g);
    Tape tape;
    auto [wc, bc] = wc_bc_distances(tape, tape.leaf(emb), groups, Domain::source);
    if (wc.count != 192 || bc.count != 7936) {
      ok = false;
      info << "counts at 128/4 were " << wc.count << "/" << bc.count << "; ";
    }
  }

  // every sampled batch partitions all pairs
  {
    GenerationConfig gen;
    gen.seed = 11;
    gen.num_identities = 16;
    gen.feature_dim = 8;
    SyntheticDataset data = generate_synthetic(gen);
    SamplerConfig sc;
    sc.batch_size = 16;
    sc.occurrences = 4;
    PkSampler sampler(data.source.train, sc, GroupKey::identity);
    for (const Batch& batch : sampler.epoch()) {
      Tape tape;
      auto [wc, bc] =
          wc_bc_distances(tape, tape.leaf(batch.features), batch.groups,
                          Domain::source);
      std::size_t n = batch.groups.size();
      if (wc.count + bc.count != n * (n - 1) / 2) ok = false;
    }
  }

  DistanceOpCount c = distance_op_count(128, 4);
  if (c.wc != 192 || c.bc != 3844 || c.total != 4036) ok = false;
  info << "op-count(128,4) = (" << c.wc << ", " << c.bc << ", " << c.total
       << ")";
  report(4, "pair bookkeeping", ok, info.str());
}

// ---------------------------------------------------------------------------
// Shared fixture for criteria 5 and 6: the default benchmark.
struct BenchmarkRun {
  SyntheticDataset data;
  Backbone source_model;
  EvalReport baseline;
  double overlap_before = 0.0;
  TrainConfig train_config;

  double setup_seconds = 0.0;

  static BenchmarkRun make() {
    auto start = std::chrono::steady_clock::now();
    ExperimentConfig cfg;  // defaults are the shipped benchmark
    BackboneConfig bc;
    bc.input_dim = cfg.data.feature_dim;
    bc.hidden = {64, 64};
    bc.embedding_dim = 32;
    bc.num_classes = cfg.data.num_identities;
    bc.seed = cfg.data.seed + 2;

    BenchmarkRun run{generate_synthetic(cfg.data), Backbone(bc), {}, 0.0,
                     cfg.train};
    train_source(run.source_model, run.data.source, run.train_config);
    run.baseline = evaluate(run.source_model, run.data.target.query,
                            run.data.target.gallery);
    run.overlap_before = run.target_train_overlap(run.source_model);
    run.setup_seconds = elapsed_seconds(start);
    return run;
  }

  double target_train_overlap(const Backbone& model) const {
    Tensor emb = model.embed_values(features_tensor(data.target.train));
    auto groups = tracklets_of(data.target.train);
    auto wc = pair_distance_values(emb, groups, PairKind::within_class);
    auto bc = pair_distance_values(emb, groups, PairKind::between_class);
    return overlap_coefficient(wc, bc);
  }

  // Adapt a copy of the source-trained model under the given toggles.
  std::pair<EvalReport, TrainLog> adapt_with(const DmmdToggles& toggles,
                                             Backbone* out_model = nullptr) const {
    Backbone model = source_model;
    TrainConfig cfg = train_config;
    cfg.toggles = toggles;
    TrainLog log = adapt(model, data.source, data.target, cfg);
    EvalReport r = evaluate(model, data.target.query, data.target.gallery);
    if (out_model) *out_model = model;
    return {r, log};
  }
};

void criteria_end_to_end(const BenchmarkRun& run) {
  auto start = std::chrono::steady_clock::now();

  Backbone adapted_model = run.source_model;
  auto [after, log] = run.adapt_with(DmmdToggles{true, true, true},
                                     &adapted_model);
  auto dmmd_of = [](const EpochRecord& r) {
    return r.lmmd_wc + r.lmmd_bc + r.lmmd_feat;
  };
  double first = dmmd_of(log.epochs.front());
  double last = dmmd_of(log.epochs.back());
  double overlap_after = run.target_train_overlap(adapted_model);
  // budget covers the whole path: generate, train, adapt, evaluate
  double seconds = run.setup_seconds + elapsed_seconds(start);

  bool loss_halved = last < 0.5 * first;
  bool overlap_shrunk = overlap_after < run.overlap_before;
  bool accuracy_up = after.rank1 > run.baseline.rank1 &&
                     after.map > run.baseline.map;
  bool fast_enough = seconds < 300.0;

  std::ostringstream info;
  info << "dmmd " << first << " -> " << last << ", overlap "
       << run.overlap_before << " -> " << overlap_after << ", rank1 "
       << run.baseline.rank1 << " -> " << after.rank1 << ", mAP "
       << run.baseline.map << " -> " << after.map << ", " << seconds << " s";
  report(5, "end-to-end alignment",
         loss_halved && overlap_shrunk && accuracy_up && fast_enough,
         info.str());

  // 6. Ablation ordering on target rank-1: D >= C >= max(A, B) >= baseline.
  auto [report_a, log_a] = run.adapt_with(DmmdToggles{true, false, false});
  auto [report_b, log_b] = run.adapt_with(DmmdToggles{false, true, false});
  auto [report_c, log_c] = run.adapt_with(DmmdToggles{true, true, false});
  double d = after.rank1, cc = report_c.rank1;
  double ab_max = std::max(report_a.rank1, report_b.rank1);
  bool ordering = d >= cc && cc >= ab_max && ab_max >= run.baseline.rank1;
  std::ostringstream info6;
  info6 << "rank1: lower " << run.baseline.rank1 << ", A " << report_a.rank1
        << ", B " << report_b.rank1 << ", C " << cc << ", D " << d;
  report(6, "ablation ordering", ordering, info6.str());
}

// ---------------------------------------------------------------------------
// 7. CLI determinism: fixed seed, bit-identical checkpoints across two runs.
int run_cli(const std::string& args) {
  std::string command = std::string(DMMD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  int raw = std::system(command.c_str());
  return raw == -1 ? -1 : WEXITSTATUS(raw);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_cli_determinism() {
  fs::path dir = fs::temp_directory_path() / "dmmd_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);

  ExperimentConfig cfg;
  cfg.data.num_identities = 10;
  cfg.data.frames_per_tracklet = 6;
  cfg.data.feature_dim = 8;
  cfg.train.epochs_supervised = 5;
  cfg.train.epochs_uda = 3;
  cfg.train.sampler.batch_size = 8;
  cfg.train.sampler.occurrences = 4;
  std::string config = (dir / "config.txt").string();
  cfg.save(config);

  bool ok = run_cli("generate --config " + config + " --out " + dir.string()) == 0;
  for (const char* run_name : {"t1", "t2"})
    ok = ok && run_cli("train --config " + config + " --seed 5 --data " +
                       dir.string() + " --out " + (dir / run_name).string()) == 0;
  std::string ckpt1 = (dir / "t1" / "checkpoint.txt").string();
  ok = ok && read_file(ckpt1) == read_file(dir / "t2" / "checkpoint.txt");
  bool train_identical = ok;

  for (const char* run_name : {"a1", "a2"})
    ok = ok && run_cli("adapt --config " + config + " --seed 5 --data " +
                       dir.string() + " --checkpoint " + ckpt1 + " --out " +
                       (dir / run_name).string()) == 0;
  bool adapt_identical =
      ok && read_file(dir / "a1" / "checkpoint.txt") ==
                read_file(dir / "a2" / "checkpoint.txt");
  fs::remove_all(dir);
  report(7, "checkpoint determinism", train_identical && adapt_identical,
         train_identical ? (adapt_identical ? "train and adapt bit-identical"
                                            : "adapt differed")
                         : "train differed");
}

// ---------------------------------------------------------------------------
// 8. Evaluation oracles.
void criterion_eval_oracles() {
  Tensor query({1, 1}, {0.0});
  Tensor gallery({4, 1}, {1.0, 2.0, 3.0, 4.0});
  std::vector<int> q_ids{7}, q_cams{0};
  std::vector<int> g_ids{7, 5, 7, 6}, g_cams{1, 1, 1, 1};
  EvalReport ap_fixture =
      evaluate_embeddings(query, q_ids, q_cams, gallery, g_ids, g_cams);
  bool ap_ok = std::abs(ap_fixture.map - 0.833333333333) < 1e-6;

  Rng rng(15);
  Tensor q = random_tensor(rng, {6, 4});
  std::vector<int> ids{0, 1, 2, 3, 4, 5}, zeros{0, 0, 0, 0, 0, 0},
      ones{1, 1, 1, 1, 1, 1};
  EvalReport dup = evaluate_embeddings(q, ids, zeros, q, ids, ones);
  bool dup_ok = dup.rank1 == 1.0 && dup.map == 1.0;

  std::ostringstream info;
  info << "AP fixture " << ap_fixture.map << ", duplicate gallery rank1 "
       << dup.rank1 << " mAP " << dup.map;
  report(8, "evaluation oracles", ap_ok && dup_ok, info.str());
}

}  // namespace

int main() {
  std::printf("running acceptance criteria\n");
  criterion_gradient_fidelity();
  criterion_mmd_oracles();
  criterion_loss_oracles();
  criterion_pair_bookkeeping();
  BenchmarkRun run = BenchmarkRun::make();
  criteria_end_to_end(run);
  criterion_cli_determinism();
  criterion_eval_oracles();
  if (g_failures) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
