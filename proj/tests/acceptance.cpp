// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.
// Usage: p2t_acceptance <path to p2t binary>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "support.hpp"

using namespace p2t;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS " : "FAIL ") << name << ": " << detail << std::endl;
  if (!ok) ++failures;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << std::fixed << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig mc = test::tiny_model_config(4, 4, 3);
  const CorpusMeta meta = test::meta_of(mc);
  std::mt19937_64 rng(1);
  std::vector<Dialogue> ds;
  for (int i = 0; i < 3; ++i) ds.push_back(test::random_dialogue(rng, meta, 3));
  Model m(mc);
  test::randomize(m, 2);
  const double err = test::gradient_check(m, ds);
  const double secs = seconds_since(t0);
  report("gradient correctness", err < 1e-4 && secs < 60.0,
         "max relative error " + sci(err) + " in " + fmt(secs, 1) + " s");
}

void streaming_equals_batch() {
  const ModelConfig mc = test::default_config().model;
  const CorpusMeta meta = test::meta_of(mc);
  std::mt19937_64 rng(3);
  Model m(mc);
  test::randomize(m, 4);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const Dialogue d = test::random_dialogue(rng, meta, 1 + rng() % 50);
    worst = std::max(worst, replay_consistency(d, m).max_abs_diff);
  }
  report("streaming equals batch", worst <= 1e-12, "max abs diff " + sci(worst) + " over 200 dialogues");
}

void metric_oracles() {
  std::mt19937_64 rng(5);
  double worst_auc = 0.0, worst_wb = 0.0;
  bool one_bin_exact = true;
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = 20 + rng() % 400;
    const std::size_t n_bins = 1 + rng() % 10;
    std::vector<double> s(n), keys(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 40) / 9.0;
      keys[i] = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 0;
    y[1] = 1;
    const auto bins = assign_bins(keys, n_bins);
    worst_auc = std::max(worst_auc, std::abs(auc(s, y) - test::pair_auc(s, y)));
    try {
      worst_wb = std::max(worst_wb, std::abs(wbauc(s, y, bins, n_bins).value - test::pair_wbauc(s, y, bins, n_bins)));
    } catch (const MetricError&) {
      // every bin single-class: the oracle agrees there is nothing to score
    }
    const std::vector<std::size_t> one(n, 0);
    one_bin_exact = one_bin_exact && wbauc(s, y, one, 1).value == auc(s, y);
  }
  std::vector<int> labels(10000);
  for (int& v : labels) v = static_cast<int>(rng() % 2);
  const double chance = auc(random_scorer(labels.size(), 6), labels);
  const bool ok = worst_auc <= 1e-12 && worst_wb <= 1e-12 && one_bin_exact && std::abs(chance - 0.5) <= 0.02;
  report("metric oracles", ok,
         "auc diff " + sci(worst_auc) + ", wbauc diff " + sci(worst_wb) + ", one bin exact " +
             (one_bin_exact ? "yes" : "no") + ", random auc " + fmt(chance));
}

struct SeedRun {
  std::vector<MetricsReport> rows;  // random, bcu, p2t-no-user, p2t
  Model p2t;
};

SeedRun offline_seed(const AppConfig& cfg, std::uint64_t seed) {
  const Datasets data = make_datasets(cfg, seed);
  SeedRun run{{}, Model(cfg.model)};
  for (const std::string m : {"flow/bc (random)", "bcu", "p2t-no-user"}) {
    run.rows.push_back(run_ablation_row(cfg, data, m, seed));
  }
  run.p2t = train(data.train, cfg.model, with_seed(cfg.train, seed)).model;
  run.rows.push_back(evaluate_model("p2t", run.p2t, data.test, cfg.eval.n_bins));
  return run;
}

void table1(const std::vector<SeedRun>& runs, double secs) {
  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i].rows;
    const double w_rand = *r[0].wbauc, w_bcu = *r[1].wbauc, w_nu = *r[2].wbauc, w_p2t = *r[3].wbauc;
    const double a_rand = *r[0].auc, a_bcu = *r[1].auc;
    ok = ok && w_p2t > w_nu && w_nu > w_bcu && w_bcu - 0.5 < 0.05 && a_bcu - a_rand > 0.15;
    detail += "seed " + std::to_string(i + 1) + " wbauc p2t " + fmt(w_p2t) + " no-user " + fmt(w_nu) + " bcu " +
              fmt(w_bcu) + " random " + fmt(w_rand) + ", auc bcu " + fmt(a_bcu) + " random " + fmt(a_rand) + "; ";
  }
  report("offline ordering over 3 seeds", ok, detail + "training " + fmt(secs / 60.0, 1) + " min per seed");
}

bool separated(const ReturnEstimate& a, const ReturnEstimate& b, bool diversity) {
  const double gap = diversity ? a.diversity - b.diversity : a.repayment_rate - b.repayment_rate;
  const double se = diversity ? std::hypot(a.diversity_se, b.diversity_se) : std::hypot(a.repayment_se, b.repayment_se);
  return gap > 2.0 * se;
}

void tables23(const AppConfig& cfg, const std::vector<SeedRun>& runs) {
  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const SimulationReport sim = run_simulation(cfg, runs[i].p2t, mix_seed(i + 1, 99), 5000);
    const ReturnEstimate &p = sim.policies[0], &bc = sim.policies[1], &flow = sim.policies[2];
    const double gap = sim.oracle.expected_return - p.repayment_rate;
    ok = ok && separated(p, bc, false) && separated(bc, flow, false) && separated(p, bc, true) &&
         separated(bc, flow, true) && std::abs(gap) < 0.05;
    detail += "seed " + std::to_string(i + 1) + " repayment " + fmt(p.repayment_rate) + "/" + fmt(bc.repayment_rate) +
              "/" + fmt(flow.repayment_rate) + " diversity " + fmt(p.diversity) + "/" + fmt(bc.diversity) + "/" +
              fmt(flow.diversity) + " oracle " + fmt(sim.oracle.expected_return) + "; ";
  }
  report("simulator ordering over 3 seeds (p2t/bc/flow)", ok, detail);
}

void tracker_soundness(const AppConfig& cfg, const Model& model) {
  SyntheticConfig env = cfg.environment;
  env.t_max = 50;
  for (auto& seg : env.segments) {
    for (auto& row : seg.transitions) row = std::vector<double>{0.5, 0.2, 0.2, 0.08, 0.02};
  }
  InferenceConfig inf = cfg.inference;
  inf.theta = -1e9;  // every candidate passes the gate, so the repayment head alone decides
  SessionResponder p2t(env, model, inf, SessionResponder::Mode::p2t);
  const int pressure = 3;
  std::size_t repeats = 0, too_long = 0, pressured = 0, longest = 0;
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const EpisodeLog log = run_episode(env, p2t, 17, i);
    std::map<int, int> uses;
    for (int s : log.path()) ++uses[s];
    for (const auto& st : inf.candidates) {
      if (st.limit && uses[st.id] > *st.limit) ++repeats;
    }
    pressured += uses[pressure] > 0 ? 1 : 0;
    longest = std::max(longest, log.rounds());
    too_long += log.rounds() > 50 ? 1 : 0;
  }
  report("tracker soundness", repeats == 0 && too_long == 0,
         std::to_string(repeats) + " limit violations, pressure used in " + std::to_string(pressured) +
             " of 1000 sessions, longest " + std::to_string(longest) + " turns");
}

void overfit() {
  const ModelConfig mc = test::tiny_model_config(8, 8, 3);
  std::mt19937_64 rng(4);
  Corpus c;
  c.meta = test::meta_of(mc);
  for (std::size_t i = 0; i < 10; ++i) {
    c.dialogues.push_back(test::random_dialogue(rng, c.meta, 1 + rng() % 5, dialogue_id(i)));
  }
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.batch_size = 4;
  tc.epochs = 200;
  tc.seed = 1;
  const double la = mean_repayment_loss_per_turn(train(c, mc, tc).model, c);
  report("overfit sanity", la < 0.05, "per-turn repayment loss " + fmt(la));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int run(const std::string& cmd) { return std::system((cmd + " >/dev/null 2>&1").c_str()); }

void determinism(const std::string& cli) {
  const fs::path root = fs::temp_directory_path() / "p2t_acceptance";
  fs::remove_all(root);
  const std::string opts = " --config " + test::config_path() + " --seed 5";
  std::vector<std::string> differing;
  int status = 0;
  for (const char* run_dir : {"a", "b"}) {
    const fs::path d = root / run_dir;
    status |= run(cli + " gen-corpus" + opts + " --dialogues 1500 --out " + (d / "gen").string());
    status |= run(cli + " train" + opts + " --dialogues 1500 --epochs 2 --out " + (d / "train").string());
    status |= run(cli + " simulate" + opts + " --episodes 300 --model " + (root / "a" / "train" / "checkpoint.json").string() +
                  " --out " + (d / "sim").string());
  }
  for (const char* f : {"gen/corpus.jsonl", "gen/config.json", "train/checkpoint.json", "train/train_log.jsonl",
                        "train/train.jsonl", "train/test.jsonl", "sim/simulation.json", "sim/episodes.jsonl"}) {
    const std::string a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    if (a.empty() || a != b) differing.push_back(f);
  }
  std::string detail = status == 0 ? "all commands succeeded" : "a command failed";
  detail += differing.empty() ? ", outputs byte-identical" : ", differing or missing:";
  for (const auto& f : differing) detail += " " + f;
  report("determinism", status == 0 && differing.empty(), detail);
  fs::remove_all(root);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: p2t_acceptance <p2t binary>\n";
    return 64;
  }
  try {
    gradient_correctness();
    streaming_equals_batch();
    metric_oracles();
    const AppConfig& cfg = test::default_config();
    std::vector<SeedRun> runs;
    const auto t0 = std::chrono::steady_clock::now();
    for (std::uint64_t seed = 1; seed <= 3; ++seed) runs.push_back(offline_seed(cfg, seed));
    table1(runs, seconds_since(t0) / 3.0);
    tables23(cfg, runs);
    tracker_soundness(cfg, runs[0].p2t);
    overfit();
    determinism(argv[1]);
  } catch (const std::exception& e) {
    std::cout << "FAIL aborted: " << e.what() << std::endl;
    return 1;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
