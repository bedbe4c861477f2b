// Acceptance suite: one PASS/FAIL/SKIP line per criterion, details indented below.
// Usage: acceptance [path-to-context-tracker-cli]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "context_tracker/config.hpp"
#include "context_tracker/eval.hpp"
#include "context_tracker/gradcheck.hpp"
#include "context_tracker/parallel.hpp"
#include "context_tracker/run_io.hpp"
#include "context_tracker/synth.hpp"

namespace ct = context_tracker;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
  void note(const std::string& s) { notes.push_back("     " + s); }
};

void report(const std::string& name, const Outcome& o, bool skipped = false) {
  std::cout << (skipped ? "SKIP " : o.pass ? "PASS " : "FAIL ") << name << "\n";
  for (const auto& n : o.notes) std::cout << "    " << n << "\n";
  std::cout.flush();
  if (!skipped && !o.pass) ++failures;
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void gradient_correctness() {
  Outcome o;
  const auto t0 = Clock::now();
  ct::gradcheck::SuiteConfig cfg;
  cfg.instances = 100;
  cfg.seed = 2024;
  for (const auto& r : ct::gradcheck::run_suite(cfg)) {
    o.check(r.passed() && r.instances >= 100,
            r.op + ": " + std::to_string(r.instances) + " instances, max rel err " + fmt(r.max_rel_err, 3));
  }
  const double secs = seconds_since(t0);
  o.check(secs < 60.0, "runtime " + fmt(secs, 3) + " s (< 60 s)");
  report("gradient correctness: all backward passes match central differences", o);
}

void loss_law() {
  Outcome o;
  const double cs05 = ct::loss::cs_loss(0.5, 1), cs09 = ct::loss::cs_loss(0.9, 1);
  o.check(std::abs(cs05 - 0.431439) <= 1e-6, "cs(0.5) = " + fmt(cs05, 10) + " vs pinned 0.431439 (1e-6)");
  o.check(std::abs(cs09 - 0.013708) <= 1e-6, "cs(0.9) = " + fmt(cs09, 10) + " vs pinned 0.013708 (1e-6)");
  const ct::loss::CsLossParams prm;
  bool ratio_ok = true, factor_ok = true, hard_ok = true;
  double prev = 1.0, worst_hard = 1.0;
  for (int i = 1; i < 1000; ++i) {
    const double p = i / 1000.0;
    const double r = ct::loss::cs_loss(p, 1) / ct::loss::ce_loss(p, 1);
    ratio_ok = ratio_ok && r > 0.0 && r < 1.0;
    const double m = ct::loss::modulating_factor(p, prm);
    factor_ok = factor_ok && m <= prev;
    prev = m;
    if (i <= 100) {
      hard_ok = hard_ok && r >= 0.99;
      worst_hard = std::min(worst_hard, r);
    }
  }
  o.check(ratio_ok, "0 < cs/ce < 1 on the 0.001 grid");
  o.check(factor_ok, "modulating factor non-increasing");
  o.check(hard_ok, "cs/ce >= 0.99 for p_t <= 0.1 (min " + fmt(worst_hard, 8) + ")");
  if (std::abs(cs05 - 0.431439) > 1e-6) {
    o.note("the closed form at alpha=10, beta=0.2, gamma=2 gives 0.4314559; the pinned 0.431439 differs by 1.7e-5");
  }
  report("loss law: pinned values and shape of the modulated loss", o);
}

// Random features where channels in `planted` separate the classes.
void planted_set(std::size_t channels, const std::vector<int>& planted, std::size_t n, std::mt19937_64& rng,
                 std::vector<ct::Tensor>& feats, std::vector<int>& labels) {
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < 2 * n; ++i) {
    const int y = i % 2 == 0 ? 1 : 0;
    ct::Tensor f({channels, 7, 7});
    for (float& v : f.data()) v = static_cast<float>(noise(rng));
    for (int c : planted)
      for (std::size_t p = 0; p < 49; ++p) f[static_cast<std::size_t>(c) * 49 + p] += y == 1 ? 1.5f : -1.5f;
    feats.push_back(std::move(f));
    labels.push_back(y);
  }
}

void importance_oracles() {
  Outcome o;
  // Brute force: shift one whole channel of every negative by eps and watch the background logit.
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    std::mt19937_64 rng(100 + s);
    std::normal_distribution<double> d;
    const std::size_t c = 6 + s % 5, h = 3 + s % 4, w = 4 + s % 3;
    ct::adapt::ConvDaWeights da = ct::adapt::init_conv_da(c, rng(), 0.5);
    for (float& b : da.bias.data()) b = static_cast<float>(d(rng));
    std::vector<ct::Tensor> negs;
    for (int k = 0; k < 4; ++k) {
      ct::Tensor f({c, h, w});
      for (float& v : f.data()) v = static_cast<float>(d(rng));
      negs.push_back(std::move(f));
    }
    const auto imp = ct::adapt::channel_importance(da, negs);
    const double eps = 1e-2, plane = static_cast<double>(h * w);
    double num = 0.0, den = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (const auto& f : negs) {
        ct::Tensor up = f, dn = f;
        for (std::size_t p = 0; p < h * w; ++p) {
          up[ch * h * w + p] += static_cast<float>(eps);
          dn[ch * h * w + p] -= static_cast<float>(eps);
        }
        const auto lu = ct::adapt::conv_da_logits(up.reshaped({1, c, h, w}), da);
        const auto ld = ct::adapt::conv_da_logits(dn.reshaped({1, c, h, w}), da);
        acc += (lu[ct::adapt::kBackgroundClass] - ld[ct::adapt::kBackgroundClass]) / (2.0 * eps * plane);
      }
      const double oracle = acc / static_cast<double>(negs.size());
      num += (imp.delta[ch] - oracle) * (imp.delta[ch] - oracle);
      den += oracle * oracle;
    }
    worst = std::max(worst, std::sqrt(num / std::max(den, 1e-30)));
  }
  o.check(worst < 1e-2, "perturbation oracle, 20 instances: worst rel err " + fmt(worst, 3));

  // Sort oracle.
  bool sort_ok = true;
  for (std::uint64_t s = 0; s < 20; ++s) {
    std::mt19937_64 rng(200 + s);
    std::normal_distribution<double> d;
    ct::adapt::ChannelImportance imp{std::vector<double>(128)};
    for (double& v : imp.delta) v = d(rng);
    if (s % 4 == 0) imp.delta[5] = imp.delta[9] = -imp.delta[7];  // ties in magnitude
    const std::size_t k = 1 + s * 6;
    std::vector<int> order(128);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return std::abs(imp.delta[static_cast<std::size_t>(a)]) > std::abs(imp.delta[static_cast<std::size_t>(b)]); });
    std::vector<int> want(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(want.begin(), want.end());
    sort_ok = sort_ok && ct::adapt::select_channels(imp, k).indices == want;
  }
  o.check(sort_ok, "select_channels equals a stable sort by |delta| on 20 draws");

  // Planted channels.
  int recovered = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    std::mt19937_64 rng(300 + s);
    std::vector<int> all(32);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<int> planted(all.begin(), all.begin() + 4);
    std::vector<ct::Tensor> feats;
    std::vector<int> labels;
    planted_set(32, planted, 100, rng, feats, labels);
    ct::adapt::DaTrainCfg cfg;
    cfg.seed = s;
    const auto trained = ct::adapt::train_conv_da(feats, labels, cfg);
    std::vector<ct::Tensor> negs;
    for (std::size_t i = 0; i < feats.size(); ++i)
      if (labels[i] == 0) negs.push_back(feats[i]);
    const auto mask = ct::adapt::select_channels(ct::adapt::channel_importance(trained.weights, negs), 8);
    const bool all_in = std::all_of(planted.begin(), planted.end(), [&](int c) {
      return std::find(mask.indices.begin(), mask.indices.end(), c) != mask.indices.end();
    });
    recovered += all_in;
  }
  o.check(recovered >= 19, "planted-channel recovery " + std::to_string(recovered) + "/20 (need 19)");
  report("channel importance: oracle equivalence and planted recovery", o);
}

std::string deque_str(const std::deque<int>& d) {
  std::string s;
  for (int f : d) s += (s.empty() ? "" : ",") + std::to_string(f);
  return s;
}

void state_machine() {
  Outcome o;
  // Scripted scores for frames 2..30; frame 18 sits exactly on the threshold.
  const std::vector<int> fails = {3, 7, 8, 12, 13, 14, 20, 25, 26};
  auto scripted = [&](int t) {
    if (t == 18) return 0.5;
    return std::find(fails.begin(), fails.end(), t) != fails.end() ? 0.3 : 0.8;
  };
  // Hand-simulated trace: update kind, short memory, long memory after frame t.
  struct Row {
    const char* update;
    const char* short_mem;
    const char* long_mem;
  };
  const std::vector<Row> trace = {
      {"none", "1,2", "1,2"},         {"short", "1,2", "1,2"},         {"long", "1,2,4", "1,2,4"},
      {"none", "2,4,5", "1,2,4,5"},   {"none", "4,5,6", "1,2,4,5,6"},  {"short", "4,5,6", "1,2,4,5,6"},
      {"short", "4,5,6", "1,2,4,5,6"}, {"none", "5,6,9", "2,4,5,6,9"}, {"none", "6,9,10", "4,5,6,9,10"},
      {"none", "9,10,11", "5,6,9,10,11"}, {"short", "9,10,11", "5,6,9,10,11"}, {"short", "9,10,11", "5,6,9,10,11"},
      {"short", "9,10,11", "5,6,9,10,11"}, {"none", "10,11,15", "6,9,10,11,15"}, {"long", "11,15,16", "9,10,11,15,16"},
      {"none", "15,16,17", "10,11,15,16,17"}, {"none", "16,17,18", "11,15,16,17,18"},
      {"none", "17,18,19", "15,16,17,18,19"}, {"short", "17,18,19", "15,16,17,18,19"},
      {"none", "18,19,21", "16,17,18,19,21"}, {"none", "19,21,22", "17,18,19,21,22"},
      {"none", "21,22,23", "18,19,21,22,23"}, {"long", "22,23,24", "19,21,22,23,24"},
      {"short", "22,23,24", "19,21,22,23,24"}, {"short", "22,23,24", "19,21,22,23,24"},
      {"none", "23,24,27", "21,22,23,24,27"}, {"long", "24,27,28", "22,23,24,27,28"},
      {"none", "27,28,29", "23,24,27,28,29"}, {"none", "28,29,30", "24,27,28,29,30"},
  };

  ct::synth::SceneSpec spec = ct::synth::preset("easy_translation", 11);
  spec.length = 30;
  const auto seq = ct::synth::generate(spec);
  ct::tracker::TrackerConfig cfg = ct::config::toy_tracker_config(11);
  cfg.tau_short = 3;
  cfg.tau_long = 5;
  cfg.tau_int = 4;
  cfg.first_frame_iters = 10;
  cfg.online_iters = 2;
  cfg.da_iters = 10;
  cfg.regressor_samples = 100;
  ct::tracker::Tracker tr(cfg, std::make_shared<ct::backbone::BackboneWeights>(ct::config::toy_backbone(11)));
  tr.set_score_hook([&](int t, double) { return scripted(t); });
  tr.init(seq.frames[0], seq.gt[0]);

  const std::size_t npos = ct::sampling::phase_quotas(ct::sampling::Phase::Online).positives;
  const std::size_t nneg = ct::sampling::phase_quotas(ct::sampling::Phase::Online).negatives;
  int mismatches = 0;
  bool invariants = true;
  for (int t = 2; t <= 30; ++t) {
    const std::deque<int> short_before = tr.memory().short_frames(), long_before = tr.memory().long_frames();
    const auto r = tr.step(seq.frames[static_cast<std::size_t>(t - 1)]);
    const Row& want = trace[static_cast<std::size_t>(t - 2)];
    const auto& m = tr.memory();
    const bool match = std::string(ct::tracker::to_string(r.update)) == want.update &&
                       deque_str(m.short_frames()) == want.short_mem && deque_str(m.long_frames()) == want.long_mem;
    if (!match) {
      ++mismatches;
      o.note("frame " + std::to_string(t) + ": got " + ct::tracker::to_string(r.update) + " [" +
             deque_str(m.short_frames()) + "] [" + deque_str(m.long_frames()) + "], want " + want.update + " [" +
             want.short_mem + "] [" + want.long_mem + "]");
    }
    invariants = invariants && m.invariants_hold();
    // Counts: every stored frame holds its quota; negatives live only in the short memory.
    invariants = invariants && m.positives(m.long_frames()).size() == npos * m.long_frames().size();
    invariants = invariants && m.negatives(m.short_frames()).size() == nneg * m.short_frames().size();
    invariants = invariants && m.negatives(m.long_frames()).size() == m.negatives(m.short_frames()).size();
    // Success-only admission: a failed frame leaves the memories untouched.
    if (!r.success) invariants = invariants && m.short_frames() == short_before && m.long_frames() == long_before;
    invariants = invariants && r.success == (scripted(t) >= 0.5);
  }
  o.check(mismatches == 0, "30-frame trace, tau 3/5/4: " + std::to_string(mismatches) + " mismatching frames");
  o.check(invariants, "memory bounds, subset, quotas and success-only admission at every step");
  report("tracking state machine: scripted scores against a hand-simulated trace", o);
}

struct ToyRun {
  double mean_iou = 0.0;
  double recovered = 0.0;  // share of post-occlusion frames with IoU >= 0.4
  double seconds = 0.0;
};

ToyRun toy_track(const std::string& preset, ct::loss::LossKind loss, std::uint64_t seed) {
  const auto t0 = Clock::now();
  const ct::synth::SceneSpec spec = ct::synth::preset(preset, seed);
  const auto seq = ct::synth::generate(spec);
  ct::config::RunConfig rc = ct::config::parse("{}");
  ct::config::apply_toy_profile(rc);
  rc.tracker.seed = seed;
  rc.tracker.loss_kind = loss;
  rc.backbone_seed = 7 + seed;
  const auto run = ct::tracker::track_sequence(seq.frames, seq.gt[0], rc.tracker, ct::config::resolve_backbone(rc));
  ToyRun r;
  int post = 0, ok = 0;
  const int occl_end = spec.occluders.empty() ? 0 : spec.occluders.front().end;
  for (std::size_t i = 0; i < run.size(); ++i) {
    const double o = ct::iou(run[i].box, seq.gt[i]);
    r.mean_iou += o;
    if (!spec.occluders.empty() && static_cast<int>(i) >= occl_end) {
      ++post;
      ok += o >= 0.4;
    }
  }
  r.mean_iou /= static_cast<double>(run.size());
  r.recovered = post > 0 ? static_cast<double>(ok) / post : 0.0;
  r.seconds = seconds_since(t0);
  return r;
}

std::vector<ToyRun> toy_batch(const std::string& preset, ct::loss::LossKind loss, std::size_t seeds) {
  std::vector<ToyRun> out(seeds);
  ct::parallel_for(seeds, [&](std::size_t s) { out[s] = toy_track(preset, loss, s); });
  return out;
}

void end_to_end() {
  Outcome o;
  const auto easy = toy_batch("easy_translation", ct::loss::LossKind::CostSensitive, 5);
  const auto occ = toy_batch("occlusion", ct::loss::LossKind::CostSensitive, 5);
  double easy_mean = 0, rec_mean = 0, slowest = 0;
  std::string easy_s, occ_s;
  for (const auto& r : easy) {
    easy_mean += r.mean_iou / 5;
    slowest = std::max(slowest, r.seconds);
    easy_s += " " + fmt(r.mean_iou, 3);
  }
  for (const auto& r : occ) {
    rec_mean += r.recovered / 5;
    slowest = std::max(slowest, r.seconds);
    occ_s += " " + fmt(r.recovered, 3);
  }
  o.check(easy_mean >= 0.6, "easy_translation mean IoU over 5 seeds " + fmt(easy_mean, 4) + " (per seed:" + easy_s + ")");
  o.check(rec_mean >= 0.7, "occlusion: post-occlusion frames with IoU >= 0.4, mean share " + fmt(rec_mean, 4) +
                               " (per seed:" + occ_s + ")");
  o.check(slowest < 300.0, "slowest run " + fmt(slowest, 3) + " s (< 300 s)");
  report("end-to-end synthetic tracking with the toy backbone", o);
}

void loss_ablation() {
  Outcome o;
  const std::size_t seeds = 10;
  const auto cs = toy_batch("distractor", ct::loss::LossKind::CostSensitive, seeds);
  const auto ce = toy_batch("distractor", ct::loss::LossKind::CrossEntropy, seeds);
  double mcs = 0, mce = 0;
  for (std::size_t s = 0; s < seeds; ++s) {
    mcs += cs[s].mean_iou / seeds;
    mce += ce[s].mean_iou / seeds;
    o.note("seed " + std::to_string(s) + ": cs " + fmt(cs[s].mean_iou, 3) + ", ce " + fmt(ce[s].mean_iou, 3));
  }
  o.check(mcs >= mce, "distractor mean IoU over 10 paired seeds: cs " + fmt(mcs, 4) + " vs ce " + fmt(mce, 4));
  report("loss ablation: cost-sensitive at least as accurate as cross-entropy", o);
}

void metrics() {
  Outcome o;
  const auto seq = ct::synth::generate(ct::synth::preset("scale_change", 1));
  const auto oracle = ct::eval::score_run(seq.gt, seq.gt);
  o.check(oracle.dp20 == 1.0, "oracle DP@20 = " + fmt(oracle.dp20));
  o.check(oracle.auc == 20.0 / 21.0, "oracle AUC = " + fmt(oracle.auc, 17) + " (20/21)");
  // Integer boxes with widths divisible by 3 so a third-width shift gives IoU of exactly 0.5.
  std::vector<ct::BBox> gt_int, half;
  for (const auto& g : seq.gt) {
    const double w = 3.0 * std::round(g.w / 3.0);
    gt_int.push_back({std::round(g.x), std::round(g.y), w, std::round(g.h)});
    half.push_back(gt_int.back().translated(w / 3.0, 0.0));
  }
  const auto c = ct::eval::success_curve(half, gt_int);
  bool all_half = true;
  for (std::size_t i = 0; i < half.size(); ++i) all_half = all_half && ct::iou(half[i], gt_int[i]) == 0.5;
  o.check(all_half && ct::eval::auc(c) == 10.0 / 21.0, "constant IoU 0.5 run: AUC = " + fmt(ct::eval::auc(c), 17) + " (10/21)");
  bool mono = true;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.0, 15.0);
  for (int k = 0; k < 20; ++k) {
    std::vector<ct::BBox> noisy;
    for (const auto& g : seq.gt) noisy.push_back({g.x + d(rng), g.y + d(rng), g.w * std::exp(d(rng) / 60), g.h});
    const auto s = ct::eval::score_run(noisy, seq.gt);
    for (std::size_t i = 1; i < s.precision.values.size(); ++i) mono = mono && s.precision.values[i] >= s.precision.values[i - 1];
    for (std::size_t i = 1; i < s.success.values.size(); ++i) mono = mono && s.success.values[i] <= s.success.values[i - 1];
  }
  o.check(mono, "precision non-decreasing and success non-increasing on 20 noisy runs");
  report("metrics: pinned conventions and monotone curves", o);
}

void real_data_smoke(const std::string& cli) {
  Outcome o;
  const char* weights = std::getenv("CONTEXT_TRACKER_CWB");
  const char* sequence = std::getenv("CONTEXT_TRACKER_OTB_SEQ");
  if (!weights || !sequence || !fs::is_regular_file(weights) || !fs::is_directory(sequence) || cli.empty()) {
    o.note("set CONTEXT_TRACKER_CWB and CONTEXT_TRACKER_OTB_SEQ (and pass the CLI path) to run");
    report("real-data smoke test with pretrained weights", o, true);
    return;
  }
  const fs::path out = fs::temp_directory_path() / "context_tracker_smoke";
  fs::remove_all(out);
  fs::create_directories(out);
  const fs::path cfg = out / "config.json";
  ct::run_io::write_json(cfg, nlohmann::json{{"weights", weights}});
  const std::string track = "\"" + cli + "\" track --config \"" + cfg.string() + "\" \"" + sequence + "\" --out \"" +
                            (out / "run").string() + "\"";
  o.check(std::system(track.c_str()) == 0, "track exits 0");
  try {
    const auto rec = ct::eval::load_otb_sequence(sequence);
    const auto run = ct::run_io::read_results(out / "run" / "results.jsonl");
    o.check(run.size() == rec.frames.size(), std::to_string(run.size()) + " boxes for " + std::to_string(rec.frames.size()) + " frames");
    bool in_range = true;
    for (std::size_t i = 1; i < run.size(); ++i) in_range = in_range && run[i].score > 0.0 && run[i].score < 1.0;
    o.check(in_range, "scores in (0, 1)");
    const std::string ev = "\"" + cli + "\" eval --run \"" + (out / "run" / "results.jsonl").string() + "\" --sequence \"" +
                           sequence + "\" --out \"" + (out / "eval").string() + "\"";
    o.check(std::system(ev.c_str()) == 0, "eval exits 0");
    const auto s = ct::eval::score_run(ct::eval::boxes_of(run), rec.gt);
    o.check(std::isfinite(s.dp20) && std::isfinite(s.auc), "DP@20 " + fmt(s.dp20, 4) + ", AUC " + fmt(s.auc, 4));
  } catch (const std::exception& e) {
    o.check(false, e.what());
  }
  report("real-data smoke test with pretrained weights", o);
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  gradient_correctness();
  loss_law();
  importance_oracles();
  state_machine();
  metrics();
  end_to_end();
  loss_ablation();
  real_data_smoke(cli);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << "\n";
  return failures == 0 ? 0 : 1;
}
