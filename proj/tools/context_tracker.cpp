// context-tracker: tracking runs, evaluation and diagnostics from the command line.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>

#include "context_tracker/config.hpp"
#include "context_tracker/eval.hpp"
#include "context_tracker/gradcheck.hpp"
#include "context_tracker/loss.hpp"
#include "context_tracker/run_io.hpp"
#include "context_tracker/synth.hpp"

namespace fs = std::filesystem;
namespace ct = context_tracker;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitTracking = 3;
constexpr int kExitCheckFailed = 4;

struct CommonOpts {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool toy = false;
  std::string out;
};

ct::config::RunConfig load_run_config(const CommonOpts& o) {
  ct::config::RunConfig c = o.config.empty() ? ct::config::parse("{}") : ct::config::load(o.config);
  if (o.toy || c.toy_backbone) ct::config::apply_toy_profile(c);
  if (o.seed) c.tracker.seed = *o.seed;
  if (!o.out.empty()) c.out_dir = o.out;
  c.tracker.validate();
  return c;
}

fs::path prepare_out(const std::string& dir) {
  if (dir.empty()) throw ct::ConfigError("no output directory (use --out or 'out_dir')");
  fs::create_directories(dir);
  return dir;
}

ct::eval::SequenceRecord load_sequence(const std::string& dir, std::size_t max_frames) {
  if (dir.empty()) throw ct::ConfigError("no sequence directory given");
  ct::eval::SequenceRecord rec = ct::eval::load_otb_sequence(dir);
  if (max_frames > 0 && rec.frames.size() > max_frames) {
    rec.frames.resize(max_frames);
    rec.gt.resize(max_frames);
  }
  return rec;
}

int cmd_track(const CommonOpts& o, std::string sequence, std::size_t max_frames) {
  ct::config::RunConfig c = load_run_config(o);
  if (!sequence.empty()) c.sequence = sequence;
  const fs::path out = prepare_out(c.out_dir);
  const auto rec = load_sequence(c.sequence, max_frames);
  const auto weights = ct::config::resolve_backbone(c);
  const auto result = ct::eval::ope_run(ct::eval::make_tracker_fn(c.tracker, weights), rec);

  ct::run_io::write_results(out / "results.jsonl", result.run);
  json scores = ct::run_io::scores_json(result.scores);
  scores["sequence"] = rec.name;
  scores["frames"] = rec.frames.size();
  ct::run_io::write_json(out / "scores.json", scores);
  ct::run_io::write_curve_csv(out / "precision.csv", result.scores.precision);
  ct::run_io::write_curve_csv(out / "success.csv", result.scores.success);
  std::cout << rec.name << ": " << rec.frames.size() << " frames, DP@20 " << result.scores.dp20 << ", AUC "
            << result.scores.auc << ", mean IoU " << result.scores.mean_iou << "\n";
  return 0;
}

// A run file is either JSONL results or an OTB-style box list.
ct::tracker::TrackRun read_run(const fs::path& p) {
  if (p.extension() == ".jsonl" || p.extension() == ".json") return ct::run_io::read_results(p);
  ct::tracker::TrackRun run;
  int frame = 1;
  for (const ct::BBox& b : ct::eval::parse_groundtruth(p)) run.push_back({frame++, b, 1.0, true, {}});
  return run;
}

fs::path locate_run(const fs::path& run, const std::string& seq, std::size_t nseq) {
  if (fs::is_regular_file(run)) {
    if (nseq != 1) throw ct::DataError("run file " + run.string() + " given for " + std::to_string(nseq) + " sequences");
    return run;
  }
  for (const fs::path& cand : {run / seq / "results.jsonl", run / (seq + ".jsonl"), run / (seq + ".txt")}) {
    if (fs::is_regular_file(cand)) return cand;
  }
  throw ct::DataError("no result for sequence '" + seq + "' under " + run.string());
}

std::string run_label(const fs::path& run) {
  if (fs::is_regular_file(run) && run.filename() == "results.jsonl") return run.parent_path().filename().string();
  return fs::is_regular_file(run) ? run.stem().string() : run.filename().string();
}

ct::eval::CurvePoints mean_curve(const std::vector<ct::eval::CurvePoints>& cs) {
  ct::eval::CurvePoints m = cs.front();
  for (std::size_t i = 1; i < cs.size(); ++i)
    for (std::size_t j = 0; j < m.values.size(); ++j) m.values[j] += cs[i].values[j];
  for (double& v : m.values) v /= static_cast<double>(cs.size());
  return m;
}

int cmd_eval(const std::vector<std::string>& runs, const std::vector<std::string>& sequences, const std::string& out_dir) {
  if (runs.empty() || sequences.empty()) throw ct::ConfigError("eval needs at least one --run and one --sequence");
  std::vector<ct::eval::SequenceRecord> recs;
  for (const auto& s : sequences) recs.push_back(ct::eval::load_otb_sequence(s));

  std::vector<json> rows;
  std::map<std::string, int> seen;
  for (const auto& r : runs) {
    std::string label = run_label(r);
    if (seen[label]++ > 0) label += "_" + std::to_string(seen[label]);
    std::map<std::string, ct::tracker::TrackRun> by_seq;
    std::vector<ct::eval::CurvePoints> prec, succ;
    json per_seq = json::object();
    double dp = 0, auc = 0, miou = 0;
    for (const auto& rec : recs) {
      const auto run = read_run(locate_run(r, rec.name, recs.size()));
      const auto boxes = ct::eval::boxes_of(run);
      const auto s = ct::eval::score_run(boxes, rec.gt);
      by_seq[rec.name] = run;
      prec.push_back(s.precision);
      succ.push_back(s.success);
      dp += s.dp20;
      auc += s.auc;
      miou += s.mean_iou;
      per_seq[rec.name] = {{"dp20", s.dp20}, {"auc", s.auc}, {"mean_iou", s.mean_iou}};
    }
    const double n = static_cast<double>(recs.size());
    json attrs = json::array();
    for (const auto& a : ct::eval::attribute_report(by_seq, recs)) {
      attrs.push_back({{"attribute", a.attribute}, {"sequences", a.sequences}, {"dp20", a.dp20}, {"auc", a.auc}});
    }
    const auto p = mean_curve(prec), s = mean_curve(succ);
    rows.push_back({{"run", label},
                    {"dp20", dp / n},
                    {"auc", auc / n},
                    {"mean_iou", miou / n},
                    {"sequences", per_seq},
                    {"attributes", attrs},
                    {"precision", ct::run_io::curve_json(p)},
                    {"success", ct::run_io::curve_json(s)}});
    if (!out_dir.empty()) {
      const fs::path out = prepare_out(out_dir);
      ct::run_io::write_curve_csv(out / (label + "_precision.csv"), p);
      ct::run_io::write_curve_csv(out / (label + "_success.csv"), s);
    }
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const json& a, const json& b) { return a["auc"].get<double>() > b["auc"].get<double>(); });
  const json report{{"runs", rows}};
  if (!out_dir.empty()) ct::run_io::write_json(prepare_out(out_dir) / "report.json", report);
  std::cout << std::fixed << std::setprecision(4);
  for (const auto& row : rows) {
    std::cout << row["run"].get<std::string>() << ": \"dp20\": " << row["dp20"].get<double>()
              << ", \"auc\": " << row["auc"].get<double>() << "\n";
  }
  return 0;
}

int cmd_synth(const std::string& preset, std::uint64_t seed, const std::string& out) {
  const auto seq = ct::synth::generate(ct::synth::preset(preset, seed));
  ct::synth::write_sequence(prepare_out(out), seq);
  std::cout << "wrote " << seq.frames.size() << " frames of '" << preset << "' to " << out << "\n";
  return 0;
}

int cmd_loss_table(const ct::loss::CsLossParams& prm, int steps, const std::string& out) {
  if (steps < 2) throw ct::ConfigError("--steps must be >= 2");
  prm.validate();
  std::ostringstream csv;
  csv << "p_t,ce,focal,cs,cs_over_ce\n" << std::fixed;
  for (int i = 1; i < steps; ++i) {
    const double p = static_cast<double>(i) / steps;
    const double ce = ct::loss::ce_loss(p, 1), cs = ct::loss::cs_loss(p, 1, prm);
    csv << std::setprecision(4) << p << std::setprecision(6) << "," << ce << "," << ct::loss::focal_loss(p, 1, prm.nu)
        << "," << cs << "," << cs / ce << "\n";
  }
  if (out.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream(prepare_out(out) / "loss_table.csv") << csv.str();
  }
  return 0;
}

int cmd_grad_check(std::uint64_t seed, std::size_t instances) {
  ct::gradcheck::SuiteConfig cfg;
  cfg.seed = seed;
  cfg.instances = instances;
  bool ok = true;
  for (const auto& r : ct::gradcheck::run_suite(cfg)) {
    std::printf("%-16s %4zu instances  max rel err %.3e  %s\n", r.op.c_str(), r.instances, r.max_rel_err,
                r.passed() ? "ok" : "FAILED");
    ok = ok && r.passed();
  }
  return ok ? 0 : kExitCheckFailed;
}

int cmd_da_report(const CommonOpts& o, std::string sequence) {
  ct::config::RunConfig c = load_run_config(o);
  if (!sequence.empty()) c.sequence = sequence;
  if (!c.tracker.domain_adaptation) throw ct::ConfigError("da-report needs domain_adaptation enabled");
  const auto rec = load_sequence(c.sequence, 1);
  ct::tracker::Tracker tr(c.tracker, ct::config::resolve_backbone(c));
  tr.init(ct::load_image(rec.frames.front()), rec.gt.front());
  const auto& rep = tr.init_report();
  const json j{{"sequence", rec.name},
               {"mask_k", c.tracker.mask_k},
               {"importance_source", c.tracker.importance_source == ct::adapt::ImportanceSource::Score ? "score" : "loss"},
               {"delta", rep.importance.delta},
               {"mask", tr.mask().indices},
               {"loss_curve", rep.da_loss_curve}};
  if (c.out_dir.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    ct::run_io::write_json(prepare_out(c.out_dir) / "da_report.json", j);
  }
  return 0;
}

void add_common(CLI::App* sub, CommonOpts& o, bool with_toy) {
  sub->add_option("--config", o.config, "JSON run configuration");
  sub->add_option("--seed", o.seed, "tracker seed (overrides the config)");
  sub->add_option("--out", o.out, "output directory");
  if (with_toy) sub->add_flag("--toy-backbone", o.toy, "use the small seeded random backbone");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware tracking with domain-adapted channels"};
  app.require_subcommand(1);

  CommonOpts common;
  std::string sequence;
  std::size_t max_frames = 0;
  auto* track = app.add_subcommand("track", "track one sequence from its first-frame box");
  add_common(track, common, true);
  track->add_option("sequence", sequence, "sequence directory (img/ + groundtruth_rect.txt)");
  track->add_option("--max-frames", max_frames, "stop after this many frames");

  std::vector<std::string> runs, sequences;
  std::string eval_out;
  auto* ev = app.add_subcommand("eval", "score run files against ground truth");
  ev->add_option("--run", runs, "run file or directory (repeatable)")->required();
  ev->add_option("--sequence", sequences, "sequence directory (repeatable)")->required();
  ev->add_option("--out", eval_out, "directory for report.json and curve CSVs");

  std::string preset;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  auto* sy = app.add_subcommand("synth", "write a synthetic sequence");
  sy->add_option("preset", preset, "preset name")->required()->check(CLI::IsMember(ct::synth::preset_names()));
  sy->add_option("--seed", synth_seed);
  sy->add_option("--out", synth_out)->required();

  ct::loss::CsLossParams prm;
  int steps = 100;
  std::string table_out;
  auto* lt = app.add_subcommand("loss-table", "CSV of the three losses over a p_t grid");
  lt->add_option("--alpha", prm.alpha);
  lt->add_option("--beta", prm.beta);
  lt->add_option("--gamma", prm.gamma);
  lt->add_option("--nu", prm.nu, "focal exponent");
  lt->add_option("--steps", steps, "grid is i/steps for i in 1..steps-1");
  lt->add_option("--out", table_out);

  std::uint64_t gc_seed = 0;
  std::size_t gc_instances = 100;
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every backward pass");
  gc->add_option("--seed", gc_seed);
  gc->add_option("--instances", gc_instances, "random instances per operation");

  auto* da = app.add_subcommand("da-report", "channel importance and mask from frame 1");
  add_common(da, common, true);
  da->add_option("sequence", sequence, "sequence directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*track) return cmd_track(common, sequence, max_frames);
    if (*ev) return cmd_eval(runs, sequences, eval_out);
    if (*sy) return cmd_synth(preset, synth_seed, synth_out);
    if (*lt) return cmd_loss_table(prm, steps, table_out);
    if (*gc) return cmd_grad_check(gc_seed, gc_instances);
    if (*da) return cmd_da_report(common, sequence);
  } catch (const ct::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ct::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ct::LoadError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ct::ContractError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "tracking error: " << e.what() << "\n";
    return kExitTracking;
  }
  return 0;
}
