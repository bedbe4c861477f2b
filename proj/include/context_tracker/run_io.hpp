#ifndef CONTEXT_TRACKER_RUN_IO_HPP
#define CONTEXT_TRACKER_RUN_IO_HPP

// Run files: results.jsonl (one frame per line), curve CSVs, score JSON.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>

#include <json.hpp>

#include "context_tracker/errors.hpp"
#include "context_tracker/eval.hpp"
#include "context_tracker/tracker.hpp"

namespace context_tracker::run_io {

using nlohmann::json;

inline tracker::UpdateKind parse_update(const std::string& s) {
  if (s == "none") return tracker::UpdateKind::None;
  if (s == "short") return tracker::UpdateKind::Short;
  if (s == "long") return tracker::UpdateKind::Long;
  throw DataError("unknown update kind '" + s + "'");
}

inline json frame_json(const tracker::FrameResult& r) {
  return json{{"frame", r.frame}, {"x", r.box.x},   {"y", r.box.y},
              {"w", r.box.w},     {"h", r.box.h},   {"score", r.score},
              {"success", r.success}, {"update", tracker::to_string(r.update)}};
}

inline void write_results(const std::filesystem::path& path, const tracker::TrackRun& run) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : run) out << frame_json(r).dump() << "\n";
}

inline tracker::TrackRun read_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  tracker::TrackRun run;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      tracker::FrameResult r;
      r.frame = j.at("frame").get<int>();
      r.box = {j.at("x").get<double>(), j.at("y").get<double>(), j.at("w").get<double>(), j.at("h").get<double>()};
      r.score = j.value("score", 1.0);
      r.success = j.value("success", true);
      r.update = parse_update(j.value("update", std::string("none")));
      run.push_back(r);
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (run.empty()) throw DataError("empty run file " + path.string());
  return run;
}

/// "threshold,value" per line.
inline void write_curve_csv(const std::filesystem::path& path, const eval::CurvePoints& c) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "threshold,value\n" << std::setprecision(10);
  for (std::size_t i = 0; i < c.thresholds.size(); ++i) out << c.thresholds[i] << "," << c.values[i] << "\n";
}

inline json curve_json(const eval::CurvePoints& c) { return json{{"thresholds", c.thresholds}, {"values", c.values}}; }

inline json scores_json(const eval::Scores& s) {
  return json{{"dp20", s.dp20},
              {"auc", s.auc},
              {"mean_iou", s.mean_iou},
              {"precision", curve_json(s.precision)},
              {"success", curve_json(s.success)}};
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace context_tracker::run_io

#endif  // CONTEXT_TRACKER_RUN_IO_HPP
