#ifndef CONTEXT_TRACKER_EVAL_HPP
#define CONTEXT_TRACKER_EVAL_HPP

// One-pass evaluation on OTB-layout sequences: precision (center error <= t,
// t = 0..50 px) and success (IoU > t, t = 0, 0.05, ..., 1) curves.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "context_tracker/bbox.hpp"
#include "context_tracker/errors.hpp"
#include "context_tracker/image.hpp"
#include "context_tracker/tracker.hpp"

namespace context_tracker::eval {

inline const std::vector<std::string>& otb_attributes() {
  static const std::vector<std::string> a = {"IV", "SV", "OCC", "DEF", "MB", "FM", "IPR", "OPR", "OV", "BC", "LR"};
  return a;
}

struct SequenceRecord {
  std::string name;
  std::vector<std::filesystem::path> frames;
  std::vector<BBox> gt;
  std::vector<std::string> attributes;
};

struct CurvePoints {
  std::vector<double> thresholds;
  std::vector<double> values;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline std::vector<std::string> split_fields(const std::string& line) {
  std::string s = line;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::replace(s.begin(), s.end(), '\t', ' ');
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string f; in >> f;) out.push_back(f);
  return out;
}

inline bool is_image(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".jpg" || ext == ".jpeg" || ext == ".ppm" || ext == ".png" || ext == ".bmp";
}

}  // namespace detail

/// Parses OTB ground truth, 1-based x,y,w,h per line, into 0-based boxes.
inline std::vector<BBox> parse_groundtruth(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  std::vector<BBox> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != 4) {
      throw DataError(file.string() + ":" + std::to_string(lineno) + ": expected 4 fields, got " +
                      std::to_string(fields.size()));
    }
    double v[4];
    for (int i = 0; i < 4; ++i) {
      std::size_t used = 0;
      try {
        v[i] = std::stod(fields[static_cast<std::size_t>(i)], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != fields[static_cast<std::size_t>(i)].size() || !std::isfinite(v[i])) {
        throw DataError(file.string() + ":" + std::to_string(lineno) + ": malformed number '" +
                        fields[static_cast<std::size_t>(i)] + "'");
      }
    }
    out.push_back({v[0] - 1.0, v[1] - 1.0, v[2], v[3]});
  }
  if (out.empty()) throw DataError("empty ground truth file " + file.string());
  return out;
}

inline SequenceRecord load_otb_sequence(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("not a sequence directory: " + dir.string());
  SequenceRecord rec;
  rec.name = dir.filename().string();
  if (rec.name.empty()) rec.name = dir.parent_path().filename().string();
  rec.gt = parse_groundtruth(dir / "groundtruth_rect.txt");
  if (!fs::is_directory(dir / "img")) throw DataError("missing img/ under " + dir.string());
  for (const auto& e : fs::directory_iterator(dir / "img")) {
    if (e.is_regular_file() && detail::is_image(e.path())) rec.frames.push_back(e.path());
  }
  std::sort(rec.frames.begin(), rec.frames.end());
  if (rec.frames.size() != rec.gt.size()) {
    throw DataError(dir.string() + ": " + std::to_string(rec.frames.size()) + " frames but " +
                    std::to_string(rec.gt.size()) + " ground-truth boxes");
  }
  for (const char* name : {"attributes.txt", "attrs.txt"}) {
    std::ifstream in(dir / name);
    if (!in) continue;
    std::set<std::string> known(otb_attributes().begin(), otb_attributes().end());
    for (std::string line; std::getline(in, line);) {
      for (const auto& tag : detail::split_fields(line)) {
        if (!known.count(tag)) throw DataError(dir.string() + ": unknown attribute '" + tag + "'");
        if (std::find(rec.attributes.begin(), rec.attributes.end(), tag) == rec.attributes.end()) {
          rec.attributes.push_back(tag);
        }
      }
    }
    break;
  }
  return rec;
}

inline std::vector<BBox> boxes_of(const tracker::TrackRun& run) {
  std::vector<BBox> out;
  out.reserve(run.size());
  for (const auto& r : run) out.push_back(r.box);
  return out;
}

inline void require_lengths(std::size_t run, std::size_t gt, const char* what) {
  if (run != gt) {
    throw DataError(std::string(what) + ": run has " + std::to_string(run) + " boxes, ground truth has " +
                    std::to_string(gt));
  }
  if (run == 0) throw DataError(std::string(what) + ": empty run");
}

inline CurvePoints precision_curve(std::span<const BBox> run, std::span<const BBox> gt) {
  require_lengths(run.size(), gt.size(), "precision_curve");
  std::vector<double> err(run.size());
  for (std::size_t i = 0; i < run.size(); ++i) err[i] = center_distance(run[i], gt[i]);
  CurvePoints c;
  for (int t = 0; t <= 50; ++t) {
    const auto hits = std::count_if(err.begin(), err.end(), [t](double e) { return e <= t; });
    c.thresholds.push_back(t);
    c.values.push_back(static_cast<double>(hits) / static_cast<double>(err.size()));
  }
  return c;
}

inline CurvePoints success_curve(std::span<const BBox> run, std::span<const BBox> gt) {
  require_lengths(run.size(), gt.size(), "success_curve");
  std::vector<double> ov(run.size());
  for (std::size_t i = 0; i < run.size(); ++i) ov[i] = iou(run[i], gt[i]);
  CurvePoints c;
  for (int i = 0; i <= 20; ++i) {
    const double t = i / 20.0;
    const auto hits = std::count_if(ov.begin(), ov.end(), [t](double o) { return o > t; });
    c.thresholds.push_back(t);
    c.values.push_back(static_cast<double>(hits) / static_cast<double>(ov.size()));
  }
  return c;
}

/// Precision rate at the given pixel threshold (must lie on the curve's grid).
inline double dp_at(const CurvePoints& c, double threshold = 20.0) {
  for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
    if (c.thresholds[i] == threshold) return c.values[i];
  }
  throw ContractError("dp_at: threshold not on the curve grid");
}

inline double auc(const CurvePoints& c) {
  if (c.values.empty()) throw ContractError("auc: empty curve");
  double s = 0.0;
  for (const double v : c.values) s += v;
  return s / static_cast<double>(c.values.size());
}

struct Scores {
  double dp20 = 0.0;
  double auc = 0.0;
  double mean_iou = 0.0;
  CurvePoints precision;
  CurvePoints success;
};

inline Scores score_run(std::span<const BBox> run, std::span<const BBox> gt) {
  Scores s;
  s.precision = precision_curve(run, gt);
  s.success = success_curve(run, gt);
  s.dp20 = dp_at(s.precision, 20.0);
  s.auc = auc(s.success);
  for (std::size_t i = 0; i < run.size(); ++i) s.mean_iou += iou(run[i], gt[i]);
  s.mean_iou /= static_cast<double>(run.size());
  return s;
}

struct AttributeRow {
  std::string attribute;
  std::size_t sequences = 0;
  double dp20 = 0.0;
  double auc = 0.0;
};

/// Per attribute, mean DP@20 and AUC over member sequences; attributes with no
/// members are omitted. Rows follow the canonical OTB attribute order.
inline std::vector<AttributeRow> attribute_report(const std::map<std::string, tracker::TrackRun>& runs,
                                                  const std::vector<SequenceRecord>& records) {
  std::map<std::string, AttributeRow> acc;
  for (const auto& rec : records) {
    const auto it = runs.find(rec.name);
    if (it == runs.end()) throw DataError("attribute_report: no run for sequence '" + rec.name + "'");
    const auto boxes = boxes_of(it->second);
    const Scores s = score_run(boxes, rec.gt);
    for (const auto& a : rec.attributes) {
      AttributeRow& row = acc[a];
      row.attribute = a;
      row.sequences += 1;
      row.dp20 += s.dp20;
      row.auc += s.auc;
    }
  }
  std::vector<AttributeRow> out;
  for (const auto& a : otb_attributes()) {
    auto it = acc.find(a);
    if (it == acc.end()) continue;
    AttributeRow r = it->second;
    r.dp20 /= static_cast<double>(r.sequences);
    r.auc /= static_cast<double>(r.sequences);
    out.push_back(r);
  }
  return out;
}

/// Any tracker: given frame count, frame loader and frame-1 box, returns one result per frame.
using TrackerFn = std::function<tracker::TrackRun(std::size_t, const std::function<Image(std::size_t)>&, const BBox&)>;

struct OpeResult {
  tracker::TrackRun run;
  Scores scores;
};

/// Initialise from frame-1 ground truth, track once, score. No restarts.
inline OpeResult ope_run(const TrackerFn& track, const SequenceRecord& rec) {
  if (rec.gt.empty() || rec.gt.size() != rec.frames.size()) throw DataError("ope_run: invalid sequence record");
  auto loader = [&](std::size_t i) { return load_image(rec.frames.at(i)); };
  OpeResult r;
  r.run = track(rec.frames.size(), loader, rec.gt.front());
  const auto boxes = boxes_of(r.run);
  r.scores = score_run(boxes, rec.gt);
  return r;
}

inline TrackerFn make_tracker_fn(const tracker::TrackerConfig& cfg,
                                 std::shared_ptr<const backbone::BackboneWeights> weights) {
  return [cfg, weights](std::size_t n, const std::function<Image(std::size_t)>& frame_at, const BBox& gt0) {
    return tracker::track_sequence(n, frame_at, gt0, cfg, weights);
  };
}

}  // namespace context_tracker::eval

#endif  // CONTEXT_TRACKER_EVAL_HPP
