#ifndef CONTEXT_TRACKER_SYNTH_HPP
#define CONTEXT_TRACKER_SYNTH_HPP

// Deterministic synthetic sequences with exact ground truth: a textured target
// moving over a textured background, optional look-alike distractors, opaque
// occluding bars, scale schedules and sensor noise.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "context_tracker/bbox.hpp"
#include "context_tracker/errors.hpp"
#include "context_tracker/image.hpp"

namespace context_tracker::synth {

struct Waypoint {
  int frame = 0;
  double x = 0.0;  // top-left
  double y = 0.0;
};

struct ScaleKey {
  int frame = 0;
  double scale = 1.0;
};

struct Mover {
  double w = 40.0;
  double h = 40.0;
  std::vector<Waypoint> path;      // linear interpolation, held constant outside
  std::vector<ScaleKey> scales;    // empty = constant 1
  std::uint64_t texture_seed = 1;
};

struct Occluder {
  BBox rect;
  int start = 0;  // first covered frame (0-based)
  int end = 0;    // one past the last covered frame
  std::array<std::uint8_t, 3> color = {90, 90, 90};
};

struct SceneSpec {
  int width = 320;
  int height = 240;
  int length = 60;
  Mover target;
  std::vector<Mover> distractors;
  std::vector<Occluder> occluders;
  double noise_std = 3.0;
  double brightness_jitter = 0.04;
  int texture_cell = 8;
  bool clip_to_frame = true;
  std::uint64_t seed = 0;
};

struct Sequence {
  std::vector<Image> frames;
  std::vector<BBox> gt;
  std::vector<std::string> tags;
};

namespace detail {

inline std::pair<double, double> position_at(const std::vector<Waypoint>& path, int t) {
  if (path.empty()) return {0.0, 0.0};
  if (t <= path.front().frame) return {path.front().x, path.front().y};
  for (std::size_t i = 1; i < path.size(); ++i) {
    if (t <= path[i].frame) {
      const Waypoint& a = path[i - 1];
      const Waypoint& b = path[i];
      const double u = b.frame == a.frame ? 1.0 : static_cast<double>(t - a.frame) / (b.frame - a.frame);
      return {a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)};
    }
  }
  return {path.back().x, path.back().y};
}

inline double scale_at(const std::vector<ScaleKey>& keys, int t) {
  if (keys.empty()) return 1.0;
  if (t <= keys.front().frame) return keys.front().scale;
  for (std::size_t i = 1; i < keys.size(); ++i) {
    if (t <= keys[i].frame) {
      const double u = keys[i].frame == keys[i - 1].frame
                           ? 1.0
                           : static_cast<double>(t - keys[i - 1].frame) / (keys[i].frame - keys[i - 1].frame);
      return keys[i - 1].scale + u * (keys[i].scale - keys[i - 1].scale);
    }
  }
  return keys.back().scale;
}

// Exact integer rectangle of a mover at frame t.
inline BBox rect_at(const Mover& m, int t) {
  const auto [x, y] = position_at(m.path, t);
  const double s = scale_at(m.scales, t);
  return {std::round(x), std::round(y), std::max(1.0, std::round(m.w * s)), std::max(1.0, std::round(m.h * s))};
}

struct Texture {
  int cols = 1;
  int rows = 1;
  std::vector<std::array<std::uint8_t, 3>> cells;
};

// High-contrast colour cells, defined relative to the object so they scale with it.
inline Texture make_texture(std::uint64_t seed, double w, double h, int cell) {
  Texture tex;
  tex.cols = std::max(2, static_cast<int>(std::ceil(w / cell)));
  tex.rows = std::max(2, static_cast<int>(std::ceil(h / cell)));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, 255);
  tex.cells.resize(static_cast<std::size_t>(tex.cols * tex.rows));
  for (auto& c : tex.cells) c = {static_cast<std::uint8_t>(d(rng)), static_cast<std::uint8_t>(d(rng)),
                                 static_cast<std::uint8_t>(d(rng))};
  return tex;
}

inline void paint(std::vector<double>& canvas, int width, int height, const BBox& r, const Texture& tex,
                  double brightness) {
  const int x0 = static_cast<int>(r.x), y0 = static_cast<int>(r.y);
  const int x1 = static_cast<int>(r.x + r.w), y1 = static_cast<int>(r.y + r.h);
  for (int y = std::max(0, y0); y < std::min(height, y1); ++y) {
    const int ty = std::min(tex.rows - 1, static_cast<int>((y - y0) * tex.rows / r.h));
    for (int x = std::max(0, x0); x < std::min(width, x1); ++x) {
      const int tx = std::min(tex.cols - 1, static_cast<int>((x - x0) * tex.cols / r.w));
      const auto& c = tex.cells[static_cast<std::size_t>(ty * tex.cols + tx)];
      for (int k = 0; k < 3; ++k) canvas[(static_cast<std::size_t>(y) * width + x) * 3 + k] = c[k] * brightness;
    }
  }
}

// Smooth, muted background: coarse random grid, bilinearly upsampled.
inline std::vector<double> make_background(int width, int height, std::uint64_t seed) {
  constexpr int kCell = 24;
  const int gw = width / kCell + 2, gh = height / kCell + 2;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(60.0, 190.0);
  std::vector<double> grid(static_cast<std::size_t>(gw * gh * 3));
  for (double& v : grid) v = d(rng);
  std::vector<double> bg(static_cast<std::size_t>(width) * height * 3);
  for (int y = 0; y < height; ++y) {
    const double fy = static_cast<double>(y) / kCell;
    const int iy = static_cast<int>(fy);
    const double wy = fy - iy;
    for (int x = 0; x < width; ++x) {
      const double fx = static_cast<double>(x) / kCell;
      const int ix = static_cast<int>(fx);
      const double wx = fx - ix;
      for (int k = 0; k < 3; ++k) {
        auto g = [&](int gx, int gy) { return grid[static_cast<std::size_t>((gy * gw + gx) * 3 + k)]; };
        bg[(static_cast<std::size_t>(y) * width + x) * 3 + k] =
            (1 - wy) * ((1 - wx) * g(ix, iy) + wx * g(ix + 1, iy)) + wy * ((1 - wx) * g(ix, iy + 1) + wx * g(ix + 1, iy + 1));
      }
    }
  }
  return bg;
}

inline bool inside(const BBox& r, int width, int height) {
  return r.x >= 0 && r.y >= 0 && r.x + r.w <= width && r.y + r.h <= height;
}

inline BBox clip_rect(const BBox& r, int width, int height) {
  const double x0 = std::clamp(r.x, 0.0, width - 1.0), y0 = std::clamp(r.y, 0.0, height - 1.0);
  const double x1 = std::clamp(r.x + r.w, x0 + 1.0, static_cast<double>(width));
  const double y1 = std::clamp(r.y + r.h, y0 + 1.0, static_cast<double>(height));
  return {x0, y0, x1 - x0, y1 - y0};
}

}  // namespace detail

/// Challenge tags implied by the scene (OTB attribute names).
inline std::vector<std::string> derive_tags(const SceneSpec& spec) {
  std::vector<std::string> tags;
  if (!spec.distractors.empty()) tags.push_back("BC");
  if (!spec.occluders.empty()) tags.push_back("OCC");
  bool scale_varies = false;
  for (const auto& k : spec.target.scales) scale_varies |= std::abs(k.scale - 1.0) > 1e-9;
  if (scale_varies) tags.push_back("SV");
  double max_step = 0.0;
  for (int t = 1; t < spec.length; ++t) {
    max_step = std::max(max_step, center_distance(detail::rect_at(spec.target, t), detail::rect_at(spec.target, t - 1)));
  }
  if (max_step > 20.0) tags.push_back("FM");
  return tags;
}

inline Sequence generate(const SceneSpec& spec) {
  if (spec.length < 1) throw ContractError("synth: length must be >= 1");
  if (spec.width <= 0 || spec.height <= 0) throw ContractError("synth: frame size must be positive");
  if (!(spec.target.w > 0 && spec.target.h > 0)) throw ContractError("synth: target extents must be positive");
  if (!detail::inside(detail::rect_at(spec.target, 0), spec.width, spec.height)) {
    throw ContractError("synth: target must lie inside the frame at t = 0");
  }

  const detail::Texture target_tex = detail::make_texture(spec.target.texture_seed, spec.target.w, spec.target.h,
                                                          spec.texture_cell);
  std::vector<detail::Texture> distractor_tex;
  for (const Mover& m : spec.distractors) distractor_tex.push_back(detail::make_texture(m.texture_seed, m.w, m.h, spec.texture_cell));
  const std::vector<double> background = detail::make_background(spec.width, spec.height, spec.seed ^ 0x5bd1e995ULL);

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  Sequence seq;
  seq.tags = derive_tags(spec);
  for (int t = 0; t < spec.length; ++t) {
    BBox gt = detail::rect_at(spec.target, t);
    if (!detail::inside(gt, spec.width, spec.height)) {
      if (!spec.clip_to_frame) {
        throw ContractError("synth: target leaves the frame at t = " + std::to_string(t) + " with clipping disabled");
      }
      gt = detail::clip_rect(gt, spec.width, spec.height);
    }
    std::vector<double> canvas = background;
    for (std::size_t i = 0; i < spec.distractors.size(); ++i) {
      detail::paint(canvas, spec.width, spec.height, detail::rect_at(spec.distractors[i], t), distractor_tex[i], 1.0);
    }
    const double brightness = 1.0 + spec.brightness_jitter * noise(rng);
    detail::paint(canvas, spec.width, spec.height, detail::rect_at(spec.target, t), target_tex, brightness);
    for (const Occluder& o : spec.occluders) {
      if (t < o.start || t >= o.end) continue;
      const BBox r = detail::clip_rect(o.rect, spec.width, spec.height);
      for (int y = static_cast<int>(r.y); y < static_cast<int>(r.y + r.h); ++y) {
        for (int x = static_cast<int>(r.x); x < static_cast<int>(r.x + r.w); ++x) {
          for (int k = 0; k < 3; ++k) canvas[(static_cast<std::size_t>(y) * spec.width + x) * 3 + k] = o.color[k];
        }
      }
    }
    Image img(spec.width, spec.height);
    for (std::size_t i = 0; i < canvas.size(); ++i) {
      const double v = canvas[i] + (spec.noise_std > 0.0 ? spec.noise_std * noise(rng) : 0.0);
      img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
    seq.frames.push_back(std::move(img));
    seq.gt.push_back(gt);
  }
  return seq;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"easy_translation", "distractor", "occlusion", "scale_change"};
  return names;
}

/// Fixed scenarios on a 320x240, 60-frame canvas.
///  easy_translation: 48x48 target drifting diagonally, no clutter.
///  distractor:       a twin (same texture seed) crosses the target's path 14 px lower.
///  occlusion:        a bar hides the upper 70% of the target for frames 25-34.
///  scale_change:     target grows from 1.0x to 1.5x while translating.
inline SceneSpec preset(const std::string& name, std::uint64_t seed = 0) {
  SceneSpec s;
  s.seed = seed;
  s.target.texture_seed = 1000 + seed;
  if (name == "easy_translation") {
    s.target.w = s.target.h = 48;
    s.target.path = {{0, 40, 80}, {60, 220, 120}};
  } else if (name == "distractor") {
    s.target.w = s.target.h = 44;
    s.target.path = {{0, 30, 90}, {60, 240, 90}};
    Mover twin;
    twin.w = twin.h = 44;
    twin.texture_seed = s.target.texture_seed;
    twin.path = {{0, 240, 104}, {60, 30, 104}};
    s.distractors.push_back(twin);
  } else if (name == "occlusion") {
    s.target.w = s.target.h = 48;
    s.target.path = {{0, 60, 96}, {60, 180, 96}};
    // covers x over frames 25..34 (target x 110..128) and the top 70% of the target
    Occluder bar;
    bar.rect = {104, 90, 48 + 30, 6 + 0.7 * 48};
    bar.start = 25;
    bar.end = 35;
    s.occluders.push_back(bar);
  } else if (name == "scale_change") {
    s.target.w = s.target.h = 40;
    s.target.path = {{0, 60, 80}, {60, 170, 110}};
    s.target.scales = {{0, 1.0}, {59, 1.5}};
  } else {
    throw ContractError("unknown preset '" + name + "'");
  }
  return s;
}

/// Writes img/0001.ppm..., groundtruth_rect.txt (1-based x,y,w,h) and attributes.txt.
inline void write_sequence(const std::filesystem::path& dir, const Sequence& seq) {
  std::filesystem::create_directories(dir / "img");
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    std::ostringstream name;
    name << std::setw(4) << std::setfill('0') << (i + 1) << ".ppm";
    write_ppm(dir / "img" / name.str(), seq.frames[i]);
  }
  std::ofstream gt(dir / "groundtruth_rect.txt");
  if (!gt) throw DataError("cannot write " + (dir / "groundtruth_rect.txt").string());
  gt << std::setprecision(10);
  for (const BBox& b : seq.gt) gt << b.x + 1 << "," << b.y + 1 << "," << b.w << "," << b.h << "\n";
  std::ofstream attr(dir / "attributes.txt");
  for (std::size_t i = 0; i < seq.tags.size(); ++i) attr << (i ? "," : "") << seq.tags[i];
  attr << "\n";
}

}  // namespace context_tracker::synth

#endif  // CONTEXT_TRACKER_SYNTH_HPP
