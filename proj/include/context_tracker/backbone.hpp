#ifndef CONTEXT_TRACKER_BACKBONE_HPP
#define CONTEXT_TRACKER_BACKBONE_HPP

// Frozen VGG-M style feature extractor:
//   conv1(7x7, s2) -> relu -> lrn -> maxpool(3, s2)
//   conv2(5x5, s2) -> relu -> lrn
//   conv3(3x3, s1, dilation 3) -> relu
// computed once per frame, with per-candidate features read off the shared
// map by RoIAlign.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "context_tracker/bbox.hpp"
#include "context_tracker/cwb.hpp"
#include "context_tracker/errors.hpp"
#include "context_tracker/image.hpp"
#include "context_tracker/nn.hpp"
#include "context_tracker/tensor.hpp"

namespace context_tracker::backbone {

/// Channel widths of the three conv layers.
struct BackboneArch {
  std::size_t conv1 = 96;
  std::size_t conv2 = 256;
  std::size_t conv3 = 512;

  static BackboneArch vgg_m() { return {96, 256, 512}; }
  static BackboneArch toy() { return {32, 64, 128}; }

  friend bool operator==(const BackboneArch&, const BackboneArch&) = default;
};

struct LayerSpec {
  std::size_t kernel;
  std::size_t stride;
  std::size_t dilation;
};

// Spatial layer chain (convs and pools) in order.
inline constexpr std::array<LayerSpec, 4> kLayerChain = {{
    {7, 2, 1},  // conv1
    {3, 2, 1},  // pool1
    {5, 2, 1},  // conv2
    {3, 1, 3},  // conv3, dilated
}};

struct ReceptiveField {
  std::size_t size = 1;
  std::size_t stride = 1;
  double first_center = 0.5;  // centre of output cell 0 in input pixel coordinates
};

/// Receptive field of the last layer of a (kernel, stride, dilation) chain.
template <typename Range>
ReceptiveField receptive_field(const Range& chain) {
  ReceptiveField rf;
  for (const LayerSpec& l : chain) {
    const std::size_t span = l.dilation * (l.kernel - 1);
    rf.first_center += static_cast<double>(rf.stride) * static_cast<double>(span) / 2.0;
    rf.size += span * rf.stride;
    rf.stride *= l.stride;
  }
  return rf;
}

inline constexpr std::size_t kConv3Window = 7;  // 3x3 at dilation 3

/// Smallest square input that yields one conv3 output.
inline std::size_t min_input_extent() {
  std::size_t need = 1;
  for (auto it = kLayerChain.rbegin(); it != kLayerChain.rend(); ++it) {
    need = (need - 1) * it->stride + it->dilation * (it->kernel - 1) + 1;
  }
  return need;
}

struct BackboneWeights {
  Tensor conv1_w, conv1_b;
  Tensor conv2_w, conv2_b;
  Tensor conv3_w, conv3_b;

  BackboneArch arch() const { return {conv1_w.dim(0), conv2_w.dim(0), conv3_w.dim(0)}; }
  std::size_t channels() const { return conv3_w.dim(0); }

  static Shape expected_shape(const std::string& layer, bool kernel, const BackboneArch& a) {
    if (layer == "conv1") return kernel ? Shape{a.conv1, 3, 7, 7} : Shape{a.conv1};
    if (layer == "conv2") return kernel ? Shape{a.conv2, a.conv1, 5, 5} : Shape{a.conv2};
    return kernel ? Shape{a.conv3, a.conv2, 3, 3} : Shape{a.conv3};
  }

  void validate(const BackboneArch& a) const {
    const std::array<std::pair<const char*, std::pair<const Tensor*, const Tensor*>>, 3> layers = {{
        {"conv1", {&conv1_w, &conv1_b}},
        {"conv2", {&conv2_w, &conv2_b}},
        {"conv3", {&conv3_w, &conv3_b}},
    }};
    for (const auto& [name, wb] : layers) {
      for (const bool kernel : {true, false}) {
        const Tensor& t = kernel ? *wb.first : *wb.second;
        const Shape want = expected_shape(name, kernel, a);
        if (t.shape() != want) {
          throw LoadError(LoadError::Kind::ShapeMismatch, std::string(name) + (kernel ? " kernel" : " bias") +
                                                              " has shape " + shape_str(t.shape()) + ", expected " +
                                                              shape_str(want));
        }
        if (!t.all_finite()) throw LoadError(LoadError::Kind::NonFinite, std::string(name) + " has NaN/Inf");
      }
    }
  }

  std::vector<cwb::Entry> to_entries() const {
    return {{"conv1.weight", conv1_w}, {"conv1.bias", conv1_b}, {"conv2.weight", conv2_w},
            {"conv2.bias", conv2_b},   {"conv3.weight", conv3_w}, {"conv3.bias", conv3_b}};
  }
};

/// Reads a CWB bundle and checks it against the architecture (VGG-M by default).
inline BackboneWeights load_cwb(const std::filesystem::path& path, const BackboneArch& arch = BackboneArch::vgg_m()) {
  const auto entries = cwb::read(path);
  auto find = [&](const std::string& layer, bool kernel) -> Tensor {
    const std::string name = layer + (kernel ? ".weight" : ".bias");
    for (const auto& e : entries) {
      if (e.name == name) return e.tensor;
    }
    throw LoadError(LoadError::Kind::ShapeMismatch, path.string() + ": missing entry '" + name + "' for " + layer);
  };
  BackboneWeights w{find("conv1", true), find("conv1", false), find("conv2", true),
                    find("conv2", false), find("conv3", true), find("conv3", false)};
  w.validate(arch);
  return w;
}

inline void save_cwb(const std::filesystem::path& path, const BackboneWeights& w) { cwb::write(path, w.to_entries()); }

/// Seeded random weights (He-style, scaled by `gain`) for running without a pretrained file.
inline BackboneWeights random_backbone(const BackboneArch& arch, std::uint64_t seed, double gain = 1.0) {
  std::mt19937_64 rng(seed);
  auto fill = [&](const Shape& shape) {
    Tensor t(shape);
    const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
    std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / fan_in));
    for (float& v : t.data()) v = static_cast<float>(dist(rng));
    return t;
  };
  BackboneWeights w;
  w.conv1_w = fill(BackboneWeights::expected_shape("conv1", true, arch));
  w.conv1_b = Tensor({arch.conv1});
  w.conv2_w = fill(BackboneWeights::expected_shape("conv2", true, arch));
  w.conv2_b = Tensor({arch.conv2});
  w.conv3_w = fill(BackboneWeights::expected_shape("conv3", true, arch));
  w.conv3_b = Tensor({arch.conv3});
  return w;
}

// ---------------------------------------------------------------------------
// Frame preprocessing
// ---------------------------------------------------------------------------

struct Preprocessed {
  Image image;
  double scale = 1.0;  // original -> preprocessed coordinates
};

inline double target_scale(const BBox& target, double target_side = 107.0) {
  require_valid(target, "preprocess_frame");
  return target_side / std::sqrt(target.w * target.h);
}

inline Image rescale(const Image& image, double scale) {
  const int w = std::max(1, static_cast<int>(std::lround(image.width * scale)));
  const int h = std::max(1, static_cast<int>(std::lround(image.height * scale)));
  return resize_bilinear(image, w, h);
}

/// Resizes the whole frame so the target's geometric-mean side becomes `target_side`.
inline Preprocessed preprocess_frame(const Image& image, const BBox& target, double target_side = 107.0) {
  const double scale = target_scale(target, target_side);
  return {rescale(image, scale), scale};
}

inline BBox scale_box(const BBox& b, double s) { return {b.x * s, b.y * s, b.w * s, b.h * s}; }

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

inline constexpr std::array<float, 3> kPixelMeans = {123.68f, 116.78f, 103.94f};

/// Conv3 map plus the affine map between feature cells and preprocessed pixels:
/// cell j is centred at pixel first_center + stride * j.
struct FeatureMap {
  Tensor tensor;  // 1 x C x h x w
  double stride = 8.0;
  double first_center = 0.0;

  std::size_t channels() const { return tensor.dim(1); }
  std::size_t height() const { return tensor.dim(2); }
  std::size_t width() const { return tensor.dim(3); }
};

struct ExtractOptions {
  int margin = 32;        // edge-replicated border added around the frame
  bool pad_small = true;  // edge-pad frames below the minimum analyzable size
  nn::LrnParams lrn{};
};

inline Tensor image_to_tensor(const Image& img) {
  Tensor t({1, 3, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)});
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) t[c * plane + i] = static_cast<float>(img.pixels[i * 3 + c]) - kPixelMeans[c];
  }
  return t;
}

inline FeatureMap extract_features(const Image& image, const BackboneWeights& w, const ExtractOptions& opt = {}) {
  if (image.width <= 0 || image.height <= 0) throw ContractError("extract_features: empty image");
  const int margin = std::max(0, opt.margin);
  const int min_side = static_cast<int>(min_input_extent());

  Image framed = image;
  if (margin > 0) {
    // replicate edges on all four sides
    Image padded(image.width + 2 * margin, image.height + 2 * margin);
    for (int y = 0; y < padded.height; ++y) {
      const int sy = std::clamp(y - margin, 0, image.height - 1);
      for (int x = 0; x < padded.width; ++x) {
        const int sx = std::clamp(x - margin, 0, image.width - 1);
        for (int c = 0; c < 3; ++c) padded.at(x, y, c) = image.at(sx, sy, c);
      }
    }
    framed = std::move(padded);
  }
  if (framed.width < min_side || framed.height < min_side) {
    if (!opt.pad_small) {
      throw ContractError("extract_features: undersized input " + std::to_string(framed.width) + "x" +
                          std::to_string(framed.height) + " (minimum " + std::to_string(min_side) + ")");
    }
    framed = pad_edge(framed, min_side, min_side);
  }

  Tensor x = image_to_tensor(framed);
  x = nn::conv2d(x, w.conv1_w, w.conv1_b, 2, 1, 0);
  x = nn::lrn(nn::relu(x), opt.lrn);
  x = nn::maxpool2d(x, 3, 2).output;
  x = nn::conv2d(x, w.conv2_w, w.conv2_b, 2, 1, 0);
  x = nn::lrn(nn::relu(x), opt.lrn);
  x = nn::conv2d(x, w.conv3_w, w.conv3_b, 1, 3, 0);
  x = nn::relu(x);

  const ReceptiveField rf = receptive_field(kLayerChain);
  FeatureMap fm;
  fm.tensor = std::move(x);
  fm.stride = static_cast<double>(rf.stride);
  fm.first_center = rf.first_center - margin;
  return fm;
}

// ---------------------------------------------------------------------------
// Adaptive RoIAlign
// ---------------------------------------------------------------------------

inline constexpr std::size_t kRoiOut = 7;
inline constexpr int kMaxSamplesPerAxis = 4;

namespace detail {

struct BilinearTap {
  std::size_t idx[4];
  double weight[4];
  bool valid;
};

// Bilinear tap at feature coordinates (y, x) where cell (i, j) sits at integer (i, j).
inline BilinearTap bilinear_tap(double y, double x, std::size_t h, std::size_t w) {
  BilinearTap t{};
  if (y < -1.0 || y > static_cast<double>(h) || x < -1.0 || x > static_cast<double>(w)) {
    t.valid = false;
    return t;
  }
  y = std::max(y, 0.0);
  x = std::max(x, 0.0);
  std::size_t y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  std::size_t y1, x1;
  if (y0 >= h - 1) {
    y0 = y1 = h - 1;
    y = static_cast<double>(y0);
  } else {
    y1 = y0 + 1;
  }
  if (x0 >= w - 1) {
    x0 = x1 = w - 1;
    x = static_cast<double>(x0);
  } else {
    x1 = x0 + 1;
  }
  const double ly = y - static_cast<double>(y0), lx = x - static_cast<double>(x0);
  const double hy = 1.0 - ly, hx = 1.0 - lx;
  t.idx[0] = y0 * w + x0;
  t.idx[1] = y0 * w + x1;
  t.idx[2] = y1 * w + x0;
  t.idx[3] = y1 * w + x1;
  t.weight[0] = hy * hx;
  t.weight[1] = hy * lx;
  t.weight[2] = ly * hx;
  t.weight[3] = ly * lx;
  t.valid = true;
  return t;
}

// One output cell = list of taps, each already divided by the sample count.
struct RoiPlan {
  std::size_t out = kRoiOut;
  std::vector<std::vector<BilinearTap>> cells;
};

inline RoiPlan plan_roi(std::size_t fh, std::size_t fw, double stride, double first_center, const BBox& roi,
                        std::size_t out) {
  require_valid(roi, "roi_align");
  if (out == 0) throw ContractError("roi_align: output size must be positive");
  // Box edges in feature-index space.
  const double x0 = (roi.x - first_center) / stride;
  const double y0 = (roi.y - first_center) / stride;
  const double x1 = (roi.x + roi.w - first_center) / stride;
  const double y1 = (roi.y + roi.h - first_center) / stride;
  if (x1 < -1.0 || y1 < -1.0 || x0 > static_cast<double>(fw) || y0 > static_cast<double>(fh)) {
    throw ContractError("roi_align: RoI lies entirely outside the feature map");
  }
  const double bin_w = (x1 - x0) / static_cast<double>(out);
  const double bin_h = (y1 - y0) / static_cast<double>(out);
  const int sx = std::clamp(static_cast<int>(std::ceil(bin_w)), 1, kMaxSamplesPerAxis);
  const int sy = std::clamp(static_cast<int>(std::ceil(bin_h)), 1, kMaxSamplesPerAxis);
  const double norm = 1.0 / static_cast<double>(sx * sy);

  RoiPlan plan;
  plan.out = out;
  plan.cells.resize(out * out);
  for (std::size_t i = 0; i < out; ++i) {
    for (std::size_t j = 0; j < out; ++j) {
      auto& cell = plan.cells[i * out + j];
      for (int a = 0; a < sy; ++a) {
        const double yy = y0 + bin_h * (static_cast<double>(i) + (a + 0.5) / sy);
        for (int b = 0; b < sx; ++b) {
          const double xx = x0 + bin_w * (static_cast<double>(j) + (b + 0.5) / sx);
          BilinearTap t = bilinear_tap(yy, xx, fh, fw);
          if (!t.valid) continue;
          for (double& wgt : t.weight) wgt *= norm;
          cell.push_back(t);
        }
      }
    }
  }
  return plan;
}

}  // namespace detail

/// Pools `roi` (preprocessed-frame pixels) to C x out x out. Each cell averages
/// ceil(bin extent) (clamped to [1, 4]) bilinear samples per axis. When
/// `channels` is non-empty only those channels are pooled, in that order.
inline Tensor roi_align(const FeatureMap& fm, const BBox& roi, std::size_t out = kRoiOut,
                        std::span<const int> channels = {}) {
  const std::size_t fh = fm.height(), fw = fm.width(), plane = fh * fw;
  const auto plan = detail::plan_roi(fh, fw, fm.stride, fm.first_center, roi, out);
  const std::size_t nc = channels.empty() ? fm.channels() : channels.size();
  Tensor result({nc, out, out});
  for (std::size_t k = 0; k < nc; ++k) {
    const std::size_t c = channels.empty() ? k : static_cast<std::size_t>(channels[k]);
    if (c >= fm.channels()) throw ContractError("roi_align: channel index out of range");
    const float* src = fm.tensor.ptr() + c * plane;
    float* dst = result.ptr() + k * out * out;
    for (std::size_t cell = 0; cell < out * out; ++cell) {
      double acc = 0.0;
      for (const auto& t : plan.cells[cell]) {
        acc += t.weight[0] * src[t.idx[0]] + t.weight[1] * src[t.idx[1]] + t.weight[2] * src[t.idx[2]] +
               t.weight[3] * src[t.idx[3]];
      }
      dst[cell] = static_cast<float>(acc);
    }
  }
  return result;
}

/// dL/d(feature map) for one RoI given dL/d(pooled output) (all channels).
inline Tensor roi_align_backward(const FeatureMap& fm, const BBox& roi, const Tensor& grad_out) {
  const std::size_t fh = fm.height(), fw = fm.width(), plane = fh * fw;
  const std::size_t out = grad_out.dim(1);
  if (grad_out.rank() != 3 || grad_out.dim(0) != fm.channels() || grad_out.dim(2) != out) {
    throw ContractError("roi_align_backward: grad_out must be C x out x out");
  }
  const auto plan = detail::plan_roi(fh, fw, fm.stride, fm.first_center, roi, out);
  Tensor g(fm.tensor.shape());
  for (std::size_t c = 0; c < fm.channels(); ++c) {
    float* dst = g.ptr() + c * plane;
    const float* src = grad_out.ptr() + c * out * out;
    for (std::size_t cell = 0; cell < out * out; ++cell) {
      for (const auto& t : plan.cells[cell]) {
        for (int q = 0; q < 4; ++q) dst[t.idx[q]] += static_cast<float>(t.weight[q] * src[cell]);
      }
    }
  }
  return g;
}

}  // namespace context_tracker::backbone

#endif  // CONTEXT_TRACKER_BACKBONE_HPP
