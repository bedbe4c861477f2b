#ifndef CONTEXT_TRACKER_CONFIG_HPP
#define CONTEXT_TRACKER_CONFIG_HPP

// JSON run configuration: a flat object mirroring TrackerConfig plus paths and
// backbone selection. Unknown keys and wrongly typed values are rejected.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "context_tracker/backbone.hpp"
#include "context_tracker/errors.hpp"
#include "context_tracker/tracker.hpp"

namespace context_tracker::config {

using nlohmann::json;

// Toy profile: the 128-channel stand-in backbone keeps the same fraction of
// channels as 420 of 512, and a narrower head keeps desk-scale runs short.
inline constexpr std::size_t kToyMaskK = 105;
inline constexpr std::size_t kToyHeadWidth = 64;
inline constexpr double kToyGain = 1.0;
// A freshly initialised head on random features barely moves in 50 steps at the
// default rates, so the toy profile doubles them (same 3:5 ratio).
inline constexpr double kToyFirstFrameLr = 0.003;
inline constexpr double kToyOnlineLr = 0.005;

struct RunConfig {
  tracker::TrackerConfig tracker;
  std::string weights;
  std::string sequence;
  std::string out_dir;
  bool toy_backbone = false;
  std::uint64_t backbone_seed = 7;
  std::set<std::string> explicit_keys;  // keys present in the loaded document

  bool is_set(const std::string& key) const { return explicit_keys.count(key) > 0; }
};

namespace detail {

template <typename T>
T get(const json& v, const std::string& key) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError("config key '" + key + "': expected a boolean");
    return v.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError("config key '" + key + "': expected a string");
    return v.get<std::string>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw ConfigError("config key '" + key + "': expected an integer");
    if (std::is_unsigned_v<T> && v.get<long long>() < 0) throw ConfigError("config key '" + key + "': must be >= 0");
    return v.get<T>();
  } else {
    if (!v.is_number()) throw ConfigError("config key '" + key + "': expected a number");
    return v.get<T>();
  }
}

using Setter = std::function<void(RunConfig&, const json&, const std::string&)>;

template <typename T, typename F>
Setter field(F access) {
  return [access](RunConfig& c, const json& v, const std::string& key) { access(c) = get<T>(v, key); };
}

inline const std::map<std::string, Setter>& setters() {
  using std::string;
  static const std::map<string, Setter> table = {
      {"tau_short", field<int>([](RunConfig& c) -> int& { return c.tracker.tau_short; })},
      {"tau_long", field<int>([](RunConfig& c) -> int& { return c.tracker.tau_long; })},
      {"tau_int", field<int>([](RunConfig& c) -> int& { return c.tracker.tau_int; })},
      {"score_threshold", field<double>([](RunConfig& c) -> double& { return c.tracker.score_threshold; })},
      {"first_frame_iters", field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.tracker.first_frame_iters; })},
      {"first_frame_lr", field<double>([](RunConfig& c) -> double& { return c.tracker.first_frame_lr; })},
      {"online_iters", field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.tracker.online_iters; })},
      {"online_lr", field<double>([](RunConfig& c) -> double& { return c.tracker.online_lr; })},
      {"momentum", field<double>([](RunConfig& c) -> double& { return c.tracker.momentum; })},
      {"weight_decay", field<double>([](RunConfig& c) -> double& { return c.tracker.weight_decay; })},
      {"loss",
       [](RunConfig& c, const json& v, const string& key) {
         try {
           c.tracker.loss_kind = loss::parse_loss_kind(get<string>(v, key));
         } catch (const ContractError& e) {
           throw ConfigError("config key '" + key + "': " + e.what());
         }
       }},
      {"cs_alpha", field<double>([](RunConfig& c) -> double& { return c.tracker.loss_params.alpha; })},
      {"cs_beta", field<double>([](RunConfig& c) -> double& { return c.tracker.loss_params.beta; })},
      {"cs_gamma", field<double>([](RunConfig& c) -> double& { return c.tracker.loss_params.gamma; })},
      {"focal_nu", field<double>([](RunConfig& c) -> double& { return c.tracker.loss_params.nu; })},
      {"trans_sigma_factor", field<double>([](RunConfig& c) -> double& { return c.tracker.sampler.trans_sigma_factor; })},
      {"scale_sigma", field<double>([](RunConfig& c) -> double& { return c.tracker.sampler.scale_sigma; })},
      {"scale_base", field<double>([](RunConfig& c) -> double& { return c.tracker.sampler.scale_base; })},
      {"candidates_per_frame",
       field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.tracker.candidates_per_frame; })},
      {"domain_adaptation", field<bool>([](RunConfig& c) -> bool& { return c.tracker.domain_adaptation; })},
      {"mask_k", field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.tracker.mask_k; })},
      {"importance_source",
       [](RunConfig& c, const json& v, const string& key) {
         try {
           c.tracker.importance_source = adapt::parse_importance_source(get<string>(v, key));
         } catch (const ContractError& e) {
           throw ConfigError("config key '" + key + "': " + e.what());
         }
       }},
      {"ranking",
       [](RunConfig& c, const json& v, const string& key) {
         try {
           c.tracker.ranking = adapt::parse_ranking(get<string>(v, key));
         } catch (const ContractError& e) {
           throw ConfigError("config key '" + key + "': " + e.what());
         }
       }},
      {"da_lr", field<double>([](RunConfig& c) -> double& { return c.tracker.da_lr; })},
      {"da_iters", field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.tracker.da_iters; })},
      {"head_width", field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.tracker.head_width; })},
      {"use_regressor", field<bool>([](RunConfig& c) -> bool& { return c.tracker.use_regressor; })},
      {"regressor_samples", field<std::size_t>([](RunConfig& c) -> std::size_t& { return c.tracker.regressor_samples; })},
      {"regressor_min_iou", field<double>([](RunConfig& c) -> double& { return c.tracker.regressor_min_iou; })},
      {"regressor_lambda", field<double>([](RunConfig& c) -> double& { return c.tracker.regressor_lambda; })},
      {"target_side", field<double>([](RunConfig& c) -> double& { return c.tracker.target_side; })},
      {"feature_margin", field<int>([](RunConfig& c) -> int& { return c.tracker.feature_margin; })},
      {"seed", field<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.tracker.seed; })},
      {"weights", field<string>([](RunConfig& c) -> string& { return c.weights; })},
      {"sequence", field<string>([](RunConfig& c) -> string& { return c.sequence; })},
      {"out_dir", field<string>([](RunConfig& c) -> string& { return c.out_dir; })},
      {"toy_backbone", field<bool>([](RunConfig& c) -> bool& { return c.toy_backbone; })},
      {"backbone_seed", field<std::uint64_t>([](RunConfig& c) -> std::uint64_t& { return c.backbone_seed; })},
  };
  return table;
}

}  // namespace detail

inline RunConfig from_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig cfg;
  const auto& table = detail::setters();
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const auto s = table.find(it.key());
    if (s == table.end()) throw ConfigError("unknown config key '" + it.key() + "'");
    s->second(cfg, it.value(), it.key());
    cfg.explicit_keys.insert(it.key());
  }
  return cfg;
}

inline RunConfig parse(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  return from_json(doc);
}

inline RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline json to_json(const RunConfig& c) {
  const auto& t = c.tracker;
  return json{{"tau_short", t.tau_short},
              {"tau_long", t.tau_long},
              {"tau_int", t.tau_int},
              {"score_threshold", t.score_threshold},
              {"first_frame_iters", t.first_frame_iters},
              {"first_frame_lr", t.first_frame_lr},
              {"online_iters", t.online_iters},
              {"online_lr", t.online_lr},
              {"momentum", t.momentum},
              {"weight_decay", t.weight_decay},
              {"loss", loss::to_string(t.loss_kind)},
              {"cs_alpha", t.loss_params.alpha},
              {"cs_beta", t.loss_params.beta},
              {"cs_gamma", t.loss_params.gamma},
              {"focal_nu", t.loss_params.nu},
              {"trans_sigma_factor", t.sampler.trans_sigma_factor},
              {"scale_sigma", t.sampler.scale_sigma},
              {"scale_base", t.sampler.scale_base},
              {"candidates_per_frame", t.candidates_per_frame},
              {"domain_adaptation", t.domain_adaptation},
              {"mask_k", t.mask_k},
              {"importance_source", t.importance_source == adapt::ImportanceSource::Score ? "score" : "loss"},
              {"ranking", t.ranking == adapt::Ranking::Absolute ? "abs" : "signed"},
              {"da_lr", t.da_lr},
              {"da_iters", t.da_iters},
              {"head_width", t.head_width},
              {"use_regressor", t.use_regressor},
              {"regressor_samples", t.regressor_samples},
              {"regressor_min_iou", t.regressor_min_iou},
              {"regressor_lambda", t.regressor_lambda},
              {"target_side", t.target_side},
              {"feature_margin", t.feature_margin},
              {"seed", t.seed},
              {"weights", c.weights},
              {"sequence", c.sequence},
              {"out_dir", c.out_dir},
              {"toy_backbone", c.toy_backbone},
              {"backbone_seed", c.backbone_seed}};
}

/// Shrinks mask_k and the head width for the toy backbone unless the document set them.
inline void apply_toy_profile(RunConfig& c) {
  c.toy_backbone = true;
  if (!c.is_set("mask_k")) c.tracker.mask_k = kToyMaskK;
  if (!c.is_set("head_width")) c.tracker.head_width = kToyHeadWidth;
  if (!c.is_set("first_frame_lr")) c.tracker.first_frame_lr = kToyFirstFrameLr;
  if (!c.is_set("online_lr")) c.tracker.online_lr = kToyOnlineLr;
}

inline backbone::BackboneWeights toy_backbone(std::uint64_t seed) {
  return backbone::random_backbone(backbone::BackboneArch::toy(), seed, kToyGain);
}

/// Toy weights when requested (or when no weights path is given alongside the toy flag),
/// otherwise the CWB file.
inline std::shared_ptr<const backbone::BackboneWeights> resolve_backbone(const RunConfig& c) {
  if (c.toy_backbone) return std::make_shared<const backbone::BackboneWeights>(toy_backbone(c.backbone_seed));
  if (c.weights.empty()) throw ConfigError("no weights file given (set 'weights' or use the toy backbone)");
  try {
    return std::make_shared<const backbone::BackboneWeights>(backbone::load_cwb(c.weights));
  } catch (const LoadError& e) {
    throw DataError(std::string("weights: ") + e.what());
  }
}

/// TrackerConfig defaults for the toy backbone.
inline tracker::TrackerConfig toy_tracker_config(std::uint64_t seed = 0) {
  tracker::TrackerConfig t;
  t.mask_k = kToyMaskK;
  t.head_width = kToyHeadWidth;
  t.first_frame_lr = kToyFirstFrameLr;
  t.online_lr = kToyOnlineLr;
  t.seed = seed;
  return t;
}

}  // namespace context_tracker::config

#endif  // CONTEXT_TRACKER_CONFIG_HPP
