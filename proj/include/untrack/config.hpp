#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "untrack/backbone.hpp"
#include "untrack/harness.hpp"

namespace untrack {

// ---------------------------------------------------------------------------
// Run configuration: a flat key=value document. Command-line flags use the
// same keys with dashes (--rank-k 8). Unknown keys are rejected; the textual
// form round-trips losslessly.
// ---------------------------------------------------------------------------

struct RunConfig {
  // Paths.
  std::string dataset;
  std::string pretrain_dataset;
  std::string eval_dataset;
  std::string output;
  std::string checkpoint;

  TrackerConfig tracker;
  LossWeights loss;

  std::uint64_t seed = 0;
  bool dummy_mode = false;
  std::size_t steps = 360;
  std::size_t pretrain_steps = 240;
  std::size_t batch = 2;
  double lr = 1e-3;
  double weight_decay = 1e-4;

  std::string ablation_axis;
  std::string ablation_values;

  // gen-data knobs.
  std::string gen_profile = "benchmark";
  std::size_t gen_sequences = 8;
  std::size_t gen_frames = 16;
  double gen_clutter = 0.3;
  double gen_contrast = 1.0;
  std::string gen_modality = "depth";
  bool gen_occluder = false;

  TrainOptions train_options() const {
    TrainOptions opt;
    opt.steps = steps;
    opt.pretrain_steps = pretrain_steps;
    opt.batch = batch;
    opt.lr = lr;
    opt.weight_decay = weight_decay;
    opt.seed = seed;
    opt.loss = loss;
    return opt;
  }
};

namespace cfgkeys {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct Key {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  try {
    const long long n = std::stoll(v);
    if (n < 0) throw UsageError("config key '" + key + "': must be nonnegative");
    return static_cast<std::size_t>(n);
  } catch (const std::invalid_argument&) {
    throw UsageError("config key '" + key + "': cannot parse integer '" + v + "'");
  } catch (const std::out_of_range&) {
    throw UsageError("config key '" + key + "': integer out of range '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    return parse_fraction(v);  // accepts decimals and p/q forms
  } catch (const ConfigError& e) {
    throw UsageError("config key '" + key + "': " + e.what());
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_index_list(const std::string& key,
                                                 const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(parse_count(key, item));
  }
  if (out.empty()) throw UsageError("config key '" + key + "': empty list");
  return out;
}

inline std::string format_index_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

#define UNTRACK_KEY_STR(name, field)                                          \
  Key{name, [](const RunConfig& c) { return c.field; },                       \
      [](RunConfig& c, const std::string& v) { c.field = v; }}
#define UNTRACK_KEY_COUNT(name, field)                                        \
  Key{name, [](const RunConfig& c) { return std::to_string(c.field); },       \
      [](RunConfig& c, const std::string& v) { c.field = parse_count(name, v); }}
#define UNTRACK_KEY_DOUBLE(name, field)                                       \
  Key{name, [](const RunConfig& c) { return format_double(c.field); },        \
      [](RunConfig& c, const std::string& v) { c.field = parse_double(name, v); }}
#define UNTRACK_KEY_BOOL(name, field)                                         \
  Key{name, [](const RunConfig& c) { return c.field ? "true" : "false"; },    \
      [](RunConfig& c, const std::string& v) { c.field = parse_bool(name, v); }}

inline const std::vector<Key>& registry() {
  static const std::vector<Key> keys = {
      UNTRACK_KEY_STR("dataset", dataset),
      UNTRACK_KEY_STR("pretrain_dataset", pretrain_dataset),
      UNTRACK_KEY_STR("eval_dataset", eval_dataset),
      UNTRACK_KEY_STR("output", output),
      UNTRACK_KEY_STR("checkpoint", checkpoint),

      UNTRACK_KEY_COUNT("image_size", tracker.image_size),
      UNTRACK_KEY_COUNT("template_size", tracker.template_size),
      UNTRACK_KEY_COUNT("patch_size", tracker.patch_size),
      UNTRACK_KEY_COUNT("embed_dim", tracker.embed_dim),
      UNTRACK_KEY_COUNT("depth", tracker.depth),
      UNTRACK_KEY_COUNT("heads", tracker.heads),
      UNTRACK_KEY_COUNT("mlp_ratio", tracker.mlp_ratio),
      UNTRACK_KEY_COUNT("rank_k", tracker.rank_k),
      UNTRACK_KEY_COUNT("rank_l", tracker.rank_l),
      UNTRACK_KEY_COUNT("lora_rank", tracker.lora_rank),
      UNTRACK_KEY_DOUBLE("percentile", tracker.percentile),
      Key{"prompt_layers",
          [](const RunConfig& c) { return format_index_list(c.tracker.prompt_layers); },
          [](RunConfig& c, const std::string& v) {
            c.tracker.prompt_layers = parse_index_list("prompt_layers", v);
          }},

      UNTRACK_KEY_BOOL("no_explicit_edge", tracker.no_explicit_edge),
      UNTRACK_KEY_BOOL("no_implicit_learning", tracker.no_implicit_learning),
      UNTRACK_KEY_BOOL("no_indomain_approx", tracker.no_indomain_approx),
      UNTRACK_KEY_BOOL("no_shared_embed", tracker.no_shared_embed),
      UNTRACK_KEY_BOOL("no_lora", tracker.no_lora),
      UNTRACK_KEY_BOOL("no_prompt", tracker.no_prompt),
      UNTRACK_KEY_BOOL("prompt_residual", tracker.prompt_residual),
      UNTRACK_KEY_BOOL("edge_per_channel", tracker.edge_per_channel),
      UNTRACK_KEY_BOOL("absent_dedicated_sigma", tracker.absent_dedicated_sigma),
      UNTRACK_KEY_BOOL("hidden_projections", tracker.hidden_projections),
      UNTRACK_KEY_BOOL("lora_scaled", tracker.lora_scaled),
      UNTRACK_KEY_DOUBLE("lora_alpha", tracker.lora_alpha),

      UNTRACK_KEY_DOUBLE("w_cls", loss.w_cls),
      UNTRACK_KEY_DOUBLE("w_l1", loss.w_l1),
      UNTRACK_KEY_DOUBLE("w_giou", loss.w_giou),

      UNTRACK_KEY_COUNT("seed", seed),
      UNTRACK_KEY_BOOL("dummy_mode", dummy_mode),
      UNTRACK_KEY_COUNT("steps", steps),
      UNTRACK_KEY_COUNT("pretrain_steps", pretrain_steps),
      UNTRACK_KEY_COUNT("batch", batch),
      UNTRACK_KEY_DOUBLE("lr", lr),
      UNTRACK_KEY_DOUBLE("weight_decay", weight_decay),

      UNTRACK_KEY_STR("ablation_axis", ablation_axis),
      UNTRACK_KEY_STR("ablation_values", ablation_values),

      UNTRACK_KEY_STR("gen_profile", gen_profile),
      UNTRACK_KEY_COUNT("gen_sequences", gen_sequences),
      UNTRACK_KEY_COUNT("gen_frames", gen_frames),
      UNTRACK_KEY_DOUBLE("gen_clutter", gen_clutter),
      UNTRACK_KEY_DOUBLE("gen_contrast", gen_contrast),
      UNTRACK_KEY_STR("gen_modality", gen_modality),
      UNTRACK_KEY_BOOL("gen_occluder", gen_occluder),
  };
  return keys;
}

#undef UNTRACK_KEY_STR
#undef UNTRACK_KEY_COUNT
#undef UNTRACK_KEY_DOUBLE
#undef UNTRACK_KEY_BOOL

inline const Key* find(const std::string& name) {
  for (const Key& k : registry())
    if (k.name == name) return &k;
  return nullptr;
}

}  // namespace cfgkeys

inline void apply_config_key(RunConfig& cfg, const std::string& key,
                             const std::string& value) {
  const cfgkeys::Key* k = cfgkeys::find(key);
  if (!k) throw UsageError("unknown config key '" + key + "'");
  k->set(cfg, value);
}

// key = value lines; '#' starts a comment; blank lines ignored.
inline void apply_config_text(RunConfig& cfg, const std::string& text,
                              const std::string& where) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(where + ":" + std::to_string(line_no) +
                       ": expected key = value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    apply_config_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

inline std::string config_to_text(const RunConfig& cfg) {
  std::string out;
  for (const cfgkeys::Key& k : cfgkeys::registry()) {
    out += k.name + " = " + k.get(cfg) + "\n";
  }
  return out;
}

inline RunConfig parse_config_text(const std::string& text, const std::string& where) {
  RunConfig cfg;
  apply_config_text(cfg, text, where);
  return cfg;
}

// FNV-1a 64 over the canonical text; stable across runs.
inline std::string config_hash(const RunConfig& cfg) {
  const std::string text = config_to_text(cfg);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace untrack
