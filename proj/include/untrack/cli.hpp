#pragma once

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "untrack/config.hpp"
#include "untrack/gradcheck.hpp"
#include "untrack/io.hpp"

namespace untrack::cli {

constexpr const char* kVersion = "0.1.0";

// Exit codes: 0 success, 2 usage, 3 data format, 4 numeric failure, 1 other.
enum ExitCode { kOk = 0, kOther = 1, kUsage = 2, kDataFormat = 3, kNumeric = 4 };

namespace detail {

inline std::string utc_now() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

inline std::size_t thread_cap() {
  std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("UNTRACK_THREADS")) {
    try {
      const long requested = std::stol(env);
      if (requested >= 1) cap = std::min<std::size_t>(cap, requested);
    } catch (...) {
      throw UsageError("UNTRACK_THREADS must be a positive integer");
    }
  }
  return cap;
}

inline void write_run_record(const std::filesystem::path& dir, const RunConfig& cfg,
                             const std::string& command) {
  std::filesystem::create_directories(dir);
  nlohmann::json record{
      {"command", command},
      {"config_hash", config_hash(cfg)},
      {"seed", cfg.seed},
      {"versions", {{"untrack", kVersion}, {"tensor_format", "UTT1"}}},
      {"written_at", utc_now()},
  };
  write_file_atomic(dir / "run.json", record.dump(2) + "\n");
  write_file_atomic(dir / "config.txt", config_to_text(cfg));
}

inline void write_curve_csv(const std::filesystem::path& path,
                            const std::vector<double>& losses) {
  std::string text = "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i)
    text += std::to_string(i) + "," + cfgkeys::format_double(losses[i]) + "\n";
  write_file_atomic(path, text);
}

inline std::vector<std::string> split_values(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  return out;
}

inline void require(const std::string& value, const char* key) {
  if (value.empty()) {
    throw UsageError(std::string("missing required config key '") + key + "'");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen-data: benchmark profile writes pretrain/, train/, eval_<modality>/ and
// corner/ splits; single profile writes one directory of sequences.
// ---------------------------------------------------------------------------

inline void cmd_gen_data(const RunConfig& cfg) {
  detail::require(cfg.output, "output");
  const std::filesystem::path out(cfg.output);

  auto scene = [&](Modality m, std::uint64_t seed, double contrast, bool occluder) {
    SceneConfig sc;
    sc.frames = cfg.gen_frames;
    sc.image_size = cfg.tracker.image_size;
    sc.clutter = cfg.gen_clutter;
    sc.contrast = contrast;
    sc.modality = m;
    sc.seed = seed;
    sc.occluder = occluder;
    sc.size_min = cfg.tracker.image_size * 0.15;
    sc.size_max = cfg.tracker.image_size * 0.25;
    return sc;
  };

  if (cfg.gen_profile == "single") {
    Dataset data;
    const Modality m = modality_from_string(cfg.gen_modality);
    for (std::size_t i = 0; i < cfg.gen_sequences; ++i)
      data.push_back(generate_sequence(
          scene(m, cfg.seed + i, cfg.gen_contrast, cfg.gen_occluder)));
    write_dataset(data, out);
    detail::write_run_record(out, cfg, "gen-data");
    return;
  }
  if (cfg.gen_profile != "benchmark") {
    throw UsageError("config key 'gen_profile': expected benchmark or single, got '" +
                     cfg.gen_profile + "'");
  }

  {  // RGB-only pretraining split: clearly visible targets.
    Dataset data;
    const double contrasts[] = {1.0, 0.85, 0.7, 0.55};
    for (std::size_t i = 0; i < 4; ++i)
      data.push_back(generate_sequence(
          scene(Modality::Absent, 100 + i, contrasts[i % 4], false)));
    write_dataset(data, out / "pretrain");
  }
  {  // Mixed multimodal training split; contrast sweeps down to invisible.
    Dataset data;
    const double contrasts[] = {1.0, 0.6, 0.3, 0.0};
    std::uint64_t seed = 200;
    for (Modality m : {Modality::Depth, Modality::Thermal, Modality::Event}) {
      for (std::size_t i = 0; i < cfg.gen_sequences; ++i) {
        // Event streams need nonzero contrast to register intensity changes.
        double contrast = contrasts[i % 4];
        if (m == Modality::Event && contrast < 0.3) contrast = 0.3;
        data.push_back(generate_sequence(scene(m, seed++, contrast, false)));
      }
    }
    write_dataset(data, out / "train");
  }
  {  // Per-modality evaluation splits.
    std::uint64_t seed = 300;
    for (Modality m : {Modality::Depth, Modality::Thermal, Modality::Event}) {
      Dataset data;
      const double contrasts[] = {0.9, 0.5};
      for (std::size_t i = 0; i < 2; ++i)
        data.push_back(generate_sequence(
            scene(m, seed++, m == Modality::Event ? std::max(contrasts[i], 0.4)
                                                  : contrasts[i],
                  cfg.gen_occluder && i == 1)));
      write_dataset(data, out / ("eval_" + to_string(m)));
    }
  }
  {  // Low-contrast corner cases, seeds 0-4: target invisible in RGB.
    Dataset data;
    const Modality mods[] = {Modality::Depth, Modality::Thermal, Modality::Depth,
                             Modality::Thermal, Modality::Depth};
    for (std::uint64_t s = 0; s < 5; ++s)
      data.push_back(generate_sequence(scene(mods[s], s, 0.0, false)));
    write_dataset(data, out / "corner");
  }
  detail::write_run_record(out, cfg, "gen-data");
}

// ---------------------------------------------------------------------------
// train / eval / ablate / grad-check / report
// ---------------------------------------------------------------------------

inline void cmd_train(const RunConfig& cfg) {
  detail::require(cfg.dataset, "dataset");
  detail::require(cfg.output, "output");
  const Dataset train_data = read_dataset(cfg.dataset);
  Dataset pretrain_data;
  if (!cfg.pretrain_dataset.empty()) pretrain_data = read_dataset(cfg.pretrain_dataset);

  Rng rng(cfg.seed);
  TrackerModel model = TrackerModel::create(cfg.tracker, rng);
  const TrainResult result =
      train(model, train_data, pretrain_data.empty() ? nullptr : &pretrain_data,
            cfg.train_options());

  const std::filesystem::path out(cfg.output);
  std::filesystem::create_directories(out);
  save_checkpoint(out / "checkpoint", model.params(), config_to_text(cfg));
  detail::write_curve_csv(out / "training_curve.csv", result.curve);
  if (!result.pretrain_curve.empty())
    detail::write_curve_csv(out / "pretrain_curve.csv", result.pretrain_curve);
  detail::write_run_record(out, cfg, "train");
}

// Rebuilds the model recorded in a checkpoint directory and loads its
// weights. Adapter installation is inferred from the manifest; per-tensor
// trainable flags are restored by load_checkpoint.
inline TrackerModel load_model(const std::filesystem::path& checkpoint_dir) {
  const RunConfig stored = parse_config_text(
      read_checkpoint_config(checkpoint_dir), (checkpoint_dir / "config.txt").string());
  Rng rng(stored.seed);
  TrackerModel model = TrackerModel::create(stored.tracker, rng);
  const std::string manifest = read_file(checkpoint_dir / "manifest.txt");
  if (manifest.find(".lora_a ") != std::string::npos) {
    Rng adapt_rng(stored.seed + 1);
    model.freeze_backbone_and_adapt(adapt_rng);
  } else {
    model.prompting_active = !stored.tracker.no_prompt;
  }
  ParamList params = model.params();
  load_checkpoint(checkpoint_dir, params);
  return model;
}

inline MetricsReport run_eval(const RunConfig& cfg, const Dataset& data,
                              const TrackerModel& model) {
  EvalOptions opt;
  opt.dummy_mode = cfg.dummy_mode;
  opt.threads = detail::thread_cap();
  MetricsReport report = evaluate(model, data, opt);
  report.config_hash = config_hash(cfg);
  report.seed = cfg.seed;
  report.written_at = detail::utc_now();
  return report;
}

inline void cmd_eval(const RunConfig& cfg) {
  detail::require(cfg.checkpoint, "checkpoint");
  detail::require(cfg.dataset, "dataset");
  detail::require(cfg.output, "output");
  const Dataset data = read_dataset(cfg.dataset);
  TrackerModel model = load_model(cfg.checkpoint);
  const MetricsReport report = run_eval(cfg, data, model);
  const std::filesystem::path out(cfg.output);
  std::filesystem::create_directories(out);
  write_file_atomic(out / "metrics.json", report_to_string(report));
  detail::write_run_record(out, cfg, "eval");
  std::cout << "f_score=" << report.aggregate.f_score
            << " pr=" << report.aggregate.pr_at_threshold
            << " sr=" << report.aggregate.success_auc
            << " mean_iou=" << report.aggregate.mean_iou << "\n";
}

inline void cmd_ablate(const RunConfig& cfg) {
  detail::require(cfg.dataset, "dataset");
  detail::require(cfg.eval_dataset, "eval_dataset");
  detail::require(cfg.output, "output");
  detail::require(cfg.ablation_axis, "ablation_axis");
  const std::vector<std::string> values = detail::split_values(cfg.ablation_values);
  if (values.empty()) throw ConfigError("ablation_values: empty value list");

  const Dataset train_data = read_dataset(cfg.dataset);
  const Dataset eval_data = read_dataset(cfg.eval_dataset);
  Dataset pretrain_data;
  if (!cfg.pretrain_dataset.empty()) pretrain_data = read_dataset(cfg.pretrain_dataset);

  EvalOptions eval_opt;
  eval_opt.dummy_mode = cfg.dummy_mode;
  eval_opt.threads = detail::thread_cap();
  const std::vector<AblationRun> runs = ablation_grid(
      cfg.tracker, ablation_axis_from_string(cfg.ablation_axis), values, train_data,
      pretrain_data.empty() ? nullptr : &pretrain_data, eval_data,
      cfg.train_options(), eval_opt);

  const std::filesystem::path out(cfg.output);
  std::filesystem::create_directories(out);
  std::string csv = "value,f_score,pr_at_threshold,success_auc,mean_iou\n";
  for (const AblationRun& run : runs) {
    MetricsReport report = run.report;
    report.config_hash = config_hash(cfg);
    report.written_at = detail::utc_now();
    const std::filesystem::path run_dir = out / detail::sanitize(run.value);
    std::filesystem::create_directories(run_dir);
    write_file_atomic(run_dir / "metrics.json", report_to_string(report));
    csv += "\"" + run.value + "\"," + cfgkeys::format_double(report.aggregate.f_score) +
           "," + cfgkeys::format_double(report.aggregate.pr_at_threshold) + "," +
           cfgkeys::format_double(report.aggregate.success_auc) + "," +
           cfgkeys::format_double(report.aggregate.mean_iou) + "\n";
  }
  write_file_atomic(out / "comparison.csv", csv);
  detail::write_run_record(out, cfg, "ablate");
}

inline int cmd_grad_check(const RunConfig& cfg) {
  const std::vector<GradCheckEntry> battery = gradcheck_battery(10);
  double worst = 0.0;
  bool all_ok = true;
  for (const GradCheckEntry& e : battery) {
    std::cout << e.module << " max_rel_err=" << e.max_rel_err
              << " budget=" << e.budget << (e.passed() ? " ok" : " FAIL") << "\n";
    worst = std::max(worst, e.max_rel_err);
    all_ok = all_ok && e.passed();
  }
  std::cout << "max rel. error " << worst << "\n";
  if (!cfg.output.empty()) detail::write_run_record(cfg.output, cfg, "grad-check");
  return all_ok ? kOk : kNumeric;
}

inline void cmd_report(const RunConfig& cfg) {
  detail::require(cfg.checkpoint, "checkpoint");  // run directory with metrics.json
  detail::require(cfg.output, "output");
  const std::filesystem::path in(cfg.checkpoint);
  const std::filesystem::path out(cfg.output);
  std::filesystem::create_directories(out);

  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(in / "metrics.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((in / "metrics.json").string() + ": " + e.what());
  }

  auto curve_csv = [&](const char* section, const char* name, double tau_step) {
    std::string csv = "tau";
    std::vector<std::pair<std::string, std::vector<double>>> columns;
    columns.push_back({"aggregate", doc["aggregate"][name].get<std::vector<double>>()});
    for (auto& [key, value] : doc["per_modality"].items())
      columns.push_back({key, value[name].get<std::vector<double>>()});
    for (const auto& [label, values] : columns) csv += "," + label;
    csv += "\n";
    const std::size_t rows = columns[0].second.size();
    for (std::size_t j = 0; j < rows; ++j) {
      csv += cfgkeys::format_double(tau_step * static_cast<double>(j));
      for (const auto& [label, values] : columns)
        csv += "," + cfgkeys::format_double(values[j]);
      csv += "\n";
    }
    write_file_atomic(out / section, csv);
  };
  curve_csv("success_curve.csv", "success_curve", 0.05);
  curve_csv("precision_curve.csv", "precision_curve", 0.02);
  curve_csv("recall_curve.csv", "recall_curve", 0.02);

  if (std::filesystem::exists(in / "training_curve.csv")) {
    write_file_atomic(out / "training_curve.csv", read_file(in / "training_curve.csv"));
  }
  detail::write_run_record(out, cfg, "report");
}

// ---------------------------------------------------------------------------
// Argument parsing and dispatch
// ---------------------------------------------------------------------------

inline RunConfig parse_args(const std::vector<std::string>& args, std::size_t first) {
  RunConfig cfg;
  // First pass: locate --config so flags override file values.
  for (std::size_t i = first; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config requires a file path");
      std::string text;
      try {
        text = read_file(args[i + 1]);
      } catch (const FormatError& e) {
        throw UsageError(std::string("cannot read config file: ") + e.what());
      }
      apply_config_text(cfg, text, args[i + 1]);
    }
  }
  for (std::size_t i = first; i < args.size(); ++i) {
    const std::string& arg = args[i];
    if (arg == "--config") {
      ++i;
      continue;
    }
    if (arg.rfind("--", 0) != 0) {
      throw UsageError("unexpected argument '" + arg + "'");
    }
    std::string key = arg.substr(2);
    std::replace(key.begin(), key.end(), '-', '_');
    if (i + 1 >= args.size()) {
      throw UsageError("flag '" + arg + "' requires a value");
    }
    apply_config_key(cfg, key, args[++i]);
  }
  return cfg;
}

inline int usage(std::ostream& os) {
  os << "usage: untrack <command> [--config FILE] [--key value ...]\n"
        "commands:\n"
        "  gen-data    write synthetic dataset splits under --output\n"
        "  train       train on --dataset (optional --pretrain-dataset), write\n"
        "              checkpoint + curves under --output\n"
        "  eval        evaluate --checkpoint on --dataset, write metrics.json\n"
        "  ablate      seed-controlled grid over --ablation-axis/--ablation-values\n"
        "  grad-check  finite-difference check of every module\n"
        "  report      emit plot-ready CSVs from a run directory (--checkpoint)\n";
  return kUsage;
}

inline int run(const std::vector<std::string>& args) {
  if (args.empty() || args[0] == "--help" || args[0] == "help") {
    return usage(args.empty() ? std::cerr : std::cout);
  }
  const std::string command = args[0];
  try {
    detail::thread_cap();  // validate UNTRACK_THREADS up front
    RunConfig cfg = parse_args(args, 1);
    cfg.tracker.validate();
    cfg.loss.validate();
    if (command == "gen-data") {
      cmd_gen_data(cfg);
    } else if (command == "train") {
      cmd_train(cfg);
    } else if (command == "eval") {
      cmd_eval(cfg);
    } else if (command == "ablate") {
      cmd_ablate(cfg);
    } else if (command == "grad-check") {
      return cmd_grad_check(cfg);
    } else if (command == "report") {
      cmd_report(cfg);
    } else {
      std::cerr << "error: unknown command '" << command << "'\n";
      return usage(std::cerr);
    }
    return kOk;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataFormat;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}

}  // namespace untrack::cli
