#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "untrack/errors.hpp"
#include "untrack/types.hpp"

#include "json.hpp"

namespace untrack {

// ---------------------------------------------------------------------------
// Tracking metrics.
//   PR: fraction of frames with center error below a pixel threshold.
//   SR: area under the success curve over IoU thresholds 0:0.05:1.
//   Pr/Re/F: long-term protocol over a 51-point confidence-threshold sweep;
//   F-score is reported at the maximizing threshold.
// ---------------------------------------------------------------------------

inline double iou(const BBox& a, const BBox& b) {
  const double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2;
  const double ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2;
  const double by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = iw * ih;
  // Areas from the same corner arithmetic so identical boxes give exactly 1.
  const double area_a = (ax2 - ax1) * (ay2 - ay1);
  const double area_b = (bx2 - bx1) * (by2 - by1);
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double center_error_px(const BBox& a, const BBox& b, std::size_t image_size) {
  const double dx = (a.cx - b.cx) * static_cast<double>(image_size);
  const double dy = (a.cy - b.cy) * static_cast<double>(image_size);
  return std::sqrt(dx * dx + dy * dy);
}

// 2 pr re / (pr + re); defined as 0 when both rates vanish.
inline double f_score(double pr, double re) {
  if (pr < 0.0 || pr > 1.0 || re < 0.0 || re > 1.0) {
    throw DomainError("f_score: rates must lie in [0,1]");
  }
  if (pr == 0.0 && re == 0.0) return 0.0;
  return 2.0 * pr * re / (pr + re);
}

// The conventional 20 px center-error threshold scaled by the desk-scale
// resolution (image_size / 256 of the usual 4x resolution): 5 px at 64 px.
inline double center_threshold_px(std::size_t image_size) {
  return static_cast<double>(image_size) / 12.8;
}

struct FrameRecord {
  double iou = 0.0;
  double center_err_px = 0.0;
  double confidence = 0.0;
};

struct SequenceRecord {
  std::string id;
  Modality modality = Modality::Absent;
  std::vector<FrameRecord> frames;
};

constexpr std::size_t kConfidenceSweep = 51;  // tau = j/50, j = 0..50
constexpr std::size_t kIouSweep = 21;         // tau = j/20, j = 0..20

struct MetricValues {
  std::vector<double> precision_curve;  // over the confidence sweep
  std::vector<double> recall_curve;
  std::vector<double> success_curve;  // over the IoU sweep
  double f_score = 0.0;
  double best_tau = 0.0;
  double pr_at_threshold = 0.0;  // PR
  double success_auc = 0.0;      // SR
  double mean_iou = 0.0;
  std::size_t frame_count = 0;
};

inline MetricValues compute_metrics(const std::vector<FrameRecord>& frames,
                                    double center_thresh_px) {
  MetricValues m;
  m.frame_count = frames.size();
  if (frames.empty()) return m;
  const double n = static_cast<double>(frames.size());

  std::size_t within = 0;
  double iou_sum = 0.0;
  for (const FrameRecord& f : frames) {
    if (f.center_err_px <= center_thresh_px) ++within;
    iou_sum += f.iou;
  }
  m.pr_at_threshold = static_cast<double>(within) / n;
  m.mean_iou = iou_sum / n;

  // Success at tau counts frames with IoU >= tau, so a perfect tracker
  // reaches SR = 1 at the top of the sweep.
  m.success_curve.resize(kIouSweep);
  for (std::size_t j = 0; j < kIouSweep; ++j) {
    const double tau = static_cast<double>(j) / 20.0;
    std::size_t success = 0;
    for (const FrameRecord& f : frames)
      if (f.iou >= tau) ++success;
    m.success_curve[j] = static_cast<double>(success) / n;
    m.success_auc += m.success_curve[j];
  }
  m.success_auc /= static_cast<double>(kIouSweep);

  m.precision_curve.resize(kConfidenceSweep);
  m.recall_curve.resize(kConfidenceSweep);
  for (std::size_t j = 0; j < kConfidenceSweep; ++j) {
    const double tau = static_cast<double>(j) / 50.0;
    double reported_iou = 0.0;
    std::size_t reported = 0;
    for (const FrameRecord& f : frames) {
      if (f.confidence >= tau) {
        reported_iou += f.iou;
        ++reported;
      }
    }
    m.precision_curve[j] = reported > 0 ? reported_iou / static_cast<double>(reported) : 0.0;
    m.recall_curve[j] = reported_iou / n;
    const double f = f_score(m.precision_curve[j], m.recall_curve[j]);
    if (f > m.f_score) {
      m.f_score = f;
      m.best_tau = tau;
    }
  }
  return m;
}

struct MetricsReport {
  std::vector<SequenceRecord> records;
  std::vector<MetricValues> per_sequence;
  MetricValues aggregate;
  std::map<std::string, MetricValues> per_modality;
  // Run metadata.
  std::string config_hash;
  std::uint64_t seed = 0;
  bool dummy_mode = false;
  double wall_time_s = 0.0;
  std::string written_at;
};

// Frame-pooled aggregates plus per-sequence and per-modality views.
inline MetricsReport metrics_from_records(std::vector<SequenceRecord> records,
                                          double center_thresh_px) {
  MetricsReport report;
  report.records = std::move(records);
  std::vector<FrameRecord> all;
  std::map<std::string, std::vector<FrameRecord>> by_modality;
  for (const SequenceRecord& seq : report.records) {
    report.per_sequence.push_back(compute_metrics(seq.frames, center_thresh_px));
    all.insert(all.end(), seq.frames.begin(), seq.frames.end());
    auto& bucket = by_modality[to_string(seq.modality)];
    bucket.insert(bucket.end(), seq.frames.begin(), seq.frames.end());
  }
  report.aggregate = compute_metrics(all, center_thresh_px);
  for (const auto& [name, frames] : by_modality) {
    report.per_modality[name] = compute_metrics(frames, center_thresh_px);
  }
  return report;
}

// ---------------------------------------------------------------------------
// JSON serialization. Keys are emitted in nlohmann's sorted order, so the
// document is byte-stable for identical inputs; volatile fields live under
// the single "timestamp" key.
// ---------------------------------------------------------------------------

inline nlohmann::json metric_values_to_json(const MetricValues& m) {
  return nlohmann::json{
      {"precision_curve", m.precision_curve},
      {"recall_curve", m.recall_curve},
      {"success_curve", m.success_curve},
      {"f_score", m.f_score},
      {"best_tau", m.best_tau},
      {"pr_at_threshold", m.pr_at_threshold},
      {"success_auc", m.success_auc},
      {"mean_iou", m.mean_iou},
      {"frame_count", m.frame_count},
  };
}

inline nlohmann::json report_to_json(const MetricsReport& report) {
  nlohmann::json sequences = nlohmann::json::array();
  for (std::size_t i = 0; i < report.records.size(); ++i) {
    nlohmann::json frames = nlohmann::json::array();
    for (const FrameRecord& f : report.records[i].frames) {
      frames.push_back({{"iou", f.iou},
                        {"center_err_px", f.center_err_px},
                        {"confidence", f.confidence}});
    }
    sequences.push_back({{"id", report.records[i].id},
                         {"modality", to_string(report.records[i].modality)},
                         {"metrics", metric_values_to_json(report.per_sequence[i])},
                         {"frames", frames}});
  }
  nlohmann::json per_modality;
  for (const auto& [name, m] : report.per_modality)
    per_modality[name] = metric_values_to_json(m);
  return nlohmann::json{
      {"aggregate", metric_values_to_json(report.aggregate)},
      {"per_modality", per_modality},
      {"sequences", sequences},
      {"metadata",
       {{"config_hash", report.config_hash},
        {"seed", report.seed},
        {"dummy_mode", report.dummy_mode}}},
      {"timestamp",
       {{"written_at", report.written_at}, {"wall_time_s", report.wall_time_s}}},
  };
}

inline std::string report_to_string(const MetricsReport& report) {
  return report_to_json(report).dump(2) + "\n";
}

}  // namespace untrack
