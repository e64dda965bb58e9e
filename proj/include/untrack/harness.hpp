#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "untrack/backbone.hpp"
#include "untrack/metrics.hpp"
#include "untrack/synthdata.hpp"

namespace untrack {

// ---------------------------------------------------------------------------
// Loss: weighted focal classification over search tokens plus L1 and
// generalized-IoU terms on the positive token's box.
// ---------------------------------------------------------------------------

struct LossWeights {
  double w_cls = 1.0;
  double w_l1 = 5.0;
  double w_giou = 2.0;

  void validate() const {
    if (w_cls < 0 || w_l1 < 0 || w_giou < 0 || (w_cls + w_l1 + w_giou) <= 0.0) {
      throw UsageError("loss weights must be nonnegative with at least one positive");
    }
  }
};

namespace detail {

inline Tensor coord(Tape& tape, const Tensor& box_row, std::size_t i) {
  return slice_cols(tape, box_row, i, 1);  // [1,1]
}

}  // namespace detail

// Differentiable GIoU between a predicted [1,4] box row and a constant truth
// box, both in normalized cx/cy/w/h form. Returns a [1,1] tensor.
inline Tensor giou_tensor(Tape& tape, const Tensor& pred_row, const BBox& truth) {
  Tensor truth_row({1, 4}, {truth.cx, truth.cy, truth.w, truth.h});
  Tensor pcx = detail::coord(tape, pred_row, 0), pcy = detail::coord(tape, pred_row, 1);
  Tensor pw = detail::coord(tape, pred_row, 2), ph = detail::coord(tape, pred_row, 3);
  Tensor tcx = detail::coord(tape, truth_row, 0), tcy = detail::coord(tape, truth_row, 1);
  Tensor tw = detail::coord(tape, truth_row, 2), th = detail::coord(tape, truth_row, 3);

  auto half = [&](const Tensor& t) { return mul_scalar(tape, t, 0.5); };
  Tensor px1 = sub(tape, pcx, half(pw)), px2 = add(tape, pcx, half(pw));
  Tensor py1 = sub(tape, pcy, half(ph)), py2 = add(tape, pcy, half(ph));
  Tensor tx1 = sub(tape, tcx, half(tw)), tx2 = add(tape, tcx, half(tw));
  Tensor ty1 = sub(tape, tcy, half(th)), ty2 = add(tape, tcy, half(th));

  Tensor iw = relu(tape, sub(tape, minimum(tape, px2, tx2), maximum(tape, px1, tx1)));
  Tensor ih = relu(tape, sub(tape, minimum(tape, py2, ty2), maximum(tape, py1, ty1)));
  Tensor inter = mul(tape, iw, ih);
  Tensor area_p = mul(tape, pw, ph);
  Tensor area_t = mul(tape, tw, th);
  Tensor uni = sub(tape, add(tape, area_p, area_t), inter);
  Tensor iou_t = div(tape, inter, uni);

  Tensor ew = sub(tape, maximum(tape, px2, tx2), minimum(tape, px1, tx1));
  Tensor eh = sub(tape, maximum(tape, py2, ty2), minimum(tape, py1, ty1));
  Tensor enclose = mul(tape, ew, eh);
  return sub(tape, iou_t, div(tape, sub(tape, enclose, uni), enclose));
}

// Token whose grid cell contains the truth center.
inline std::size_t positive_token_index(const BBox& truth, std::size_t grid) {
  const auto clamp_cell = [grid](double v) {
    const auto cell = static_cast<std::size_t>(v * static_cast<double>(grid));
    return std::min(cell, grid - 1);
  };
  return clamp_cell(truth.cy) * grid + clamp_cell(truth.cx);
}

inline Tensor tracking_loss(Tape& tape, const ForwardResult& pred, const BBox& truth,
                            const LossWeights& weights, std::size_t grid) {
  if (!truth.valid()) {
    throw DomainError("tracking_loss: degenerate truth box");
  }
  const std::size_t n = pred.score_map.size();
  if (n != grid * grid) {
    throw ShapeError("tracking_loss: score map does not match token grid");
  }
  const std::size_t pos = positive_token_index(truth, grid);

  // Focal term, gamma = 2, one positive token.
  Tensor z = reshape(tape, pred.score_map, {n, 1});
  std::vector<double> one_hot(n, 0.0);
  one_hot[pos] = 1.0;
  Tensor y({n, 1}, one_hot);
  Tensor y_neg({n, 1}, [&] {
    std::vector<double> inv(n, 1.0);
    inv[pos] = 0.0;
    return inv;
  }());
  Tensor p = sigmoid(tape, z);
  Tensor one_minus_p = add_scalar(tape, mul_scalar(tape, p, -1.0), 1.0);
  Tensor pos_term = mul(tape, y, mul(tape, mul(tape, one_minus_p, one_minus_p),
                                     mul_scalar(tape, log_sigmoid(tape, z), -1.0)));
  Tensor neg_logits = mul_scalar(tape, z, -1.0);
  Tensor neg_term = mul(tape, y_neg, mul(tape, mul(tape, p, p),
                                         mul_scalar(tape, log_sigmoid(tape, neg_logits), -1.0)));
  Tensor focal = sum_all(tape, add(tape, pos_term, neg_term));

  // Box terms on the positive token. Params are (dx, dy, w, h): cell offsets
  // plus extent; L1 supervises the raw params, GIoU the reconstructed box.
  const double g = static_cast<double>(grid);
  const double col = static_cast<double>(pos % grid), row = static_cast<double>(pos / grid);
  Tensor pred_row = slice_rows(tape, pred.bbox_params, pos, 1);
  Tensor target_row({1, 4}, {truth.cx * g - col, truth.cy * g - row, truth.w, truth.h});
  Tensor l1 = sum_all(tape, untrack::abs(tape, sub(tape, pred_row, target_row)));

  Tensor dx = detail::coord(tape, pred_row, 0);
  Tensor dy = detail::coord(tape, pred_row, 1);
  Tensor abs_cx = mul_scalar(tape, add_scalar(tape, dx, col), 1.0 / g);
  Tensor abs_cy = mul_scalar(tape, add_scalar(tape, dy, row), 1.0 / g);
  Tensor abs_row = concat_channels(
      tape, {abs_cx, abs_cy, detail::coord(tape, pred_row, 2),
             detail::coord(tape, pred_row, 3)});
  Tensor giou = giou_tensor(tape, abs_row, truth);
  Tensor giou_loss = add_scalar(tape, mul_scalar(tape, giou, -1.0), 1.0);

  Tensor total = mul_scalar(tape, focal, weights.w_cls);
  total = add(tape, total, mul_scalar(tape, l1, weights.w_l1));
  total = add(tape, total, reshape(tape, mul_scalar(tape, giou_loss, weights.w_giou), {1}));
  return total;
}

// ---------------------------------------------------------------------------
// Optimizer: Adam with decoupled weight decay over the trainable tensors.
// Parameters that never received a gradient are left untouched.
// ---------------------------------------------------------------------------

struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  struct Slot {
    std::vector<double> m, v;
  };
  std::vector<Slot> slots;
  std::size_t t = 0;

  void step(ParamList& params) {
    if (slots.size() != params.size()) slots.resize(params.size());
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& p = params[i].tensor;
      if (!p.requires_grad() || !p.has_grad()) continue;
      Slot& s = slots[i];
      if (s.m.empty()) {
        s.m.assign(p.size(), 0.0);
        s.v.assign(p.size(), 0.0);
      }
      std::vector<double>& value = p.data();
      const std::vector<double>& g = p.grad_view();
      for (std::size_t j = 0; j < value.size(); ++j) {
        s.m[j] = beta1 * s.m[j] + (1.0 - beta1) * g[j];
        s.v[j] = beta2 * s.v[j] + (1.0 - beta2) * g[j] * g[j];
        const double mhat = s.m[j] / bc1;
        const double vhat = s.v[j] / bc2;
        value[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * value[j]);
      }
    }
  }

  static void zero_grad(ParamList& params) {
    for (ParamEntry& e : params) e.tensor.zero_grad();
  }
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::size_t steps = 360;
  std::size_t pretrain_steps = 240;
  std::size_t batch = 2;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  LossWeights loss;
};

struct TrainResult {
  std::vector<double> pretrain_curve;
  std::vector<double> curve;  // multimodal phase, one loss per step
};

// Template crop: fixed-size window centered on the frame-0 truth box, clamped
// to the image bounds.
inline Tensor crop_template(const Tensor& frame, const BBox& truth, std::size_t ts) {
  const std::size_t S = frame.dims()[1];
  if (ts > S) throw ConfigError("template size exceeds frame size");
  auto corner = [&](double center) {
    const double px = center * static_cast<double>(S) - static_cast<double>(ts) / 2.0;
    const double clamped = std::max(0.0, std::min(px, static_cast<double>(S - ts)));
    return static_cast<std::size_t>(std::llround(clamped));
  };
  const std::size_t x0 = corner(truth.cx), y0 = corner(truth.cy);
  Tensor out = Tensor::zeros({3, ts, ts});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < ts; ++y)
      for (std::size_t x = 0; x < ts; ++x)
        out.data()[(c * ts + y) * ts + x] =
            frame.data()[(c * S + y0 + y) * S + x0 + x];
  return out;
}

namespace detail {

struct SampleRef {
  const ModalSequence* seq;
  std::size_t frame;
};

inline double grad_norm(const ParamList& params) {
  double acc = 0.0;
  for (const ParamEntry& e : params) {
    if (!e.tensor.has_grad()) continue;
    for (double g : e.tensor.grad_view()) acc += g * g;
  }
  return std::sqrt(acc);
}

// One optimization phase over a fixed sampling policy.
inline std::vector<double> run_phase(TrackerModel& model, ParamList& params,
                                     AdamW& opt, std::size_t steps, std::size_t batch,
                                     const LossWeights& weights, Rng& rng,
                                     const std::function<SampleRef(std::size_t, Rng&)>& draw,
                                     const char* phase) {
  std::vector<double> curve;
  curve.reserve(steps);
  const std::size_t grid = model.cfg.search_grid();
  for (std::size_t step = 0; step < steps; ++step) {
    AdamW::zero_grad(params);
    double loss_acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const SampleRef ref = draw(step, rng);
      const ModalSample& search = ref.seq->samples[ref.frame];
      Tensor tpl = crop_template(ref.seq->samples[0].rgb, ref.seq->samples[0].truth,
                                 model.cfg.template_size);
      Tape tape;
      ForwardResult out = model.forward(tape, tpl, search);
      Tensor loss = tracking_loss(tape, out, search.truth, weights, grid);
      const double value = loss.value();
      if (!std::isfinite(value)) {
        std::ostringstream os;
        os << phase << " aborted: non-finite loss at step " << step << " (loss="
           << value << ", grad_norm=" << grad_norm(params) << ")";
        throw NumericError(os.str());
      }
      loss_acc += value;
      Tensor scaled = mul_scalar(tape, loss, 1.0 / static_cast<double>(batch));
      tape.backward(scaled);
    }
    opt.step(params);
    curve.push_back(loss_acc / static_cast<double>(batch));
  }
  return curve;
}

}  // namespace detail

// Two-phase run: RGB-only pretraining of the full backbone on the pretrain
// set, freeze + adapter installation, then adapter training over the mixed
// multimodal set with one modality per step (round-robin).
inline TrainResult train(TrackerModel& model, const Dataset& train_data,
                         const Dataset* pretrain_data, const TrainOptions& opt) {
  opt.loss.validate();
  if (train_data.empty()) throw ConfigError("train: dataset is empty");
  TrainResult result;
  if (opt.steps == 0 && opt.pretrain_steps == 0) return result;  // strict no-op
  Rng root(opt.seed);
  Rng pretrain_rng = root.fork(1);
  Rng adapt_rng = root.fork(2);
  Rng batch_rng = root.fork(3);

  if (opt.pretrain_steps > 0) {
    const Dataset& pool = (pretrain_data && !pretrain_data->empty()) ? *pretrain_data
                                                                     : train_data;
    model.prompting_active = false;
    ParamList params = model.params();
    AdamW optimizer;
    optimizer.lr = opt.lr;
    optimizer.weight_decay = opt.weight_decay;
    auto draw = [&pool](std::size_t, Rng& r) {
      const ModalSequence& seq = pool[r.index(pool.size())];
      const std::size_t frame = seq.samples.size() > 1 ? 1 + r.index(seq.samples.size() - 1) : 0;
      return detail::SampleRef{&seq, frame};
    };
    result.pretrain_curve =
        detail::run_phase(model, params, optimizer, opt.pretrain_steps, opt.batch,
                          opt.loss, pretrain_rng, draw, "pretrain");
  }

  model.freeze_backbone_and_adapt(adapt_rng);

  if (opt.steps > 0) {
    // Buckets per modality; each step draws from exactly one.
    std::map<Modality, std::vector<const ModalSequence*>> buckets;
    for (const ModalSequence& seq : train_data) {
      if (seq.samples.empty()) continue;
      buckets[seq.samples[0].modality].push_back(&seq);
    }
    std::vector<std::vector<const ModalSequence*>> order;
    for (Modality m : {Modality::Depth, Modality::Thermal, Modality::Event,
                       Modality::Absent}) {
      auto it = buckets.find(m);
      if (it != buckets.end()) order.push_back(it->second);
    }
    if (order.empty()) throw ConfigError("train: no non-empty modality bucket");

    ParamList params = model.params();
    AdamW optimizer;
    optimizer.lr = opt.lr;
    optimizer.weight_decay = opt.weight_decay;
    auto draw = [&order](std::size_t step, Rng& r) {
      const auto& bucket = order[step % order.size()];
      const ModalSequence& seq = *bucket[r.index(bucket.size())];
      const std::size_t frame = seq.samples.size() > 1 ? 1 + r.index(seq.samples.size() - 1) : 0;
      return detail::SampleRef{&seq, frame};
    };
    result.curve = detail::run_phase(model, params, optimizer, opt.steps, opt.batch,
                                     opt.loss, batch_rng, draw, "train");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation: template-init tracking per sequence. Frame 0 initializes the
// template; frames 1..T-1 are scored. Sequences may run on worker threads
// (capped by UNTRACK_THREADS); per-sequence math is independent, so the
// merged result does not depend on the thread count.
// ---------------------------------------------------------------------------

using FramePredictor = std::function<std::pair<BBox, double>(
    const ModalSequence&, std::size_t frame_index)>;

inline MetricsReport evaluate_with_predictor(const Dataset& dataset,
                                             const FramePredictor& predictor,
                                             double center_thresh_px,
                                             std::size_t threads = 1) {
  std::vector<SequenceRecord> records(dataset.size());
  auto run_sequence = [&](std::size_t s) {
    const ModalSequence& seq = dataset[s];
    SequenceRecord rec;
    rec.id = seq.id.empty() ? ("seq" + std::to_string(s)) : seq.id;
    rec.modality = seq.samples.empty() ? Modality::Absent : seq.samples[0].modality;
    for (std::size_t t = 1; t < seq.samples.size(); ++t) {
      auto [box, conf] = predictor(seq, t);
      FrameRecord frame;
      frame.iou = iou(box, seq.samples[t].truth);
      frame.center_err_px = center_error_px(box, seq.samples[t].truth,
                                            seq.samples[t].rgb.dims()[1]);
      frame.confidence = conf;
      rec.frames.push_back(frame);
    }
    records[s] = std::move(rec);
  };
  if (threads <= 1 || dataset.size() <= 1) {
    for (std::size_t s = 0; s < dataset.size(); ++s) run_sequence(s);
  } else {
    const std::size_t workers = std::min(threads, dataset.size());
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t s = w; s < dataset.size(); s += workers) run_sequence(s);
      });
    }
    for (std::thread& th : pool) th.join();
  }
  return metrics_from_records(std::move(records), center_thresh_px);
}

struct EvalOptions {
  bool dummy_mode = false;
  std::size_t threads = 1;
};

inline MetricsReport evaluate(const TrackerModel& model, const Dataset& dataset,
                              const EvalOptions& opt = {}) {
  for (const ModalSequence& seq : dataset) {
    if (!seq.samples.empty() &&
        seq.samples[0].rgb.dims()[1] != model.cfg.image_size) {
      throw ConfigError("evaluate: sequence image size " +
                        std::to_string(seq.samples[0].rgb.dims()[1]) +
                        " does not match model config " +
                        std::to_string(model.cfg.image_size));
    }
  }
  const auto started = std::chrono::steady_clock::now();
  FramePredictor predictor = [&model, &opt](const ModalSequence& seq,
                                            std::size_t t) {
    Tensor tpl = crop_template(seq.samples[0].rgb, seq.samples[0].truth,
                               model.cfg.template_size);
    Tape tape;
    ForwardResult out = model.forward(tape, tpl, seq.samples[t], opt.dummy_mode);
    return predict_bbox(out.score_map, out.bbox_params);
  };
  MetricsReport report = evaluate_with_predictor(
      dataset, predictor, center_threshold_px(model.cfg.image_size), opt.threads);
  report.dummy_mode = opt.dummy_mode;
  report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

// ---------------------------------------------------------------------------
// Ablation grid: one seed-controlled train+eval run per axis value.
// ---------------------------------------------------------------------------

enum class AblationAxis { RankK, RankL, LoraRank, Percentile, ComponentSwitch };

inline AblationAxis ablation_axis_from_string(const std::string& s) {
  if (s == "rank_k") return AblationAxis::RankK;
  if (s == "rank_l") return AblationAxis::RankL;
  if (s == "lora_rank") return AblationAxis::LoraRank;
  if (s == "percentile") return AblationAxis::Percentile;
  if (s == "component_switch") return AblationAxis::ComponentSwitch;
  throw ConfigError("unknown ablation axis '" + s + "'");
}

// Accepts plain decimals and p/q fractions (the grids use 1/8, 1/4, 1/3).
inline double parse_fraction(const std::string& s) {
  const auto slash = s.find('/');
  try {
    if (slash == std::string::npos) return std::stod(s);
    const double num = std::stod(s.substr(0, slash));
    const double den = std::stod(s.substr(slash + 1));
    if (den == 0.0) throw ConfigError("fraction with zero denominator: " + s);
    return num / den;
  } catch (const std::invalid_argument&) {
    throw ConfigError("cannot parse number '" + s + "'");
  }
}

inline TrackerConfig apply_ablation_value(TrackerConfig cfg, AblationAxis axis,
                                          const std::string& value) {
  auto to_count = [&](const std::string& v) {
    try {
      const long n = std::stol(v);
      if (n <= 0) throw ConfigError("ablation value must be positive: " + v);
      return static_cast<std::size_t>(n);
    } catch (const std::invalid_argument&) {
      throw ConfigError("cannot parse ablation value '" + v + "'");
    }
  };
  switch (axis) {
    case AblationAxis::RankK: cfg.rank_k = to_count(value); break;
    case AblationAxis::RankL: cfg.rank_l = to_count(value); break;
    case AblationAxis::LoraRank: cfg.lora_rank = to_count(value); break;
    case AblationAxis::Percentile: cfg.percentile = parse_fraction(value); break;
    case AblationAxis::ComponentSwitch: {
      if (value == "w/o Explicit Edge") cfg.no_explicit_edge = true;
      else if (value == "w/o Implicit Learning") cfg.no_implicit_learning = true;
      else if (value == "w/o In-domain Approx.") cfg.no_indomain_approx = true;
      else if (value == "w/o Shared Embed") cfg.no_shared_embed = true;
      else if (value == "w/o LoRA Finetune") cfg.no_lora = true;
      else throw ConfigError("unknown component switch '" + value + "'");
      break;
    }
  }
  try {
    cfg.validate();
  } catch (const UsageError& e) {
    throw ConfigError(std::string("ablation value '") + value + "' invalid: " + e.what());
  }
  return cfg;
}

struct AblationRun {
  std::string value;
  TrackerConfig config;
  MetricsReport report;
};

inline std::vector<AblationRun> ablation_grid(
    const TrackerConfig& base, AblationAxis axis, const std::vector<std::string>& values,
    const Dataset& train_data, const Dataset* pretrain_data, const Dataset& eval_data,
    const TrainOptions& train_opt, const EvalOptions& eval_opt) {
  if (values.empty()) throw ConfigError("ablation grid: empty value list");
  std::vector<AblationRun> runs;
  for (const std::string& value : values) {
    AblationRun run;
    run.value = value;
    run.config = apply_ablation_value(base, axis, value);
    Rng rng(train_opt.seed);
    TrackerModel model = TrackerModel::create(run.config, rng);
    train(model, train_data, pretrain_data, train_opt);
    run.report = evaluate(model, eval_data, eval_opt);
    run.report.seed = train_opt.seed;
    runs.push_back(std::move(run));
  }
  return runs;
}

}  // namespace untrack
