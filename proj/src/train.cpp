// SPDX-License-Identifier: Apache-2.0
#include "idu/train.hpp"

#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>

#include "idu/error.hpp"
#include "idu/rng.hpp"

namespace idu {

namespace {

// Salts for the independent random streams of one run.
constexpr std::uint64_t kInitSalt = 1;
constexpr std::uint64_t kSampleSalt = 2;

void check_pairs(std::span<Matrix* const> params, std::span<const Matrix> grads) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i])) throw ShapeError("optimizer: gradient shape mismatch");
    require_finite(grads[i], "gradient");
  }
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t n, std::size_t batch, std::uint64_t seed,
                                                       std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(Rng::mix(seed, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch)));
  }
  return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(const TrainConfig& cfg, const WindowSet& windows,
                                                    const BalancedSampler* sampler, std::size_t epoch) {
  const std::uint64_t seed = Rng::mix(cfg.seed, kSampleSalt);
  auto batches = sampler ? sampler->epoch(epoch) : shuffled_batches(windows.size(), cfg.batch_size, seed, epoch);
  if (cfg.max_batches != 0 && batches.size() > cfg.max_batches) batches.resize(cfg.max_batches);
  return batches;
}

// One optimizer step on `params` from the gradients of the last backward().
LogRecord apply_step(const TrainConfig& cfg, Optimizer& opt, Tape& tape, const std::vector<Var>& vars,
                     std::span<Matrix* const> params, TrainLog& log) {
  std::vector<Matrix> grads;
  grads.reserve(vars.size());
  for (Var v : vars) grads.push_back(tape.gradient(v));
  LogRecord rec;
  rec.grad_norm = global_norm(grads);
  if (!std::isfinite(rec.grad_norm)) throw NumericError("training diverged: non-finite gradient");
  rec.clipped = clip_global_norm(grads, cfg.clip_norm);
  if (rec.clipped) ++log.clipped_steps;
  opt.step(params, grads);
  return rec;
}

bool should_log(const TrainConfig& cfg, std::size_t batch, std::size_t count) {
  return cfg.log_every != 0 && (batch % cfg.log_every == 0 || batch + 1 == count);
}

void check_loss(double loss, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                       std::to_string(step));
  }
}

}  // namespace

std::string_view to_string(OptimizerKind kind) noexcept { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw UsageError("unknown optimizer '" + std::string(name) + "'");
}

void sgd_step(std::span<Matrix* const> params, std::span<const Matrix> grads, double lr) {
  check_pairs(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
  }
}

void adam_step(AdamState& s, std::span<Matrix* const> params, std::span<const Matrix> grads) {
  check_pairs(params, grads);
  if (s.m.empty()) {
    for (Matrix* p : params) {
      s.m.emplace_back(p->rows(), p->cols());
      s.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (s.m.size() != params.size()) throw ShapeError("adam: parameter count changed");
  ++s.step;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!s.m[i].same_shape(*params[i])) throw ShapeError("adam: moment shape mismatch");
    auto p = params[i]->data();
    auto g = grads[i].data();
    auto m = s.m[i].data();
    auto v = s.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = s.beta1 * m[k] + (1.0 - s.beta1) * g[k];
      v[k] = s.beta2 * v[k] + (1.0 - s.beta2) * g[k] * g[k];
      p[k] -= s.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + s.epsilon);
    }
  }
}

Optimizer::Optimizer(const OptimizerConfig& config) : config_(config) {
  if (!(config.lr >= 0.0) || !std::isfinite(config.lr)) throw UsageError("learning rate must be finite and >= 0");
  adam_.lr = config.lr;
  adam_.beta1 = config.beta1;
  adam_.beta2 = config.beta2;
  adam_.epsilon = config.epsilon;
}

void Optimizer::step(std::span<Matrix* const> params, std::span<const Matrix> grads) {
  if (config_.kind == OptimizerKind::Sgd) {
    sgd_step(params, grads, config_.lr);
  } else {
    adam_step(adam_, params, grads);
  }
  ++steps_;
}

double global_norm(std::span<const Matrix> grads) noexcept {
  double sq = 0.0;
  for (const Matrix& g : grads) {
    for (double v : g.data()) sq += v * v;
  }
  return std::sqrt(sq);
}

bool clip_global_norm(std::span<Matrix> grads, double max_norm) {
  if (max_norm <= 0.0) return false;
  const double norm = global_norm(grads);
  if (norm <= max_norm) return false;
  const double scale = max_norm / norm;
  for (Matrix& g : grads) {
    for (double& v : g.data()) v *= scale;
  }
  return true;
}

void TrainConfig::validate() const {
  if (epochs == 0) throw UsageError("epochs must be positive");
  if (batch_size == 0) throw UsageError("batch size must be positive");
  if (stride == 0) throw UsageError("stride must be positive");
  if (!(alpha >= 0.0) || !(margin >= 0.0)) throw UsageError("alpha and margin must be >= 0");
  if (!std::isfinite(alpha) || !std::isfinite(margin)) throw UsageError("alpha and margin must be finite");
}

void TrainConfig::write(ConfigRecord& out, std::string_view prefix) const {
  const std::string p(prefix);
  out[p + "epochs"] = std::to_string(epochs);
  out[p + "batch_size"] = std::to_string(batch_size);
  out[p + "seed"] = std::to_string(seed);
  out[p + "alpha"] = format_double(alpha);
  out[p + "margin"] = format_double(margin);
  out[p + "optimizer"] = std::string(to_string(optimizer.kind));
  out[p + "lr"] = format_double(optimizer.lr);
  out[p + "clip_norm"] = format_double(clip_norm);
  out[p + "past"] = std::to_string(past);
  out[p + "horizon"] = std::to_string(horizon);
  out[p + "stride"] = std::to_string(stride);
  out[p + "sampling"] = sampling == Sampling::Balanced ? "balanced" : "shuffle";
  out[p + "max_batches"] = std::to_string(max_batches);
}

TrainConfig idn_defaults() { return TrainConfig{}; }

TrainConfig iin_defaults() {
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.optimizer.kind = OptimizerKind::Adam;
  cfg.optimizer.lr = 1e-4;
  cfg.sampling = Sampling::Shuffle;
  return cfg;
}

void TrainLog::write(std::ostream& out) const {
  for (const LogRecord& r : records) {
    out << "epoch=" << r.epoch << " step=" << r.step << " loss=" << format_double(r.loss)
        << " l_ce=" << format_double(r.l_ce) << " l_ee=" << format_double(r.l_ee)
        << " l_ct=" << format_double(r.l_ct) << " grad_norm=" << format_double(r.grad_norm)
        << " clipped=" << (r.clipped ? 1 : 0) << '\n';
  }
  out << "clipped_steps=" << clipped_steps << '\n';
}

DetectorRun train_idn(const TrainConfig& cfg, const DetectorConfig& model_cfg, const FeatureStream& data) {
  cfg.validate();
  if (data.width() != model_cfg.feature_width) throw FormatError("data width does not match the model");
  if (data.num_classes != model_cfg.num_classes) throw FormatError("data class count does not match the model");

  Rng init(Rng::mix(cfg.seed, kInitSalt));
  DetectorRun run{DetectorModel::create(model_cfg, init), {}};
  const WindowSet windows = make_windows(data, cfg.past, 0, cfg.stride);
  std::optional<BalancedSampler> sampler;
  if (cfg.sampling == Sampling::Balanced) {
    sampler.emplace(windows, cfg.batch_size, Rng::mix(cfg.seed, kSampleSalt));
    if (sampler->batches_per_epoch() == 0) throw FormatError("training data needs both background and action windows");
  }
  Optimizer opt(cfg.optimizer);
  const auto params = trainable(run.model);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = epoch_batches(cfg, windows, sampler ? &*sampler : nullptr, epoch);
    for (std::size_t b = 0; b < batches.size(); ++b, ++step) {
      const SequenceBatch batch = assemble(windows, batches[b]);
      Tape tape;
      const ModelBinding w = bind(tape, run.model);
      const DetectorForward fwd = idn_forward(run.model, w, batch);
      const OadLoss loss = detector_loss(run.model, fwd, batch, cfg.alpha, cfg.margin);
      check_loss(loss.parts.l_total, epoch, step);
      tape.backward(loss.total);
      LogRecord rec = apply_step(cfg, opt, tape, w.all(), params, run.log);
      if (should_log(cfg, b, batches.size())) {
        rec.epoch = epoch;
        rec.step = step;
        rec.loss = loss.parts.l_total;
        rec.l_ce = loss.parts.l_ce;
        rec.l_ee = loss.parts.l_ee;
        rec.l_ct = loss.parts.l_ct;
        run.log.records.push_back(rec);
      }
    }
  }
  return run;
}

AnticipatorRun train_iin(const TrainConfig& cfg, const AnticipatorConfig& model_cfg, const FeatureStream& data,
                         const std::vector<int>& labels) {
  cfg.validate();
  if (data.width() != model_cfg.feature_width) throw FormatError("data width does not match the model");
  if (data.num_classes != model_cfg.num_classes) throw FormatError("data class count does not match the model");
  if (labels.size() != data.length()) throw ShapeError("label track length does not match the data");
  if (cfg.horizon != model_cfg.horizon) throw UsageError("training horizon does not match the model");

  Rng init(Rng::mix(cfg.seed, kInitSalt));
  AnticipatorRun run{AnticipatorModel::create(model_cfg, init), {}};
  const WindowSet windows = make_windows(data, cfg.past, cfg.horizon, cfg.stride);
  if (windows.size() == 0) throw FormatError("training data is empty");
  std::optional<BalancedSampler> sampler;
  if (cfg.sampling == Sampling::Balanced) {
    sampler.emplace(windows, cfg.batch_size, Rng::mix(cfg.seed, kSampleSalt));
    if (sampler->batches_per_epoch() == 0) throw FormatError("training data needs both background and action windows");
  }
  Optimizer opt(cfg.optimizer);
  const auto params = trainable(run.model);

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = epoch_batches(cfg, windows, sampler ? &*sampler : nullptr, epoch);
    for (std::size_t b = 0; b < batches.size(); ++b, ++step) {
      const SequenceBatch batch = assemble(windows, batches[b], &labels);
      Tape tape;
      const ModelBinding w = bind(tape, run.model);
      const AnticipatorForward fwd = iin_forward(run.model, w, batch, NormMode::Train);
      const Var loss = anticipator_loss(run.model, fwd, batch);
      const double value = loss.value()(0, 0);
      check_loss(value, epoch, step);
      tape.backward(loss);
      // Running statistics follow the weights the batch was normalized with.
      std::vector<int> flat;
      for (const auto& t : batch.label_input) flat.insert(flat.end(), t.begin(), t.end());
      update_label_norm_stats(run.model, one_hot(flat, model_cfg.num_classes));
      LogRecord rec = apply_step(cfg, opt, tape, w.all(), params, run.log);
      if (should_log(cfg, b, batches.size())) {
        rec.epoch = epoch;
        rec.step = step;
        rec.loss = value;
        run.log.records.push_back(rec);
      }
    }
  }
  return run;
}

std::vector<int> label_track(const FeatureStream& data, LabelSource source, const DetectorModel* detector,
                             std::size_t past) {
  if (source == LabelSource::Oracle) return data.labels;
  if (detector == nullptr) throw UsageError("pseudo labels need a trained detector");
  if (detector->config.feature_width != data.width() || detector->config.num_classes != data.num_classes) {
    throw FormatError("detector checkpoint does not match the data");
  }
  return stream_pseudo_labels(*detector, data, past);
}

}  // namespace idu
