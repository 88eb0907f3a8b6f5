// SPDX-License-Identifier: Apache-2.0
#include "stemfit/training/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

#include "stemfit/common/error.hpp"
#include "stemfit/common/log.hpp"
#include "stemfit/model/ema.hpp"

namespace stemfit::training {

namespace {

using ndgrad::ParameterList;
using ndgrad::Tensor;

ParameterList prefixed(const ParameterList& params, const std::string& prefix) {
  ParameterList out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({prefix + p.name, p.tensor, p.decay});
  return out;
}

void add_moments(model::Checkpoint& ckpt, const ndgrad::AdamW& opt, const ParameterList& params) {
  for (const auto& p : params) {
    const auto it = opt.moments().find(p.name);
    if (it == opt.moments().end()) continue;
    ckpt.add(model::NamedTensor{"optim.m." + p.name, p.tensor.shape(), it->second.m});
    ckpt.add(model::NamedTensor{"optim.v." + p.name, p.tensor.shape(), it->second.v});
  }
}

class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path) {
    if (path.empty()) return;
    file_.emplace(path, std::ios::binary | std::ios::trunc);
    if (!*file_) throw IoError("cannot write metrics log " + path.string());
  }
  void write(int phase, const StepRecord& r) {
    if (!file_) return;
    nlohmann::json j = {{"phase", phase}, {"step", r.step}, {"loss", r.loss}, {"lr", r.lr},
                        {phase == 1 ? "tau" : "ema", r.tau}};
    *file_ << j.dump() << '\n';
  }
  void flush() {
    if (file_) file_->flush();
  }

 private:
  std::optional<std::ofstream> file_;
};

void check_finite(double loss, int phase, std::int64_t step, const Batch& batch) {
  if (std::isfinite(loss)) return;
  throw NumericError("phase " + std::to_string(phase) + " step " + std::to_string(step) + ": non-finite loss (" +
                     std::to_string(loss) + "); batch " + batch.describe());
}

void progress(int phase, const PhaseConfig& cfg, const StepRecord& r, const std::vector<StepRecord>& log) {
  if (cfg.log_every <= 0) return;
  if ((r.step + 1) % cfg.log_every != 0 && r.step + 1 != cfg.steps) return;
  const std::size_t window = std::min<std::size_t>(log.size(), static_cast<std::size_t>(cfg.log_every));
  double mean = 0.0;
  for (std::size_t i = log.size() - window; i < log.size(); ++i) mean += log[i].loss;
  mean /= static_cast<double>(window);
  stemfit::log().info("phase {} step {}/{} loss {:.5f} (mean of last {}: {:.5f}) lr {:.3g} {} {:.5f}", phase,
                      r.step + 1, cfg.steps, r.loss, window, mean, r.lr, phase == 1 ? "tau" : "ema", r.tau);
}

corpus::SamplerOptions sampler_for(const Featurizer& features, const DataOptions& data) {
  corpus::SamplerOptions s = data.sampler;
  s.chunk_seconds = features.config().chunk_seconds;
  return s;
}

Tensor conditioning_rows(const conditioning::EmbeddingTable& table, const std::vector<std::string>& labels,
                         conditioning::LookupReport& report) {
  std::vector<float> rows;
  rows.reserve(labels.size() * table.dim());
  for (const auto& l : labels) {
    const auto e = table.lookup(l, &report);
    rows.insert(rows.end(), e.vector.begin(), e.vector.end());
  }
  return Tensor({labels.size(), table.dim()}, std::move(rows));
}

}  // namespace

void PhaseConfig::validate() const {
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (warmup_steps < 0 || warmup_steps >= steps) throw ConfigError("warmup_steps must satisfy 0 <= warmup < steps");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
}

std::string Batch::describe() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < provenance.size(); ++i) {
    const auto& p = provenance[i];
    if (i) os << ", ";
    os << p.track_id << "/" << p.target_stem << "@" << p.offset << "[" << p.label << "]";
  }
  return os.str();
}

Rng batch_rng(std::uint64_t seed, std::int64_t step) {
  return Rng(seed).stream(0x5eed0000ULL + static_cast<std::uint64_t>(step));
}

Batch sample_batch(const corpus::AudioCorpus& audio, std::size_t size, Rng& rng,
                   const corpus::SamplerOptions& sampler) {
  const std::size_t n = audio.tracks().size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Batch b;
  for (std::size_t i = 0; i < n && b.size() < size; ++i) {
    std::swap(order[i], order[i + rng.index(n - i)]);
    auto pair = corpus::sample_pair(audio.tracks()[order[i]], rng, sampler);
    if (!pair) continue;
    b.context.push_back(std::move(pair->context));
    b.target.push_back(std::move(pair->target));
    b.labels.push_back(pair->label);
    b.provenance.push_back(std::move(pair->provenance));
  }
  if (b.size() < size) {
    throw ConfigError("corpus yields only " + std::to_string(b.size()) + " usable tracks for a batch of " +
                      std::to_string(size));
  }
  return b;
}

TrainResult train_phase1(const corpus::AudioCorpus& audio, const Featurizer& features, model::Encoder& encoder,
                         Temperature& temperature, const Phase1Config& cfg, const DataOptions& data,
                         const RunOutput& out) {
  cfg.validate();
  if (audio.tracks().empty()) throw ConfigError("phase 1: corpus is empty");
  if (features.grid().size() > encoder.config().max_patches) {
    throw ConfigError("phase 1: " + std::to_string(features.grid().size()) + " patches exceed max_patches");
  }
  ParameterList params = prefixed(encoder.parameters(), kEncoderPrefix);
  params.push_back({kLogTauName, temperature.log_tau, false});
  temperature.log_tau.set_requires_grad(true);
  ndgrad::AdamW opt({0.9, 0.999, 1e-8, cfg.weight_decay});
  const auto sampler = sampler_for(features, data);
  const auto schedule = cfg.schedule();
  MetricsLog metrics(out.metrics_log);
  TrainResult res;

  auto snapshot = [&](std::int64_t step) {
    model::Checkpoint ckpt;
    ckpt.config_digest = out.config_digest;
    ckpt.phase = 1;
    ckpt.step = static_cast<std::uint64_t>(step);
    ckpt.meta = out.meta;
    model::add_parameters(ckpt, "", params);
    add_moments(ckpt, opt, params);
    if (!out.checkpoint.empty()) model::save_checkpoint(ckpt, out.checkpoint);
    return ckpt;
  };

  const std::size_t n = cfg.batch_size;
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    Rng rng = batch_rng(cfg.seed, step);
    const Batch batch = sample_batch(audio, n, rng, sampler);
    std::vector<dsp::AudioChunk> chunks = batch.context;
    chunks.insert(chunks.end(), batch.target.begin(), batch.target.end());
    const Tensor x = features(chunks, data.workers);

    ndgrad::zero_grads(params);
    const Tensor z = encoder.forward(x, 2 * n, features.grid());
    const Tensor s = model::pool(z, 2 * n);
    const Tensor loss = contrastive_loss(ndgrad::narrow(s, 0, 0, n), ndgrad::narrow(s, 0, n, n),
                                         temperature.log_tau, cfg.mode);
    const double value = loss.item();
    check_finite(value, 1, step, batch);
    loss.backward();
    const double lr = ndgrad::lr_at(step, schedule);
    opt.step(params, lr);
    temperature.clamp();

    StepRecord r{step, value, lr, temperature.tau()};
    res.log.push_back(r);
    metrics.write(1, r);
    progress(1, cfg, r, res.log);
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 != cfg.steps) {
      snapshot(step + 1);
      metrics.flush();
    }
  }
  res.checkpoint = snapshot(cfg.steps);
  return res;
}

TrainResult train_phase2(const corpus::AudioCorpus& audio, const Featurizer& features, model::Encoder& online,
                         model::Encoder& target, model::FilmPredictor& predictor,
                         const conditioning::EmbeddingTable& table, const Phase2Config& cfg, const DataOptions& data,
                         const RunOutput& out) {
  cfg.validate();
  if (audio.tracks().empty()) throw ConfigError("phase 2: corpus is empty");
  if (table.dim() != predictor.config().cond_dim) {
    throw ConfigError("phase 2: conditioning table has p=" + std::to_string(table.dim()) +
                      " but the predictor expects p=" + std::to_string(predictor.config().cond_dim));
  }
  if (predictor.config().dim != online.config().embed_dim) {
    throw ConfigError("phase 2: predictor width differs from the encoder embedding width");
  }
  if (features.grid().size() > online.config().max_patches) {
    throw ConfigError("phase 2: " + std::to_string(features.grid().size()) + " patches exceed max_patches");
  }
  ndgrad::copy_values(target.parameters(), online.parameters());
  for (auto& p : target.parameters()) p.tensor.set_requires_grad(false);

  ParameterList params = prefixed(online.parameters(), kEncoderPrefix);
  for (auto& p : prefixed(predictor.parameters(), kPredictorPrefix)) params.push_back(p);
  ndgrad::AdamW opt({0.9, 0.999, 1e-8, cfg.weight_decay});
  const auto sampler = sampler_for(features, data);
  const auto schedule = cfg.schedule();
  const auto ema = cfg.ema();
  MetricsLog metrics(out.metrics_log);
  conditioning::LookupReport report;
  TrainResult res;

  auto snapshot = [&](std::int64_t step) {
    model::Checkpoint ckpt;
    ckpt.config_digest = out.config_digest;
    ckpt.phase = 2;
    ckpt.step = static_cast<std::uint64_t>(step);
    ckpt.meta = out.meta;
    model::add_parameters(ckpt, "", params);
    model::add_parameters(ckpt, kTargetPrefix, target.parameters());
    add_moments(ckpt, opt, params);
    if (!out.checkpoint.empty()) model::save_checkpoint(ckpt, out.checkpoint);
    return ckpt;
  };

  const std::size_t n = cfg.batch_size;
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    Rng rng = batch_rng(cfg.seed, step);
    const Batch batch = sample_batch(audio, n, rng, sampler);
    const Tensor xc = features(batch.context, data.workers);
    const Tensor xt = features(batch.target, data.workers);
    const Tensor cond = conditioning_rows(table, batch.labels, report);

    Tensor zt;
    {
      ndgrad::NoGradGuard guard;
      zt = target.forward(xt, n, features.grid());
    }
    ndgrad::zero_grads(params);
    const Tensor zc = online.forward(xc, n, features.grid());
    const Tensor pred = predictor.forward(zc, cond, n);
    const Tensor loss = jepa_loss(pred, zt, n);
    const double value = loss.item();
    check_finite(value, 2, step, batch);
    loss.backward();
    const double lr = ndgrad::lr_at(step, schedule);
    opt.step(params, lr);
    const double rate = model::ema_rate(step + 1, ema);
    model::ema_update(target.parameters(), online.parameters(), rate);

    StepRecord r{step, value, lr, rate};
    res.log.push_back(r);
    metrics.write(2, r);
    progress(2, cfg, r, res.log);
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 != cfg.steps) {
      snapshot(step + 1);
      metrics.flush();
    }
  }
  if (report.total_misses() > 0) {
    for (const auto& [label, count] : report.misses) {
      stemfit::log().warn("phase 2: label '{}' missing from the conditioning table ({} lookups fell back to music)",
                          label, count);
    }
  }
  res.checkpoint = snapshot(cfg.steps);
  return res;
}

}  // namespace stemfit::training
