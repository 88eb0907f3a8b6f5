// SPDX-License-Identifier: Apache-2.0
#include "stemfit/training/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>

#include "stemfit/model/encoder.hpp"
#include "stemfit/model/predictor.hpp"
#include "stemfit/training/losses.hpp"

namespace stemfit::training {

namespace {

using ndgrad::BasicParameterList;
using ndgrad::BasicTensor;
using ndgrad::GradcheckOptions;
using ndgrad::GradcheckResult;
using ndgrad::Tensor;
using ndgrad::Tensor64;

constexpr model::PatchGrid kGrid{1, 3};

model::EncoderConfig tiny_encoder() {
  model::EncoderConfig c;
  c.embed_dim = 8;
  c.depth = 1;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.patch_dim = 3;
  c.max_patches = kGrid.size();
  return c;
}

model::PredictorConfig tiny_predictor() {
  model::PredictorConfig c;
  c.layers = 3;
  c.hidden = 6;
  c.dim = 8;
  c.cond_dim = 3;
  return c;
}

// Fresh random values for every parameter; single precision so both models
// see the same point. Norm gains stay near 1.
template <class T>
void randomise(BasicParameterList<T>& params, Rng& rng) {
  for (auto& p : params) {
    const bool gain = p.name.find("gain") != std::string::npos;
    for (auto& v : p.tensor.data()) {
      v = static_cast<T>(static_cast<float>((gain ? 1.0 : 0.0) + 0.4 * rng.normal()));
    }
  }
}

template <class T>
BasicTensor<T> random_tensor(ndgrad::Shape shape, Rng& rng, bool grad) {
  std::vector<T> v(ndgrad::numel_of(shape));
  for (auto& x : v) x = static_cast<T>(static_cast<float>(rng.normal()));
  return BasicTensor<T>(std::move(shape), std::move(v), grad);
}

template <class T>
std::vector<BasicTensor<T>> leaves_of(const BasicParameterList<T>& params) {
  std::vector<BasicTensor<T>> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

GradcheckResult aggregate(std::vector<GradcheckResult>& runs) {
  GradcheckResult agg = runs.front();
  agg.passed = true;
  agg.entries = 0;
  for (const auto& r : runs) {
    agg.max_rel_error_f64 = std::max(agg.max_rel_error_f64, r.max_rel_error_f64);
    agg.max_rel_error_f32 = std::max(agg.max_rel_error_f32, r.max_rel_error_f32);
    agg.entries += r.entries;
    agg.passed = agg.passed && r.passed;
  }
  return agg;
}

// Weighted sum of an output, so every output entry contributes.
template <class T>
BasicTensor<T> project(const BasicTensor<T>& y, const std::vector<float>& w) {
  return ndgrad::sum(ndgrad::mul(y, BasicTensor<T>(y.shape(), std::vector<T>(w.begin(), w.end()))));
}

std::vector<float> weights(std::size_t n, Rng& rng) {
  std::vector<float> w(n);
  for (auto& x : w) x = static_cast<float>(rng.normal());
  return w;
}

GradcheckResult film_case(std::uint64_t seed, const GradcheckOptions& opt) {
  const auto cfg = tiny_predictor();
  const std::size_t n_seq = 2, k = 2;
  model::FilmPredictor p32(cfg, seed);
  model::FilmPredictor64 p64(cfg, seed);
  Rng rng(seed);
  randomise(p32.parameters(), rng);
  const auto z32 = random_tensor<float>({n_seq * k, cfg.dim}, rng, true);
  const auto c32 = random_tensor<float>({n_seq, cfg.cond_dim}, rng, true);
  const Tensor64 z64(z32.shape(), std::vector<double>(z32.data().begin(), z32.data().end()), true);
  const Tensor64 c64(c32.shape(), std::vector<double>(c32.data().begin(), c32.data().end()), true);
  const auto w = weights(n_seq * k * cfg.dim, rng);
  auto l32 = leaves_of(p32.parameters());
  auto l64 = leaves_of(p64.parameters());
  l32.push_back(z32);
  l32.push_back(c32);
  l64.push_back(z64);
  l64.push_back(c64);
  GradcheckOptions o = opt;
  o.seed = seed;
  return ndgrad::gradcheck(
      "film_predictor", [&] { return project(p64.forward(z64, c64, n_seq), w); }, l64,
      [&] { return project(p32.forward(z32, c32, n_seq), w); }, l32, o);
}

GradcheckResult encoder_case(std::uint64_t seed, const GradcheckOptions& opt, std::size_t depth) {
  auto cfg = tiny_encoder();
  cfg.depth = depth;
  const std::size_t n_seq = 2;
  model::Encoder e32(cfg, seed);
  model::Encoder64 e64(cfg, seed);
  Rng rng(seed);
  randomise(e32.parameters(), rng);
  const auto x32 = random_tensor<float>({n_seq * kGrid.size(), cfg.patch_dim}, rng, true);
  const Tensor64 x64(x32.shape(), std::vector<double>(x32.data().begin(), x32.data().end()), true);
  const auto w = weights(n_seq * kGrid.size() * cfg.embed_dim, rng);
  auto l32 = leaves_of(e32.parameters());
  auto l64 = leaves_of(e64.parameters());
  l32.push_back(x32);
  l64.push_back(x64);
  GradcheckOptions o = opt;
  o.seed = seed;
  return ndgrad::gradcheck(
      depth == 1 ? "encoder_block" : "encoder_stack", [&] { return project(e64.forward(x64, n_seq, kGrid), w); },
      l64, [&] { return project(e32.forward(x32, n_seq, kGrid), w); }, l32, o);
}

GradcheckResult contrastive_case(std::uint64_t seed, const GradcheckOptions& opt, ContrastiveMode mode) {
  const auto cfg = tiny_encoder();
  const std::size_t n = 3;
  model::Encoder e32(cfg, seed);
  model::Encoder64 e64(cfg, seed);
  Rng rng(seed);
  randomise(e32.parameters(), rng);
  const auto x32 = random_tensor<float>({2 * n * kGrid.size(), cfg.patch_dim}, rng, false);
  const Tensor64 x64(x32.shape(), std::vector<double>(x32.data().begin(), x32.data().end()));
  const auto t32 = Tensor::scalar(static_cast<float>(rng.uniform(std::log(0.1), std::log(0.5))), true);
  const auto t64 = Tensor64::scalar(0.0, true);
  auto l32 = leaves_of(e32.parameters());
  auto l64 = leaves_of(e64.parameters());
  l32.push_back(t32);
  l64.push_back(t64);
  auto loss = [n](const auto& enc, const auto& x, const auto& log_tau, ContrastiveMode m) {
    const auto s = model::pool(enc.forward(x, 2 * n, kGrid), 2 * n);
    return contrastive_loss(ndgrad::narrow(s, 0, 0, n), ndgrad::narrow(s, 0, n, n), log_tau, m);
  };
  GradcheckOptions o = opt;
  o.seed = seed;
  return ndgrad::gradcheck(
      mode == ContrastiveMode::kFullBatch ? "contrastive_end_to_end" : "contrastive_cross_end_to_end",
      [&] { return loss(e64, x64, t64, mode); }, l64, [&] { return loss(e32, x32, t32, mode); }, l32, o);
}

GradcheckResult jepa_case(std::uint64_t seed, const GradcheckOptions& opt) {
  const auto ecfg = tiny_encoder();
  const auto pcfg = tiny_predictor();
  const std::size_t n = 2;
  model::Encoder e32(ecfg, seed), t32(ecfg, seed + 1);
  model::Encoder64 e64(ecfg, seed), t64(ecfg, seed + 1);
  model::FilmPredictor p32(pcfg, seed);
  model::FilmPredictor64 p64(pcfg, seed);
  Rng rng(seed);
  randomise(e32.parameters(), rng);
  randomise(p32.parameters(), rng);
  randomise(t32.parameters(), rng);
  // The target encoder is not a leaf; mirror its values by hand.
  for (std::size_t i = 0; i < t32.parameters().size(); ++i) {
    auto src = t32.parameters()[i].tensor.data();
    auto dst = t64.parameters()[i].tensor.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  const auto xc32 = random_tensor<float>({n * kGrid.size(), ecfg.patch_dim}, rng, false);
  const auto xt32 = random_tensor<float>({n * kGrid.size(), ecfg.patch_dim}, rng, false);
  const auto c32 = random_tensor<float>({n, pcfg.cond_dim}, rng, false);
  auto widen = [](const Tensor& x) {
    return Tensor64(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  };
  const auto xc64 = widen(xc32), xt64 = widen(xt32), c64 = widen(c32);
  auto l32 = leaves_of(e32.parameters());
  auto l64 = leaves_of(e64.parameters());
  for (const auto& p : p32.parameters()) l32.push_back(p.tensor);
  for (const auto& p : p64.parameters()) l64.push_back(p.tensor);
  auto loss = [n](const auto& enc, const auto& tgt, const auto& pred, const auto& xc, const auto& xt,
                  const auto& c) {
    const auto zt = tgt.forward(xt, n, kGrid);
    return jepa_loss(pred.forward(enc.forward(xc, n, kGrid), c, n), zt, n);
  };
  GradcheckOptions o = opt;
  o.seed = seed;
  return ndgrad::gradcheck(
      "jepa_end_to_end", [&] { return loss(e64, t64, p64, xc64, xt64, c64); }, l64,
      [&] { return loss(e32, t32, p32, xc32, xt32, c32); }, l32, o);
}

}  // namespace

std::vector<GradcheckResult> run_model_suite(std::size_t seeds, const GradcheckOptions& opt) {
  std::vector<GradcheckResult> out;
  auto run = [&](auto one) {
    std::vector<GradcheckResult> runs;
    for (std::size_t s = 0; s < seeds; ++s) runs.push_back(one(5000 + s * 104729 + out.size()));
    out.push_back(aggregate(runs));
  };
  // Cases with ReLU use a smaller step so central differences rarely
  // straddle a kink.
  GradcheckOptions relu_opt = opt;
  relu_opt.step = std::min(opt.step, 1e-5);
  run([&](std::uint64_t s) { return film_case(s, relu_opt); });
  run([&](std::uint64_t s) { return encoder_case(s, opt, 1); });
  run([&](std::uint64_t s) { return encoder_case(s, opt, 2); });
  run([&](std::uint64_t s) { return contrastive_case(s, opt, ContrastiveMode::kFullBatch); });
  run([&](std::uint64_t s) { return contrastive_case(s, opt, ContrastiveMode::kCross); });
  run([&](std::uint64_t s) { return jepa_case(s, relu_opt); });
  return out;
}

std::vector<GradcheckResult> run_full_suite(std::size_t seeds, const GradcheckOptions& opt) {
  auto out = ndgrad::run_op_suite(seeds, opt);
  for (auto& r : run_model_suite(seeds, opt)) out.push_back(std::move(r));
  return out;
}

}  // namespace stemfit::training
