#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "stemfit/common/error.hpp"
#include "stemfit/training/gradcheck_suite.hpp"
#include "stemfit/training/trainer.hpp"

using namespace stemfit;
using namespace stemfit::training;
using ndgrad::Tensor;
using ndgrad::Tensor64;
namespace fs = std::filesystem;

namespace {

Tensor64 rows(std::size_t n, std::size_t d, std::vector<double> v, bool grad = false) {
  return Tensor64({n, d}, std::move(v), grad);
}

Tensor64 random_rows(std::size_t n, std::size_t d, std::uint64_t seed, bool grad = false) {
  Rng rng(seed);
  std::vector<double> v(n * d);
  for (auto& x : v) x = rng.normal();
  return rows(n, d, v, grad);
}

// Independent double-precision reference for the full-batch loss.
double reference_contrastive(const Tensor64& c, const Tensor64& t, double tau) {
  const std::size_t n = c.dim(0), d = c.dim(1);
  std::vector<std::vector<double>> b;
  for (const auto* x : {&c, &t}) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> r(x->data().begin() + i * d, x->data().begin() + (i + 1) * d);
      double nn = 0;
      for (double v : r) nn += v * v;
      for (double& v : r) v /= std::sqrt(nn);
      b.push_back(r);
    }
  }
  auto sim = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += b[i][k] * b[j][k];
    return s / tau;
  };
  double total = 0;
  for (std::size_t i = 0; i < 2 * n; ++i) {
    const std::size_t pos = (i + n) % (2 * n);
    double denom = 0;
    for (std::size_t j = 0; j < 2 * n; ++j) {
      if (j != i) denom += std::exp(sim(i, j));
    }
    total += -(sim(i, pos) - std::log(denom));
  }
  return total / (2.0 * n);
}

Tensor64 log_tau_of(double tau) { return Tensor64::scalar(std::log(tau)); }

struct SmallSetup {
  fs::path dir;
  std::unique_ptr<corpus::AudioCorpus> audio;
  FeatureConfig features;
  model::EncoderConfig encoder;
  model::PredictorConfig predictor;

  explicit SmallSetup(const std::string& name, std::size_t tracks = 20) {
    dir = fs::temp_directory_path() / ("stemfit_test_training_" + name);
    fs::remove_all(dir);
    corpus::GenerateOptions g;
    g.n_tracks = tracks;
    g.duration_seconds = 3.0;
    g.seed = 17;
    audio = std::make_unique<corpus::AudioCorpus>(corpus::generate_corpus(g, dir));
    features.chunk_seconds = 0.96;  // 96 frames -> 5 x 6 patches
    encoder.embed_dim = 16;
    encoder.depth = 1;
    encoder.heads = 2;
    encoder.mlp_ratio = 2;
    predictor.layers = 3;
    predictor.hidden = 32;
    predictor.dim = 16;
    predictor.cond_dim = 16;
  }
  ~SmallSetup() { fs::remove_all(dir); }
};

double mean_loss(const std::vector<StepRecord>& log, std::size_t from, std::size_t count) {
  double m = 0;
  for (std::size_t i = from; i < from + count; ++i) m += log[i].loss;
  return m / double(count);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("contrastive loss: uniform similarities give ln(|B| - 1)") {
  // Four identical embeddings: every cosine similarity is 1.
  const auto same = rows(2, 3, {1, 2, 3, 1, 2, 3});
  for (double tau : {0.05, 0.1, 1.0}) {
    CHECK(contrastive_loss(same, same, log_tau_of(tau)).item() == doctest::Approx(std::log(3.0)).epsilon(1e-6));
  }
  // Regular simplex in R^3: all pairwise similarities equal -1/3.
  const double a = 1.0 / std::sqrt(3.0);
  const auto c = rows(2, 3, {a, a, a, a, -a, -a});
  const auto t = rows(2, 3, {-a, a, -a, -a, -a, a});
  CHECK(std::abs(contrastive_loss(c, t, log_tau_of(0.1)).item() - std::log(3.0)) < 1e-6);
}

TEST_CASE("contrastive loss: hand case and high-temperature limit") {
  // s1 = s1' = e1, s2 = e2, s2' = e3: sim(s1, s1') = 1, all other sims 0.
  const auto c = rows(2, 3, {1, 0, 0, 0, 1, 0});
  const auto t = rows(2, 3, {1, 0, 0, 0, 0, 1});
  const auto per = contrastive_anchor_losses(c, t, log_tau_of(1.0));
  REQUIRE(per.numel() == 4);
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  CHECK(std::abs(per.data()[0] - expected) < 1e-6);
  CHECK(std::abs(expected - 0.5514) < 1e-4);
  CHECK(std::abs(per.data()[2] - expected) < 1e-6);  // symmetric anchor s1'

  const auto x = random_rows(4, 5, 1), y = random_rows(4, 5, 2);
  CHECK(std::abs(contrastive_loss(x, y, Tensor64::scalar(20.0)).item() - std::log(7.0)) < 1e-6);
}

TEST_CASE("contrastive loss matches an independent reference and is non-negative") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const std::size_t n = 2 + s % 5;
    const auto c = random_rows(n, 6, 10 + s), t = random_rows(n, 6, 100 + s);
    const double tau = 0.05 + 0.05 * double(s);
    const double got = contrastive_loss(c, t, log_tau_of(tau)).item();
    CHECK(got == doctest::Approx(reference_contrastive(c, t, tau)).epsilon(1e-10));
    CHECK(got >= 0.0);
    // Float path agrees with the double path.
    Tensor cf({n, 6}, std::vector<float>(c.data().begin(), c.data().end()));
    Tensor tf({n, 6}, std::vector<float>(t.data().begin(), t.data().end()));
    CHECK(contrastive_loss(cf, tf, Tensor::scalar(float(std::log(tau)))).item() ==
          doctest::Approx(got).epsilon(1e-4));
  }
}

TEST_CASE("cross-mode contrastive loss against a direct evaluation") {
  const auto c = random_rows(3, 4, 5), t = random_rows(3, 4, 6);
  const double tau = 0.3;
  auto unit = [](const Tensor64& x, std::size_t i) {
    std::vector<double> r(x.data().begin() + i * 4, x.data().begin() + i * 4 + 4);
    double n = 0;
    for (double v : r) n += v * v;
    for (double& v : r) v /= std::sqrt(n);
    return r;
  };
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
  };
  double total = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    double dc = 0, dt = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      dc += std::exp(dot(unit(c, i), unit(t, j)) / tau);
      dt += std::exp(dot(unit(t, i), unit(c, j)) / tau);
    }
    const double pos = dot(unit(c, i), unit(t, i)) / tau;
    total += (std::log(dc) - pos) + (std::log(dt) - pos);
  }
  CHECK(contrastive_loss(c, t, log_tau_of(tau), ContrastiveMode::kCross).item() ==
        doctest::Approx(total / 6.0).epsilon(1e-10));
}

TEST_CASE("losses are invariant to positive rescaling of embeddings") {
  const auto c = random_rows(4, 8, 31), t = random_rows(4, 8, 32);
  const double base = contrastive_loss(c, t, log_tau_of(0.1)).item();
  auto scaled = c.clone();
  for (std::size_t j = 0; j < 8; ++j) scaled.data()[8 + j] *= 7.25;
  CHECK(std::abs(contrastive_loss(scaled, t, log_tau_of(0.1)).item() - base) < 1e-5);

  const double jb = jepa_loss(c, t).item();
  auto ts = t.clone();
  for (std::size_t j = 0; j < 8; ++j) ts.data()[3 * 8 + j] *= 0.02;
  CHECK(std::abs(jepa_loss(scaled, ts).item() - jb) < 1e-5);

  // Float path as used in training.
  Tensor cf({4, 8}, std::vector<float>(c.data().begin(), c.data().end()));
  Tensor sf({4, 8}, std::vector<float>(scaled.data().begin(), scaled.data().end()));
  Tensor tf({4, 8}, std::vector<float>(t.data().begin(), t.data().end()));
  CHECK(std::abs(contrastive_loss(sf, tf, Tensor::scalar(float(std::log(0.1)))).item() -
                 contrastive_loss(cf, tf, Tensor::scalar(float(std::log(0.1)))).item()) < 1e-5);
}

TEST_CASE("contrastive loss rejects a single pair") {
  CHECK_THROWS_AS(contrastive_loss(random_rows(1, 3, 1), random_rows(1, 3, 2), log_tau_of(0.1)),
                  std::invalid_argument);
  CHECK_THROWS_AS(contrastive_loss(random_rows(2, 3, 1), random_rows(3, 3, 2), log_tau_of(0.1)), ShapeError);
}

TEST_CASE("jepa loss: identical, orthogonal and antipodal constructions") {
  const std::size_t k = 7;
  const auto z = random_rows(k, 4, 3);
  auto anti = z.clone();
  for (auto& v : anti.data()) v = -v;
  // Orthogonal: rotate each 4-vector (a, b, c, d) -> (-b, a, -d, c).
  auto orth = z.clone();
  for (std::size_t r = 0; r < k; ++r) {
    auto* p = orth.data().data() + r * 4;
    const auto* q = z.data().data() + r * 4;
    p[0] = -q[1];
    p[1] = q[0];
    p[2] = -q[3];
    p[3] = q[2];
  }
  CHECK(std::abs(jepa_loss(z, z).item()) < 1e-5);
  CHECK(std::abs(jepa_loss(orth, z).item() - 2.0 * k) < 1e-5);
  CHECK(std::abs(jepa_loss(anti, z).item() - 4.0 * k) < 1e-5);

  Tensor zf({k, 4}, std::vector<float>(z.data().begin(), z.data().end()));
  Tensor af({k, 4}, std::vector<float>(anti.data().begin(), anti.data().end()));
  Tensor of({k, 4}, std::vector<float>(orth.data().begin(), orth.data().end()));
  CHECK(std::abs(jepa_loss(zf, zf).item()) < 1e-5);
  CHECK(std::abs(jepa_loss(of, zf).item() - 2.0 * k) < 1e-5);
  CHECK(std::abs(jepa_loss(af, zf).item() - 4.0 * k) < 1e-5);

  // Two stacked sequences of K rows average to the per-sequence value.
  const auto z2 = ndgrad::concat(std::vector{z, z}, 0);
  const auto a2 = ndgrad::concat(std::vector{anti, anti}, 0);
  CHECK(std::abs(jepa_loss(a2, z2, 2).item() - 4.0 * k) < 1e-5);
  CHECK_THROWS_AS(jepa_loss(a2, z2, 3), ShapeError);
}

TEST_CASE("jepa loss passes no gradient to the target and survives zero rows") {
  auto pred = random_rows(5, 3, 8, true);
  auto target = random_rows(5, 3, 9, true);
  const auto loss = jepa_loss(pred, target);
  loss.backward();
  REQUIRE(pred.has_grad());
  bool any = false;
  for (double g : pred.grad()) any = any || g != 0.0;
  CHECK(any);
  if (target.has_grad()) {
    for (double g : target.grad()) CHECK(g == 0.0);
  }
  auto zero = rows(2, 3, {0, 0, 0, 1, 2, 3});
  CHECK(std::isfinite(jepa_loss(zero, random_rows(2, 3, 4)).item()));
}

TEST_CASE("temperature starts at 0.1 and is clamped to [0.01, 1]") {
  Temperature t;
  CHECK(t.tau() == doctest::Approx(0.1).epsilon(1e-6));
  t.log_tau.data()[0] = 5.0f;
  t.clamp();
  CHECK(t.tau() == doctest::Approx(1.0));
  t.log_tau.data()[0] = -30.0f;
  t.clamp();
  CHECK(t.tau() == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("model-level gradient suite, 10 seeds") {
  const auto start = std::chrono::steady_clock::now();
  const auto results = run_model_suite(10);
  CHECK(results.size() == 6);
  for (const auto& r : results) {
    INFO(r.name, " f64 ", r.max_rel_error_f64, " f32 ", r.max_rel_error_f32);
    CHECK(r.passed);
    CHECK(r.entries > 0);
  }
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::minutes(2));
}

TEST_CASE("phase 1: seeded descent, lr schedule and bitwise determinism") {
  SmallSetup s("phase1");
  const Featurizer feats(s.features);
  Phase1Config cfg;
  cfg.steps = 50;
  cfg.batch_size = 8;
  cfg.warmup_steps = 5;
  cfg.base_lr = 2e-3;
  cfg.seed = 4;
  cfg.log_every = 0;
  auto run = [&](const fs::path& ckpt) {
    model::Encoder enc(s.encoder, 1);
    Temperature tau;
    RunOutput out;
    out.checkpoint = ckpt;
    out.metrics_log = fs::path(ckpt).replace_extension(".jsonl");
    return train_phase1(*s.audio, feats, enc, tau, cfg, {}, out);
  };
  const auto a = run(s.dir / "a.ckpt");
  const auto b = run(s.dir / "b.ckpt");
  REQUIRE(a.log.size() == 50);
  CHECK(a.log[0].lr == 0.0);
  CHECK(a.log[5].lr == cfg.base_lr);
  CHECK(mean_loss(a.log, 40, 10) < mean_loss(a.log, 0, 10));
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].loss == b.log[i].loss);
    CHECK(a.log[i].tau >= 0.01 - 1e-9);
    CHECK(a.log[i].tau <= 1.0);
  }
  CHECK(slurp(s.dir / "a.ckpt") == slurp(s.dir / "b.ckpt"));
  CHECK(slurp(s.dir / "a.jsonl") == slurp(s.dir / "b.jsonl"));
  const auto ckpt = model::load_checkpoint(s.dir / "a.ckpt");
  CHECK(ckpt.phase == 1);
  CHECK(ckpt.step == 50);
  CHECK(ckpt.find(kLogTauName) != nullptr);
  CHECK(ckpt.find("encoder.patch_proj.w") != nullptr);
  CHECK(ckpt.find("optim.m.encoder.patch_proj.w") != nullptr);
}

TEST_CASE("phase 2: descent from a phase-1 start, EMA closed form, exact freeze at tau = 1") {
  SmallSetup s("phase2");
  const Featurizer feats(s.features);
  const auto table = conditioning::generate_fixture_table(conditioning::default_taxonomy(),
                                                          {s.predictor.cond_dim, 2, 0.7});
  Phase2Config cfg;
  cfg.steps = 200;
  cfg.batch_size = 8;
  cfg.warmup_steps = 10;
  cfg.base_lr = 2e-3;
  cfg.seed = 9;
  cfg.log_every = 0;

  model::Encoder online(s.encoder, 2), target(s.encoder, 99);
  model::FilmPredictor pred(s.predictor, 3);
  const auto res = train_phase2(*s.audio, feats, online, target, pred, table, cfg);
  REQUIRE(res.log.size() == 200);
  CHECK(mean_loss(res.log, 180, 20) < mean_loss(res.log, 0, 20));
  model::EmaSchedule ema = cfg.ema();
  for (const auto& r : res.log) {
    const double closed = cfg.ema_tau0 + (double(r.step + 1) / 200.0) * (cfg.ema_tau_end - cfg.ema_tau0);
    CHECK(r.tau == model::ema_rate(r.step + 1, ema));
    CHECK(r.tau == doctest::Approx(closed).epsilon(1e-15));
  }
  CHECK(res.checkpoint.find("target.patch_proj.w") != nullptr);
  CHECK(res.checkpoint.find("predictor.layer0.w") != nullptr);

  SUBCASE("tau = 1 keeps the target at its initial copy") {
    Phase2Config frozen = cfg;
    frozen.steps = 5;
    frozen.warmup_steps = 1;
    frozen.ema_tau0 = 1.0;
    frozen.ema_tau_end = 1.0;
    model::Encoder on(s.encoder, 5), tgt(s.encoder, 6);
    model::FilmPredictor p(s.predictor, 7);
    std::vector<std::vector<float>> initial;
    for (const auto& q : on.parameters()) initial.emplace_back(q.tensor.data().begin(), q.tensor.data().end());
    train_phase2(*s.audio, feats, on, tgt, p, table, frozen);
    bool online_moved = false;
    for (std::size_t i = 0; i < initial.size(); ++i) {
      const auto now = tgt.parameters()[i].tensor.data();
      CHECK(std::equal(now.begin(), now.end(), initial[i].begin()));
      const auto o = on.parameters()[i].tensor.data();
      online_moved = online_moved || !std::equal(o.begin(), o.end(), initial[i].begin());
    }
    CHECK(online_moved);
  }
}

TEST_CASE("phase 2 plumbing: shared chunk through both encoders gives zero loss") {
  SmallSetup s("plumbing", 2);
  const Featurizer feats(s.features);
  const auto chunk = corpus::slice(s.audio->tracks()[0].stems[0], 0, s.features.chunk_samples());
  const auto x = feats(std::vector{chunk});
  model::Encoder online(s.encoder, 1);
  auto target = online.clone();
  const auto z = online.forward(x, 1, feats.grid());
  const auto zbar = target.forward(x, 1, feats.grid());
  CHECK(std::isfinite(jepa_loss(z, zbar).item()));
  CHECK(jepa_loss(z, zbar).item() == 0.0f);
}

TEST_CASE("phase 1 aborts on a non-finite loss with step diagnostics") {
  SmallSetup s("nan", 4);
  const Featurizer feats(s.features);
  model::Encoder enc(s.encoder, 1);
  enc.parameters()[0].tensor.data()[0] = std::nanf("");
  Temperature tau;
  Phase1Config cfg;
  cfg.steps = 3;
  cfg.batch_size = 2;
  cfg.warmup_steps = 1;
  cfg.log_every = 0;
  CHECK_THROWS_WITH_AS(train_phase1(*s.audio, feats, enc, tau, cfg), doctest::Contains("step 0"), NumericError);
  cfg.warmup_steps = 3;
  CHECK_THROWS_AS(train_phase1(*s.audio, feats, enc, tau, cfg), ConfigError);
}

TEST_CASE("batches come from distinct tracks and are a function of (seed, step)") {
  SmallSetup s("batch", 6);
  corpus::SamplerOptions so;
  so.chunk_seconds = 0.96;
  Rng r1 = batch_rng(3, 10), r2 = batch_rng(3, 10), r3 = batch_rng(3, 11);
  const auto a = sample_batch(*s.audio, 6, r1, so);
  const auto b = sample_batch(*s.audio, 6, r2, so);
  const auto c = sample_batch(*s.audio, 6, r3, so);
  std::set<std::string> ids;
  for (const auto& p : a.provenance) ids.insert(p.track_id);
  CHECK(ids.size() == 6);
  CHECK(a.describe() == b.describe());
  CHECK(a.describe() != c.describe());
  Rng r4 = batch_rng(3, 10);
  CHECK_THROWS_AS(sample_batch(*s.audio, 7, r4, so), ConfigError);
}
