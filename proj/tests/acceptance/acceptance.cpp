// Acceptance run: one PASS/FAIL line per criterion on standard output,
// diagnostics on standard error. Exit status 0 only if every criterion passes.
//
//   acceptance [--work DIR] [--write-golden] [--skip-end-to-end]
//
// --write-golden stores the end-to-end metrics as the golden file instead of
// comparing against it (criterion 7 then reports FAIL, since nothing was
// compared). --skip-end-to-end reports criteria 6 and 7 as FAIL without
// running the pipeline.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "config.hpp"
#include "stemfit/common/error.hpp"
#include "stemfit/eval/embedding.hpp"
#include "stemfit/eval/probe.hpp"
#include "stemfit/model/checkpoint.hpp"
#include "stemfit/training/gradcheck_suite.hpp"
#include "stemfit/training/trainer.hpp"

using namespace stemfit;
namespace fs = std::filesystem;
using Json = nlohmann::json;
using ndgrad::Tensor64;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

// Exit status of one CLI invocation; its stderr goes to `log`.
int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = quote(STEMFIT_CLI) + " " + args + " 2>>" + quote(log.string());
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Tensor64 rows(std::size_t n, std::size_t d, std::vector<double> v, bool grad = false) {
  return Tensor64({n, d}, std::move(v), grad);
}

Tensor64 gaussian(std::size_t n, std::size_t d, Rng& rng, bool grad = false) {
  std::vector<double> v(n * d);
  for (auto& x : v) x = rng.normal();
  return rows(n, d, v, grad);
}

// ---- 1 ---------------------------------------------------------------

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto results = training::run_full_suite(10);
  const double elapsed = seconds_since(t0);
  std::set<std::string> names;
  std::size_t failed = 0;
  double worst = 0;
  for (const auto& r : results) {
    names.insert(r.name);
    worst = std::max({worst, r.max_rel_error_f64, r.max_rel_error_f32});
    if (!r.passed) {
      ++failed;
      o.require(false, r.name + " rel err " + fmt("%.2e", std::max(r.max_rel_error_f64, r.max_rel_error_f32)));
    }
  }
  for (const char* needed : {"film_predictor", "layer_norm", "softmax", "log_softmax", "l2_normalize",
                             "contrastive_end_to_end", "jepa_end_to_end"}) {
    o.require(names.count(needed) == 1, std::string("missing case ") + needed);
  }
  o.require(elapsed < 120.0, "runtime " + fmt("%.1f", elapsed) + " s >= 120 s");
  o.detail = std::to_string(results.size()) + " cases x 10 seeds, " + std::to_string(failed) + " failed, worst rel err " +
             fmt("%.2e", worst) + ", " + fmt("%.1f", elapsed) + " s" + (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

// ---- 2 ---------------------------------------------------------------

Outcome loss_identities() {
  Outcome o;
  // |B| = 2N copies of one direction: every similarity equal.
  for (std::size_t n : {2, 3, 5}) {
    std::vector<double> v;
    for (std::size_t i = 0; i < n; ++i) v.insert(v.end(), {0.3, -1.2, 2.0});
    const auto same = rows(n, 3, v);
    const double loss = training::contrastive_loss(same, same, Tensor64::scalar(std::log(0.07))).item();
    o.require(std::abs(loss - std::log(2.0 * n - 1.0)) <= 1e-6, "uniform N=" + std::to_string(n) + " gives " + fmt("%.9f", loss));
  }
  const auto per = training::contrastive_anchor_losses(rows(2, 3, {1, 0, 0, 0, 1, 0}), rows(2, 3, {1, 0, 0, 0, 0, 1}),
                                                       Tensor64::scalar(0.0));
  const double hand = -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0));
  o.require(std::abs(per.data()[0] - hand) <= 1e-6, "hand case " + fmt("%.9f", per.data()[0]));

  Rng rng(31);
  const std::size_t k = 7, d = 5;
  const auto a = gaussian(k, d, rng);
  std::vector<double> anti(a.data().begin(), a.data().end());
  for (auto& x : anti) x = -x;
  // Orthogonal rows: for each row of `a`, remove its component along a fixed
  // partner built from a rotation of the coordinates.
  std::vector<double> orth(k * d);
  for (std::size_t r = 0; r < k; ++r) {
    std::vector<double> u(d);
    for (std::size_t c = 0; c < d; ++c) u[c] = rng.normal();
    double dot = 0, nn = 0;
    for (std::size_t c = 0; c < d; ++c) {
      dot += u[c] * a.data()[r * d + c];
      nn += a.data()[r * d + c] * a.data()[r * d + c];
    }
    for (std::size_t c = 0; c < d; ++c) orth[r * d + c] = u[c] - dot / nn * a.data()[r * d + c];
  }
  const double e0 = training::jepa_loss(a, a).item();
  const double e2 = training::jepa_loss(a, rows(k, d, orth)).item();
  const double e4 = training::jepa_loss(a, rows(k, d, anti)).item();
  o.require(std::abs(e0) <= 1e-5, "jepa identical " + fmt("%.3e", e0));
  o.require(std::abs(e2 - 2.0 * k) <= 1e-5, "jepa orthogonal " + fmt("%.9f", e2));
  o.require(std::abs(e4 - 4.0 * k) <= 1e-5, "jepa antipodal " + fmt("%.9f", e4));

  // Positive per-row rescaling.
  const auto c = gaussian(6, 8, rng), t = gaussian(6, 8, rng);
  std::vector<double> cs(c.data().begin(), c.data().end()), ts(t.data().begin(), t.data().end());
  for (std::size_t r = 0; r < 6; ++r) {
    const double s1 = std::exp(rng.uniform(-3, 3)), s2 = std::exp(rng.uniform(-3, 3));
    for (std::size_t j = 0; j < 8; ++j) {
      cs[r * 8 + j] *= s1;
      ts[r * 8 + j] *= s2;
    }
  }
  const auto lt = Tensor64::scalar(std::log(0.1));
  const double dc = std::abs(training::contrastive_loss(rows(6, 8, cs), rows(6, 8, ts), lt).item() -
                             training::contrastive_loss(c, t, lt).item());
  const double dj =
      std::abs(training::jepa_loss(rows(6, 8, cs), rows(6, 8, ts)).item() - training::jepa_loss(c, t).item());
  o.require(dc <= 1e-5, "contrastive rescaling changed the loss by " + fmt("%.2e", dc));
  o.require(dj <= 1e-5, "jepa rescaling changed the loss by " + fmt("%.2e", dj));

  auto pred = gaussian(6, 8, rng, true), target = gaussian(6, 8, rng, true);
  training::jepa_loss(pred, target).backward();
  bool zero = true;
  for (double g : target.grad()) zero = zero && g == 0.0;
  bool moved = false;
  for (double g : pred.grad()) moved = moved || g != 0.0;
  o.require(zero, "non-zero gradient reached the targets");
  o.require(moved, "no gradient reached the predictions");
  if (o.pass) o.detail = "uniform ln(|B|-1) for |B| in {4,6,10}, hand case, jepa {0,2K,4K}, rescaling, stop-gradient";
  return o;
}

// ---- 3 ---------------------------------------------------------------

struct TinyCorpus {
  fs::path dir;
  std::unique_ptr<corpus::AudioCorpus> audio;
  TinyCorpus(const fs::path& root, std::size_t tracks) : dir(root) {
    fs::remove_all(dir);
    corpus::GenerateOptions g;
    g.n_tracks = tracks;
    g.duration_seconds = 3.0;
    g.seed = 5;
    audio = std::make_unique<corpus::AudioCorpus>(corpus::generate_corpus(g, dir));
  }
};

Outcome ema_and_schedule(const fs::path& work) {
  Outcome o;
  TinyCorpus tc(work / "ema_corpus", 20);
  training::FeatureConfig fc;
  fc.chunk_seconds = 0.96;
  const training::Featurizer features(fc);
  model::EncoderConfig ec;
  ec.embed_dim = 16;
  ec.depth = 1;
  ec.heads = 2;
  ec.mlp_ratio = 2;
  ec.max_patches = features.grid().size();
  model::PredictorConfig pc;
  pc.layers = 3;
  pc.hidden = 32;
  pc.dim = 16;
  pc.cond_dim = 16;
  const auto table = conditioning::generate_fixture_table(conditioning::default_taxonomy(), {16, 2, 0.7});

  auto run = [&](double tau0, double tau_end, std::int64_t steps, model::Encoder& online, model::Encoder& target) {
    model::FilmPredictor pred(pc, 4);
    training::Phase2Config cfg;
    cfg.steps = steps;
    cfg.batch_size = 4;
    cfg.warmup_steps = std::min<std::int64_t>(10, steps - 1);
    cfg.seed = 3;
    cfg.log_every = 0;
    cfg.ema_tau0 = tau0;
    cfg.ema_tau_end = tau_end;
    return training::train_phase2(*tc.audio, features, online, target, pred, table, cfg);
  };

  {
    model::Encoder online(ec, 1), target(ec, 2);
    const double tau0 = 0.9, tau_end = 1.0;
    const auto res = run(tau0, tau_end, 100, online, target);
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < res.log.size(); ++i) {
      // The update after 0-based step i applies the rate of step i + 1.
      const double closed = tau0 + (static_cast<double>(i + 1) / 100.0) * (tau_end - tau0);
      mismatches += std::abs(res.log[i].tau - closed) > 1e-12;
    }
    o.require(res.log.size() == 100 && mismatches == 0, std::to_string(mismatches) + " EMA rates off the closed form");
  }
  {
    model::Encoder online(ec, 1), target(ec, 2);
    const auto init = online.clone();
    run(1.0, 1.0, 5, online, target);
    bool same = true;
    for (std::size_t p = 0; p < target.parameters().size(); ++p) {
      const auto a = target.parameters()[p].tensor.data();
      const auto b = init.parameters()[p].tensor.data();
      same = same && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
    }
    bool online_moved = false;
    for (std::size_t p = 0; p < online.parameters().size(); ++p) {
      const auto a = online.parameters()[p].tensor.data();
      const auto b = init.parameters()[p].tensor.data();
      online_moved = online_moved || std::memcmp(a.data(), b.data(), a.size_bytes()) != 0;
    }
    o.require(same, "tau = 1 changed the target encoder");
    o.require(online_moved, "online encoder did not train");
  }
  for (auto [base, warm, total] : {std::tuple{1e-3, 100, 2000}, std::tuple{3e-4, 20000, 300000}, std::tuple{0.5, 7, 107}}) {
    const ndgrad::LrSchedule s{base, warm, total};
    const std::int64_t mid = warm + (total - warm) / 2;
    o.require(ndgrad::lr_at(0, s) == 0.0, "lr(0) != 0");
    o.require(ndgrad::lr_at(warm, s) == base, "lr(warmup) != base_lr");
    o.require(ndgrad::lr_at(mid, s) == base / 2, "lr(midpoint) = " + fmt("%.17g", ndgrad::lr_at(mid, s)));
  }
  if (o.pass) o.detail = "100-step EMA rates within 1e-12 of the closed form, tau=1 freeze bit-exact, lr {0, base, base/2} exact for 3 schedules";
  fs::remove_all(tc.dir);
  return o;
}

// ---- 4 and 5 ---------------------------------------------------------

struct BruteForce {
  std::vector<std::size_t> rank, top;
};

BruteForce brute_force(const eval::RetrievalIndex& index, const std::vector<eval::Query>& queries) {
  BruteForce b;
  const auto& E = index.entries;
  for (const auto& q : queries) {
    std::vector<double> dist(E.size());
    std::size_t gt = E.size();
    for (std::size_t i = 0; i < E.size(); ++i) {
      double s = 0;
      for (std::size_t k = 0; k < q.embedding.size(); ++k) {
        const double diff = double(q.embedding[k]) - double(E[i].embedding[k]);
        s += diff * diff;
      }
      dist[i] = std::sqrt(s);
      if (E[i].track_id == q.track_id && E[i].stem_id == q.stem_id) gt = i;
    }
    // Full sort with the documented tie-break.
    std::vector<std::size_t> order(E.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
      if (dist[a] != dist[c]) return dist[a] < dist[c];
      return std::tie(E[a].track_id, E[a].stem_id) < std::tie(E[c].track_id, E[c].stem_id);
    });
    b.top.push_back(order.front());
    b.rank.push_back(static_cast<std::size_t>(std::find(order.begin(), order.end(), gt) - order.begin()));
  }
  return b;
}

Outcome metric_equivalence() {
  Outcome o;
  Rng rng(404);
  const char* inst[] = {"bass", "synth bass", "guitar", "ukulele", "drums", "unlabeled"};
  const char* cat[] = {"bass", "bass", "guitar", "guitar", "drums", "unlabeled"};
  std::size_t max_z = 0;
  for (int n_inst = 0; n_inst < 50; ++n_inst) {
    const std::size_t n = n_inst == 0 ? 500 : 2 + rng.index(499);
    max_z = std::max(max_z, n);
    const std::size_t d = 1 + rng.index(6);
    const bool ties = n_inst % 2 == 0;
    eval::RetrievalIndex index;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<float> v(d);
      for (auto& x : v) x = ties ? static_cast<float>(rng.integer(-1, 1)) : static_cast<float>(rng.normal());
      const std::size_t kind = rng.index(6);
      char track[16];
      std::snprintf(track, sizeof track, "t%04zu", rng.index(n) * 1000 + i);
      index.entries.push_back({v, track, "s" + std::to_string(rng.index(5)), inst[kind], cat[kind]});
    }
    std::vector<eval::Query> queries;
    const std::size_t nq = 1 + rng.index(80);
    for (std::size_t q = 0; q < nq; ++q) {
      const auto& g = index.entries[rng.index(n)];
      std::vector<float> v(d);
      for (auto& x : v) x = ties ? static_cast<float>(rng.integer(-1, 1)) : static_cast<float>(rng.normal());
      queries.push_back({v, g.track_id, g.stem_id, g.instrument});
    }
    const auto results = eval::evaluate_queries(queries, index);
    const auto ref = brute_force(index, queries);
    std::size_t h1 = 0, h5 = 0, h10 = 0, cells[2][3] = {};
    std::vector<double> norm;
    double mean = 0;
    for (std::size_t q = 0; q < nq; ++q) {
      o.require(results[q].rank == ref.rank[q], "rank mismatch instance " + std::to_string(n_inst));
      const std::size_t r = ref.rank[q];
      h1 += r < 1;
      h5 += r < std::min<std::size_t>(5, n);
      h10 += r < std::min<std::size_t>(10, n);
      norm.push_back(double(r) / double(n));
      mean += double(r) / double(n);
      const auto& top = index.entries[ref.top[q]];
      const auto& gt = index.entries[*index.find(queries[q].track_id, queries[q].stem_id)];
      ++cells[top.track_id == gt.track_id ? 0 : 1][top.instrument == gt.instrument ? 0 : top.category == gt.category ? 1 : 2];
    }
    const double dq = double(nq);
    o.require(eval::recall_at_k(results, 1) == 100.0 * double(h1) / dq, "R@1 mismatch");
    o.require(eval::recall_at_k(results, 5) == 100.0 * double(h5) / dq, "R@5 mismatch");
    o.require(eval::recall_at_k(results, 10) == 100.0 * double(h10) / dq, "R@10 mismatch");
    std::sort(norm.begin(), norm.end());
    const double median = nq % 2 ? norm[nq / 2] : 0.5 * (norm[nq / 2 - 1] + norm[nq / 2]);
    o.require(eval::median_normalized_rank(results) == 100.0 * median, "median rank mismatch");
    // The mean is a sum of the same terms in the same order.
    o.require(eval::mean_normalized_rank(results) == 100.0 * mean / dq, "mean rank mismatch");
    const auto tax = eval::neighbor_taxonomy(results);
    for (int r = 0; r < 2; ++r) {
      for (int k = 0; k < 3; ++k) o.require(tax.counts[r][k] == cells[r][k], "taxonomy cell mismatch");
    }
  }
  if (o.pass) o.detail = "50 instances, |Z| up to " + std::to_string(max_z) + ", half with exact ties";
  return o;
}

std::vector<float> unit(std::size_t d, Rng& rng) {
  std::vector<float> v(d);
  double n = 0;
  for (auto& x : v) {
    x = static_cast<float>(rng.normal());
    n += double(x) * x;
  }
  for (auto& x : v) x = static_cast<float>(x / std::sqrt(n));
  return v;
}

Outcome chance_calibration() {
  Outcome o;
  Rng rng(2718);
  eval::RetrievalIndex index;
  for (std::size_t i = 0; i < 200; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "t%03zu", i);
    index.entries.push_back({unit(32, rng), id, "s0", "x", "x"});
  }
  std::vector<eval::Query> queries;
  for (std::size_t q = 0; q < 1000; ++q) {
    const auto& g = index.entries[rng.index(200)];
    queries.push_back({unit(32, rng), g.track_id, g.stem_id, "x"});
  }
  const auto results = eval::evaluate_queries(queries, index);
  std::ostringstream det;
  for (std::size_t k : {1, 5, 10}) {
    const double p = double(k) / 200.0;
    const double se = 100.0 * std::sqrt(p * (1 - p) / 1000.0);
    const double r = eval::recall_at_k(results, k);
    det << "R@" << k << " " << fmt("%.2f", r) << " (chance " << fmt("%.2f", 100 * p) << " +- " << fmt("%.2f", 3 * se)
        << ") ";
    o.require(std::abs(r - 100 * p) <= 3 * se, "R@" + std::to_string(k) + " outside 3 SE");
  }
  const double se = 100.0 * std::sqrt(1.0 / 12.0 / 1000.0);
  const double m = eval::mean_normalized_rank(results);
  det << "mean rank " << fmt("%.2f", m) << " (50 +- " << fmt("%.2f", 3 * se) << ")";
  o.require(std::abs(m - 50.0) <= 3 * se, "mean rank outside 3 SE");
  o.detail = det.str() + (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

// ---- 6 and 7 ---------------------------------------------------------

struct EndToEnd {
  bool ran = false;
  std::string error;
  double seconds = 0;
  Json pretrained, scratch, efficacy;
};

EndToEnd run_pipeline(const fs::path& work) {
  EndToEnd e;
  const fs::path run = work / "desk";
  const fs::path log = work / "desk_pipeline.log";
  fs::remove_all(run);
  fs::remove(log);
  const std::string rd = "--run-dir " + quote(run.string()) + " --preset desk --workers 1";
  const std::vector<std::string> steps = {
      "gen-corpus " + rd,
      "gen-conditioning " + rd,
      "pretrain " + rd,
      "train " + rd,
      "embed " + rd,
      "eval-retrieval " + rd,
      "train " + rd + " --set phase2.init=scratch --out phase2_scratch",
      "embed " + rd + " --checkpoint " + quote((run / "phase2_scratch" / "checkpoint.bin").string()) +
          " --out embed_scratch",
      "eval-retrieval " + rd + " --index " + quote((run / "embed_scratch" / "index.bin").string()) + " --queries " +
          quote((run / "embed_scratch" / "queries.bin").string()) + " --out eval_scratch",
  };
  const auto t0 = Clock::now();
  for (const auto& s : steps) {
    std::cerr << "[acceptance] stemfit " << s << std::endl;
    const int code = run_cli(s, log);
    if (code != 0) {
      e.error = "'stemfit " + s.substr(0, s.find(' ')) + "' exited with " + std::to_string(code) + " (see " +
                log.string() + ")";
      return e;
    }
  }
  e.seconds = seconds_since(t0);
  e.pretrained = Json::parse(slurp(run / "eval" / "metrics.json"));
  e.scratch = Json::parse(slurp(run / "eval_scratch" / "metrics.json"));
  e.efficacy = Json::parse(slurp(run / "embed" / "efficacy.json"));
  e.ran = true;
  return e;
}

Outcome end_to_end(const EndToEnd& e) {
  Outcome o;
  if (!e.ran) {
    o.require(false, e.error);
    return o;
  }
  const double z = e.pretrained["index_size"].get<double>();
  const double mean = e.pretrained["mean_normalized_rank"].get<double>();
  const double r5 = e.pretrained["R@5"].get<double>();
  const double chance5 = 100.0 * 5.0 / z;
  const double eff = e.efficacy["percent"].get<double>();
  const double scratch_mean = e.scratch["mean_normalized_rank"].get<double>();
  o.require(mean <= 25.0, "(a) mean normalized rank " + fmt("%.2f", mean) + " > 25");
  o.require(r5 >= 3.0 * chance5, "(b) R@5 " + fmt("%.2f", r5) + " < 3 x chance " + fmt("%.2f", chance5));
  o.require(eff >= 60.0, "(c) conditioning efficacy " + fmt("%.2f", eff) + "% < 60%");
  o.require(e.seconds <= 1800.0, "runtime " + fmt("%.0f", e.seconds) + " s > 1800 s");
  std::ostringstream det;
  det << "(a) mean rank " << fmt("%.2f", mean) << "% (gate <= 25%); (b) R@5 " << fmt("%.2f", r5)
      << "% (gate >= 3 x chance = " << fmt("%.2f", 3 * chance5) << "%, |Z| = " << z << "); (c) efficacy "
      << fmt("%.2f", eff) << "% (gate >= 60%); (d, informational) scratch mean rank " << fmt("%.2f", scratch_mean)
      << "%, pretrained "
      << (mean <= scratch_mean + 5.0 ? "within" : "NOT within") << " +5 pp; runtime " << fmt("%.0f", e.seconds)
      << " s";
  o.detail = det.str() + (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

Json golden_of(const EndToEnd& e) {
  return Json{{"pretrained", e.pretrained}, {"scratch", e.scratch}, {"efficacy", e.efficacy}};
}

Outcome determinism(const EndToEnd& e, bool write_golden) {
  Outcome o;
  if (!e.ran) {
    o.require(false, "no end-to-end result: " + e.error);
    return o;
  }
  const fs::path golden = STEMFIT_GOLDEN;
  if (write_golden) {
    fs::create_directories(golden.parent_path());
    std::ofstream(golden) << golden_of(e).dump(2) << "\n";
    o.require(false, "golden file written to " + golden.string() + "; nothing compared");
    return o;
  }
  if (!fs::exists(golden)) {
    o.require(false, "golden file " + golden.string() + " is missing");
    return o;
  }
  const auto want = Json::parse(slurp(golden));
  const auto got = golden_of(e);
  if (want != got) {
    Json diff = Json::diff(want, got);
    o.require(false, std::to_string(diff.size()) + " differing values, first: " + diff.front().dump());
  } else {
    o.detail = "metrics of both runs and efficacy equal the golden file exactly";
  }
  return o;
}

// ---- 8 ---------------------------------------------------------------

Outcome probe_sanity() {
  Outcome o;
  Rng rng(8);
  auto draw = [&](std::size_t n, bool shuffled, std::size_t classes) {
    eval::ProbeSet s;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<float> x(12);
      for (auto& v : x) v = static_cast<float>(rng.normal());
      x[5] += x[5] > 0 ? 0.25f : -0.25f;
      s.y.push_back(shuffled ? rng.index(classes) : std::size_t(x[5] > 0));
      s.x.push_back(std::move(x));
    }
    return s;
  };
  eval::ProbeConfig cfg;
  cfg.seed = 21;
  const auto sep = eval::probe(draw(500, false, 2), draw(500, false, 2), cfg);
  o.require(sep.accuracy >= 99.0, "separable accuracy " + fmt("%.2f", sep.accuracy) + " < 99");
  const auto perm = eval::probe(draw(500, true, 4), draw(2000, true, 4), cfg);
  const double se = 100.0 * std::sqrt(0.25 * 0.75 / 2000.0);
  o.require(std::abs(perm.accuracy - 25.0) <= 3 * se, "shuffled accuracy " + fmt("%.2f", perm.accuracy));

  const auto full = cli::preset("full");
  const auto grid = cli::feature_config(full).grid();
  const std::size_t d = cli::encoder_config(full).embed_dim;
  const auto g = eval::global_embedding(ndgrad::Tensor::zeros({grid.size(), d}), grid);
  o.require(g.size() == d * grid.n_freq && g.size() == 3840, "full-preset global width " + std::to_string(g.size()));
  const auto desk = cli::preset("desk");
  const auto dgrid = cli::feature_config(desk).grid();
  const std::size_t dd = cli::encoder_config(desk).embed_dim;
  const auto gd = eval::global_embedding(ndgrad::Tensor::zeros({dgrid.size(), dd}), dgrid);
  o.require(gd.size() == dd * dgrid.n_freq, "desk global width " + std::to_string(gd.size()));
  std::ostringstream det;
  det << "separable " << fmt("%.2f", sep.accuracy) << "%; shuffled " << fmt("%.2f", perm.accuracy) << "% (chance 25 +- "
      << fmt("%.2f", 3 * se) << "); width " << g.size() << " = " << d << " x " << grid.n_freq << " (full), "
      << gd.size() << " (desk)";
  o.detail = det.str() + (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

// ---- 9 ---------------------------------------------------------------

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

Outcome format_round_trips(const fs::path& work) {
  Outcome o;
  const fs::path dir = work / "formats";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Rng rng(9);

  model::Checkpoint ck;
  ck.phase = 2;
  ck.step = 1234;
  ck.config_digest = 0xfeedfacecafebeefULL;
  ck.meta = R"({"note":"round trip"})";
  for (int t = 0; t < 5; ++t) {
    model::NamedTensor nt{"layer" + std::to_string(t) + ".w", {3, std::size_t(t + 1)}, {}};
    for (std::size_t i = 0; i < 3 * std::size_t(t + 1); ++i) nt.data.push_back(static_cast<float>(rng.normal() * 1e3));
    nt.data[0] = -0.0f;
    nt.data.back() = 1e-40f;  // subnormal
    ck.add(nt);
  }
  const auto ckpt_path = dir / "model.ckpt";
  model::save_checkpoint(ck, ckpt_path);
  const auto back = model::load_checkpoint(ckpt_path);
  bool exact = back.tensors.size() == ck.tensors.size() && back.meta == ck.meta && back.step == ck.step &&
               back.phase == ck.phase && back.config_digest == ck.config_digest;
  for (std::size_t i = 0; exact && i < ck.tensors.size(); ++i) {
    exact = back.tensors[i].name == ck.tensors[i].name && back.tensors[i].shape == ck.tensors[i].shape &&
            same_bits(back.tensors[i].data, ck.tensors[i].data);
  }
  o.require(exact, "checkpoint round trip not bit-exact");
  o.require(model::serialize_checkpoint(back) == slurp(ckpt_path), "re-serialised checkpoint differs");

  const auto table = conditioning::generate_fixture_table(conditioning::default_taxonomy(), {64, 3, 0.7});
  const auto text_path = dir / "table.txt", bin_path = dir / "table.bin";
  conditioning::save_table(table, text_path);
  conditioning::save_table_binary(table, bin_path);
  for (const auto& p : {text_path, bin_path}) {
    const auto t = conditioning::load_table(p);
    bool same = t.dim() == table.dim() && t.size() == table.size();
    for (const auto& [label, v] : table.entries()) {
      const auto it = t.entries().find(label);
      same = same && it != t.entries().end() && same_bits(it->second, v);
    }
    o.require(same, "conditioning table round trip not bit-exact: " + p.filename().string());
  }

  // Corrupted inputs through the CLI: bad magic, truncation, bad table
  // header, unknown config key.
  const fs::path log = dir / "cli.log";
  const fs::path run = dir / "run";
  const std::string rd = "--run-dir " + quote(run.string());
  int code = run_cli("gen-corpus " + rd + " --set corpus.n_tracks=4 --set corpus.duration_seconds=3.0", log);
  o.require(code == 0, "gen-corpus for the format checks exited with " + std::to_string(code));
  const std::string small = " --set corpus.n_tracks=4 --set corpus.duration_seconds=3.0 --set features.chunk_seconds=0.96"
                            " --set conditioning.dim=64 --set phase2.steps=2 --set phase2.warmup_steps=1"
                            " --set phase2.batch_size=2";
  auto bytes = slurp(ckpt_path);
  auto write = [&](const fs::path& p, const std::string& b) { std::ofstream(p, std::ios::binary) << b; };
  const auto bad_magic = dir / "bad_magic.ckpt", truncated = dir / "truncated.ckpt", bad_table = dir / "bad_table.txt";
  std::string m = bytes;
  m[1] = 'X';
  write(bad_magic, m);
  write(truncated, bytes.substr(0, bytes.size() / 2));
  std::string tt = slurp(text_path);
  tt.replace(0, 2, "q=");
  write(bad_table, tt);

  struct Case {
    std::string name, args;
    int want;
  };
  const std::vector<Case> cases = {
      {"checkpoint with bad magic", "train " + rd + small + " --table " + quote(text_path.string()) + " --init " +
                                        quote(bad_magic.string()), 3},
      {"truncated checkpoint", "train " + rd + small + " --table " + quote(text_path.string()) + " --init " +
                                   quote(truncated.string()), 3},
      {"index with bad magic", "eval-retrieval " + rd + " --self-queries --index " + quote(bad_magic.string()), 3},
      {"table with bad header", "train " + rd + small + " --set phase2.init=scratch --table " + quote(bad_table.string()), 3},
      {"unknown config key", "pretrain " + rd + " --set phase1.stepz=3", 2},
  };
  std::ostringstream det;
  for (const auto& c : cases) {
    code = run_cli(c.args, log);
    det << (&c == &cases.front() ? "" : "; ") << c.name << " -> " << code;
    o.require(code == c.want, c.name + " exited with " + std::to_string(code) + ", expected " + std::to_string(c.want));
  }
  o.detail = "checkpoint and both table formats bit-exact; " + det.str() + (o.detail.empty() ? "" : " | " + o.detail);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "stemfit_acceptance";
  bool write_golden = false;
  bool skip_e2e = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--write-golden") {
      write_golden = true;
    } else if (a == "--skip-end-to-end") {
      skip_e2e = true;
    } else {
      std::cerr << "usage: acceptance [--work DIR] [--write-golden] [--skip-end-to-end]\n";
      return 2;
    }
  }
  fs::create_directories(work);

  bool all = true;
  auto report = [&](int n, const char* title, const std::function<Outcome()>& fn) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << n << " " << title << ": " << o.detail << " ["
              << fmt("%.1f", seconds_since(t0)) << " s]" << std::endl;
  };

  report(1, "gradient suite", gradient_suite);
  report(2, "loss identities", loss_identities);
  report(3, "EMA and schedule", [&] { return ema_and_schedule(work); });
  report(4, "metric oracle equivalence", metric_equivalence);
  report(5, "chance calibration", chance_calibration);
  EndToEnd e2e;
  report(6, "end-to-end seeded experiment", [&] {
    if (skip_e2e) {
      e2e.error = "skipped by request";
    } else {
      e2e = run_pipeline(work);
    }
    return end_to_end(e2e);
  });
  report(7, "determinism against the golden metrics", [&] { return determinism(e2e, write_golden); });
  report(8, "probe harness sanity", probe_sanity);
  report(9, "format round trips", [&] { return format_round_trips(work); });
  return all ? 0 : 1;
}
