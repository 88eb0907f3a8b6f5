// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>

#include "commands.hpp"
#include "stemfit/common/error.hpp"
#include "stemfit/eval/embedding.hpp"
#include "stemfit/training/losses.hpp"

namespace stemfit::cli {

namespace {

using ndgrad::Tensor64;

Tensor64 rows(std::size_t n, std::size_t d, std::vector<double> v, bool grad = false) {
  return Tensor64({n, d}, std::move(v), grad);
}

Tensor64 gaussian(std::size_t n, std::size_t d, Rng& rng, bool grad = false) {
  std::vector<double> v(n * d);
  for (auto& x : v) x = rng.normal();
  return rows(n, d, v, grad);
}

struct Property {
  const char* name;
  std::function<std::string()> run;  // empty string on success, else a detail
};

std::string near(double got, double want, double tol) {
  if (std::abs(got - want) <= tol) return {};
  char buf[128];
  std::snprintf(buf, sizeof buf, "got %.12g, expected %.12g (tolerance %.1e)", got, want, tol);
  return buf;
}

double contrastive(const Tensor64& c, const Tensor64& t, double tau) {
  return training::contrastive_loss(c, t, Tensor64::scalar(std::log(tau))).item();
}

std::string loss_identities() {
  // Uniform similarities: four copies of one vector.
  const auto same = rows(2, 3, {1, 2, 3, 1, 2, 3});
  if (auto e = near(contrastive(same, same, 0.1), std::log(3.0), 1e-6); !e.empty()) return "uniform: " + e;
  // sim(s1, s1') = 1, all other pairs orthogonal, tau = 1.
  const auto per = training::contrastive_anchor_losses(rows(2, 3, {1, 0, 0, 0, 1, 0}), rows(2, 3, {1, 0, 0, 0, 0, 1}),
                                                       Tensor64::scalar(0.0));
  if (auto e = near(per.data()[0], -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0)), 1e-6); !e.empty()) {
    return "hand case: " + e;
  }
  Rng rng(1);
  const auto a = gaussian(5, 4, rng);
  std::vector<double> anti(a.data().begin(), a.data().end()), orth(20, 0.0), pos(20, 0.0);
  for (auto& v : anti) v = -v;
  for (std::size_t i = 0; i < 5; ++i) {
    pos[i * 4] = 1.0;
    orth[i * 4 + 1] = 2.0;
  }
  const auto e0 = training::jepa_loss(a, a).item();
  const auto e4 = training::jepa_loss(a, rows(5, 4, anti)).item();
  const auto e2 = training::jepa_loss(rows(5, 4, pos), rows(5, 4, orth)).item();
  if (auto e = near(e0, 0.0, 1e-5); !e.empty()) return "jepa identical: " + e;
  if (auto e = near(e2, 10.0, 1e-5); !e.empty()) return "jepa orthogonal: " + e;
  if (auto e = near(e4, 20.0, 1e-5); !e.empty()) return "jepa antipodal: " + e;
  return {};
}

std::string scale_invariance() {
  Rng rng(2);
  const auto c = gaussian(4, 6, rng), t = gaussian(4, 6, rng);
  std::vector<double> scaled(c.data().begin(), c.data().end());
  for (std::size_t i = 0; i < 4; ++i) {
    const double s = 0.1 + 3.0 * rng.uniform();
    for (std::size_t j = 0; j < 6; ++j) scaled[i * 6 + j] *= s;
  }
  if (auto e = near(contrastive(rows(4, 6, scaled), t, 0.1), contrastive(c, t, 0.1), 1e-5); !e.empty()) {
    return "contrastive: " + e;
  }
  if (auto e = near(training::jepa_loss(rows(4, 6, scaled), t).item(), training::jepa_loss(c, t).item(), 1e-5);
      !e.empty()) {
    return "jepa: " + e;
  }
  return {};
}

std::string stop_gradient() {
  Rng rng(3);
  auto pred = gaussian(6, 5, rng, true);
  auto target = gaussian(6, 5, rng, true);
  training::jepa_loss(pred, target).backward();
  for (double g : target.grad()) {
    if (g != 0.0) return "non-zero target gradient";
  }
  return {};
}

// Independent rank computation: count entries ahead of the ground truth.
std::string metric_oracle() {
  Rng rng(4);
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t n = 2 + rng.index(300), d = 1 + rng.index(6);
    eval::RetrievalIndex index;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<float> v(d);
      for (auto& x : v) x = static_cast<float>(rng.integer(-2, 2));
      index.entries.push_back({v, "t" + std::to_string(i / 3), "s" + std::to_string(i % 3), i % 2 ? "a" : "b", "c"});
    }
    std::vector<eval::Query> queries;
    std::vector<std::size_t> truth;
    for (int q = 0; q < 40; ++q) {
      const std::size_t gt = rng.index(n);
      std::vector<float> v(d);
      for (auto& x : v) x = static_cast<float>(rng.integer(-2, 2));
      queries.push_back({v, index.entries[gt].track_id, index.entries[gt].stem_id, "a"});
      truth.push_back(gt);
    }
    const auto results = eval::evaluate_queries(queries, index);
    std::size_t hit5 = 0;
    double mean = 0;
    for (std::size_t q = 0; q < queries.size(); ++q) {
      auto dist = [&](std::size_t i) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) {
          const double diff = double(queries[q].embedding[k]) - double(index.entries[i].embedding[k]);
          s += diff * diff;
        }
        return std::sqrt(s);
      };
      const auto& g = index.entries[truth[q]];
      const double dg = dist(truth[q]);
      std::size_t rank = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& e = index.entries[i];
        const double di = dist(i);
        if (di < dg || (di == dg && std::tie(e.track_id, e.stem_id) < std::tie(g.track_id, g.stem_id))) ++rank;
      }
      if (rank != results[q].rank) return "rank mismatch in instance " + std::to_string(inst);
      hit5 += rank < 5;
      mean += double(rank) / double(n);
    }
    if (eval::recall_at_k(results, 5) != 100.0 * double(hit5) / double(queries.size())) return "R@5 mismatch";
    if (auto e = near(eval::mean_normalized_rank(results), 100.0 * mean / double(queries.size()), 1e-9); !e.empty()) {
      return "mean rank: " + e;
    }
  }
  return {};
}

std::string perfect_fixture() {
  Rng rng(5);
  eval::RetrievalIndex index;
  for (int i = 0; i < 30; ++i) {
    std::vector<float> v(8);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    index.entries.push_back({v, "t" + std::to_string(i), "s0", "a", "c"});
  }
  const auto r = eval::evaluate_queries(eval::self_queries(index), index);
  if (eval::recall_at_k(r, 1) != 100.0 || eval::mean_normalized_rank(r) != 0.0) return "perfect queries not at rank 0";
  return {};
}

}  // namespace

int selfcheck(const Invocation&, std::ostream& out) {
  const std::vector<Property> props = {
      {"loss_identities", loss_identities},   {"loss_scale_invariance", scale_invariance},
      {"jepa_stop_gradient", stop_gradient},  {"metric_oracle_equivalence", metric_oracle},
      {"perfect_embedding_fixture", perfect_fixture},
  };
  std::size_t failed = 0;
  for (const auto& p : props) {
    std::string detail;
    try {
      detail = p.run();
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    out << (detail.empty() ? "PASS " : "FAIL ") << p.name << (detail.empty() ? "" : " " + detail) << "\n";
    failed += !detail.empty();
  }
  if (failed) throw CheckFailure(std::to_string(failed) + " self-check properties failed");
  return 0;
}

}  // namespace stemfit::cli
