// SPDX-License-Identifier: Apache-2.0
#include "stemfit/eval/probe.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "stemfit/common/error.hpp"
#include "stemfit/common/rng.hpp"
#include "stemfit/eval/embedding.hpp"
#include "stemfit/ndgrad/ops.hpp"
#include "stemfit/ndgrad/optim.hpp"

namespace stemfit::eval {

using ndgrad::Tensor;

std::vector<float> global_embedding(const Tensor& z, model::PatchGrid grid) {
  if (z.rank() != 2 || z.dim(0) != grid.size()) {
    throw ShapeError("global_embedding: expected [" + std::to_string(grid.size()) + " x d], got " +
                     ndgrad::to_string(z.shape()));
  }
  const std::size_t d = z.dim(1);
  const auto v = z.data();
  std::vector<float> out(d * grid.n_freq);
  for (std::size_t f = 0; f < grid.n_freq; ++f) {
    for (std::size_t c = 0; c < d; ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t < grid.n_time; ++t) s += v[(f * grid.n_time + t) * d + c];
      out[f * d + c] = static_cast<float>(s / static_cast<double>(grid.n_time));
    }
  }
  return out;
}

void ProbeConfig::validate() const {
  if (hidden == 0 || epochs == 0 || batch_size == 0 || seeds == 0) {
    throw ConfigError("probe: hidden, epochs, batch_size and seeds must be positive");
  }
  if (learning_rates.empty()) throw ConfigError("probe: learning_rates is empty");
  for (double lr : learning_rates) {
    if (!(lr > 0.0)) throw ConfigError("probe: learning rates must be positive");
  }
  if (weight_decay < 0.0) throw ConfigError("probe: weight_decay must be >= 0");
}

namespace {

struct Standardizer {
  std::vector<double> mean, inv_std;

  explicit Standardizer(const ProbeSet& s) {
    const std::size_t w = s.x.front().size();
    mean.assign(w, 0.0);
    inv_std.assign(w, 0.0);
    const double n = static_cast<double>(s.x.size());
    for (const auto& row : s.x) {
      for (std::size_t j = 0; j < w; ++j) mean[j] += row[j];
    }
    for (auto& m : mean) m /= n;
    for (const auto& row : s.x) {
      for (std::size_t j = 0; j < w; ++j) inv_std[j] += (row[j] - mean[j]) * (row[j] - mean[j]);
    }
    for (auto& v : inv_std) {
      const double sd = std::sqrt(v / n);
      v = sd > 1e-8 ? 1.0 / sd : 0.0;
    }
  }

  std::vector<float> rows(const ProbeSet& s, const std::vector<std::size_t>& idx) const {
    const std::size_t w = mean.size();
    std::vector<float> out(idx.size() * w);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto& row = s.x[idx[r]];
      for (std::size_t j = 0; j < w; ++j) out[r * w + j] = static_cast<float>((row[j] - mean[j]) * inv_std[j]);
    }
    return out;
  }
};

struct Mlp {
  Tensor w1, b1, w2, b2;
  ndgrad::ParameterList params;

  Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    auto uniform = [&](std::size_t rows, std::size_t cols) {
      const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::vector<float> v(rows * cols);
      for (auto& x : v) x = static_cast<float>(rng.uniform(-a, a));
      return Tensor({rows, cols}, std::move(v), true);
    };
    w1 = uniform(in, hidden);
    b1 = Tensor::zeros({hidden}, true);
    w2 = uniform(hidden, out);
    b2 = Tensor::zeros({out}, true);
    params = {{"w1", w1, true}, {"b1", b1, false}, {"w2", w2, true}, {"b2", b2, false}};
  }

  Tensor logits(const Tensor& x) const {
    return ndgrad::add(ndgrad::matmul(ndgrad::relu(ndgrad::add(ndgrad::matmul(x, w1), b1)), w2), b2);
  }
};

double train_and_score(const ProbeSet& train, const ProbeSet& test, const Standardizer& st, std::size_t n_classes,
                       double lr, std::uint64_t seed, const ProbeConfig& cfg) {
  Rng rng(seed);
  const std::size_t w = st.mean.size();
  Mlp mlp(w, cfg.hidden, n_classes, rng);
  ndgrad::AdamWConfig ac;
  ac.weight_decay = cfg.weight_decay;
  ndgrad::AdamW opt(ac);

  std::vector<std::size_t> order(train.x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(
                                                             std::min(order.size(), start + cfg.batch_size)));
      const std::size_t b = idx.size();
      std::vector<float> onehot(b * n_classes, 0.0f);
      for (std::size_t r = 0; r < b; ++r) onehot[r * n_classes + train.y[idx[r]]] = 1.0f;
      const Tensor x({b, w}, st.rows(train, idx));
      const auto logp = ndgrad::log_softmax(mlp.logits(x));
      const auto loss = ndgrad::neg(ndgrad::mean(ndgrad::sum(ndgrad::mul(logp, Tensor({b, n_classes}, onehot)), 1)));
      if (!std::isfinite(loss.item())) throw NumericError("probe: non-finite training loss");
      ndgrad::zero_grads(mlp.params);
      loss.backward();
      opt.step(mlp.params, lr);
    }
  }

  ndgrad::NoGradGuard guard;
  std::vector<std::size_t> all(test.x.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto logits = mlp.logits(Tensor({all.size(), w}, st.rows(test, all)));
  const auto v = logits.data();
  std::size_t correct = 0;
  for (std::size_t r = 0; r < all.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n_classes; ++c) {
      if (v[r * n_classes + c] > v[r * n_classes + best]) best = c;
    }
    correct += best == test.y[r];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(all.size());
}

void check_set(const ProbeSet& s, const char* name, std::size_t width) {
  if (s.x.empty()) throw ConfigError(std::string("probe: empty ") + name + " split");
  if (s.x.size() != s.y.size()) throw ConfigError(std::string("probe: ") + name + " features and labels differ in count");
  for (const auto& row : s.x) {
    if (row.size() != width) throw ShapeError(std::string("probe: ragged ") + name + " features");
  }
}

}  // namespace

ProbeResult probe(const ProbeSet& train, const ProbeSet& test, const ProbeConfig& cfg) {
  cfg.validate();
  if (train.x.empty()) throw ConfigError("probe: empty train split");
  const std::size_t width = train.x.front().size();
  check_set(train, "train", width);
  check_set(test, "test", width);
  const std::set<std::size_t> classes(train.y.begin(), train.y.end());
  if (classes.size() < 2) throw ConfigError("probe: training split has a single class");
  std::size_t n_classes = *classes.rbegin() + 1;
  for (auto y : test.y) n_classes = std::max(n_classes, y + 1);

  const Standardizer st(train);
  ProbeResult res;
  res.n_classes = n_classes;
  res.n_train = train.x.size();
  res.n_test = test.x.size();
  const Rng root(cfg.seed);
  for (double lr : cfg.learning_rates) {
    ProbeRun run;
    run.lr = lr;
    for (std::size_t s = 0; s < cfg.seeds; ++s) {
      run.accuracy.push_back(train_and_score(train, test, st, n_classes, lr, root.stream(s).next_u64(), cfg));
    }
    run.mean = std::accumulate(run.accuracy.begin(), run.accuracy.end(), 0.0) / static_cast<double>(cfg.seeds);
    if (res.runs.empty() || run.mean > res.accuracy) {
      res.accuracy = run.mean;
      res.best_lr = lr;
    }
    res.runs.push_back(std::move(run));
  }
  return res;
}

std::string ProbeResult::to_json() const {
  nlohmann::json j;
  j["n_classes"] = n_classes;
  j["n_train"] = n_train;
  j["n_test"] = n_test;
  j["best_lr"] = best_lr;
  j["accuracy"] = accuracy;
  j["runs"] = nlohmann::json::array();
  for (const auto& r : runs) j["runs"].push_back({{"lr", r.lr}, {"accuracy", r.accuracy}, {"mean", r.mean}});
  return j.dump(2) + "\n";
}

ProbeDataset probe_dataset(const corpus::AudioCorpus& audio, const model::Encoder& encoder,
                           const training::Featurizer& features, const std::string& level, std::size_t test_every,
                           double silence_db, std::size_t workers) {
  if (level != "category" && level != "instrument") {
    throw ConfigError("probe: label level must be 'category' or 'instrument', got '" + level + "'");
  }
  if (test_every < 2) throw ConfigError("probe: test_every must be >= 2");
  struct Item {
    std::size_t track, stem, offset;
    std::string label;
  };
  const std::size_t chunk = features.config().chunk_samples();
  std::vector<Item> items;
  for (std::size_t t = 0; t < audio.tracks().size(); ++t) {
    const auto& track = audio.tracks()[t];
    for (std::size_t s = 0; s < track.stems.size(); ++s) {
      const auto& rec = track.manifest->stems[s];
      if (rec.labels.empty()) continue;
      const auto off = eval_offset(track.stems[s], chunk, silence_db);
      if (!off) continue;
      items.push_back({t, s, *off, level == "category" ? corpus::category_of(rec) : corpus::instrument_of(rec)});
    }
  }
  std::vector<std::vector<float>> x(items.size());
  training::parallel_for(items.size(), workers, [&](std::size_t i) {
    const auto& track = audio.tracks()[items[i].track];
    const auto c = corpus::slice(track.stems[items[i].stem], items[i].offset, chunk);
    ndgrad::NoGradGuard guard;
    x[i] = global_embedding(encoder.forward(features(std::span(&c, 1)), 1, features.grid()), features.grid());
  });
  ProbeDataset ds;
  std::map<std::string, std::size_t> ids;
  for (const auto& it : items) ids.emplace(it.label, 0);
  for (auto& [name, id] : ids) {
    id = ds.classes.size();
    ds.classes.push_back(name);
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& split = items[i].track % test_every == test_every - 1 ? ds.test : ds.train;
    split.x.push_back(std::move(x[i]));
    split.y.push_back(ids.at(items[i].label));
  }
  return ds;
}

}  // namespace stemfit::eval
