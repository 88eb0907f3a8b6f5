// SPDX-License-Identifier: Apache-2.0
#include "stemfit/eval/retrieval.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "stemfit/common/error.hpp"

namespace stemfit::eval {

Distance parse_distance(const std::string& name) {
  if (name == "euclidean") return Distance::kEuclidean;
  if (name == "cosine") return Distance::kCosine;
  throw ConfigError("unknown distance '" + name + "' (expected euclidean or cosine)");
}

const char* distance_name(Distance d) { return d == Distance::kEuclidean ? "euclidean" : "cosine"; }

void RetrievalIndex::validate() const {
  if (entries.size() < 2) throw ConfigError("retrieval index needs at least 2 entries");
  const std::size_t d = dim();
  if (d == 0) throw ConfigError("retrieval index: empty embeddings");
  std::set<std::pair<std::string, std::string>> keys;
  for (const auto& e : entries) {
    if (e.embedding.size() != d) {
      throw ShapeError("retrieval index: " + e.track_id + "/" + e.stem_id + " has dimension " +
                       std::to_string(e.embedding.size()) + ", expected " + std::to_string(d));
    }
    for (float v : e.embedding) {
      if (!std::isfinite(v)) throw NumericError("retrieval index: non-finite value in " + e.track_id + "/" + e.stem_id);
    }
    if (!keys.emplace(e.track_id, e.stem_id).second) {
      throw ConfigError("retrieval index: duplicate entry " + e.track_id + "/" + e.stem_id);
    }
  }
}

std::optional<std::size_t> RetrievalIndex::find(const std::string& track_id, const std::string& stem_id) const {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].track_id == track_id && entries[i].stem_id == stem_id) return i;
  }
  return std::nullopt;
}

double distance_between(const std::vector<float>& a, const std::vector<float>& b, Distance distance) {
  if (a.size() != b.size()) {
    throw ShapeError("distance: dimensions " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  if (distance == Distance::kEuclidean) {
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
      ss += diff * diff;
    }
    return std::sqrt(ss);
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  const double denom = std::sqrt(aa) * std::sqrt(bb);
  return 1.0 - (denom > 0.0 ? ab / denom : 0.0);
}

QueryResult evaluate_query(const Query& query, const RetrievalIndex& index, Distance distance) {
  const auto truth = index.find(query.track_id, query.stem_id);
  if (!truth) throw ConfigError("query ground truth " + query.track_id + "/" + query.stem_id + " is not in the index");
  if (query.embedding.size() != index.dim()) {
    throw ShapeError("query dimension " + std::to_string(query.embedding.size()) + " differs from index dimension " +
                     std::to_string(index.dim()));
  }
  const std::size_t n = index.size();
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = distance_between(query.embedding, index.entries[i].embedding, distance);
  QueryResult r;
  r.order.resize(n);
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    const auto& ea = index.entries[a];
    const auto& eb = index.entries[b];
    if (ea.track_id != eb.track_id) return ea.track_id < eb.track_id;
    return ea.stem_id < eb.stem_id;
  });
  r.distances.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.distances[i] = dist[r.order[i]];
    if (r.order[i] == *truth) r.rank = i;
  }
  const auto& top = index.entries[r.order.front()];
  const auto& gt = index.entries[*truth];
  r.track_match = top.track_id == gt.track_id ? TrackMatch::kSameTrack : TrackMatch::kOtherTrack;
  if (top.instrument == gt.instrument) {
    r.instrument_match = InstrumentMatch::kRightInstrument;
  } else if (top.category == gt.category) {
    r.instrument_match = InstrumentMatch::kSameCategory;
  } else {
    r.instrument_match = InstrumentMatch::kWrongCategory;
  }
  return r;
}

std::vector<QueryResult> evaluate_queries(const std::vector<Query>& queries, const RetrievalIndex& index,
                                          Distance distance) {
  index.validate();
  std::vector<QueryResult> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(evaluate_query(q, index, distance));
  return out;
}

double recall_at_k(const std::vector<QueryResult>& results, std::size_t k) {
  if (k == 0) throw std::invalid_argument("recall_at_k: k must be >= 1");
  if (results.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& r : results) {
    if (r.rank < std::min(k, r.order.size())) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(results.size());
}

double mean_normalized_rank(const std::vector<QueryResult>& results) {
  if (results.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : results) s += r.normalized_rank();
  return 100.0 * s / static_cast<double>(results.size());
}

double median_normalized_rank(const std::vector<QueryResult>& results) {
  if (results.empty()) return 0.0;
  std::vector<double> v;
  v.reserve(results.size());
  for (const auto& r : results) v.push_back(r.normalized_rank());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  const double m = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return 100.0 * m;
}

TaxonomyTable neighbor_taxonomy(const std::vector<QueryResult>& results) {
  TaxonomyTable t;
  for (const auto& r : results) {
    ++t.counts[static_cast<std::size_t>(r.track_match)][static_cast<std::size_t>(r.instrument_match)];
  }
  t.total = results.size();
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      t.percent[i][j] = t.total ? 100.0 * static_cast<double>(t.counts[i][j]) / static_cast<double>(t.total) : 0.0;
    }
  }
  return t;
}

MetricsReport make_report(const std::vector<Query>& queries, const std::vector<QueryResult>& results,
                          std::size_t index_size) {
  if (queries.size() != results.size()) throw std::invalid_argument("make_report: queries and results differ in count");
  MetricsReport rep;
  rep.index_size = index_size;
  rep.queries = results.size();
  rep.r1 = recall_at_k(results, 1);
  rep.r5 = recall_at_k(results, 5);
  rep.r10 = recall_at_k(results, 10);
  rep.mean_rank = mean_normalized_rank(results);
  rep.median_rank = median_normalized_rank(results);
  rep.taxonomy = neighbor_taxonomy(results);
  std::map<std::string, std::vector<QueryResult>> groups;
  for (std::size_t i = 0; i < queries.size(); ++i) groups[queries[i].label].push_back(results[i]);
  for (const auto& [label, rs] : groups) {
    LabelMetrics m;
    m.queries = rs.size();
    m.r1 = recall_at_k(rs, 1);
    m.r5 = recall_at_k(rs, 5);
    m.r10 = recall_at_k(rs, 10);
    m.mean_rank = mean_normalized_rank(rs);
    m.median_rank = median_normalized_rank(rs);
    m.taxonomy = neighbor_taxonomy(rs);
    rep.per_label.emplace(label, std::move(m));
  }
  return rep;
}

namespace {

constexpr std::array<const char*, 2> kTrackNames = {"same_track", "other_track"};
constexpr std::array<const char*, 3> kInstrumentNames = {"right_instrument", "same_category", "wrong_category"};

nlohmann::json taxonomy_json(const TaxonomyTable& t) {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t k = 0; k < 3; ++k) j[kTrackNames[i]][kInstrumentNames[k]] = t.percent[i][k];
  }
  return j;
}

std::string fixed(double v, int digits = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["index_size"] = index_size;
  j["queries"] = queries;
  j["R@1"] = r1;
  j["R@5"] = r5;
  j["R@10"] = r10;
  j["mean_normalized_rank"] = mean_rank;
  j["median_normalized_rank"] = median_rank;
  j["taxonomy"] = taxonomy_json(taxonomy);
  nlohmann::json labels = nlohmann::json::object();
  for (const auto& [label, m] : per_label) {
    labels[label] = {{"queries", m.queries},
                     {"R@1", m.r1},
                     {"R@5", m.r5},
                     {"R@10", m.r10},
                     {"mean_normalized_rank", m.mean_rank},
                     {"median_normalized_rank", m.median_rank},
                     {"taxonomy", taxonomy_json(m.taxonomy)}};
  }
  j["per_instrument"] = labels;
  return j.dump(2) + "\n";
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os << "index " << index_size << " stems, " << queries << " queries\n";
  os << "R@1 " << fixed(r1) << "  R@5 " << fixed(r5) << "  R@10 " << fixed(r10) << "  mean rank " << fixed(mean_rank)
     << "  median rank " << fixed(median_rank) << "\n\n";
  os << "top-1 neighbour      right instr  same category  wrong category\n";
  for (std::size_t i = 0; i < 2; ++i) {
    char line[128];
    std::snprintf(line, sizeof line, "%-18s %11.2f %14.2f %15.2f\n", kTrackNames[i], taxonomy.percent[i][0],
                  taxonomy.percent[i][1], taxonomy.percent[i][2]);
    os << line;
  }
  os << "\nlabel                          n     R@1     R@5    R@10  mean rk\n";
  for (const auto& [label, m] : per_label) {
    char line[160];
    std::snprintf(line, sizeof line, "%-28s %4zu %7.2f %7.2f %7.2f %8.2f\n", label.c_str(), m.queries, m.r1, m.r5,
                  m.r10, m.mean_rank);
    os << line;
  }
  return os.str();
}

}  // namespace stemfit::eval
