// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace stemfit::eval {

enum class Distance { kEuclidean, kCosine };

Distance parse_distance(const std::string& name);
const char* distance_name(Distance d);

struct IndexEntry {
  std::vector<float> embedding;
  std::string track_id;
  std::string stem_id;
  std::string instrument;
  std::string category;
};

struct RetrievalIndex {
  std::vector<IndexEntry> entries;

  std::size_t size() const { return entries.size(); }
  std::size_t dim() const { return entries.empty() ? 0 : entries.front().embedding.size(); }
  // |Z| >= 2, equal dimensions, finite values, unique (track, stem) keys.
  void validate() const;
  std::optional<std::size_t> find(const std::string& track_id, const std::string& stem_id) const;
};

struct Query {
  std::vector<float> embedding;
  std::string track_id;  // ground truth
  std::string stem_id;
  std::string label;  // conditioning label used
};

// Where the top-1 neighbour falls relative to the ground truth.
enum class TrackMatch { kSameTrack = 0, kOtherTrack = 1 };
enum class InstrumentMatch { kRightInstrument = 0, kSameCategory = 1, kWrongCategory = 2 };

struct QueryResult {
  std::vector<std::size_t> order;  // index positions, nearest first
  std::vector<double> distances;   // aligned with order, non-decreasing
  std::size_t rank = 0;            // 0-based position of the ground truth
  TrackMatch track_match = TrackMatch::kOtherTrack;
  InstrumentMatch instrument_match = InstrumentMatch::kWrongCategory;

  double normalized_rank() const { return static_cast<double>(rank) / static_cast<double>(order.size()); }
};

// Distances in double precision; ties broken by (track_id, stem_id). The
// ground truth must be in the index.
QueryResult evaluate_query(const Query& query, const RetrievalIndex& index, Distance distance = Distance::kEuclidean);
std::vector<QueryResult> evaluate_queries(const std::vector<Query>& queries, const RetrievalIndex& index,
                                          Distance distance = Distance::kEuclidean);

double distance_between(const std::vector<float>& a, const std::vector<float>& b, Distance distance);

// Percent of queries with rank < k; k is clamped to |Z|, k = 0 is rejected.
double recall_at_k(const std::vector<QueryResult>& results, std::size_t k);
// Percent.
double mean_normalized_rank(const std::vector<QueryResult>& results);
double median_normalized_rank(const std::vector<QueryResult>& results);

struct TaxonomyTable {
  // [track match][instrument match], percent of queries; every row sums
  // with the other to 100.
  std::array<std::array<double, 3>, 2> percent{};
  std::array<std::array<std::size_t, 3>, 2> counts{};
  std::size_t total = 0;
};

TaxonomyTable neighbor_taxonomy(const std::vector<QueryResult>& results);

struct LabelMetrics {
  std::size_t queries = 0;
  double r1 = 0, r5 = 0, r10 = 0;
  double mean_rank = 0, median_rank = 0;
  TaxonomyTable taxonomy;
};

struct MetricsReport {
  std::size_t index_size = 0;
  std::size_t queries = 0;
  double r1 = 0, r5 = 0, r10 = 0;
  double mean_rank = 0, median_rank = 0;  // percent
  TaxonomyTable taxonomy;
  std::map<std::string, LabelMetrics> per_label;  // keyed by conditioning label

  std::string to_json() const;
  std::string to_text() const;
};

MetricsReport make_report(const std::vector<Query>& queries, const std::vector<QueryResult>& results,
                          std::size_t index_size);

}  // namespace stemfit::eval
