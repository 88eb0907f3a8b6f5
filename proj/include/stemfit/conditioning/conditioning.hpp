// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace stemfit::conditioning {

inline constexpr const char* kFallbackLabel = "music";
inline constexpr std::size_t kDefaultDim = 512;
inline constexpr double kDefaultAlpha = 0.7;

// Trim ASCII whitespace and lowercase ASCII letters.
std::string normalize_label(std::string_view label);

struct LabelEmbedding {
  std::string label;
  std::vector<float> vector;
};

// Three-level instrument hierarchy: category -> instrument -> fine variants.
struct InstrumentTaxonomy {
  struct Instrument {
    std::string name;
    std::vector<std::string> variants;
  };
  struct Category {
    std::string name;
    std::vector<Instrument> instruments;
  };
  std::vector<Category> categories;

  // Every label in the taxonomy, categories first. Throws if any label is
  // repeated.
  std::vector<std::string> all_labels() const;
  // Root of the hierarchy containing `label`, if any.
  std::optional<std::string> category_of(std::string_view label) const;
  void validate() const;
};

const InstrumentTaxonomy& default_taxonomy();

// Label misses observed by lookup(); shared by the training loops and the
// evaluation harness for their reports.
struct LookupReport {
  std::size_t hits = 0;
  std::map<std::string, std::size_t> misses;
  std::size_t total_misses() const;
};

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t dim, std::map<std::string, std::vector<float>> entries,
                 std::optional<double> alpha = std::nullopt);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::map<std::string, std::vector<float>>& entries() const noexcept { return entries_; }
  std::optional<double> alpha() const noexcept { return alpha_; }
  bool contains(std::string_view label) const;

  // Exact match after normalisation; unknown labels fall back to "music" and
  // are counted in `report` when given.
  LabelEmbedding lookup(std::string_view label, LookupReport* report = nullptr) const;

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<float>> entries_;
  std::optional<double> alpha_;
};

struct FixtureOptions {
  std::size_t dim = kDefaultDim;
  std::uint64_t seed = 0;
  double alpha = kDefaultAlpha;
};

// Category anchors: seeded Gaussian draws, orthonormalised by Gram-Schmidt
// when dim >= number of categories (random unit vectors otherwise).
// instrument = normalize(alpha * anchor + (1 - alpha) * u), u a fresh unit
// vector; variants likewise around their instrument. "music" is the
// normalised sum of the anchors.
EmbeddingTable generate_fixture_table(const InstrumentTaxonomy& taxonomy, const FixtureOptions& opt);

double cosine(const std::vector<float>& a, const std::vector<float>& b);

// Mean pairwise cosine between labels sharing a category vs. labels from
// different categories ("music" excluded).
struct FixtureGeometry {
  double within = 0.0;
  double across = 0.0;
};
FixtureGeometry measure_geometry(const EmbeddingTable& table, const InstrumentTaxonomy& taxonomy);

// Text format: "p=<int> count=<int>[ alpha=<float>]" then one
// "label<TAB>v1 v2 ... vp" line per entry, floats printed with %.9g. The
// tensor container (magic "SJPA", one [p] tensor per label) is also accepted
// by load_table.
void save_table(const EmbeddingTable& table, const std::filesystem::path& path);
void save_table_binary(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable load_table(const std::filesystem::path& path);
EmbeddingTable parse_table_text(std::string_view text, const std::string& source = "<memory>");

}  // namespace stemfit::conditioning
