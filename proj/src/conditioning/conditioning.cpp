// SPDX-License-Identifier: Apache-2.0
#include "stemfit/conditioning/conditioning.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "stemfit/common/error.hpp"
#include "stemfit/common/rng.hpp"
#include "stemfit/model/checkpoint.hpp"

namespace stemfit::conditioning {

std::string normalize_label(std::string_view label) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t b = 0, e = label.size();
  while (b < e && is_space(static_cast<unsigned char>(label[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(label[e - 1]))) --e;
  std::string out(label.substr(b, e - b));
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::vector<std::string> InstrumentTaxonomy::all_labels() const {
  std::vector<std::string> out;
  for (const auto& c : categories) out.push_back(c.name);
  for (const auto& c : categories) {
    for (const auto& i : c.instruments) {
      out.push_back(i.name);
      for (const auto& v : i.variants) out.push_back(v);
    }
  }
  std::set<std::string> seen;
  for (const auto& l : out) {
    if (!seen.insert(l).second) throw ConfigError("taxonomy: label '" + l + "' appears twice");
  }
  return out;
}

std::optional<std::string> InstrumentTaxonomy::category_of(std::string_view label) const {
  const std::string n = normalize_label(label);
  for (const auto& c : categories) {
    if (c.name == n) return c.name;
    for (const auto& i : c.instruments) {
      if (i.name == n) return c.name;
      if (std::find(i.variants.begin(), i.variants.end(), n) != i.variants.end()) return c.name;
    }
  }
  return std::nullopt;
}

void InstrumentTaxonomy::validate() const {
  const auto labels = all_labels();
  for (const auto& l : labels) {
    if (l.empty() || l != normalize_label(l)) throw ConfigError("taxonomy: label '" + l + "' is not normalised");
    if (l == kFallbackLabel) throw ConfigError("taxonomy: 'music' is reserved for the fallback");
  }
}

const InstrumentTaxonomy& default_taxonomy() {
  static const InstrumentTaxonomy t{{
      {"drums",
       {{"drum kit", {"acoustic drum kit", "electronic drum kit"}},
        {"percussion", {"hand percussion", "shaker"}}}},
      {"bass",
       {{"bass guitar", {"electric bass guitar", "fretless bass guitar"}},
        {"synth bass", {"analog synth bass", "sub bass"}}}},
      {"guitar",
       {{"electric guitar", {"lead electric guitar", "rhythm electric guitar"}},
        {"acoustic guitar", {"strummed acoustic guitar", "fingerpicked acoustic guitar"}}}},
      {"vocals",
       {{"lead vocals", {"male lead vocals", "female lead vocals"}},
        {"backing vocals", {"harmony vocals", "choir"}}}},
      {"keys",
       {{"piano", {"grand piano", "electric piano"}},
        {"organ", {"hammond organ", "church organ"}}}},
      {"strings",
       {{"violin", {"solo violin", "violin section"}},
        {"cello", {"solo cello", "cello section"}}}},
  }};
  return t;
}

std::size_t LookupReport::total_misses() const {
  std::size_t n = 0;
  for (const auto& [_, c] : misses) n += c;
  return n;
}

EmbeddingTable::EmbeddingTable(std::size_t dim, std::map<std::string, std::vector<float>> entries,
                               std::optional<double> alpha)
    : dim_(dim), entries_(std::move(entries)), alpha_(alpha) {
  if (dim_ == 0) throw FormatError("embedding table: dimension must be positive");
  if (entries_.find(kFallbackLabel) == entries_.end()) {
    throw FormatError("embedding table: missing the required 'music' entry");
  }
  for (const auto& [label, v] : entries_) {
    if (v.size() != dim_) {
      throw FormatError("embedding table: '" + label + "' has " + std::to_string(v.size()) +
                        " values, expected " + std::to_string(dim_));
    }
    if (label != normalize_label(label) || label.empty()) {
      throw FormatError("embedding table: label '" + label + "' is not normalised");
    }
    for (float x : v) {
      if (!std::isfinite(x)) throw FormatError("embedding table: non-finite value for '" + label + "'");
    }
  }
}

bool EmbeddingTable::contains(std::string_view label) const {
  return entries_.count(normalize_label(label)) != 0;
}

LabelEmbedding EmbeddingTable::lookup(std::string_view label, LookupReport* report) const {
  std::string key = normalize_label(label);
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    if (report != nullptr) ++report->misses[key];
    it = entries_.find(kFallbackLabel);
  } else if (report != nullptr) {
    ++report->hits;
  }
  return {it->first, it->second};
}

namespace {

std::vector<double> unit_gaussian(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double n = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

std::vector<double> normalized(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

std::vector<double> blend(const std::vector<double>& anchor, const std::vector<double>& noise, double alpha) {
  std::vector<double> v(anchor.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = alpha * anchor[i] + (1.0 - alpha) * noise[i];
  return normalized(std::move(v));
}

std::vector<float> to_float(const std::vector<double>& v) { return {v.begin(), v.end()}; }

}  // namespace

EmbeddingTable generate_fixture_table(const InstrumentTaxonomy& taxonomy, const FixtureOptions& opt) {
  taxonomy.validate();
  if (opt.dim < 8) throw ConfigError("fixture table: dimension must be at least 8");
  if (!(opt.alpha > 0.0 && opt.alpha < 1.0)) throw ConfigError("fixture table: alpha must lie in (0, 1)");
  Rng rng(opt.seed);
  const std::size_t n_cat = taxonomy.categories.size();
  std::vector<std::vector<double>> anchors;
  const bool orthogonal = opt.dim >= n_cat;
  for (std::size_t c = 0; c < n_cat; ++c) {
    auto v = unit_gaussian(rng, opt.dim);
    if (orthogonal) {
      for (const auto& a : anchors) {
        double dot = 0.0;
        for (std::size_t i = 0; i < opt.dim; ++i) dot += v[i] * a[i];
        for (std::size_t i = 0; i < opt.dim; ++i) v[i] -= dot * a[i];
      }
      v = normalized(std::move(v));
    }
    anchors.push_back(std::move(v));
  }
  std::map<std::string, std::vector<float>> entries;
  std::vector<double> music(opt.dim, 0.0);
  for (std::size_t c = 0; c < n_cat; ++c) {
    const auto& cat = taxonomy.categories[c];
    entries[cat.name] = to_float(anchors[c]);
    for (std::size_t i = 0; i < opt.dim; ++i) music[i] += anchors[c][i];
    for (const auto& inst : cat.instruments) {
      const auto iv = blend(anchors[c], unit_gaussian(rng, opt.dim), opt.alpha);
      entries[inst.name] = to_float(iv);
      for (const auto& var : inst.variants) {
        entries[var] = to_float(blend(iv, unit_gaussian(rng, opt.dim), opt.alpha));
      }
    }
  }
  entries[kFallbackLabel] = to_float(normalized(std::move(music)));
  return EmbeddingTable(opt.dim, std::move(entries), opt.alpha);
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

FixtureGeometry measure_geometry(const EmbeddingTable& table, const InstrumentTaxonomy& taxonomy) {
  std::vector<std::pair<std::string, std::string>> labelled;  // (label, category)
  for (const auto& l : taxonomy.all_labels()) {
    if (table.contains(l)) labelled.emplace_back(l, *taxonomy.category_of(l));
  }
  double within = 0, across = 0;
  std::size_t nw = 0, na = 0;
  for (std::size_t i = 0; i < labelled.size(); ++i) {
    for (std::size_t j = i + 1; j < labelled.size(); ++j) {
      const double c = cosine(table.entries().at(labelled[i].first), table.entries().at(labelled[j].first));
      if (labelled[i].second == labelled[j].second) {
        within += c;
        ++nw;
      } else {
        across += c;
        ++na;
      }
    }
  }
  return {nw ? within / nw : 0.0, na ? across / na : 0.0};
}

void save_table(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::string out = "p=" + std::to_string(table.dim()) + " count=" + std::to_string(table.size());
  char buf[64];
  if (table.alpha()) {
    std::snprintf(buf, sizeof buf, " alpha=%.9g", *table.alpha());
    out += buf;
  }
  out += '\n';
  for (const auto& [label, v] : table.entries()) {
    out += label;
    out += '\t';
    for (std::size_t i = 0; i < v.size(); ++i) {
      std::snprintf(buf, sizeof buf, i == 0 ? "%.9g" : " %.9g", static_cast<double>(v[i]));
      out += buf;
    }
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << out;
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

void save_table_binary(const EmbeddingTable& table, const std::filesystem::path& path) {
  model::Checkpoint c;
  if (table.alpha()) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "{\"alpha\":%.9g}", *table.alpha());
    c.meta = buf;
  }
  for (const auto& [label, v] : table.entries()) c.add(model::NamedTensor{label, {v.size()}, v});
  model::save_checkpoint(c, path);
}

namespace {

[[noreturn]] void fail_at(const std::string& source, std::size_t offset, const std::string& msg) {
  throw FormatError(source + ": " + msg + " at byte offset " + std::to_string(offset));
}

std::size_t parse_size(std::string_view s, const std::string& source, std::size_t offset) {
  std::size_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) fail_at(source, offset, "bad integer '" + std::string(s) + "'");
  return v;
}

// Renormalise imported vectors that are not already unit length; unit rows
// are kept bit-for-bit so save/load round trips exactly.
void ensure_unit(std::vector<float>& v) {
  double n = 0;
  for (float x : v) n += double(x) * x;
  n = std::sqrt(n);
  if (n > 0 && std::abs(n - 1.0) > 1e-6) {
    for (auto& x : v) x = static_cast<float>(x / n);
  }
}

}  // namespace

EmbeddingTable parse_table_text(std::string_view text, const std::string& source) {
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    const auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      fail_at(source, text.size(), "truncated record (missing newline)");
    }
    line = text.substr(pos, nl - pos);
    pos = nl + 1;
    return true;
  };
  std::string_view header;
  if (!next_line(header)) fail_at(source, 0, "empty file");
  std::size_t dim = 0, count = 0;
  bool have_p = false, have_count = false;
  std::optional<double> alpha;
  std::size_t hp = 0;
  while (hp < header.size()) {
    auto sp = header.find(' ', hp);
    if (sp == std::string_view::npos) sp = header.size();
    const auto tok = header.substr(hp, sp - hp);
    const auto eq = tok.find('=');
    if (eq == std::string_view::npos) fail_at(source, hp, "malformed header token '" + std::string(tok) + "'");
    const auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "p") {
      dim = parse_size(val, source, hp);
      have_p = true;
    } else if (key == "count") {
      count = parse_size(val, source, hp);
      have_count = true;
    } else if (key == "alpha") {
      double a = 0;
      const auto r = std::from_chars(val.data(), val.data() + val.size(), a);
      if (r.ec != std::errc()) fail_at(source, hp, "bad alpha");
      alpha = a;
    }
    hp = sp + 1;
  }
  if (!have_p || !have_count) fail_at(source, 0, "header must declare p=<int> and count=<int>");

  std::map<std::string, std::vector<float>> entries;
  std::string_view line;
  for (std::size_t rec = 0; rec < count; ++rec) {
    const std::size_t line_start = pos;
    if (!next_line(line)) {
      fail_at(source, pos, "truncated payload: " + std::to_string(rec) + " of " +
                               std::to_string(count) + " records present");
    }
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) fail_at(source, line_start, "record without a tab separator");
    std::string label = normalize_label(line.substr(0, tab));
    std::vector<float> v;
    v.reserve(dim);
    const char* p = line.data() + tab + 1;
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      float x = 0;
      const auto r = std::from_chars(p, end, x);
      if (r.ec != std::errc()) {
        fail_at(source, line_start + static_cast<std::size_t>(p - line.data()), "bad number in '" + label + "'");
      }
      v.push_back(x);
      p = r.ptr;
    }
    if (v.size() != dim) {
      fail_at(source, line_start, "'" + label + "' has " + std::to_string(v.size()) + " values, header says p=" +
                                      std::to_string(dim));
    }
    ensure_unit(v);
    if (!entries.emplace(label, std::move(v)).second) fail_at(source, line_start, "duplicate label '" + label + "'");
  }
  if (pos != text.size()) fail_at(source, pos, "trailing data after " + std::to_string(count) + " records");
  return EmbeddingTable(dim, std::move(entries), alpha);
}

EmbeddingTable load_table(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open embedding table '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() >= 4 && bytes.compare(0, 4, std::string(model::kCheckpointMagic, 4)) == 0) {
    const auto c = model::parse_checkpoint(bytes, path.string());
    std::map<std::string, std::vector<float>> entries;
    std::size_t dim = 0;
    for (const auto& t : c.tensors) {
      if (t.shape.size() != 1) throw FormatError(path.string() + ": label '" + t.name + "' is not a vector");
      if (dim == 0) dim = t.shape[0];
      auto v = t.data;
      ensure_unit(v);
      entries[normalize_label(t.name)] = std::move(v);
    }
    std::optional<double> alpha;
    const auto a = c.meta.find("\"alpha\":");
    if (a != std::string::npos) alpha = std::strtod(c.meta.c_str() + a + 8, nullptr);
    return EmbeddingTable(dim, std::move(entries), alpha);
  }
  return parse_table_text(bytes, path.string());
}

}  // namespace stemfit::conditioning
