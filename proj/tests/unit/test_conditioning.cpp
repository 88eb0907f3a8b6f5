#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "stemfit/common/error.hpp"
#include "stemfit/conditioning/conditioning.hpp"

using namespace stemfit;
using namespace stemfit::conditioning;

namespace {

std::filesystem::path scratch() {
  auto d = std::filesystem::temp_directory_path() / "stemfit_test_conditioning";
  std::filesystem::create_directories(d);
  return d;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f << s;
}

}  // namespace

TEST_CASE("default taxonomy is a valid three-level hierarchy") {
  const auto& t = default_taxonomy();
  CHECK_NOTHROW(t.validate());
  CHECK(t.categories.size() == 6);
  CHECK(t.category_of("Lead Electric Guitar ") == std::optional<std::string>("guitar"));
  CHECK(t.category_of("theremin") == std::nullopt);
  for (const auto& c : t.categories) {
    CHECK(c.instruments.size() >= 2);
    for (const auto& i : c.instruments) CHECK(i.variants.size() >= 1);
  }
}

TEST_CASE("lookup normalises and falls back to music") {
  const auto table = generate_fixture_table(default_taxonomy(), {64, 3, 0.7});
  LookupReport report;
  const auto bass = table.lookup("Bass ", &report);
  CHECK(bass.label == "bass");
  CHECK(bass.vector == table.entries().at("bass"));
  const auto miss = table.lookup("theremin", &report);
  CHECK(miss.label == "music");
  CHECK(miss.vector == table.entries().at("music"));
  CHECK(report.hits == 1);
  CHECK(report.misses.at("theremin") == 1);
  CHECK(table.lookup("bass").vector == bass.vector);
}

TEST_CASE("fixture table: determinism, unit norm and hierarchy geometry") {
  const auto& tax = default_taxonomy();
  const auto a = generate_fixture_table(tax, {512, 0, 0.7});
  const auto b = generate_fixture_table(tax, {512, 0, 0.7});
  CHECK(a.entries() == b.entries());
  CHECK(a.size() == tax.all_labels().size() + 1);
  for (const auto& [label, v] : a.entries()) {
    double n = 0;
    for (float x : v) n += double(x) * x;
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
  }
  // Independent recomputation of the two means from the table.
  double within = 0, across = 0;
  std::size_t nw = 0, na = 0;
  const auto labels = tax.all_labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = i + 1; j < labels.size(); ++j) {
      const auto& x = a.entries().at(labels[i]);
      const auto& y = a.entries().at(labels[j]);
      double dot = 0;
      for (std::size_t k = 0; k < x.size(); ++k) dot += double(x[k]) * y[k];
      if (tax.category_of(labels[i]) == tax.category_of(labels[j])) {
        within += dot;
        ++nw;
      } else {
        across += dot;
        ++na;
      }
    }
  }
  within /= nw;
  across /= na;
  const auto g = measure_geometry(a, tax);
  CHECK(g.within == doctest::Approx(within).epsilon(1e-6));
  CHECK(g.across == doctest::Approx(across).epsilon(1e-6));
  CHECK(within - across >= 0.2);

  const auto other = generate_fixture_table(tax, {512, 1, 0.7});
  CHECK(other.entries() != a.entries());
  // Fewer dimensions than categories still works (no orthogonality).
  CHECK_NOTHROW(generate_fixture_table(InstrumentTaxonomy{{{"a", {}}, {"b", {}}, {"c", {}}, {"d", {}},
                                                            {"e", {}}, {"f", {}}, {"g", {}}, {"h", {}},
                                                            {"i", {}}}},
                                       {8, 0, 0.7}));
  CHECK_THROWS_AS(generate_fixture_table(tax, {4, 0, 0.7}), ConfigError);
}

TEST_CASE("text table round trip and rejection cases") {
  const auto dir = scratch();
  const auto table = generate_fixture_table(default_taxonomy(), {16, 5, 0.7});
  save_table(table, dir / "t.txt");
  const auto back = load_table(dir / "t.txt");
  CHECK(back.dim() == 16);
  CHECK(back.entries() == table.entries());
  CHECK(back.alpha() == std::optional<double>(0.7));
  save_table(back, dir / "u.txt");
  CHECK(slurp(dir / "t.txt") == slurp(dir / "u.txt"));
  const std::string text = slurp(dir / "t.txt");
  CHECK(text.rfind("p=16 count=", 0) == 0);

  SUBCASE("missing music row") {
    spit(dir / "m.txt", "p=2 count=1\nbass\t1 0\n");
    CHECK_THROWS_WITH_AS(load_table(dir / "m.txt"), doctest::Contains("music"), FormatError);
  }
  SUBCASE("dimension inconsistency") {
    spit(dir / "d.txt", "p=2 count=2\nmusic\t1 0\nbass\t0 1 0\n");
    CHECK_THROWS_WITH_AS(load_table(dir / "d.txt"), doctest::Contains("p=2"), FormatError);
  }
  SUBCASE("truncated payload names a byte offset") {
    spit(dir / "x.txt", text.substr(0, text.size() / 2));
    CHECK_THROWS_WITH_AS(load_table(dir / "x.txt"), doctest::Contains("byte offset"), FormatError);
  }
  SUBCASE("raw vectors are normalised on import") {
    spit(dir / "r.txt", "p=2 count=2\nmusic\t3 4\nBass \t0 2\n");
    const auto r = load_table(dir / "r.txt");
    CHECK(r.entries().at("music")[0] == doctest::Approx(0.6));
    CHECK(r.entries().at("bass")[1] == 1.0f);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("binary container is accepted") {
  const auto dir = scratch();
  const auto table = generate_fixture_table(default_taxonomy(), {24, 9, 0.7});
  save_table_binary(table, dir / "t.bin");
  const auto back = load_table(dir / "t.bin");
  CHECK(back.entries() == table.entries());
  CHECK(back.alpha() == std::optional<double>(0.7));
  auto bytes = slurp(dir / "t.bin");
  bytes[1] = 'Z';
  spit(dir / "bad.bin", bytes);
  CHECK_THROWS_AS(load_table(dir / "bad.bin"), FormatError);
  CHECK_THROWS_AS(load_table(dir / "absent.bin"), IoError);
  std::filesystem::remove_all(dir);
}
