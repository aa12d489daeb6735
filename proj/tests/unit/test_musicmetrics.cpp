#include <doctest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "organ/errors.hpp"
#include "organ/musicmetrics.hpp"
#include "organ/rng.hpp"
#include "organ/vocab.hpp"

using namespace organ;
using namespace organ::music;

namespace {

double parse_fraction(const std::string& f) {
  const auto slash = f.find('/');
  const double num = std::stod(f.substr(0, slash));
  const double den = std::stod(f.substr(slash + 1));
  return num / den;
}

// Textbook full-table edit distance.
std::size_t dp_edit_distance(const Melody& a, const Melody& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      d[i][j] = std::min(sub, std::min(d[i - 1][j], d[i][j - 1]) + 1);
    }
  return d[a.size()][b.size()];
}

Melody random_melody(Rng& rng, std::size_t length) {
  Melody m(length);
  for (auto& t : m) t = static_cast<int>(rng.uniform_index(kLastToken + 1));
  return m;
}

}  // namespace

TEST_CASE("fixture cases match exactly") {
  std::ifstream in(std::string(ORGAN_SOURCE_DIR) + "/tests/fixtures/music_cases.tsv");
  REQUIRE(in.good());
  std::string line;
  int cases = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    REQUIRE(cols.size() == 4);
    const auto tokens = melody_from_text(cols[0]);
    std::vector<int> expected;
    std::stringstream es(cols[1]);
    while (std::getline(es, col, ','))
      if (!col.empty()) expected.push_back(std::stoi(col));
    CHECK(to_note_events(tokens) == expected);
    CHECK(tonality(tokens) == parse_fraction(cols[2]));
    CHECK(ratio_of_steps(tokens) == parse_fraction(cols[3]));
    CHECK(melody_to_text(tokens) == cols[0]);
    ++cases;
  }
  CHECK(cases == 12);
}

TEST_CASE("token range") {
  const std::vector<int> bad = {2, 38};
  CHECK_THROWS_AS(to_note_events(bad), EncodingError);
  const std::vector<int> negative = {-1};
  CHECK_THROWS_AS(tonality(negative), EncodingError);
  CHECK_THROWS_AS(melody_from_text("2_1"), EncodingError);
}

TEST_CASE("edit distance agrees with the DP oracle on 100 random pairs") {
  Rng rng(99);
  for (int i = 0; i < 100; ++i) {
    const auto a = random_melody(rng, 1 + rng.uniform_index(36));
    const auto b = random_melody(rng, 1 + rng.uniform_index(36));
    CHECK(levenshtein(a, b) == dp_edit_distance(a, b));
    CHECK(levenshtein(a, b) == levenshtein(b, a));
  }
  CHECK(levenshtein(Melody{}, Melody{1, 2}) == 2);
}

TEST_CASE("edit diversity") {
  Rng rng(5);
  const auto m = random_melody(rng, 36);
  std::vector<Melody> same(4, m);
  CHECK(edit_diversity(same) == 0.0);
  Melody a(36, 2), b(36, 3);
  std::vector<Melody> opposite = {a, b};
  CHECK(edit_diversity(opposite) == 1.0);
  std::vector<Melody> one = {a};
  CHECK_THROWS_AS(edit_diversity(one), ParameterError);
  std::vector<Melody> batch = {random_melody(rng, 36), random_melody(rng, 36), random_melody(rng, 36)};
  std::vector<Melody> reversed(batch.rbegin(), batch.rend());
  CHECK(edit_diversity(batch) == doctest::Approx(edit_diversity(reversed)).epsilon(1e-15));
  CHECK(edit_diversity(batch) > 0.0);
}

TEST_CASE("interval metrics ignore silences and holds, survive transposition") {
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    Melody m = random_melody(rng, 36);
    int lo = 83, hi = 48;
    for (int p : to_note_events(m)) {
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
    // Largest shift keeping every pitch inside 48..83, in a random direction.
    const int up = 83 - hi, down = lo - 48;
    const int shift = rng.bernoulli(0.5) ? static_cast<int>(rng.uniform_index(static_cast<std::size_t>(std::max(up, 0)) + 1))
                                         : -static_cast<int>(rng.uniform_index(static_cast<std::size_t>(std::max(down, 0)) + 1));
    Melody moved = m;
    for (auto& t : moved)
      if (t >= kFirstNote) t += shift;
    CHECK(tonality(moved) == tonality(m));
    CHECK(ratio_of_steps(moved) == ratio_of_steps(m));
    const double t = tonality(m), s = ratio_of_steps(m);
    CHECK((t >= 0.0 && t <= 1.0 && s >= 0.0 && s <= 1.0));

    Melody padded = {0, 0, 1};
    padded.insert(padded.end(), m.begin(), m.end());
    padded.push_back(0);
    CHECK(tonality(padded) == t);
    CHECK(ratio_of_steps(padded) == s);
  }
}

TEST_CASE("corpus melodies are 36 tokens") {
  const auto lines = read_corpus(std::string(ORGAN_SOURCE_DIR) + "/data/melodies.txt");
  CHECK(lines.size() == 1000);
  for (const auto& l : lines) {
    CHECK(l.size() == 36);
    CHECK_NOTHROW(melody_from_text(l));
  }
}
