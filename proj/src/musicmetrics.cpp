#include "organ/musicmetrics.hpp"

#include <algorithm>
#include <cstdlib>

#include "organ/errors.hpp"

namespace organ::music {

Melody melody_from_text(std::string_view text) {
  Melody out;
  out.reserve(text.size());
  for (char c : text) {
    const auto pos = kMelodyAlphabet.find(c);
    if (pos == std::string_view::npos) throw EncodingError(std::string("not a melody symbol: '") + c + "'");
    out.push_back(static_cast<int>(pos));
  }
  return out;
}

std::string melody_to_text(std::span<const int> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (t < 0 || t > kLastToken) throw EncodingError("melody token out of range: " + std::to_string(t));
    out.push_back(kMelodyAlphabet[static_cast<std::size_t>(t)]);
  }
  return out;
}

std::vector<int> to_note_events(std::span<const int> tokens) {
  std::vector<int> pitches;
  for (int t : tokens) {
    if (t < 0 || t > kLastToken) throw EncodingError("melody token out of range: " + std::to_string(t));
    if (t >= kFirstNote) pitches.push_back(t + kPitchOffset);
  }
  return pitches;
}

namespace {

template <typename Pred>
double interval_fraction(std::span<const int> pitches, Pred pred) {
  if (pitches.size() < 2) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 1; i < pitches.size(); ++i) hits += pred(std::abs(pitches[i] - pitches[i - 1])) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(pitches.size() - 1);
}

}  // namespace

double tonality_of_events(std::span<const int> pitches) {
  return interval_fraction(pitches, [](int d) { return d == 7; });
}

double ratio_of_steps_of_events(std::span<const int> pitches) {
  return interval_fraction(pitches, [](int d) { return d == 1 || d == 2; });
}

double tonality(std::span<const int> tokens) { return tonality_of_events(to_note_events(tokens)); }
double ratio_of_steps(std::span<const int> tokens) { return ratio_of_steps_of_events(to_note_events(tokens)); }

std::size_t levenshtein(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

double edit_diversity(std::span<const Melody> batch) {
  if (batch.size() < 2) throw ParameterError("edit_diversity needs at least two sequences");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t j = i + 1; j < batch.size(); ++j) {
      const std::size_t longest = std::max(batch[i].size(), batch[j].size());
      if (longest > 0)
        sum += static_cast<double>(levenshtein(batch[i], batch[j])) / static_cast<double>(longest);
      ++pairs;
    }
  return sum / static_cast<double>(pairs);
}

}  // namespace organ::music
