#pragma once

// Melody semantics: token 0 is silence, 1 holds the previous event and
// 2..37 are note onsets C3..B5 (MIDI 48..83), one token per sixteenth.

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace organ::music {

inline constexpr int kSilence = 0;
inline constexpr int kHold = 1;
inline constexpr int kFirstNote = 2;
inline constexpr int kLastToken = 37;
inline constexpr int kPitchOffset = 46;
/// Text form of tokens 0..37, one character each.
inline constexpr std::string_view kMelodyAlphabet = "0123456789abcdefghijklmnopqrstuvwxyzAB";

using Melody = std::vector<int>;

/// Throws EncodingError on characters outside kMelodyAlphabet.
Melody melody_from_text(std::string_view text);
std::string melody_to_text(std::span<const int> tokens);

/// MIDI pitches of note onsets; throws EncodingError for tokens outside 0..37.
std::vector<int> to_note_events(std::span<const int> tokens);

/// Fraction of consecutive note-event intervals of exactly 7 semitones.
double tonality(std::span<const int> tokens);
/// Fraction of consecutive note-event intervals of 1 or 2 semitones.
double ratio_of_steps(std::span<const int> tokens);

double tonality_of_events(std::span<const int> pitches);
double ratio_of_steps_of_events(std::span<const int> pitches);

std::size_t levenshtein(std::span<const int> a, std::span<const int> b);
/// Mean over unordered pairs of levenshtein / max(len a, len b). Throws
/// ParameterError for fewer than two sequences.
double edit_diversity(std::span<const Melody> batch);

}  // namespace organ::music
