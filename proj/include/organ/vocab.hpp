#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace organ {

/// Fixed-length integer-encoded sequence; positions after the content hold the pad id.
using TokenSequence = std::vector<int>;
using Batch = std::vector<TokenSequence>;

inline constexpr char kPadChar = '_';

/// Character <-> id table. Ids follow character code order; the pad
/// character always takes the last id.
class Vocabulary {
 public:
  static Vocabulary build(std::span<const std::string> corpus);
  /// Exact id order as given; the last character must be the pad.
  static Vocabulary from_chars(std::string chars);

  std::size_t size() const { return chars_.size(); }
  int pad_id() const { return static_cast<int>(chars_.size()) - 1; }
  int id_of(char c) const;
  char char_of(int id) const;
  bool contains(char c) const { return ids_[static_cast<unsigned char>(c)] >= 0; }
  /// All characters in id order.
  const std::string& chars() const { return chars_; }

  TokenSequence encode(std::string_view s, std::size_t max_len) const;
  /// Characters before the first pad.
  std::string decode(std::span<const int> tokens) const;

  /// "char<TAB>id" per line.
  std::string to_text() const;
  static Vocabulary from_text(std::string_view text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.chars_ == b.chars_; }

 private:
  std::string chars_;
  std::array<int, 256> ids_{};
};

/// ceil(longest line * (1 + slack)), with a 1e-9 allowance so that e.g.
/// 10 * 1.1 does not round up to 12.
std::size_t max_len_for(std::span<const std::string> corpus, double slack_fraction);

/// Index of the first pad (or the full length).
std::size_t effective_length(std::span<const int> tokens, int pad_id);

/// Non-empty lines of a UTF-8 corpus file (trailing CR stripped).
std::vector<std::string> read_corpus(const std::string& path);

}  // namespace organ
