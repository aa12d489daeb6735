#include "organ/vocab.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "organ/errors.hpp"

namespace organ {

namespace {

std::string printable(char c) {
  if (c == '\t') return "\\t";
  if (static_cast<unsigned char>(c) < 32) return "\\x" + std::to_string(static_cast<unsigned char>(c));
  return std::string(1, c);
}

}  // namespace

Vocabulary Vocabulary::from_chars(std::string chars) {
  if (chars.empty() || chars.back() != kPadChar) throw EncodingError("vocabulary must end with the pad character");
  Vocabulary v;
  v.ids_.fill(-1);
  for (std::size_t i = 0; i < chars.size(); ++i) {
    auto& slot = v.ids_[static_cast<unsigned char>(chars[i])];
    if (slot >= 0) throw EncodingError("duplicate vocabulary character '" + printable(chars[i]) + "'");
    slot = static_cast<int>(i);
  }
  v.chars_ = std::move(chars);
  return v;
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus) {
  std::array<bool, 256> seen{};
  for (std::size_t line = 0; line < corpus.size(); ++line) {
    for (char c : corpus[line]) {
      if (c == kPadChar) {
        throw EncodingError("reserved pad character '_' found in corpus line " + std::to_string(line + 1));
      }
      if (c == '\n') throw EncodingError("newline inside corpus entry " + std::to_string(line + 1));
      seen[static_cast<unsigned char>(c)] = true;
    }
  }
  std::string chars;
  for (std::size_t c = 0; c < 256; ++c) {
    if (seen[c]) chars.push_back(static_cast<char>(c));
  }
  chars.push_back(kPadChar);
  return from_chars(std::move(chars));
}

int Vocabulary::id_of(char c) const {
  const int id = ids_[static_cast<unsigned char>(c)];
  if (id < 0) throw EncodingError("character '" + printable(c) + "' is not in the vocabulary");
  return id;
}

char Vocabulary::char_of(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= chars_.size()) {
    throw EncodingError("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(chars_.size()));
  }
  return chars_[static_cast<std::size_t>(id)];
}

TokenSequence Vocabulary::encode(std::string_view s, std::size_t max_len) const {
  if (s.size() > max_len) {
    throw EncodingError("sequence of length " + std::to_string(s.size()) + " exceeds max length " +
                        std::to_string(max_len));
  }
  TokenSequence out(max_len, pad_id());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == kPadChar) throw EncodingError("pad character inside sequence");
    out[i] = id_of(s[i]);
  }
  return out;
}

std::string Vocabulary::decode(std::span<const int> tokens) const {
  std::string out;
  for (int t : tokens) {
    const char c = char_of(t);
    if (t == pad_id()) break;
    out.push_back(c);
  }
  return out;
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (std::size_t i = 0; i < chars_.size(); ++i) {
    out.push_back(chars_[i]);
    out += '\t';
    out += std::to_string(i);
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::from_text(std::string_view text) {
  std::vector<std::pair<int, char>> entries;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.size() < 3 || line[1] != '\t') throw ParseError("vocabulary line must be 'char<TAB>id'", line_no);
    int id = 0;
    try {
      std::size_t used = 0;
      id = std::stoi(std::string(line.substr(2)), &used);
      if (used != line.size() - 2) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError("bad vocabulary id", line_no);
    }
    entries.emplace_back(id, line[0]);
  }
  std::sort(entries.begin(), entries.end());
  std::string chars;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].first != static_cast<int>(i)) throw ParseError("vocabulary ids are not contiguous", i + 1);
    chars.push_back(entries[i].second);
  }
  return from_chars(std::move(chars));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot write vocabulary '" + path + "'");
  out << to_text();
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open vocabulary '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_text(buf.str());
}

std::size_t max_len_for(std::span<const std::string> corpus, double slack_fraction) {
  if (corpus.empty()) throw ParameterError("max_len_for: empty corpus");
  if (!(slack_fraction >= 0.0)) throw ParameterError("max_len_for: slack must be non-negative");
  std::size_t longest = 0;
  for (const auto& s : corpus) longest = std::max(longest, s.size());
  const double scaled = static_cast<double>(longest) * (1.0 + slack_fraction);
  return static_cast<std::size_t>(std::ceil(scaled - 1e-9));
}

std::size_t effective_length(std::span<const int> tokens, int pad_id) {
  auto it = std::find(tokens.begin(), tokens.end(), pad_id);
  return static_cast<std::size_t>(it - tokens.begin());
}

std::vector<std::string> read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open corpus '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace organ
