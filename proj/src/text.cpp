#include "tacoforge/text.hpp"

#include <cctype>

#include "tacoforge/errors.hpp"

namespace tacoforge {

namespace {
const char* kPunct = ".,!?'-;:";
}

Charset Charset::standard() {
  Charset cs;
  cs.symbols_.push_back("<pad>");
  cs.symbols_.push_back("<unk>");
  for (char c = 'a'; c <= 'z'; ++c) cs.symbols_.emplace_back(1, c);
  for (char c = '0'; c <= '9'; ++c) cs.symbols_.emplace_back(1, c);
  cs.symbols_.push_back("<space>");
  for (const char* p = kPunct; *p; ++p) cs.symbols_.emplace_back(1, *p);
  cs.rebuild_index();
  return cs;
}

Charset Charset::parse(const std::string& text) {
  Charset cs;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    if (line.empty() && pos > text.size()) break;  // trailing newline
    TACO_INPUT_CHECK(!line.empty(), "charset file has an empty line at symbol ",
                     cs.symbols_.size());
    TACO_INPUT_CHECK(line.size() == 1 || line == "<pad>" || line == "<unk>" || line == "<space>",
                     "charset file has an invalid symbol: '", line, "'");
    cs.symbols_.push_back(line);
  }
  TACO_INPUT_CHECK(cs.symbols_.size() >= 3 && cs.symbols_[0] == "<pad>" &&
                       cs.symbols_[1] == "<unk>",
                   "charset file must start with <pad> and <unk>");
  for (size_t i = 0; i < cs.symbols_.size(); ++i)
    for (size_t j = i + 1; j < cs.symbols_.size(); ++j)
      TACO_INPUT_CHECK(cs.symbols_[i] != cs.symbols_[j], "charset file has duplicate symbol '",
                       cs.symbols_[i], "'");
  cs.rebuild_index();
  return cs;
}

void Charset::rebuild_index() {
  for (int i = 0; i < 256; ++i) char_to_id_[i] = -1;
  for (size_t i = 0; i < symbols_.size(); ++i) {
    const std::string& s = symbols_[i];
    if (s.size() == 1)
      char_to_id_[static_cast<unsigned char>(s[0])] = static_cast<int>(i);
    else if (s == "<space>")
      char_to_id_[static_cast<unsigned char>(' ')] = static_cast<int>(i);
  }
}

int Charset::id_of(char c) const { return char_to_id_[static_cast<unsigned char>(c)]; }

const std::string& Charset::symbol(int id) const {
  TACO_CHECK(id >= 0 && id < size(), "symbol id ", id, " out of range [0,", size(), ")");
  return symbols_[static_cast<size_t>(id)];
}

std::string Charset::dump() const {
  std::string out;
  for (const auto& s : symbols_) {
    out += s;
    out += '\n';
  }
  return out;
}

std::string normalize_text(const std::string& s, const Charset& cs) {
  std::string kept;
  kept.reserve(s.size());
  for (char raw : s) {
    char c = raw;
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    if (c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') c = ' ';
    if (cs.contains(c)) kept += c;
  }
  std::string out;
  out.reserve(kept.size());
  for (char c : kept) {
    if (c == ' ' && (out.empty() || out.back() == ' ')) continue;  // collapse + trim left
    out += c;
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  TACO_INPUT_CHECK(!out.empty(), "text is empty after normalization: '", s, "'");
  return out;
}

EncodedText encode_text(const std::string& normalized, const Charset& cs) {
  TACO_INPUT_CHECK(!normalized.empty(), "cannot encode empty text");
  EncodedText e;
  e.original = normalized;
  e.ids.reserve(normalized.size());
  for (char c : normalized) {
    const int id = cs.id_of(c);
    e.ids.push_back(id >= 0 ? id : Charset::unknown_id());
  }
  return e;
}

std::string decode_ids(const std::vector<int64_t>& ids, const Charset& cs) {
  std::string out;
  for (int64_t id : ids) {
    TACO_CHECK(id >= 0 && id < cs.size(), "id ", id, " outside charset of size ", cs.size());
    if (id == Charset::pad_id() || id == Charset::unknown_id()) continue;
    const std::string& s = cs.symbol(static_cast<int>(id));
    out += s == "<space>" ? " " : s;
  }
  return out;
}

}  // namespace tacoforge
