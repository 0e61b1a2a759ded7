#pragma once

// Character-level text handling: a fixed symbol inventory, trivial
// normalization, and integer encoding.

#include <cstdint>
#include <string>
#include <vector>

namespace tacoforge {

// Symbol ids are dense and stable: 0 = pad, 1 = unknown, then 'a'..'z',
// '0'..'9', space, and the punctuation set . , ! ? ' - ; :
class Charset {
 public:
  static Charset standard();
  // Parses the dump() format: one symbol per line, <pad>/<unk>/<space>
  // escapes for the unprintables.
  static Charset parse(const std::string& text);

  int size() const { return static_cast<int>(symbols_.size()); }
  static constexpr int pad_id() { return 0; }
  static constexpr int unknown_id() { return 1; }

  // -1 when the character is not in the inventory.
  int id_of(char c) const;
  bool contains(char c) const { return id_of(c) >= 0; }
  // Printable symbol name for an id (multi-character for specials).
  const std::string& symbol(int id) const;

  std::string dump() const;
  bool operator==(const Charset& o) const { return symbols_ == o.symbols_; }

 private:
  std::vector<std::string> symbols_;
  int char_to_id_[256] = {};
  void rebuild_index();
};

struct EncodedText {
  std::vector<int64_t> ids;
  std::string original;  // the normalized source string
};

// Lowercases, collapses whitespace runs to single spaces, trims, and drops
// characters outside the charset. Throws UsageError when nothing remains.
std::string normalize_text(const std::string& s, const Charset& cs);

// Expects normalized input; unseen characters map to the unknown id.
EncodedText encode_text(const std::string& normalized, const Charset& cs);

// Inverse of encode on charset symbols; pad and unknown ids render as nothing.
std::string decode_ids(const std::vector<int64_t>& ids, const Charset& cs);

}  // namespace tacoforge
