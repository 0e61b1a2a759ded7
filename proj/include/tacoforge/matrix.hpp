#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tacoforge {

// Plain row-major matrix used for features, spectrograms and alignments
// outside of the autodiff graph.
template <class S>
struct Mat {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<S> v;

  Mat() = default;
  Mat(int64_t r, int64_t c, S fill = S(0)) : rows(r), cols(c), v(static_cast<size_t>(r * c), fill) {}

  S& at(int64_t r, int64_t c) { return v[static_cast<size_t>(r * cols + c)]; }
  S at(int64_t r, int64_t c) const { return v[static_cast<size_t>(r * cols + c)]; }
  const S* row(int64_t r) const { return v.data() + r * cols; }
  S* row(int64_t r) { return v.data() + r * cols; }
  bool empty() const { return rows == 0 || cols == 0; }

  template <class T>
  Mat<T> cast() const {
    Mat<T> out(rows, cols);
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<T>(v[i]);
    return out;
  }
};

using MatF = Mat<float>;
using MatD = Mat<double>;

// CSV: one row per line, 6 significant digits, UTF-8, comma separated.
void write_csv(const std::string& path, const MatF& m);
MatF read_csv(const std::string& path);

// Binary 8-bit PGM (P5), one image row per matrix row. Each row is scaled
// independently so its maximum maps to 255 (row-normalized); all-zero rows
// stay black.
void write_pgm(const std::string& path, const MatF& m);
// Returns (width, height) of a PGM file without decoding pixel data.
std::pair<int64_t, int64_t> read_pgm_dims(const std::string& path);

std::string format_sig6(float x);

}  // namespace tacoforge
