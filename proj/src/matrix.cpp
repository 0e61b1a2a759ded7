#include "tacoforge/matrix.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "tacoforge/errors.hpp"

namespace tacoforge {

std::string format_sig6(float x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", static_cast<double>(x));
  return buf;
}

void write_csv(const std::string& path, const MatF& m) {
  std::ofstream os(path, std::ios::binary);
  TACO_INPUT_CHECK(os.good(), "cannot open for writing: ", path);
  std::string line;
  for (int64_t r = 0; r < m.rows; ++r) {
    line.clear();
    for (int64_t c = 0; c < m.cols; ++c) {
      if (c) line += ',';
      line += format_sig6(m.at(r, c));
    }
    line += '\n';
    os << line;
  }
  TACO_INPUT_CHECK(os.good(), "write failed: ", path);
}

MatF read_csv(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  TACO_INPUT_CHECK(is.good(), "cannot open: ", path);
  std::vector<std::vector<float>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.emplace_back();
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        rows.back().push_back(std::stof(cell));
      } catch (const std::exception&) {
        throw UsageError(strcat_msg("bad CSV cell '", cell, "' in ", path, " line ", rows.size()));
      }
    }
    TACO_INPUT_CHECK(rows.back().size() == rows.front().size(),
                     "ragged CSV row in ", path, " line ", rows.size());
  }
  MatF m(static_cast<int64_t>(rows.size()), rows.empty() ? 0 : static_cast<int64_t>(rows[0].size()));
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t c = 0; c < rows[r].size(); ++c) m.at(static_cast<int64_t>(r), static_cast<int64_t>(c)) = rows[r][c];
  return m;
}

void write_pgm(const std::string& path, const MatF& m) {
  std::ofstream os(path, std::ios::binary);
  TACO_INPUT_CHECK(os.good(), "cannot open for writing: ", path);
  os << "P5\n" << m.cols << " " << m.rows << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(m.cols));
  for (int64_t r = 0; r < m.rows; ++r) {
    float mx = 0.0f;
    for (int64_t c = 0; c < m.cols; ++c) mx = std::max(mx, m.at(r, c));
    const float scale = mx > 0.0f ? 255.0f / mx : 0.0f;
    for (int64_t c = 0; c < m.cols; ++c) {
      float x = m.at(r, c) * scale;
      x = x < 0.0f ? 0.0f : (x > 255.0f ? 255.0f : x);
      row[static_cast<size_t>(c)] = static_cast<unsigned char>(x + 0.5f);
    }
    os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  TACO_INPUT_CHECK(os.good(), "write failed: ", path);
}

std::pair<int64_t, int64_t> read_pgm_dims(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  TACO_INPUT_CHECK(is.good(), "cannot open: ", path);
  std::string magic;
  is >> magic;
  TACO_INPUT_CHECK(magic == "P5", "not a P5 PGM: ", path);
  int64_t w = 0, h = 0;
  is >> w >> h;
  TACO_INPUT_CHECK(is.good(), "bad PGM header: ", path);
  return {w, h};
}

}  // namespace tacoforge
