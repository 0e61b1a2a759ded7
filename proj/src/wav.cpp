#include "tacoforge/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "tacoforge/errors.hpp"

namespace tacoforge {

namespace {

uint32_t rd_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}
uint16_t rd_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | p[1] << 8);
}
void wr_u32(std::string& s, uint32_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8 & 0xff));
  s.push_back(static_cast<char>(v >> 16 & 0xff));
  s.push_back(static_cast<char>(v >> 24 & 0xff));
}
void wr_u16(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8 & 0xff));
}

}  // namespace

Waveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  TACO_INPUT_CHECK(f.good(), "cannot open wav file: ", path);
  std::vector<uint8_t> data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  TACO_INPUT_CHECK(data.size() >= 44, path, ": too short to be a RIFF/WAVE file");
  TACO_INPUT_CHECK(std::memcmp(data.data(), "RIFF", 4) == 0, path, ": missing RIFF header");
  TACO_INPUT_CHECK(std::memcmp(data.data() + 8, "WAVE", 4) == 0, path, ": not a WAVE file");

  bool have_fmt = false;
  int sample_rate = 0;
  const uint8_t* pcm = nullptr;
  uint32_t pcm_bytes = 0;
  size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const char* tag = reinterpret_cast<const char*>(data.data() + pos);
    const uint32_t sz = rd_u32(data.data() + pos + 4);
    const size_t body = pos + 8;
    TACO_INPUT_CHECK(body + sz <= data.size(), path, ": truncated chunk '",
                     std::string(tag, 4), "'");
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      TACO_INPUT_CHECK(sz >= 16, path, ": fmt chunk too small");
      const uint16_t format = rd_u16(data.data() + body);
      const uint16_t channels = rd_u16(data.data() + body + 2);
      sample_rate = static_cast<int>(rd_u32(data.data() + body + 4));
      const uint16_t bits = rd_u16(data.data() + body + 14);
      TACO_INPUT_CHECK(format == 1, path, ": only PCM (format 1) supported, got format ", format);
      TACO_INPUT_CHECK(channels == 1, path, ": only mono supported, got ", channels, " channels");
      TACO_INPUT_CHECK(bits == 16, path, ": only 16-bit supported, got ", bits, " bits");
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      pcm = data.data() + body;
      pcm_bytes = sz;
    }
    pos = body + sz + (sz & 1);  // chunks are word-aligned
  }
  TACO_INPUT_CHECK(have_fmt, path, ": missing fmt chunk");
  TACO_INPUT_CHECK(pcm != nullptr, path, ": missing data chunk");
  TACO_INPUT_CHECK(pcm_bytes >= 2, path, ": empty data chunk");

  Waveform wf;
  wf.sample_rate_hz = sample_rate;
  const size_t n = pcm_bytes / 2;
  wf.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const int16_t s = static_cast<int16_t>(pcm[2 * i] | pcm[2 * i + 1] << 8);
    wf.samples[i] = s / 32768.0;
  }
  return wf;
}

void write_wav(const std::string& path, const Waveform& wf) {
  TACO_CHECK(!wf.samples.empty(), "refusing to write empty waveform");
  TACO_CHECK(wf.sample_rate_hz > 0, "waveform sample rate not set");
  std::string out;
  const uint32_t data_bytes = static_cast<uint32_t>(wf.samples.size() * 2);
  out.reserve(44 + data_bytes);
  out += "RIFF";
  wr_u32(out, 36 + data_bytes);
  out += "WAVE";
  out += "fmt ";
  wr_u32(out, 16);
  wr_u16(out, 1);  // PCM
  wr_u16(out, 1);  // mono
  wr_u32(out, static_cast<uint32_t>(wf.sample_rate_hz));
  wr_u32(out, static_cast<uint32_t>(wf.sample_rate_hz * 2));  // byte rate
  wr_u16(out, 2);                                             // block align
  wr_u16(out, 16);                                            // bits
  out += "data";
  wr_u32(out, data_bytes);
  for (double x : wf.samples) {
    const double c = std::clamp(x, -1.0, 1.0);
    long v = std::lround(c * 32768.0);
    v = std::clamp(v, -32768L, 32767L);
    wr_u16(out, static_cast<uint16_t>(static_cast<int16_t>(v)));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  TACO_INPUT_CHECK(f.good(), "cannot open for writing: ", path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  TACO_INPUT_CHECK(f.good(), "short write: ", path);
}

}  // namespace tacoforge
