#pragma once

// RIFF/WAVE PCM16 mono read/write. Samples live in [-1, 1] as doubles;
// conversion uses 1/32768 scaling with clamping on write.

#include <string>
#include <vector>

namespace tacoforge {

struct Waveform {
  std::vector<double> samples;
  int sample_rate_hz = 0;
};

// Rejects non-PCM, non-mono, or non-16-bit files with a descriptive error.
Waveform read_wav(const std::string& path);
void write_wav(const std::string& path, const Waveform& wf);

}  // namespace tacoforge
