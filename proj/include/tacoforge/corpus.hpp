#pragma once

// Dataset plumbing: manifest parsing, feature extraction with a binary disk
// cache, a deterministic synthetic tone corpus for desk-scale experiments,
// and batch assembly with length bucketing.

#include <cstdint>
#include <string>
#include <vector>

#include "tacoforge/dsp.hpp"
#include "tacoforge/matrix.hpp"
#include "tacoforge/rng.hpp"
#include "tacoforge/text.hpp"

namespace tacoforge {

struct ManifestRecord {
  std::string id;
  std::string wav_path;  // as written in the manifest; resolved against base_dir
  std::string text;      // normalized
};

struct Manifest {
  std::vector<ManifestRecord> records;
  std::string base_dir;  // directory of the manifest file; "" for in-memory

  // wav_path joined with base_dir unless already absolute.
  std::string resolve_wav(const ManifestRecord& r) const;
};

// Pipe-delimited "id|wav_path|text", one record per line; blank lines are
// skipped; text is normalized on load. Errors carry the 1-based line number.
Manifest load_manifest(const std::string& path, const Charset& cs);

struct FeatureRecord {
  std::string utterance_id;
  std::vector<int64_t> text_ids;
  MatF mel;     // T x n_mels, normalized to [0,1]
  MatF linear;  // T x linear_bins, normalized to [0,1]
};

// pre-emphasis -> stft -> magnitude -> {linear: compress; mel: filterbank ->
// compress}. Results are cached under cache_dir/<config-hash>/<id>.feat and
// reloaded bit-identically; pass an empty cache_dir to skip caching.
FeatureRecord featurize(const ManifestRecord& rec, const std::string& wav_path,
                        const SpectralConfig& cfg, const Charset& cs,
                        const std::string& cache_dir);

// Convenience: featurize every record of a manifest.
std::vector<FeatureRecord> featurize_all(const Manifest& m, const SpectralConfig& cfg,
                                         const Charset& cs, const std::string& cache_dir);

// ---------------------------------------------------------------------------
// Synthetic tone corpus: each character renders as a fixed-frequency tone so
// text/audio alignment is linear by construction.
// ---------------------------------------------------------------------------

struct ToysetSpec {
  std::string alphabet = "abcdefghij";
  double tone_base_hz = 200.0;
  double tone_step_hz = 40.0;
  double char_duration_ms = 100.0;
  double crossfade_ms = 5.0;
  double tail_silence_ms = 0.0;
  int utterance_count = 10;
  int min_chars = 3;
  int max_chars = 8;
  uint64_t seed = 1234;

  void validate(int sample_rate_hz) const;
};

// Tone frequency assigned to a character (its index in spec.alphabet).
double toyset_tone_hz(const ToysetSpec& spec, char c);

// Renders one text as concatenated tones with linear crossfades at the
// boundaries; total duration = len*char_duration + tail_silence.
std::vector<double> toyset_render(const ToysetSpec& spec, const std::string& text,
                                  int sample_rate_hz);

// Writes <id>.wav files plus manifest.txt into out_dir and returns the parsed
// manifest. Pure function of (spec, sample rate): same seed, same bytes.
Manifest generate_toyset(const ToysetSpec& spec, int sample_rate_hz, const std::string& out_dir,
                         const Charset& cs);

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct Batch {
  std::vector<std::string> ids;
  int64_t batch = 0;
  int64_t text_len = 0;  // padded L
  int64_t frames = 0;    // padded T, always a multiple of r
  int64_t n_mels = 0;
  int64_t n_bins = 0;
  std::vector<int64_t> text;           // batch x text_len, pad id filled
  std::vector<float> mel;              // batch x frames x n_mels
  std::vector<float> linear;           // batch x frames x n_bins
  std::vector<int64_t> text_lengths;   // true lengths
  std::vector<int64_t> frame_lengths;  // true frame counts
};

// Pads text with the pad id and targets with exact 0.0f (the normalized
// silence floor) up to the batch maximum rounded to a multiple of r. No loss
// mask exists anywhere: padded frames are trained on by design.
Batch pad_batch(const std::vector<const FeatureRecord*>& records, int r);

// Epoch plan: indices sorted by frame count (ties by text length then index),
// cut into consecutive buckets of batch_size; bucket order shuffled by rng.
std::vector<std::vector<int64_t>> make_epoch_buckets(const std::vector<FeatureRecord>& records,
                                                     int64_t batch_size, Rng& rng);

}  // namespace tacoforge
