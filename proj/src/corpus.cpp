#include "tacoforge/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "tacoforge/errors.hpp"
#include "tacoforge/wav.hpp"

namespace fs = std::filesystem;

namespace tacoforge {

namespace {

constexpr char kFeatMagic[8] = {'T', 'F', 'F', 'E', 'A', 'T', '0', '1'};
constexpr double kPi = 3.14159265358979323846;

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  TACO_INPUT_CHECK(in.good(), "cannot open file: ", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    TACO_INPUT_CHECK(out.good(), "cannot write file: ", tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    TACO_INPUT_CHECK(out.good(), "short write: ", tmp);
  }
  fs::rename(tmp, path);
}

void append_i64(std::string& s, int64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  s.append(buf, 8);
}

int64_t take_i64(const std::string& s, size_t& off, const std::string& path) {
  TACO_INPUT_CHECK(off + 8 <= s.size(), "truncated feature cache file: ", path);
  int64_t v;
  std::memcpy(&v, s.data() + off, 8);
  off += 8;
  return v;
}

void append_matf(std::string& s, const MatF& m) {
  append_i64(s, m.rows);
  append_i64(s, m.cols);
  s.append(reinterpret_cast<const char*>(m.v.data()), m.v.size() * sizeof(float));
}

MatF take_matf(const std::string& s, size_t& off, const std::string& path) {
  const int64_t rows = take_i64(s, off, path);
  const int64_t cols = take_i64(s, off, path);
  TACO_INPUT_CHECK(rows >= 0 && cols >= 0, "bad dims in feature cache file: ", path);
  MatF m(rows, cols);
  const size_t bytes = m.v.size() * sizeof(float);
  TACO_INPUT_CHECK(off + bytes <= s.size(), "truncated feature cache file: ", path);
  std::memcpy(m.v.data(), s.data() + off, bytes);
  off += bytes;
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

std::string Manifest::resolve_wav(const ManifestRecord& r) const {
  fs::path p(r.wav_path);
  if (p.is_absolute() || base_dir.empty()) return r.wav_path;
  return (fs::path(base_dir) / p).string();
}

Manifest load_manifest(const std::string& path, const Charset& cs) {
  const std::string content = read_text_file(path);
  Manifest m;
  m.base_dir = fs::path(path).parent_path().string();
  std::set<std::string> seen;
  size_t pos = 0;
  int64_t line_no = 0;
  while (pos <= content.size()) {
    size_t eol = content.find('\n', pos);
    if (eol == std::string::npos) eol = content.size();
    std::string line = content.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool blank = true;
    for (char c : line)
      if (!std::isspace(static_cast<unsigned char>(c))) blank = false;
    if (blank) {
      if (pos > content.size()) break;
      continue;
    }
    const size_t p1 = line.find('|');
    const size_t p2 = p1 == std::string::npos ? std::string::npos : line.find('|', p1 + 1);
    TACO_INPUT_CHECK(p1 != std::string::npos && p2 != std::string::npos &&
                         line.find('|', p2 + 1) == std::string::npos,
                     "manifest line ", line_no, ": expected 3 pipe-delimited fields: ", path);
    ManifestRecord rec;
    rec.id = line.substr(0, p1);
    rec.wav_path = line.substr(p1 + 1, p2 - p1 - 1);
    TACO_INPUT_CHECK(!rec.id.empty(), "manifest line ", line_no, ": empty utterance id");
    TACO_INPUT_CHECK(!rec.wav_path.empty(), "manifest line ", line_no, ": empty wav path");
    TACO_INPUT_CHECK(seen.insert(rec.id).second, "manifest line ", line_no,
                     ": duplicate utterance id '", rec.id, "'");
    try {
      rec.text = normalize_text(line.substr(p2 + 1), cs);
    } catch (const UsageError& e) {
      throw UsageError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    m.records.push_back(std::move(rec));
    if (pos > content.size()) break;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Featurization + cache
// ---------------------------------------------------------------------------

FeatureRecord featurize(const ManifestRecord& rec, const std::string& wav_path,
                        const SpectralConfig& cfg, const Charset& cs,
                        const std::string& cache_dir) {
  FeatureRecord out;
  out.utterance_id = rec.id;
  out.text_ids = encode_text(rec.text, cs).ids;

  std::string cache_path;
  if (!cache_dir.empty()) {
    const fs::path dir = fs::path(cache_dir) / cfg.feature_hash();
    fs::create_directories(dir);
    cache_path = (dir / (rec.id + ".feat")).string();
    if (fs::exists(cache_path)) {
      const std::string blob = read_text_file(cache_path);
      TACO_INPUT_CHECK(blob.size() >= 8 && std::memcmp(blob.data(), kFeatMagic, 8) == 0,
                       "bad magic in feature cache file: ", cache_path);
      size_t off = 8;
      out.mel = take_matf(blob, off, cache_path);
      out.linear = take_matf(blob, off, cache_path);
      TACO_INPUT_CHECK(off == blob.size(), "trailing bytes in feature cache file: ", cache_path);
      TACO_INPUT_CHECK(out.mel.rows == out.linear.rows,
                       "inconsistent frame counts in cache file: ", cache_path);
      return out;
    }
  }

  const Waveform wav = read_wav(wav_path);
  TACO_INPUT_CHECK(wav.sample_rate_hz == cfg.sample_rate_hz, "sample rate mismatch for '",
                   rec.id, "': expected ", cfg.sample_rate_hz, " Hz, got ", wav.sample_rate_hz,
                   " Hz (", wav_path, ")");

  const auto emphasized = pre_emphasis(wav.samples, cfg.preemphasis);
  const auto spec = stft(emphasized, cfg);
  const MatD mag = magnitude(spec);
  const MatD fb = build_mel_filterbank(cfg);
  out.linear = log_compress(mag).cast<float>();
  out.mel = log_compress(linear_to_mel(mag, fb)).cast<float>();

  if (!cache_path.empty()) {
    std::string blob(kFeatMagic, 8);
    append_matf(blob, out.mel);
    append_matf(blob, out.linear);
    write_file_atomic(cache_path, blob);
  }
  return out;
}

std::vector<FeatureRecord> featurize_all(const Manifest& m, const SpectralConfig& cfg,
                                         const Charset& cs, const std::string& cache_dir) {
  std::vector<FeatureRecord> out;
  out.reserve(m.records.size());
  for (const auto& rec : m.records) out.push_back(featurize(rec, m.resolve_wav(rec), cfg, cs, cache_dir));
  return out;
}

// ---------------------------------------------------------------------------
// Toy corpus
// ---------------------------------------------------------------------------

void ToysetSpec::validate(int sample_rate_hz) const {
  TACO_INPUT_CHECK(!alphabet.empty(), "toyset alphabet must not be empty");
  TACO_INPUT_CHECK(char_duration_ms > 0.0, "toyset char duration must be > 0");
  TACO_INPUT_CHECK(crossfade_ms >= 0.0 && crossfade_ms < char_duration_ms,
                   "toyset crossfade must be in [0, char_duration)");
  TACO_INPUT_CHECK(tail_silence_ms >= 0.0, "toyset tail silence must be >= 0");
  TACO_INPUT_CHECK(utterance_count >= 1, "toyset needs at least one utterance");
  TACO_INPUT_CHECK(min_chars >= 1 && max_chars >= min_chars, "bad toyset length range");
  TACO_INPUT_CHECK(tone_base_hz > 0.0 && tone_step_hz >= 0.0, "bad toyset tone parameters");
  const double top = tone_base_hz + tone_step_hz * static_cast<double>(alphabet.size() - 1);
  TACO_INPUT_CHECK(top < sample_rate_hz / 2.0, "toyset tone ", top,
                   " Hz reaches the Nyquist frequency of ", sample_rate_hz, " Hz audio");
}

double toyset_tone_hz(const ToysetSpec& spec, char c) {
  const size_t idx = spec.alphabet.find(c);
  TACO_INPUT_CHECK(idx != std::string::npos, "character '", std::string(1, c),
                   "' is not in the toyset alphabet");
  return spec.tone_base_hz + spec.tone_step_hz * static_cast<double>(idx);
}

std::vector<double> toyset_render(const ToysetSpec& spec, const std::string& text,
                                  int sample_rate_hz) {
  spec.validate(sample_rate_hz);
  TACO_INPUT_CHECK(!text.empty(), "cannot render empty toyset text");
  const double sr = static_cast<double>(sample_rate_hz);
  const int64_t per_char = static_cast<int64_t>(std::llround(spec.char_duration_ms * sr / 1000.0));
  const int64_t tail = static_cast<int64_t>(std::llround(spec.tail_silence_ms * sr / 1000.0));
  const int64_t fade = static_cast<int64_t>(std::llround(spec.crossfade_ms * sr / 1000.0));
  const int64_t n_chars = static_cast<int64_t>(text.size());
  const int64_t total = n_chars * per_char + tail;
  const double amp = 0.5;

  std::vector<double> freqs(text.size());
  for (size_t i = 0; i < text.size(); ++i) freqs[i] = toyset_tone_hz(spec, text[i]);

  // Each character owns the slot [k*per_char, (k+1)*per_char); boundaries get
  // a linear crossfade of `fade` samples centered on the slot edge. Tones are
  // evaluated on the global clock so each is phase-continuous.
  auto tone = [&](int64_t k, int64_t n) {
    return amp * std::sin(2.0 * kPi * freqs[static_cast<size_t>(k)] * static_cast<double>(n) / sr);
  };
  std::vector<double> y(static_cast<size_t>(total), 0.0);
  for (int64_t n = 0; n < n_chars * per_char; ++n) {
    const int64_t k = n / per_char;
    double v = tone(k, n);
    if (fade > 0) {
      const int64_t next_edge = (k + 1) * per_char;
      const int64_t prev_edge = k * per_char;
      if (k + 1 < n_chars && n >= next_edge - (fade - fade / 2)) {
        // Approaching the next slot: ramp toward its tone.
        const double a = static_cast<double>(n - (next_edge - (fade - fade / 2))) /
                         static_cast<double>(fade);
        v = (1.0 - a) * v + a * tone(k + 1, n);
      } else if (k > 0 && n < prev_edge + fade / 2) {
        // Just past a slot edge: finish the ramp from the previous tone.
        const double a = static_cast<double>(n - (prev_edge - (fade - fade / 2))) /
                         static_cast<double>(fade);
        v = (1.0 - a) * tone(k - 1, n) + a * v;
      }
    }
    y[static_cast<size_t>(n)] = v;
  }
  return y;
}

Manifest generate_toyset(const ToysetSpec& spec, int sample_rate_hz, const std::string& out_dir,
                         const Charset& cs) {
  spec.validate(sample_rate_hz);
  for (char c : spec.alphabet)
    TACO_INPUT_CHECK(cs.contains(c), "toyset alphabet character '", std::string(1, c),
                     "' is outside the charset");
  fs::create_directories(out_dir);
  Rng rng(spec.seed);
  std::string manifest_text;
  Manifest m;
  m.base_dir = out_dir;
  for (int i = 0; i < spec.utterance_count; ++i) {
    const int64_t len = static_cast<int64_t>(spec.min_chars) +
                        static_cast<int64_t>(rng.uniform_int(
                            static_cast<uint64_t>(spec.max_chars - spec.min_chars + 1)));
    std::string text;
    for (int64_t j = 0; j < len; ++j)
      text.push_back(spec.alphabet[static_cast<size_t>(rng.uniform_int(spec.alphabet.size()))]);
    char id[16];
    std::snprintf(id, sizeof id, "toy%03d", i);
    const std::string wav_name = std::string(id) + ".wav";
    Waveform w;
    w.sample_rate_hz = sample_rate_hz;
    w.samples = toyset_render(spec, text, sample_rate_hz);
    write_wav((fs::path(out_dir) / wav_name).string(), w);
    manifest_text += std::string(id) + "|" + wav_name + "|" + text + "\n";
    m.records.push_back({id, wav_name, normalize_text(text, cs)});
  }
  write_file_atomic((fs::path(out_dir) / "manifest.txt").string(), manifest_text);
  return m;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

Batch pad_batch(const std::vector<const FeatureRecord*>& records, int r) {
  TACO_CHECK(!records.empty(), "pad_batch requires a nonempty batch");
  TACO_CHECK(r >= 1, "reduction factor must be >= 1, got ", r);
  Batch b;
  b.batch = static_cast<int64_t>(records.size());
  b.n_mels = records[0]->mel.cols;
  b.n_bins = records[0]->linear.cols;
  for (const FeatureRecord* rec : records) {
    TACO_CHECK(rec->mel.rows == rec->linear.rows, "mel/linear frame mismatch in '",
               rec->utterance_id, "'");
    TACO_CHECK(rec->mel.cols == b.n_mels && rec->linear.cols == b.n_bins,
               "feature width mismatch in '", rec->utterance_id, "'");
    TACO_CHECK(!rec->text_ids.empty(), "empty text in '", rec->utterance_id, "'");
    TACO_CHECK(rec->mel.rows >= 1, "empty features in '", rec->utterance_id, "'");
    b.ids.push_back(rec->utterance_id);
    b.text_lengths.push_back(static_cast<int64_t>(rec->text_ids.size()));
    b.frame_lengths.push_back(rec->mel.rows);
    b.text_len = std::max(b.text_len, b.text_lengths.back());
    b.frames = std::max(b.frames, b.frame_lengths.back());
  }
  b.frames = (b.frames + r - 1) / r * r;

  b.text.assign(static_cast<size_t>(b.batch * b.text_len), Charset::pad_id());
  b.mel.assign(static_cast<size_t>(b.batch * b.frames * b.n_mels), 0.0f);
  b.linear.assign(static_cast<size_t>(b.batch * b.frames * b.n_bins), 0.0f);
  for (int64_t i = 0; i < b.batch; ++i) {
    const FeatureRecord* rec = records[static_cast<size_t>(i)];
    std::copy(rec->text_ids.begin(), rec->text_ids.end(),
              b.text.begin() + static_cast<std::ptrdiff_t>(i * b.text_len));
    std::copy(rec->mel.v.begin(), rec->mel.v.end(),
              b.mel.begin() + static_cast<std::ptrdiff_t>(i * b.frames * b.n_mels));
    std::copy(rec->linear.v.begin(), rec->linear.v.end(),
              b.linear.begin() + static_cast<std::ptrdiff_t>(i * b.frames * b.n_bins));
  }
  return b;
}

std::vector<std::vector<int64_t>> make_epoch_buckets(const std::vector<FeatureRecord>& records,
                                                     int64_t batch_size, Rng& rng) {
  TACO_CHECK(batch_size >= 1, "batch size must be >= 1, got ", batch_size);
  std::vector<int64_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    const auto& ra = records[static_cast<size_t>(a)];
    const auto& rb = records[static_cast<size_t>(b)];
    if (ra.mel.rows != rb.mel.rows) return ra.mel.rows < rb.mel.rows;
    if (ra.text_ids.size() != rb.text_ids.size()) return ra.text_ids.size() < rb.text_ids.size();
    return a < b;
  });
  std::vector<std::vector<int64_t>> buckets;
  for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), i + static_cast<size_t>(batch_size));
    buckets.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  rng.shuffle(buckets);
  return buckets;
}

}  // namespace tacoforge
