#include "tacoforge/runconfig.hpp"

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "tacoforge/errors.hpp"

namespace tacoforge {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int64_t parse_i64(const std::string& key, const std::string& v) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  TACO_INPUT_CHECK(ec == std::errc() && p == v.data() + v.size(), "setting ", key,
                   ": expected an integer, got \"", v, "\"");
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  TACO_INPUT_CHECK(ec == std::errc() && p == v.data() + v.size(), "setting ", key,
                   ": expected a non-negative integer, got \"", v, "\"");
  return out;
}

int parse_i32(const std::string& key, const std::string& v) {
  int64_t wide = parse_i64(key, v);
  TACO_INPUT_CHECK(wide >= INT32_MIN && wide <= INT32_MAX, "setting ", key, ": value ", wide,
                   " out of 32-bit range");
  return static_cast<int>(wide);
}

double parse_f64(const std::string& key, const std::string& v) {
  TACO_INPUT_CHECK(!v.empty(), "setting ", key, ": expected a number, got an empty value");
  char* end = nullptr;
  double out = std::strtod(v.c_str(), &end);
  TACO_INPUT_CHECK(end == v.c_str() + v.size(), "setting ", key, ": expected a number, got \"", v,
                   "\"");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("setting " + key + ": expected true/false, got \"" + v + "\"");
}

std::string format_f64(double x) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  TACO_CHECK(ec == std::errc(), "double formatting failed");
  return std::string(buf, p);
}

std::string format_milestones(const std::vector<std::pair<int64_t, double>>& ms) {
  std::string out;
  for (size_t i = 0; i < ms.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(ms[i].first) + ":" + format_f64(ms[i].second);
  }
  return out;
}

std::vector<std::pair<int64_t, double>> parse_milestones(const std::string& key,
                                                         const std::string& v) {
  std::vector<std::pair<int64_t, double>> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    size_t colon = item.find(':');
    TACO_INPUT_CHECK(colon != std::string::npos, "setting ", key, ": milestone \"", item,
                     "\" is not step:lr");
    out.emplace_back(parse_i64(key, trim(item.substr(0, colon))),
                     parse_f64(key, trim(item.substr(colon + 1))));
  }
  return out;
}

struct Entry {
  std::string key;
  std::function<std::string(const RunSettings&)> get;
  std::function<void(RunSettings&, const std::string&)> set;
};

// Field accessor factories. Each takes a lambda mapping RunSettings& to a
// reference of the field.
template <class F>
Entry e_i32(std::string key, F field) {
  return {key, [field](const RunSettings& s) { return std::to_string(field(const_cast<RunSettings&>(s))); },
          [key, field](RunSettings& s, const std::string& v) { field(s) = parse_i32(key, v); }};
}

template <class F>
Entry e_i64(std::string key, F field) {
  return {key, [field](const RunSettings& s) { return std::to_string(field(const_cast<RunSettings&>(s))); },
          [key, field](RunSettings& s, const std::string& v) { field(s) = parse_i64(key, v); }};
}

template <class F>
Entry e_u64(std::string key, F field) {
  return {key, [field](const RunSettings& s) { return std::to_string(field(const_cast<RunSettings&>(s))); },
          [key, field](RunSettings& s, const std::string& v) { field(s) = parse_u64(key, v); }};
}

template <class F>
Entry e_f64(std::string key, F field) {
  return {key, [field](const RunSettings& s) { return format_f64(field(const_cast<RunSettings&>(s))); },
          [key, field](RunSettings& s, const std::string& v) { field(s) = parse_f64(key, v); }};
}

template <class F>
Entry e_bool(std::string key, F field) {
  return {key,
          [field](const RunSettings& s) {
            return field(const_cast<RunSettings&>(s)) ? std::string("true") : std::string("false");
          },
          [key, field](RunSettings& s, const std::string& v) { field(s) = parse_bool(key, v); }};
}

template <class F>
Entry e_str(std::string key, F field) {
  return {key, [field](const RunSettings& s) { return field(const_cast<RunSettings&>(s)); },
          [field](RunSettings& s, const std::string& v) { field(s) = v; }};
}

std::vector<Entry> build_registry() {
  std::vector<Entry> r;
  auto dsp = [](RunSettings& s) -> SpectralConfig& { return s.dsp; };
  (void)dsp;
  r.push_back(e_i32("dsp.sample_rate_hz", [](RunSettings& s) -> int& { return s.dsp.sample_rate_hz; }));
  r.push_back(e_f64("dsp.frame_length_ms", [](RunSettings& s) -> double& { return s.dsp.frame_length_ms; }));
  r.push_back(e_f64("dsp.frame_shift_ms", [](RunSettings& s) -> double& { return s.dsp.frame_shift_ms; }));
  r.push_back(e_i32("dsp.fft_size", [](RunSettings& s) -> int& { return s.dsp.fft_size; }));
  r.push_back(e_f64("dsp.preemphasis", [](RunSettings& s) -> double& { return s.dsp.preemphasis; }));
  r.push_back(e_i32("dsp.mel_bands", [](RunSettings& s) -> int& { return s.dsp.mel_bands; }));
  r.push_back(e_i32("dsp.griffin_lim_iters", [](RunSettings& s) -> int& { return s.dsp.griffin_lim_iters; }));
  r.push_back(e_f64("dsp.magnitude_power", [](RunSettings& s) -> double& { return s.dsp.magnitude_power; }));
  r.push_back(e_f64("dsp.fmin_hz", [](RunSettings& s) -> double& { return s.dsp.fmin_hz; }));
  r.push_back(e_f64("dsp.fmax_hz", [](RunSettings& s) -> double& { return s.dsp.fmax_hz; }));
  r.push_back(e_bool("dsp.griffin_lim_random_phase",
                     [](RunSettings& s) -> bool& { return s.dsp.griffin_lim_random_phase; }));

  r.push_back(e_str("model.variant", [](RunSettings& s) -> std::string& { return s.model.variant; }));
  r.push_back(e_i64("model.vocab_size", [](RunSettings& s) -> int64_t& { return s.model.vocab_size; }));
  r.push_back(e_i64("model.embed_dim", [](RunSettings& s) -> int64_t& { return s.model.embed_dim; }));
  r.push_back(e_i64("model.prenet_h1", [](RunSettings& s) -> int64_t& { return s.model.prenet_h1; }));
  r.push_back(e_i64("model.prenet_h2", [](RunSettings& s) -> int64_t& { return s.model.prenet_h2; }));
  r.push_back(e_f64("model.prenet_dropout", [](RunSettings& s) -> double& { return s.model.prenet_dropout; }));
  r.push_back(e_i32("model.enc_bank_k", [](RunSettings& s) -> int& { return s.model.enc_bank_k; }));
  r.push_back(e_i64("model.enc_bank_channels",
                    [](RunSettings& s) -> int64_t& { return s.model.enc_bank_channels; }));
  r.push_back(e_i64("model.enc_proj_hidden",
                    [](RunSettings& s) -> int64_t& { return s.model.enc_proj_hidden; }));
  r.push_back(e_i32("model.highway_layers", [](RunSettings& s) -> int& { return s.model.highway_layers; }));
  r.push_back(e_i64("model.highway_dim", [](RunSettings& s) -> int64_t& { return s.model.highway_dim; }));
  r.push_back(e_i64("model.enc_bigru_units",
                    [](RunSettings& s) -> int64_t& { return s.model.enc_bigru_units; }));
  r.push_back(e_i64("model.attention_hidden",
                    [](RunSettings& s) -> int64_t& { return s.model.attention_hidden; }));
  r.push_back(e_i64("model.attention_rnn_units",
                    [](RunSettings& s) -> int64_t& { return s.model.attention_rnn_units; }));
  r.push_back(e_i64("model.decoder_rnn_units",
                    [](RunSettings& s) -> int64_t& { return s.model.decoder_rnn_units; }));
  r.push_back(e_i64("model.mel_bands", [](RunSettings& s) -> int64_t& { return s.model.mel_bands; }));
  r.push_back(e_i64("model.linear_bins", [](RunSettings& s) -> int64_t& { return s.model.linear_bins; }));
  r.push_back(e_i32("model.reduction", [](RunSettings& s) -> int& { return s.model.reduction; }));
  r.push_back(e_i32("model.post_bank_k", [](RunSettings& s) -> int& { return s.model.post_bank_k; }));
  r.push_back(e_i64("model.post_bank_channels",
                    [](RunSettings& s) -> int64_t& { return s.model.post_bank_channels; }));
  r.push_back(e_i64("model.post_proj_hidden",
                    [](RunSettings& s) -> int64_t& { return s.model.post_proj_hidden; }));
  r.push_back(e_i64("model.post_bigru_units",
                    [](RunSettings& s) -> int64_t& { return s.model.post_bigru_units; }));
  r.push_back(e_f64("model.scheduled_sampling_rate",
                    [](RunSettings& s) -> double& { return s.model.scheduled_sampling_rate; }));

  r.push_back(e_i64("train.batch_size", [](RunSettings& s) -> int64_t& { return s.train.batch_size; }));
  r.push_back(e_f64("train.base_lr", [](RunSettings& s) -> double& { return s.train.base_lr; }));
  r.push_back({"train.lr_milestones",
               [](const RunSettings& s) { return format_milestones(s.train.lr_milestones); },
               [](RunSettings& s, const std::string& v) {
                 s.train.lr_milestones = parse_milestones("train.lr_milestones", v);
               }});
  r.push_back(e_f64("train.milestone_scale",
                    [](RunSettings& s) -> double& { return s.train.milestone_scale; }));
  r.push_back(e_f64("train.grad_clip_norm",
                    [](RunSettings& s) -> double& { return s.train.grad_clip_norm; }));
  r.push_back(e_i64("train.max_steps", [](RunSettings& s) -> int64_t& { return s.train.max_steps; }));
  r.push_back(e_u64("train.seed", [](RunSettings& s) -> uint64_t& { return s.train.seed; }));
  r.push_back(e_i64("train.checkpoint_every",
                    [](RunSettings& s) -> int64_t& { return s.train.checkpoint_every; }));
  r.push_back(e_i64("train.alignment_every",
                    [](RunSettings& s) -> int64_t& { return s.train.alignment_every; }));
  r.push_back(e_bool("train.wall_clock", [](RunSettings& s) -> bool& { return s.train.wall_clock; }));

  r.push_back(e_i64("synth.griffin_lim_iters",
                    [](RunSettings& s) -> int64_t& { return s.synth.griffin_lim_iters; }));
  r.push_back(e_f64("synth.magnitude_power",
                    [](RunSettings& s) -> double& { return s.synth.magnitude_power; }));
  r.push_back(e_i64("synth.steps_per_char",
                    [](RunSettings& s) -> int64_t& { return s.synth.steps_per_char; }));
  r.push_back(e_i64("synth.max_steps_cap",
                    [](RunSettings& s) -> int64_t& { return s.synth.max_steps_cap; }));
  r.push_back(e_f64("synth.stop_threshold",
                    [](RunSettings& s) -> double& { return s.synth.stop_threshold; }));
  r.push_back(e_i64("synth.stop_patience",
                    [](RunSettings& s) -> int64_t& { return s.synth.stop_patience; }));
  r.push_back(e_bool("synth.inference_prenet_dropout",
                     [](RunSettings& s) -> bool& { return s.synth.inference_prenet_dropout; }));
  r.push_back(e_f64("synth.peak_norm", [](RunSettings& s) -> double& { return s.synth.peak_norm; }));

  r.push_back(e_str("toyset.alphabet", [](RunSettings& s) -> std::string& { return s.toyset.alphabet; }));
  r.push_back(e_f64("toyset.tone_base_hz",
                    [](RunSettings& s) -> double& { return s.toyset.tone_base_hz; }));
  r.push_back(e_f64("toyset.tone_step_hz",
                    [](RunSettings& s) -> double& { return s.toyset.tone_step_hz; }));
  r.push_back(e_f64("toyset.char_duration_ms",
                    [](RunSettings& s) -> double& { return s.toyset.char_duration_ms; }));
  r.push_back(e_f64("toyset.crossfade_ms",
                    [](RunSettings& s) -> double& { return s.toyset.crossfade_ms; }));
  r.push_back(e_f64("toyset.tail_silence_ms",
                    [](RunSettings& s) -> double& { return s.toyset.tail_silence_ms; }));
  r.push_back(e_i32("toyset.utterance_count",
                    [](RunSettings& s) -> int& { return s.toyset.utterance_count; }));
  r.push_back(e_i32("toyset.min_chars", [](RunSettings& s) -> int& { return s.toyset.min_chars; }));
  r.push_back(e_i32("toyset.max_chars", [](RunSettings& s) -> int& { return s.toyset.max_chars; }));
  r.push_back(e_u64("toyset.seed", [](RunSettings& s) -> uint64_t& { return s.toyset.seed; }));
  return r;
}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> r = build_registry();
  return r;
}

const Entry* find_entry(const std::string& key) {
  for (const auto& e : registry())
    if (e.key == key) return &e;
  return nullptr;
}

}  // namespace

void RunSettings::validate() const {
  dsp.validate();
  model.validate();
  train.validate();
  synth.validate();
  toyset.validate(dsp.sample_rate_hz);
  TACO_INPUT_CHECK(model.mel_bands == dsp.mel_bands, "model.mel_bands (", model.mel_bands,
                   ") must match dsp.mel_bands (", dsp.mel_bands, ")");
  TACO_INPUT_CHECK(model.linear_bins == dsp.linear_bins(), "model.linear_bins (", model.linear_bins,
                   ") must match the dsp bin count (", dsp.linear_bins(), ")");
}

const std::vector<std::string>& settings_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& e : registry()) k.push_back(e.key);
    return k;
  }();
  return keys;
}

bool has_setting(const std::string& key) { return find_entry(key) != nullptr; }

void set_setting(RunSettings& s, const std::string& key, const std::string& value) {
  const Entry* e = find_entry(key);
  if (!e) throw UsageError("unknown setting \"" + key + "\"");
  e->set(s, trim(value));
}

std::string get_setting(const RunSettings& s, const std::string& key) {
  const Entry* e = find_entry(key);
  if (!e) throw UsageError("unknown setting \"" + key + "\"");
  return e->get(s);
}

void apply_kv_text(RunSettings& s, const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    TACO_INPUT_CHECK(eq != std::string::npos, origin, " line ", lineno,
                     ": expected key = value, got \"", line, "\"");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    TACO_INPUT_CHECK(!key.empty(), origin, " line ", lineno, ": empty key");
    try {
      set_setting(s, key, value);
    } catch (const UsageError& err) {
      throw UsageError(origin + " line " + std::to_string(lineno) + ": " + err.what());
    }
  }
}

void apply_config_file(RunSettings& s, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  TACO_INPUT_CHECK(in.good(), "cannot open config file ", path);
  std::stringstream buf;
  buf << in.rdbuf();
  apply_kv_text(s, buf.str(), path);
}

std::string echo_settings(const RunSettings& s, const std::string& prefix) {
  std::string out;
  for (const auto& e : registry()) {
    if (!prefix.empty() && e.key.rfind(prefix, 0) != 0) continue;
    out += e.key + " = " + e.get(s) + "\n";
  }
  return out;
}

}  // namespace tacoforge
