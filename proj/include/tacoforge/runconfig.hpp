#pragma once

// One bundle for every tunable in the system, addressable by dotted keys
// (dsp.*, model.*, train.*, synth.*, toyset.*). Backs config files, --set
// overrides, the effective-config echo, and checkpoint config snapshots.

#include <string>
#include <vector>

#include "tacoforge/corpus.hpp"
#include "tacoforge/dsp.hpp"
#include "tacoforge/model.hpp"
#include "tacoforge/synthesizer.hpp"
#include "tacoforge/trainer.hpp"

namespace tacoforge {

struct RunSettings {
  SpectralConfig dsp;
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  ToysetSpec toyset;

  // Validates each section and the cross-section band agreements
  // (model.mel_bands == dsp.mel_bands, model.linear_bins == dsp fft bins).
  void validate() const;
};

// All known keys in canonical (echo) order.
const std::vector<std::string>& settings_keys();
bool has_setting(const std::string& key);

// Typed assignment from a string form; unknown key or unparsable value is a
// usage error naming both.
void set_setting(RunSettings& s, const std::string& key, const std::string& value);
// Canonical string form of the current value.
std::string get_setting(const RunSettings& s, const std::string& key);

// Applies "key = value" lines; '#' starts a comment, blank lines are skipped.
// origin names the source in error messages.
void apply_kv_text(RunSettings& s, const std::string& text, const std::string& origin);
void apply_config_file(RunSettings& s, const std::string& path);

// "key = value" lines in canonical order, limited to keys starting with
// prefix (empty prefix echoes everything).
std::string echo_settings(const RunSettings& s, const std::string& prefix = "");

}  // namespace tacoforge
