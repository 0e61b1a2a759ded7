#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "tacoforge/corpus.hpp"
#include "tacoforge/dsp.hpp"
#include "tacoforge/runconfig.hpp"
#include "tacoforge/synthesizer.hpp"
#include "tacoforge/text.hpp"
#include "tacoforge/trainer.hpp"
#include "tacoforge/wav.hpp"

namespace py = pybind11;
using namespace tacoforge;

namespace {

py::array_t<double> mat_to_array(const MatD& m) {
  py::array_t<double> out({m.rows, m.cols});
  std::memcpy(out.mutable_data(), m.v.data(), m.v.size() * sizeof(double));
  return out;
}

py::array_t<float> matf_to_array(const MatF& m) {
  py::array_t<float> out({m.rows, m.cols});
  std::memcpy(out.mutable_data(), m.v.data(), m.v.size() * sizeof(float));
  return out;
}

MatD array_to_mat(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  TACO_INPUT_CHECK(a.ndim() == 2, "expected a 2-d array, got ", a.ndim(), " dimensions");
  MatD m(a.shape(0), a.shape(1));
  std::memcpy(m.v.data(), a.data(), m.v.size() * sizeof(double));
  return m;
}

std::vector<double> array_to_vec(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  TACO_INPUT_CHECK(a.ndim() == 1, "expected a 1-d array, got ", a.ndim(), " dimensions");
  return std::vector<double>(a.data(), a.data() + a.shape(0));
}

py::array_t<double> vec_to_array(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(double));
  return out;
}

RunSettings settings_from_dict(const py::dict& overrides) {
  RunSettings s;
  for (const auto& item : overrides) {
    set_setting(s, py::str(item.first).cast<std::string>(),
                py::str(item.second).cast<std::string>());
  }
  return s;
}

// A loaded checkpoint plus everything needed to run it.
class Model {
 public:
  explicit Model(const std::string& checkpoint_path)
      : loaded_(load_model_checkpoint(checkpoint_path)) {}

  int64_t step() const { return loaded_.step; }
  std::string variant() const { return loaded_.model->config().variant; }
  int reduction() const { return loaded_.model->config().reduction; }
  int sample_rate_hz() const { return loaded_.dsp.sample_rate_hz; }

  py::dict synthesize(const std::string& text, const py::dict& overrides, uint64_t seed) {
    RunSettings s = settings_from_dict(overrides);
    Rng rng(seed);
    SynthResult res = tacoforge::synthesize(text, *loaded_.model, loaded_.dsp, s.synth,
                                            loaded_.charset, rng);
    py::dict out;
    out["waveform"] = vec_to_array(res.waveform.samples);
    out["sample_rate_hz"] = res.waveform.sample_rate_hz;
    out["mel"] = matf_to_array(res.mel);
    out["linear"] = matf_to_array(res.linear);
    out["alignment"] = mat_to_array(res.alignment);
    out["stop_reason"] = res.stop_reason;
    out["alignment_monotonicity"] = alignment_monotonicity(res.alignment);
    return out;
  }

 private:
  LoadedModel loaded_;
};

// Generates the synthetic tone corpus and fits a model to it; returns the
// final checkpoint path. Heavy lifting for tests and notebooks, not a
// replacement for the cli.
std::string train_toyset(const py::dict& overrides, const std::string& run_dir) {
  RunSettings s = settings_from_dict(overrides);
  s.validate();
  const Charset cs = Charset::standard();
  Manifest manifest = generate_toyset(s.toyset, s.dsp.sample_rate_hz, run_dir + "/toyset", cs);
  auto records = featurize_all(manifest, s.dsp, cs, run_dir + "/cache");
  TacotronT<float> model(s.model, s.train.seed);
  Trainer trainer(model, s.train, s.dsp, cs, run_dir);
  trainer.train(records);
  return run_dir + "/model.ckpt";
}

SpectralConfig dsp_from_dict(const py::dict& overrides) {
  RunSettings s = settings_from_dict(overrides);
  s.dsp.validate();
  return s.dsp;
}

}  // namespace

PYBIND11_MODULE(_tacoforge, m) {
  m.doc() = "Sequence-to-sequence text-to-spectrogram synthesis core";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<VerifyError>(m, "VerifyError", PyExc_RuntimeError);

  m.def("settings_keys", &settings_keys, "All recognized dotted configuration keys");
  m.def(
      "default_settings",
      []() {
        RunSettings s;
        py::dict out;
        for (const auto& key : settings_keys()) out[py::str(key)] = get_setting(s, key);
        return out;
      },
      "Default value for every configuration key, as strings");

  m.def(
      "normalize_text",
      [](const std::string& text) { return normalize_text(text, Charset::standard()); },
      py::arg("text"), "Lowercase, drop unknown symbols, collapse whitespace");
  m.def(
      "encode_text",
      [](const std::string& text) {
        const Charset cs = Charset::standard();
        return encode_text(normalize_text(text, cs), cs).ids;
      },
      py::arg("text"), "Normalize then map characters to integer ids");

  m.def(
      "read_wav",
      [](const std::string& path) {
        Waveform w = read_wav(path);
        return py::make_tuple(vec_to_array(w.samples), w.sample_rate_hz);
      },
      py::arg("path"), "Read a 16-bit PCM wav file; returns (samples, sample_rate_hz)");
  m.def(
      "write_wav",
      [](const std::string& path,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& samples,
         int sample_rate_hz) {
        write_wav(path, Waveform{array_to_vec(samples), sample_rate_hz});
      },
      py::arg("path"), py::arg("samples"), py::arg("sample_rate_hz"));

  m.def(
      "spectrogram",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& samples,
         const py::dict& overrides) {
        const SpectralConfig cfg = dsp_from_dict(overrides);
        return mat_to_array(magnitude(stft(array_to_vec(samples), cfg)));
      },
      py::arg("samples"), py::arg("settings") = py::dict(),
      "Linear magnitude spectrogram, frames by fft bins");
  m.def(
      "mel_spectrogram",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& samples,
         const py::dict& overrides) {
        const SpectralConfig cfg = dsp_from_dict(overrides);
        const MatD mag = magnitude(stft(array_to_vec(samples), cfg));
        return mat_to_array(linear_to_mel(mag, build_mel_filterbank(cfg)));
      },
      py::arg("samples"), py::arg("settings") = py::dict(),
      "Mel-filterbank magnitude spectrogram, frames by mel bands");
  m.def(
      "features",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& samples,
         const py::dict& overrides) {
        const SpectralConfig cfg = dsp_from_dict(overrides);
        const MatD mag = magnitude(stft(pre_emphasis(array_to_vec(samples), cfg.preemphasis), cfg));
        py::dict out;
        out["mel"] = mat_to_array(log_compress(linear_to_mel(mag, build_mel_filterbank(cfg))));
        out["linear"] = mat_to_array(log_compress(mag));
        return out;
      },
      py::arg("samples"), py::arg("settings") = py::dict(),
      "Training features: pre-emphasized, log-compressed mel and linear "
      "spectrograms in [0, 1]");
  m.def(
      "griffin_lim",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& mag,
         const py::dict& overrides, int iters, uint64_t seed) {
        const SpectralConfig cfg = dsp_from_dict(overrides);
        if (iters < 0) iters = cfg.griffin_lim_iters;
        Rng rng(seed);
        std::vector<double> trace;
        std::vector<double> y = griffin_lim(array_to_mat(mag), cfg, iters, rng, &trace);
        return py::make_tuple(vec_to_array(y), vec_to_array(trace));
      },
      py::arg("magnitude"), py::arg("settings") = py::dict(), py::arg("iters") = -1,
      py::arg("seed") = 0,
      "Reconstruct a waveform from a linear magnitude spectrogram; returns "
      "(samples, per-iteration spectral error)");

  m.def("train_toyset", &train_toyset, py::arg("settings"), py::arg("run_dir"),
        "Generate the synthetic tone corpus, fit a model, return the "
        "checkpoint path");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("checkpoint_path"))
      .def_property_readonly("step", &Model::step)
      .def_property_readonly("variant", &Model::variant)
      .def_property_readonly("reduction", &Model::reduction)
      .def_property_readonly("sample_rate_hz", &Model::sample_rate_hz)
      .def("synthesize", &Model::synthesize, py::arg("text"),
           py::arg("settings") = py::dict(), py::arg("seed") = 0,
           "Run the model on text; returns waveform, spectrograms, "
           "alignment, and the stop reason");
}
