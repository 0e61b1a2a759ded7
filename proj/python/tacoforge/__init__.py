"""Text-to-spectrogram synthesis: attention seq2seq training, spectral
feature extraction, and iterative phase reconstruction, all backed by the
C++ core."""

try:
    from . import _tacoforge as _core
except ImportError:  # development layout: extension sits beside the package
    import _tacoforge as _core

Model = _core.Model
UsageError = _core.UsageError
VerifyError = _core.VerifyError
default_settings = _core.default_settings
encode_text = _core.encode_text
features = _core.features
griffin_lim = _core.griffin_lim
mel_spectrogram = _core.mel_spectrogram
normalize_text = _core.normalize_text
read_wav = _core.read_wav
settings_keys = _core.settings_keys
spectrogram = _core.spectrogram
train_toyset = _core.train_toyset
write_wav = _core.write_wav

__all__ = [
    "Model",
    "UsageError",
    "VerifyError",
    "default_settings",
    "encode_text",
    "features",
    "griffin_lim",
    "mel_spectrogram",
    "normalize_text",
    "read_wav",
    "settings_keys",
    "spectrogram",
    "train_toyset",
    "write_wav",
]

__version__ = "0.1.0"
