"""iEEG seizure prediction: quantitative analysis, spectrogram preprocessing,
a multi-scale CNN predictor and sensitivity/AUC evaluation."""

__version__ = "0.1.0"
