"""Bi-GRU classifier for windowed multichannel EEG on a small numpy autodiff engine."""
from .autodiff import Tape, Tensor
from .dataio import ClassLabel, EegRecording, SynthSpec, aggregate_sessions, load_manifest, synth_generate
from .dsp import FilterSpec, PipelineConfig, run_pipeline, windows_to_arrays
from .evaluation import ConfusionMatrix, confusion, evaluate_model, format_table, metrics
from .nn import ArchConfig, build_model, model_forward, predict_proba
from .train import TrainConfig, fit, kfold_cv, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
