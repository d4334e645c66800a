"""Segmental acoustic features, two-class GMM likelihood ratios and Cllr/EER evaluation."""

__version__ = "0.1.0"

from .audio_io import AudioBuffer, read_wav, resample, write_wav
from .features import ExtractionConfig, FeatureToken, TokenStore, extract_file, read_manifest
from .gmm import GmmConfig, GmmModel, fit_gmm, log_density, pretest_components
from .harness import ExperimentPlan, compare_conditions, rank_features, run_condition
from .scoring import TrialScoreSet, cllr, eer, evaluate
from .textgrid import parse_textgrid

__all__ = [
    "AudioBuffer", "read_wav", "write_wav", "resample",
    "parse_textgrid",
    "ExtractionConfig", "FeatureToken", "TokenStore", "extract_file", "read_manifest",
    "GmmConfig", "GmmModel", "fit_gmm", "log_density", "pretest_components",
    "TrialScoreSet", "cllr", "eer", "evaluate",
    "ExperimentPlan", "run_condition", "compare_conditions", "rank_features",
]
