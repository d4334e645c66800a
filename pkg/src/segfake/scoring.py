"""Token log-likelihood ratios, Cllr, EER and Cllr banding.

Scores are natural-log likelihood ratios throughout; the base-2 logarithm of
the Cllr definition is applied only inside :func:`cllr`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gmm import GmmModel, log_density_batch

LLR_CLAMP = 745.0


class ScoreError(ValueError):
    pass


@dataclass(frozen=True)
class TrialScoreSet:
    target_llrs: np.ndarray
    nontarget_llrs: np.ndarray

    def __post_init__(self):
        for name in ("target_llrs", "nontarget_llrs"):
            v = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if np.any(np.isnan(v)):
                raise ScoreError(f"{name} contains NaN")
            object.__setattr__(self, name, np.clip(v, -LLR_CLAMP, LLR_CLAMP))

    def swapped(self) -> "TrialScoreSet":
        """Roles exchanged and scores negated (the reversed hypothesis pair)."""
        return TrialScoreSet(-self.nontarget_llrs, -self.target_llrs)


@dataclass(frozen=True)
class EvalResult:
    cllr: float
    eer: float  # fraction
    band: str

    @property
    def eer_percent(self) -> float:
        return 100.0 * self.eer


def score_tokens(numerator: GmmModel, denominator: GmmModel, tokens) -> np.ndarray:
    """Per-token log LR under flat prior odds: log p(x|num) - log p(x|den)."""
    X = np.asarray(tokens, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None] if numerator.dimension == 1 else X[None, :]
    if numerator is denominator:
        log_density_batch(numerator, X)  # still enforce the dimension contract
        return np.zeros(len(X))
    return log_density_batch(numerator, X) - log_density_batch(denominator, X)


def _check(scores: TrialScoreSet):
    if len(scores.target_llrs) == 0 or len(scores.nontarget_llrs) == 0:
        raise ScoreError("need at least one target and one non-target score")


def cllr(scores: TrialScoreSet) -> float:
    """Log-likelihood-ratio cost, in bits.

    Mean over targets of log2(1 + e^-l) and over non-targets of
    log2(1 + e^l), averaged with equal weight.
    """
    _check(scores)
    tar = np.mean(np.logaddexp(0.0, -scores.target_llrs))
    non = np.mean(np.logaddexp(0.0, scores.nontarget_llrs))
    return float((tar + non) / (2.0 * np.log(2.0)))


def operating_points(scores: TrialScoreSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thresholds with miss and false-alarm rates at each.

    Thresholds are the sorted distinct pooled scores followed by +inf; a
    target misses when its score is below the threshold and a non-target is a
    false alarm when its score is at or above it.
    """
    _check(scores)
    tar = np.sort(scores.target_llrs)
    non = np.sort(scores.nontarget_llrs)
    thr = np.append(np.unique(np.concatenate([tar, non])), np.inf)
    miss = np.searchsorted(tar, thr, side="left") / len(tar)
    fa = 1.0 - np.searchsorted(non, thr, side="left") / len(non)
    return thr, miss, fa


def eer(scores: TrialScoreSet) -> float:
    """Equal error rate, linearly interpolated at the miss/false-alarm crossing."""
    _, miss, fa = operating_points(scores)
    diff = miss - fa
    i = int(np.argmax(diff >= 0))  # diff ends at +1, so a crossing exists
    if diff[i] == 0 or i == 0:
        return float(miss[i])
    d0, d1 = diff[i - 1], diff[i]
    alpha = -d0 / (d1 - d0)
    return float(miss[i - 1] + alpha * (miss[i] - miss[i - 1]))


def band(cllr_value: float) -> str:
    """good below 0.4, weak above 0.6, moderate in between (bounds inclusive)."""
    if cllr_value < 0:
        raise ValueError("Cllr is non-negative")
    if cllr_value < 0.4:
        return "good"
    if cllr_value <= 0.6:
        return "moderate"
    return "weak"


def evaluate(scores: TrialScoreSet) -> EvalResult:
    c = cllr(scores)
    return EvalResult(c, eer(scores), band(c))
