"""Repeated train/test evaluation of one feature for one speaker.

Two conditions are supported.  ``real_vs_fake`` puts real speech (``real`` or
``s1`` tokens: the real model is the S1 model) in the numerator and ``fake``
in the denominator; ``s1_vs_s2`` contrasts the two recording sessions.
"""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .features import TokenStore
from .gmm import GmmConfig, PretestReport, fit_gmm, pretest_components
from .scoring import EvalResult, TrialScoreSet, band, evaluate, score_tokens

log = logging.getLogger(__name__)

CONDITION_CLASSES = {
    "real_vs_fake": (frozenset({"real", "s1"}), frozenset({"fake"})),
    "s1_vs_s2": (frozenset({"s1"}), frozenset({"s2"})),
}
MIN_TOKENS_PER_CLASS = 20
GLOBAL_FAMILIES = ("LTFD", "LTF0", "MFCC")
SCORE_COLUMNS = ["speaker", "family", "phoneme", "condition_pair", "repetition", "label", "llr"]


class LeakageError(AssertionError):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    speaker: str
    family: str
    condition_pair: str
    phoneme: str | None = None
    repetitions: int = 30
    split: float = 0.7
    master_seed: int = 0
    gmm: GmmConfig = GmmConfig()
    pretest_grid: tuple = (1, 2, 4, 8, 16)
    pretest_folds: int = 5

    def __post_init__(self):
        if not 0 < self.split < 1:
            raise ValueError(f"split must lie in (0, 1), got {self.split}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.condition_pair not in CONDITION_CLASSES:
            raise ValueError(f"condition_pair must be one of {sorted(CONDITION_CLASSES)}")
        if (self.phoneme is not None) != (self.family == "MF"):
            raise ValueError("phoneme is required for MF plans and only for them")

    @property
    def key(self) -> tuple:
        return (self.speaker, self.condition_pair, self.family, self.phoneme or "")

    @property
    def label(self) -> str:
        return f"MF [{self.phoneme}]" if self.family == "MF" else self.family

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pretest_grid"] = list(self.pretest_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        d = dict(d)
        if isinstance(d.get("gmm"), dict):
            d["gmm"] = GmmConfig(**d["gmm"])
        if "pretest_grid" in d:
            d["pretest_grid"] = tuple(d["pretest_grid"])
        return cls(**d)


@dataclass
class AggregateResult:
    plan: ExperimentPlan
    cllr_mean: float
    cllr_sd: float
    eer_mean_percent: float
    band: str
    per_repetition: list[EvalResult]
    pretest: PretestReport
    n_tokens: dict = field(default_factory=dict)
    scores: list[TrialScoreSet] = field(default_factory=list, repr=False)

    def score_rows(self):
        """Rows for the score dump: one per scored test token and repetition."""
        p = self.plan
        for r, sc in enumerate(self.scores):
            for label, vals in (("target", sc.target_llrs), ("nontarget", sc.nontarget_llrs)):
                for v in vals:
                    yield [p.speaker, p.family, p.phoneme or "", p.condition_pair, r, label, repr(float(v))]

    def to_dict(self) -> dict:
        return {
            "plan": self.plan.to_dict(),
            "feature": self.plan.label,
            "cllr_mean": self.cllr_mean,
            "cllr_sd": self.cllr_sd,
            "eer_mean_percent": self.eer_mean_percent,
            "band": self.band,
            "n_tokens": self.n_tokens,
            "pretest": self.pretest.to_dict(),
            "per_repetition": [
                {"repetition": r, "cllr": e.cllr, "eer": e.eer, "band": e.band} for r, e in enumerate(self.per_repetition)
            ],
        }


@dataclass
class InsufficientData:
    """Structured record for a plan that could not run."""

    plan: ExperimentPlan
    reason: str
    n_tokens: dict

    def to_dict(self) -> dict:
        return {"plan": self.plan.to_dict(), "feature": self.plan.label, "reason": self.reason, "n_tokens": self.n_tokens}


def repetition_seed(master_seed: int, repetition: int) -> np.random.SeedSequence:
    # Derived per repetition, so scheduling order cannot change any draw.
    return np.random.SeedSequence([int(master_seed), int(repetition)])


def split_indices(n: int, split: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_train = min(max(int(round(split * n)), 1), n - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def class_tokens(plan: ExperimentPlan, store: TokenStore):
    a_set, b_set = CONDITION_CLASSES[plan.condition_pair]
    sel = dict(speaker=plan.speaker, family=plan.family, phoneme=plan.phoneme)
    ta = store.select(condition=a_set, **sel)
    tb = store.select(condition=b_set, **sel)
    return ta, tb


def _as_matrix(tokens) -> np.ndarray:
    return np.vstack([t.vector for t in tokens]) if tokens else np.zeros((0, 1))


def _one_repetition(args):
    plan, r, A, B, cond_a, cond_b, k = args
    a_set, b_set = CONDITION_CLASSES[plan.condition_pair]
    ss = repetition_seed(plan.master_seed, r)
    split_ss, gmm_ss = ss.spawn(2)
    rng = np.random.default_rng(split_ss)
    a_tr, a_te = split_indices(len(A), plan.split, rng)
    b_tr, b_te = split_indices(len(B), plan.split, rng)

    if np.intersect1d(a_tr, a_te).size or np.intersect1d(b_tr, b_te).size:
        raise LeakageError(f"{plan.key} rep {r}: train and test overlap")
    if len(a_tr) + len(a_te) != len(A) or len(b_tr) + len(b_te) != len(B):
        raise LeakageError(f"{plan.key} rep {r}: split is not exhaustive")
    if not set(cond_a[a_tr]) <= a_set or not set(cond_b[b_tr]) <= b_set:
        raise LeakageError(f"{plan.key} rep {r}: a training pool holds tokens of the other class")

    seed_a, seed_b = (int(s.generate_state(1)[0]) for s in gmm_ss.spawn(2))
    cfg = plan.gmm
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        num = fit_gmm(A[a_tr], k, GmmConfig(cfg.covariance_kind, seed_a, cfg.max_iter, cfg.tol, cfg.restarts), plan.family)
        den = fit_gmm(B[b_tr], k, GmmConfig(cfg.covariance_kind, seed_b, cfg.max_iter, cfg.tol, cfg.restarts), plan.family)
    scores = TrialScoreSet(score_tokens(num, den, A[a_te]), score_tokens(num, den, B[b_te]))
    return r, evaluate(scores), scores


def run_condition(plan: ExperimentPlan, store: TokenStore, workers: int = 1):
    """Run ``plan.repetitions`` seeded resplits and aggregate Cllr and EER.

    Returns :class:`AggregateResult`, or :class:`InsufficientData` when either
    class has fewer than 20 tokens.  The component count is chosen once by a
    pre-test on the whole numerator-class pool and reused for every fit.
    """
    ta, tb = class_tokens(plan, store)
    counts = {"A": len(ta), "B": len(tb)}
    if len(ta) < MIN_TOKENS_PER_CLASS or len(tb) < MIN_TOKENS_PER_CLASS:
        return InsufficientData(plan, f"need >= {MIN_TOKENS_PER_CLASS} tokens per class, have {counts}", counts)

    A, B = _as_matrix(ta), _as_matrix(tb)
    cond_a = np.array([t.condition for t in ta])
    cond_b = np.array([t.condition for t in tb])
    pre_cfg = GmmConfig(plan.gmm.covariance_kind, plan.master_seed, plan.gmm.max_iter, plan.gmm.tol, plan.gmm.restarts)
    pretest = pretest_components(A, plan.pretest_grid, min(plan.pretest_folds, len(A)), pre_cfg)

    jobs = [(plan, r, A, B, cond_a, cond_b, pretest.chosen_k) for r in range(plan.repetitions)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            done = list(pool.map(_one_repetition, jobs))
    else:
        done = [_one_repetition(j) for j in jobs]
    done.sort(key=lambda p: p[0])
    per_rep = [e for _, e, _ in done]

    cllrs = np.array([e.cllr for e in per_rep])
    mean = float(np.mean(cllrs))
    sd = float(np.std(cllrs, ddof=1)) if len(cllrs) > 1 else float("nan")
    eer_pct = float(np.mean([e.eer for e in per_rep]) * 100.0)
    return AggregateResult(plan, mean, sd, eer_pct, band(mean), per_rep, pretest, counts, [s for _, _, s in done])


@dataclass(frozen=True)
class ConditionComparison:
    speaker: str
    feature: str
    rvf_cllr: float
    s1s2_cllr: float
    ratio: float
    rvf_lower: bool

    def to_dict(self) -> dict:
        return asdict(self)


def compare_conditions(rvf: AggregateResult, s1s2: AggregateResult) -> ConditionComparison:
    """Real-vs-fake against S1-vs-S2 Cllr for the same speaker and feature."""
    if (rvf.plan.speaker, rvf.plan.family, rvf.plan.phoneme) != (s1s2.plan.speaker, s1s2.plan.family, s1s2.plan.phoneme):
        raise ValueError("results compare different speakers or features")
    return _compare(rvf.plan.speaker, rvf.plan.label, rvf.cllr_mean, s1s2.cllr_mean)


def _compare(speaker, feature, a, b) -> ConditionComparison:
    ratio = a / b if b != 0 else float("inf")
    return ConditionComparison(speaker, feature, a, b, ratio, a < b)


def rank_features(results: list[AggregateResult], top_mf: int = 2) -> list[AggregateResult]:
    """Report rows: the ``top_mf`` lowest-Cllr MF phonemes, then LTFD, LTF0, MFCC."""
    if not results:
        raise ValueError("no results to rank")
    keys = {(r.plan.speaker, r.plan.condition_pair) for r in results}
    if len(keys) > 1:
        raise ValueError(f"results span several speaker/condition pairs: {sorted(keys)}")
    mf = sorted((r for r in results if r.plan.family == "MF"), key=lambda r: (r.cllr_mean, r.plan.phoneme))
    rows = mf[:top_mf]
    for fam in GLOBAL_FAMILIES:
        rows += [r for r in results if r.plan.family == fam]
    return rows


def default_plans(store: TokenStore, families=("MF",) + GLOBAL_FAMILIES, **plan_kwargs) -> list[ExperimentPlan]:
    """Every speaker x condition pair x feature (MF split by phoneme) present in ``store``."""
    plans = []
    present = {(t.speaker, t.family, t.phoneme) for t in store.tokens}
    for spk in store.speakers():
        for pair in CONDITION_CLASSES:
            for fam in families:
                if fam == "MF":
                    for ph in store.phonemes(spk):
                        plans.append(ExperimentPlan(spk, "MF", pair, ph, **plan_kwargs))
                elif (spk, fam, None) in present:
                    plans.append(ExperimentPlan(spk, fam, pair, None, **plan_kwargs))
    return plans


def load_plans(path) -> list[ExperimentPlan]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, list):
        raise ValueError(f"{path}: plan file must hold a JSON list")
    return [ExperimentPlan.from_dict(d) for d in doc]
