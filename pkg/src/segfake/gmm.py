"""Gaussian mixture models fitted by EM, plus the component-count pre-test."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

FORMAT_TAG = "segfake.gmm"
FORMAT_VERSION = 1
VARIANCE_FLOOR = 1e-6
MIN_WEIGHT = 1e-8
LOG_2PI = np.log(2 * np.pi)


class InsufficientDataError(ValueError):
    pass


class PretestError(RuntimeError):
    pass


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class GmmConfig:
    covariance_kind: str = "auto"  # "auto" -> full for d <= 3, diagonal otherwise
    seed: int = 0
    max_iter: int = 200
    tol: float = 1e-6
    restarts: int = 3

    def kind_for(self, d: int) -> str:
        if self.covariance_kind == "auto":
            return "full" if d <= 3 else "diagonal"
        if self.covariance_kind not in ("full", "diagonal"):
            raise ValueError(f"covariance_kind must be auto, full or diagonal, not {self.covariance_kind!r}")
        return self.covariance_kind


@dataclass
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray  # (K, d) diagonal or (K, d, d) full
    covariance_kind: str
    trained_on: dict = field(default_factory=dict)
    ll_history: list = field(default_factory=list, repr=False, compare=False)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dimension(self) -> int:
        return self.means.shape[1]

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "version": FORMAT_VERSION,
            "n_components": self.n_components,
            "dimension": self.dimension,
            "covariance_kind": self.covariance_kind,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "trained_on": self.trained_on,
        }

    def to_json(self) -> str:
        # json writes floats with repr(), the shortest exact round-trip form
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, doc: dict) -> "GmmModel":
        if doc.get("format") != FORMAT_TAG:
            raise ValueError(f"not a {FORMAT_TAG} document")
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        return cls(
            np.array(doc["weights"], dtype=np.float64),
            np.array(doc["means"], dtype=np.float64).reshape(doc["n_components"], doc["dimension"]),
            np.array(doc["covariances"], dtype=np.float64),
            doc["covariance_kind"],
            dict(doc.get("trained_on", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "GmmModel":
        return cls.from_dict(json.loads(text))


def _component_logpdf(X, means, covs, kind) -> np.ndarray:
    d = X.shape[1]
    diff = X[None, :, :] - means[:, None, :]  # (K, n, d)
    if kind == "diagonal":
        maha = np.einsum("knd,kd->kn", diff * diff, 1.0 / covs)
        logdet = np.sum(np.log(covs), axis=1)
    else:
        L = np.linalg.cholesky(covs)
        z = np.einsum("kde,kne->knd", np.linalg.inv(L), diff)
        maha = np.sum(z * z, axis=2)
        logdet = 2 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    return (-0.5 * (d * LOG_2PI + logdet[:, None] + maha)).T


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    m = np.max(a, axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=1, keepdims=True)))[:, 0]


def _joint_logpdf(X, model: GmmModel) -> np.ndarray:
    return _component_logpdf(X, model.means, model.covariances, model.covariance_kind) + np.log(model.weights)


def log_density_batch(model: GmmModel, X) -> np.ndarray:
    """``log sum_k w_k N(x; mu_k, Sigma_k)`` for each row of ``X``, via log-sum-exp.

    Computed entirely in the log domain, so finite inputs never give -inf.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.dimension:
        raise DimensionError(f"model is {model.dimension}-dimensional, data has {X.shape[1]} columns")
    return _logsumexp_rows(_joint_logpdf(X, model))


def log_density(model: GmmModel, x) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != model.dimension:
        raise DimensionError(f"model is {model.dimension}-dimensional, query has {x.size} values")
    return float(log_density_batch(model, x[None, :])[0])


def _floor_full(S: np.ndarray, scale: np.ndarray) -> np.ndarray:
    # Exact maximiser of the M-step under D^-1/2 S D^-1/2 >= floor * I,
    # so EM stays monotone with the floor in place.  S is (K, d, d).
    outer = np.outer(np.sqrt(scale), np.sqrt(scale))
    Z = S / outer
    Z = 0.5 * (Z + np.swapaxes(Z, 1, 2))
    vals, vecs = np.linalg.eigh(Z)
    vals = np.maximum(vals, VARIANCE_FLOOR)
    Z = np.einsum("kij,kj,klj->kil", vecs, vals, vecs)
    return 0.5 * (Z + np.swapaxes(Z, 1, 2)) * outer


def _m_step(X, resp, kind, scale):
    nk = resp.sum(axis=0)
    alive = nk / len(X) >= MIN_WEIGHT
    resp, nk = resp[:, alive], nk[alive]
    weights = nk / nk.sum()
    means = (resp.T @ X) / nk[:, None]
    if kind == "diagonal":
        diff = X[None, :, :] - means[:, None, :]
        covs = np.einsum("nk,knd->kd", resp, diff * diff) / nk[:, None]
        covs = np.maximum(covs, VARIANCE_FLOOR * scale)
    else:
        diff = X[None, :, :] - means[:, None, :]
        S = np.einsum("nk,knd,kne->kde", resp, diff, diff) / nk[:, None, None]
        covs = _floor_full(S, scale)
    return weights, means, covs


def _kmeanspp_assign(X, k, rng, n_lloyd: int = 10) -> np.ndarray:
    sd = X.std(axis=0)
    Z = X / np.where(sd > 0, sd, 1.0)
    n = len(Z)
    centers = [Z[rng.integers(n)]]
    d2 = np.sum((Z - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(Z[idx])
        d2 = np.minimum(d2, np.sum((Z - Z[idx]) ** 2, axis=1))
    C = np.array(centers)
    for _ in range(n_lloyd):
        labels = np.argmin(((Z[:, None, :] - C[None, :, :]) ** 2).sum(axis=2), axis=1)
        newC = np.array([Z[labels == j].mean(axis=0) if np.any(labels == j) else C[j] for j in range(k)])
        if np.allclose(newC, C):
            break
        C = newC
    return np.argmin(((Z[:, None, :] - C[None, :, :]) ** 2).sum(axis=2), axis=1)


def _run_em(X, k, kind, scale, config: GmmConfig, rng):
    labels = _kmeanspp_assign(X, k, rng)
    resp = np.zeros((len(X), k))
    resp[np.arange(len(X)), labels] = 1.0
    weights, means, covs = _m_step(X, resp, kind, scale)
    history = []
    it = 0
    while True:
        model = GmmModel(weights, means, covs, kind)
        logp = _joint_logpdf(X, model)
        lse = _logsumexp_rows(logp)
        ll = float(lse.mean())
        history.append(ll)
        if len(history) > 1 and ll - history[-2] < config.tol * abs(history[-2]):
            break
        if it >= config.max_iter:
            break
        resp = np.exp(logp - lse[:, None])
        weights, means, covs = _m_step(X, resp, kind, scale)
        it += 1
    model.ll_history = history
    return model


def fit_gmm(tokens, k: int, config: GmmConfig = GmmConfig(), family: str | None = None, strict: bool = False) -> GmmModel:
    """Fit a ``k``-component GMM by EM; best of ``config.restarts`` k-means++ starts.

    With fewer than ``5 * k`` tokens, ``k`` is reduced (with a warning) unless
    ``strict``; too few tokens for even one component raises
    :class:`InsufficientDataError`.  Variances are floored at ``1e-6`` times the
    per-dimension variance of the training data.
    """
    X = np.asarray(tokens, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if d < 1:
        raise DimensionError("tokens need at least one dimension")
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < 5 * k:
        if strict:
            raise InsufficientDataError(f"{n} tokens cannot support {k} components (need {5 * k})")
        reduced = n // 5
        if reduced < 1:
            raise InsufficientDataError(f"{n} tokens are too few for a mixture model (need >= 5)")
        warnings.warn(f"only {n} tokens: reducing components from {k} to {reduced}", stacklevel=2)
        k = reduced
    kind = config.kind_for(d)
    scale = X.var(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    rng = np.random.default_rng(config.seed)
    best = None
    for _ in range(max(1, config.restarts)):
        model = _run_em(X, k, kind, scale, config, rng)
        if best is None or model.ll_history[-1] > best.ll_history[-1]:
            best = model
    best.trained_on = {"n_tokens": int(n), "family": family, "requested_k": int(k)}
    return best


@dataclass
class PretestReport:
    grid: list[int]
    heldout_ll: dict[int, float]
    chosen_k: int
    excluded: dict[int, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "grid": list(self.grid),
            "heldout_ll": {str(k): v for k, v in self.heldout_ll.items()},
            "chosen_k": self.chosen_k,
            "excluded": {str(k): v for k, v in self.excluded.items()},
        }


def choose_k(heldout_ll: dict[int, float]) -> int:
    """Largest held-out log-likelihood; ties go to the smaller K."""
    best_k, best = None, -np.inf
    for k in sorted(heldout_ll):
        if heldout_ll[k] > best:
            best_k, best = k, heldout_ll[k]
    return best_k


def pretest_components(tokens, grid=(1, 2, 4, 8, 16), folds: int = 5, config: GmmConfig = GmmConfig()) -> PretestReport:
    """Pick the component count by ``folds``-fold held-out log-likelihood.

    A K whose fit fails (including too few training tokens for K) on any fold
    is excluded from the comparison.
    """
    X = np.asarray(tokens, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    grid = sorted(set(int(k) for k in grid))
    if not grid:
        raise ValueError("grid must not be empty")
    if len(X) < folds or folds < 2:
        raise ValueError(f"need n ({len(X)}) >= folds ({folds}) >= 2")
    rng = np.random.default_rng(config.seed)
    fold_of = rng.permutation(len(X)) % folds
    scores, excluded = {}, {}
    for k in grid:
        per_fold = []
        try:
            for f in range(folds):
                train, test = X[fold_of != f], X[fold_of == f]
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    model = fit_gmm(train, k, config, strict=True)
                per_fold.append(float(np.mean(log_density_batch(model, test))))
        except (InsufficientDataError, np.linalg.LinAlgError, ValueError) as exc:
            excluded[k] = str(exc)
            continue
        scores[k] = float(np.mean(per_fold))
    if not scores:
        raise PretestError(f"every K in {grid} failed: {excluded}")
    return PretestReport(grid, scores, choose_k(scores), excluded)
