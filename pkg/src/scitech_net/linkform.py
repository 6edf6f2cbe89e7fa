"""Dyadic logit for link formation and the predicted adjacency used by the corrected estimator."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit, log_expit

from .errors import DesignError, DomainError, SeparationError, StateError
from .netcore import CommunityPartition, LayeredNetwork

SCORE_TOL = 1e-8
MAX_NEWTON = 100
SATURATION = 1e-10


@dataclass(frozen=True)
class DyadDataset:
    """One row per unordered within-community pair ``i < j`` (global node indices)."""

    community: np.ndarray
    i: np.ndarray
    j: np.ndarray
    label: np.ndarray
    features: np.ndarray  # (n_dyads, k), no intercept column

    def __post_init__(self):
        if np.any(self.i >= self.j):
            raise DomainError("dyads must satisfy i < j")
        n = self.label.size
        if not (self.community.size == self.i.size == self.j.size == n == self.features.shape[0]):
            raise DomainError("dyad columns have inconsistent lengths")
        keys = self.i.astype(np.int64) * (int(self.j.max(initial=0)) + 1) + self.j
        if np.unique(keys).size != n:
            raise DomainError("duplicate dyads")

    def __len__(self):
        return int(self.label.size)

    def design(self) -> np.ndarray:
        return np.column_stack([np.ones(len(self)), self.features])

    def to_csv(self, path) -> None:
        k = self.features.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["community", "i", "j", "label"] + [f"f{m + 1}" for m in range(k)])
            for r in range(len(self)):
                w.writerow([int(self.community[r]), int(self.i[r]), int(self.j[r]), int(self.label[r])]
                           + [repr(float(v)) for v in self.features[r]])

    @classmethod
    def from_csv(cls, path) -> "DyadDataset":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[:4] != ["community", "i", "j", "label"]:
            raise DomainError(f"unexpected dyad header {header}")
        arr = [[float(v) for v in r] for r in body]
        a = np.array(arr, dtype=float).reshape(len(body), len(header))
        return cls(a[:, 0].astype(int), a[:, 1].astype(int), a[:, 2].astype(int),
                   a[:, 3].astype(int), a[:, 4:])


def build_dyads(net: LayeredNetwork, layer: str, features: Sequence[np.ndarray]) -> DyadDataset:
    """All within-community pairs of ``layer`` with labels from its binary adjacency.

    ``features`` is a list of n x n dyadic feature matrices (e.g. similarity).
    """
    if net.kind != "binary":
        raise DomainError("dyads need an observed binary network")
    if layer == "T":
        g, part = net.g_T, net.partition_T
    elif layer == "S":
        g, part = net.g_S, net.partition_S
    else:
        raise DomainError(f"layer must be 'T' or 'S', got {layer!r}")
    feats = [np.asarray(f, dtype=float) for f in features]
    for f in feats:
        if f.shape != g.shape:
            raise DomainError(f"dyadic feature of shape {f.shape} does not match adjacency {g.shape}")
    comm, ii, jj = [], [], []
    for c, s in enumerate(part.slices()):
        a, b = np.triu_indices(s.stop - s.start, k=1)
        ii.append(a + s.start)
        jj.append(b + s.start)
        comm.append(np.full(a.size, c))
    ii, jj, comm = np.concatenate(ii), np.concatenate(jj), np.concatenate(comm)
    x = np.column_stack([f[ii, jj] for f in feats]) if feats else np.empty((ii.size, 0))
    return DyadDataset(comm, ii, jj, g[ii, jj].astype(int), x)


@dataclass(frozen=True)
class LogitFit:
    coefficients: np.ndarray  # intercept first
    vcov: np.ndarray
    loglik: float
    loglik_null: float
    pseudo_r2: float
    aic: float
    converged: bool
    iters: int
    score_norm: float

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.vcov))

    def to_json(self) -> str:
        d = asdict(self)
        d["coefficients"] = self.coefficients.tolist()
        d["vcov"] = self.vcov.tolist()
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LogitFit":
        d = json.loads(text)
        d["coefficients"] = np.array(d["coefficients"], dtype=float)
        d["vcov"] = np.array(d["vcov"], dtype=float)
        return cls(**d)

    def with_coefficients(self, coefs) -> "LogitFit":
        """Same fit with replaced coefficients (for sensitivity checks)."""
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["coefficients"] = np.asarray(coefs, dtype=float)
        return LogitFit(**d)


def _loglik(x, y, beta):
    eta = x @ beta
    return float(np.sum(y * log_expit(eta) + (1 - y) * log_expit(-eta)))


def fit_logit(d: DyadDataset, *, tol: float = SCORE_TOL, max_iter: int = MAX_NEWTON) -> LogitFit:
    """Maximum-likelihood logit by Newton steps, halving a step while the log-likelihood falls."""
    x = d.design()
    y = d.label.astype(float)
    n, k = x.shape
    npos = int(y.sum())
    if npos == 0 or npos == n:
        raise DomainError("need at least one positive and one negative label")
    if np.linalg.matrix_rank(x) < k:
        raise DesignError("dyad design matrix is rank deficient")

    pbar = npos / n
    beta = np.zeros(k)
    beta[0] = np.log(pbar / (1 - pbar))
    ll = _loglik(x, y, beta)
    iters = 0
    while True:
        p = expit(x @ beta)
        score = x.T @ (y - p)
        if np.max(np.abs(score)) <= tol or iters >= max_iter:
            break
        info = (x * (p * (1 - p))[:, None]).T @ x
        if np.linalg.cond(info) > 1e14:
            raise SeparationError(f"information matrix is near singular after {iters} iterations "
                                  "(complete or quasi-separation)")
        step = np.linalg.solve(info, score)
        t = 1.0
        for _ in range(60):
            cand = beta + t * step
            cll = _loglik(x, y, cand)
            if cll >= ll - 1e-13 * abs(ll):  # ties at rounding level count as ascent
                break
            t *= 0.5
        else:
            break  # no ascent direction left at machine precision
        beta, ll = cand, cll
        iters += 1
        if np.max(np.abs(beta)) > 1e3:
            raise SeparationError(f"coefficients diverge ({np.max(np.abs(beta)):.3g}) - separated data")
    converged = bool(np.max(np.abs(score)) <= tol)

    p = expit(x @ beta)
    if np.any(np.minimum(p, 1 - p) < SATURATION):
        raise SeparationError(f"fitted probabilities saturate at 0 or 1 after {iters} iterations "
                              "(complete or quasi-separation)")
    info = (x * (p * (1 - p))[:, None]).T @ x
    vcov = np.linalg.inv(info)
    ll_null = float(npos * np.log(pbar) + (n - npos) * np.log(1 - pbar))
    return LogitFit(
        coefficients=beta, vcov=vcov, loglik=ll, loglik_null=ll_null,
        pseudo_r2=1.0 - ll / ll_null, aic=2 * k - 2 * ll,
        converged=converged, iters=iters, score_norm=float(np.max(np.abs(score))),
    )


def subset(d: DyadDataset, community: int) -> DyadDataset:
    keep = d.community == community
    return DyadDataset(d.community[keep], d.i[keep], d.j[keep], d.label[keep], d.features[keep])


def fit_by_community(d: DyadDataset) -> list[LogitFit]:
    """One logit per community (the pooled fit is the default elsewhere)."""
    return [fit_logit(subset(d, int(c))) for c in np.unique(d.community)]


def predict_adjacency(fit: LogitFit | Sequence[LogitFit], features: Sequence[np.ndarray],
                      partition: CommunityPartition) -> np.ndarray:
    """Predicted link probabilities within communities; zero diagonal and zero across communities.

    ``fit`` is one pooled fit or a list with one fit per community.
    """
    fits = [fit] * partition.n_communities if isinstance(fit, LogitFit) else list(fit)
    if len(fits) != partition.n_communities:
        raise DomainError(f"{len(fits)} fits for {partition.n_communities} communities")
    feats = [np.asarray(f, dtype=float) for f in features]
    n = partition.total
    eta = np.zeros((n, n))
    for f_c, s in zip(fits, partition.slices()):
        if not f_c.converged:
            raise StateError("cannot predict from an unconverged logit fit")
        if len(feats) + 1 != f_c.coefficients.size:
            raise DomainError(f"fit has {f_c.coefficients.size - 1} features, got {len(feats)}")
        block = np.full((s.stop - s.start, s.stop - s.start), f_c.coefficients[0])
        for b, f in zip(f_c.coefficients[1:], feats):
            block = block + b * f[s, s]
        eta[s, s] = block
    g = expit(eta)
    g[~partition.mask()] = 0.0
    np.fill_diagonal(g, 0.0)
    return 0.5 * (g + g.T)


def normalize_predicted(g_hat) -> np.ndarray:
    """Divide by the larger of the maximum row sum and maximum column sum."""
    g = np.asarray(g_hat, dtype=float)
    if np.any(g < 0):
        raise DomainError("predicted adjacency must be nonnegative")
    d = max(g.sum(axis=1).max(initial=0.0), g.sum(axis=0).max(initial=0.0))
    if d == 0:
        raise DomainError("cannot normalize an all-zero matrix")
    return g / d


def fit_layer(net: LayeredNetwork, layer: str, features: Sequence[np.ndarray]) -> LogitFit:
    return fit_logit(build_dyads(net, layer, features))


def write_fit(fit: LogitFit, path) -> None:
    Path(path).write_text(fit.to_json(), encoding="utf-8")
