"""Within-transformed 2SLS for the two-equation network model, with and without the
link-formation correction of the instruments.

Instrument columns are products of adjacency blocks applied to the covariates
(truncated Neumann-series terms of the reduced form). The corrected estimator
(``2SLS-EC``) builds them from predicted, normalized link probabilities instead
of the observed within-layer networks.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, stats

from .errors import DesignError, DomainError, SingularityError, StateError
from .linkform import LogitFit, build_dyads, fit_logit, normalize_predicted, predict_adjacency
from .netcore import CommunityPartition, LayeredNetwork

MODES = ("2SLS", "2SLS-EC")
DEFAULT_DEPTH = 3
COLLINEAR_TOL = 1e-10
CD_CAP = 1e6

# block name -> (row layer, column layer)
BLOCK_LAYERS = {"G_S": ("S", "S"), "G_ST": ("S", "T"), "G_T": ("T", "T"), "G_TS": ("T", "S")}
CSV_COLUMNS = ["mode", "equation", "param", "estimate", "robust_se", "oir_stat", "oir_df", "oir_p", "cd_F", "n", "K"]


def parse_mode(mode: str) -> str:
    m = mode.strip().upper()
    if m not in MODES:
        raise DomainError(f"unknown estimator mode {mode!r}; expected one of {MODES}")
    return m


def within_transform(v, partition: CommunityPartition) -> np.ndarray:
    """Subtract community means row-wise (premultiplication by the block-diagonal J)."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != partition.total:
        raise DomainError(f"{v.shape[0]} rows do not match partition total {partition.total}")
    out = v.copy()
    for s in partition.slices():
        out[s] -= v[s].mean(axis=0)
    return out


# ---------------------------------------------------------------- instruments

def enumerate_chains(target: str, depth: int) -> list[tuple[str, ...]]:
    """All products of at most ``depth`` blocks whose rows live in ``target``.

    Sorted by length, then lexicographically by block name.
    """
    if depth < 0:
        raise DomainError("depth must be >= 0")
    chains: list[tuple[str, ...]] = [()]
    frontier: list[tuple[tuple[str, ...], str]] = [((), target)]
    for _ in range(depth):
        nxt = []
        for chain, layer in frontier:
            for name, (rows, cols) in BLOCK_LAYERS.items():
                if rows == layer:
                    nxt.append((chain + (name,), cols))
        chains.extend(c for c, _ in nxt)
        frontier = nxt
    return sorted(set(chains), key=lambda c: (len(c), c))


def chain_source(chain: tuple[str, ...], target: str) -> str:
    return BLOCK_LAYERS[chain[-1]][1] if chain else target


def describe(chain: tuple[str, ...], target: str) -> str:
    return "*".join(chain + (f"X_{chain_source(chain, target)}",))


@dataclass(frozen=True)
class InstrumentSet:
    """Within-transformed instruments for both equations plus column bookkeeping."""

    h_T: np.ndarray
    h_S: np.ndarray
    chains_T: list[str]
    chains_S: list[str]
    columns_T: list[str]
    columns_S: list[str]
    depth: int
    dropped_T: list[str] = field(default_factory=list)
    dropped_S: list[str] = field(default_factory=list)


def drop_collinear(h: np.ndarray, names: Sequence[str], tol: float = COLLINEAR_TOL):
    """Keep a maximal independent column subset (pivoted QR), preserving the input order."""
    if h.shape[1] == 0:
        return h, list(names), []
    _, r, piv = linalg.qr(h, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    rank = int(np.sum(d > tol * d[0])) if d.size and d[0] > 0 else 0
    keep = np.sort(piv[:rank])
    dropped = [names[k] for k in sorted(piv[rank:])]
    return h[:, keep], [names[k] for k in keep], dropped


def _chain_values(blocks, x, target, depth, subset):
    cache: dict[tuple[str, ...], np.ndarray] = {}

    def value(chain):
        if not chain:
            return x[target]
        if chain not in cache:
            cache[chain] = blocks[chain[0]] @ value(chain[1:])
        return cache[chain]

    chains = enumerate_chains(target, depth)
    descs = [describe(c, target) for c in chains]
    if subset is not None:
        wanted = set(subset)
        chains = [c for c, d in zip(chains, descs) if d in wanted]
        descs = [d for d in descs if d in wanted]
    cols, names = [], []
    for c, d in zip(chains, descs):
        v = value(c)
        cols.append(v)
        names.extend(f"{d}[{k + 1}]" for k in range(v.shape[1]))
    return np.column_stack(cols), descs, names


def build_instruments(net: LayeredNetwork, x_T, x_S, depth: int = DEFAULT_DEPTH,
                      subset: Sequence[str] | None = None, drop: bool = True) -> InstrumentSet:
    """Neumann-chain instruments for both equations.

    ``subset`` optionally restricts to named chain descriptors such as ``"G_T*X_T"``;
    the covariate chains ``X_T`` / ``X_S`` are always kept since the exogenous
    regressors instrument themselves.
    """
    if depth < 1:
        raise DomainError("instrument depth must be >= 1")
    x = {"T": np.atleast_2d(np.asarray(x_T, dtype=float).T).T, "S": np.atleast_2d(np.asarray(x_S, dtype=float).T).T}
    if x["T"].shape[0] != net.n_T or x["S"].shape[0] != net.n_S:
        raise DomainError("covariates do not match network sizes")
    blocks = net.blocks()
    out = {}
    for target, part in (("T", net.partition_T), ("S", net.partition_S)):
        sub = None if subset is None else set(subset) | {f"X_{target}"}
        h, descs, names = _chain_values(blocks, x, target, depth, sub)
        h = within_transform(h, part)
        dropped = []
        if drop:
            h, names, dropped = drop_collinear(h, names)
        out[target] = (h, descs, names, dropped)
    return InstrumentSet(out["T"][0], out["S"][0], out["T"][1], out["S"][1], out["T"][2], out["S"][2],
                         depth, out["T"][3], out["S"][3])


# ---------------------------------------------------------------- 2SLS core

@dataclass(frozen=True)
class TwoSLSCore:
    delta: np.ndarray
    residuals: np.ndarray
    z_hat: np.ndarray  # P_H Z
    bread: np.ndarray  # (Z' P_H Z)^{-1}


def _orth_basis(h: np.ndarray, what: str) -> np.ndarray:
    q, r = np.linalg.qr(h)
    d = np.abs(np.diag(r))
    if d.size == 0 or d.min() <= COLLINEAR_TOL * d.max():
        raise SingularityError(f"{what}: H'H is singular (rank-deficient instruments)")
    return q


def two_sls(y, z, h) -> TwoSLSCore:
    """``delta = (Z' P_H Z)^{-1} Z' P_H y``."""
    y = np.asarray(y, dtype=float)
    z = np.atleast_2d(np.asarray(z, dtype=float).T).T
    h = np.atleast_2d(np.asarray(h, dtype=float).T).T
    if h.shape[1] < z.shape[1]:
        raise DomainError(f"{h.shape[1]} instruments for {z.shape[1]} regressors: under-identified")
    q = _orth_basis(h, "instrument block")
    z_hat = q @ (q.T @ z)
    zpz = z_hat.T @ z_hat
    dz = np.sqrt(np.diag(zpz))
    if np.any(dz == 0) or np.linalg.cond(zpz / np.outer(dz, dz)) > 1e14:
        raise SingularityError("Z' P_H Z is singular: regressors not identified by the instruments")
    bread = np.linalg.inv(zpz)
    delta = np.linalg.solve(zpz, z_hat.T @ y)
    return TwoSLSCore(delta, y - z @ delta, z_hat, bread)


def robust_vcov(z, h, residuals) -> np.ndarray:
    """Heteroskedasticity-robust sandwich built on ``H' diag(e^2) H``."""
    z = np.atleast_2d(np.asarray(z, dtype=float).T).T
    h = np.atleast_2d(np.asarray(h, dtype=float).T).T
    e = np.asarray(residuals, dtype=float)
    q = _orth_basis(h, "instrument block")
    z_hat = q @ (q.T @ z)
    zpz = z_hat.T @ z_hat
    try:
        bread = np.linalg.inv(zpz)
    except np.linalg.LinAlgError as exc:
        raise SingularityError("singular bread matrix Z' P_H Z") from exc
    meat = (z_hat * (e ** 2)[:, None]).T @ z_hat
    v = bread @ meat @ bread
    return 0.5 * (v + v.T)


def oir_test(z, h, residuals):
    """Hansen J test of overidentifying restrictions.

    Two-step efficient GMM started from the supplied (2SLS) residuals: the moment
    covariance ``H' diag(e^2) H`` weights the instrument-residual moments evaluated
    at the GMM estimate. Returns ``(stat, df, pvalue)``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float).T).T
    h = np.atleast_2d(np.asarray(h, dtype=float).T).T
    e = np.asarray(residuals, dtype=float)
    df = h.shape[1] - z.shape[1]
    if df < 1:
        raise DomainError(f"OIR test needs more instruments than regressors (df = {df})")
    s = (h * (e ** 2)[:, None]).T @ h
    hz = h.T @ z
    he = h.T @ e
    try:
        cs = linalg.cho_factor(s)
    except linalg.LinAlgError as exc:
        raise SingularityError("moment covariance H' diag(e^2) H is singular") from exc
    w_hz = linalg.cho_solve(cs, hz)
    step = np.linalg.solve(hz.T @ w_hz, w_hz.T @ he)
    g = he - hz @ step
    stat = float(max(g @ linalg.cho_solve(cs, g), 0.0))
    return stat, df, float(stats.chi2.sf(stat, df))


def cragg_donald(z, h, endogenous_columns: Sequence[int]) -> float:
    """Minimum-eigenvalue (Cragg-Donald) first-stage F statistic, capped at ``CD_CAP``.

    Exogenous columns of ``z`` are partialled out of the endogenous regressors and
    of the instruments.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float).T).T
    h = np.atleast_2d(np.asarray(h, dtype=float).T).T
    endo = sorted(set(int(c) for c in endogenous_columns))
    if not endo:
        raise DomainError("Cragg-Donald needs at least one endogenous column")
    exo = [c for c in range(z.shape[1]) if c not in endo]
    n = z.shape[0]
    y = z[:, endo]
    if exo:
        qx = np.linalg.qr(z[:, exo])[0]
        y = y - qx @ (qx.T @ y)
        h = h - qx @ (qx.T @ h)
    q, r, _ = linalg.qr(h, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    l_ex = int(np.sum(d > COLLINEAR_TOL * d[0])) if d.size and d[0] > 0 else 0
    if l_ex < len(endo):
        raise DesignError(f"{l_ex} excluded instruments for {len(endo)} endogenous regressors")
    q = q[:, :l_ex]
    y_hat = q @ (q.T @ y)
    v = y - y_hat
    dof = n - l_ex - len(exo)
    sigma = v.T @ v / dof
    explained = y_hat.T @ y_hat
    if np.linalg.norm(v) <= 1e-12 * max(np.linalg.norm(y), 1e-300):
        return CD_CAP
    try:
        lam = linalg.eigh(explained, sigma, eigvals_only=True)
    except linalg.LinAlgError:
        return CD_CAP
    return float(min(max(lam.min(), 0.0) / l_ex, CD_CAP))


# ---------------------------------------------------------------- full system

@dataclass
class ObservedData:
    """What the estimators need: observed binary networks, covariates, outcomes, dyadic link features."""

    net: LayeredNetwork
    x_T: np.ndarray
    x_S: np.ndarray
    y_T: np.ndarray
    y_S: np.ndarray
    link_features_T: list
    link_features_S: list
    normalize: bool = True

    def observed(self) -> "ObservedData":
        return self


@dataclass
class EstimateResult:
    mode: str
    equation: str
    params: list[str]
    delta: np.ndarray
    robust_se: np.ndarray
    vcov: np.ndarray
    residuals: np.ndarray
    oir_stat: float
    oir_df: int
    oir_pvalue: float
    cragg_donald_F: float
    instrument_count: int
    n: int
    depth: int
    instruments: list[str]
    dropped_instruments: list[str]
    logit: LogitFit | None = None

    def estimates(self) -> dict[str, float]:
        return dict(zip(self.params, (float(v) for v in self.delta)))

    def to_rows(self) -> list[dict]:
        return [
            {"mode": self.mode, "equation": self.equation, "param": p, "estimate": float(d),
             "robust_se": float(s), "oir_stat": self.oir_stat, "oir_df": self.oir_df,
             "oir_p": self.oir_pvalue, "cd_F": self.cragg_donald_F, "n": self.n, "K": self.instrument_count}
            for p, d, s in zip(self.params, self.delta, self.robust_se)
        ]

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode, "equation": self.equation, "params": self.params,
            "estimate": self.delta.tolist(), "robust_se": self.robust_se.tolist(), "vcov": self.vcov.tolist(),
            "oir_stat": self.oir_stat, "oir_df": self.oir_df, "oir_p": self.oir_pvalue,
            "cd_F": self.cragg_donald_F, "instrument_count": self.instrument_count, "n": self.n,
            "depth": self.depth, "instruments": self.instruments, "dropped_instruments": self.dropped_instruments,
        }
        if self.logit is not None:
            d["logit"] = json.loads(self.logit.to_json())
        return d


def results_to_csv(results: Sequence[EstimateResult]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for res in results:
        for row in res.to_rows():
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def results_to_json(results: Sequence[EstimateResult]) -> str:
    return json.dumps([r.to_dict() for r in results], indent=2)


def predicted_network(obs: ObservedData, model_net: LayeredNetwork, logit_coefs: dict | None = None):
    """Replace the within-layer blocks by normalized predicted link probabilities.

    Returns the instrument network and the two logit fits.
    """
    fits = {}
    g_hat = {}
    for layer, feats, part in (("T", obs.link_features_T, obs.net.partition_T),
                               ("S", obs.link_features_S, obs.net.partition_S)):
        fit = fit_logit(build_dyads(obs.net, layer, feats))
        if not fit.converged:
            raise StateError(f"link-formation logit for layer {layer} did not converge "
                             f"(score {fit.score_norm:.3g} after {fit.iters} iterations)")
        if logit_coefs and layer in logit_coefs:
            fit = fit.with_coefficients(logit_coefs[layer])
        fits[layer] = fit
        g_hat[layer] = normalize_predicted(predict_adjacency(fit, feats, part))
    iv_net = model_net.replace(kind="weighted", g_T=g_hat["T"], g_S=g_hat["S"])
    return iv_net, fits


def _param_names(layer: str, other: str, k: int) -> list[str]:
    return [f"lambda_{layer}", f"lambda_{layer}{other}"] + [f"gamma_{layer}{m + 1}" for m in range(k)]


def estimate_system(data, mode: str = "2SLS", *, depth: int = DEFAULT_DEPTH,
                    instrument_subset: Sequence[str] | None = None, normalize: bool | None = None,
                    logit_coefs: dict | None = None):
    """Estimate both equations; returns ``(result_T, result_S)``.

    ``data`` is an :class:`ObservedData` or anything with an ``observed()`` method
    (e.g. a simulated dataset). ``normalize`` overrides the data's row-normalization
    convention; ``logit_coefs`` (``{"T": coefs, "S": coefs}``) overrides the fitted
    link-formation coefficients in EC mode.
    """
    mode = parse_mode(mode)
    obs = data.observed()
    norm = obs.normalize if normalize is None else normalize
    net = obs.net.row_normalized() if norm else obs.net
    x_T = np.atleast_2d(np.asarray(obs.x_T, dtype=float).T).T
    x_S = np.atleast_2d(np.asarray(obs.x_S, dtype=float).T).T
    y_T, y_S = np.asarray(obs.y_T, dtype=float), np.asarray(obs.y_S, dtype=float)
    pT, pS = net.partition_T, net.partition_S

    z_T = within_transform(np.column_stack([net.g_T @ y_T, net.g_TS @ y_S, x_T]), pT)
    z_S = within_transform(np.column_stack([net.g_S @ y_S, net.g_ST @ y_T, x_S]), pS)
    yt_T, yt_S = within_transform(y_T, pT), within_transform(y_S, pS)

    fits = {"T": None, "S": None}
    iv_net = net
    if mode == "2SLS-EC":
        iv_net, fits = predicted_network(obs, net, logit_coefs)
    ivs = build_instruments(iv_net, x_T, x_S, depth, instrument_subset)

    out = []
    for layer, other, y, z, h, names, dropped in (
        ("T", "S", yt_T, z_T, ivs.h_T, ivs.columns_T, ivs.dropped_T),
        ("S", "T", yt_S, z_S, ivs.h_S, ivs.columns_S, ivs.dropped_S),
    ):
        core = two_sls(y, z, h)
        v = robust_vcov(z, h, core.residuals)
        if h.shape[1] > z.shape[1]:
            j, df, pj = oir_test(z, h, core.residuals)
        else:
            j, df, pj = float("nan"), 0, float("nan")
        cd = cragg_donald(z, h, [0, 1])
        out.append(EstimateResult(
            mode=mode, equation=layer, params=_param_names(layer, other, x_T.shape[1] if layer == "T" else x_S.shape[1]),
            delta=core.delta, robust_se=np.sqrt(np.clip(np.diag(v), 0, None)), vcov=v, residuals=core.residuals,
            oir_stat=j, oir_df=df, oir_pvalue=pj, cragg_donald_F=cd, instrument_count=h.shape[1],
            n=y.size, depth=depth, instruments=names, dropped_instruments=dropped, logit=fits[layer],
        ))
    return out[0], out[1]
