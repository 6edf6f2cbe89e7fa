"""Replication engine: simulate, estimate with each mode, and summarize bias/RMSE/ESE per cell.

A cell is one ``(regime, rho, mode)`` combination. Replication ``r`` of every cell
draws from the streams keyed by ``(seed, r)``, so cells share common random numbers
and results do not depend on the worker layout.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from typing import Mapping, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .dgp import REGIMES, DgpConfig, simulate
from .errors import AggregationError, DomainError, ScitechError, SchemaError
from .estimators import DEFAULT_DEPTH, MODES, estimate_system, parse_mode

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["regime", "rho", "mode", "param", "bias", "rmse", "ese", "n_ok", "n_fail"]
PARAMS = ["lambda_T", "lambda_TS", "gamma_T1", "gamma_T2", "lambda_S", "lambda_ST", "gamma_S1", "gamma_S2"]


@dataclass(frozen=True)
class McConfig:
    base: DgpConfig = field(default_factory=DgpConfig)
    rho_grid: tuple[float, ...] = (0.4, 0.6, 0.8)
    regimes: tuple[str, ...] = ("weak",)
    replications: int = 500
    modes: tuple[str, ...] = MODES
    seed: int = 0
    jobs: int = 1
    depth: int = DEFAULT_DEPTH
    instrument_subset: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "rho_grid", tuple(float(r) for r in self.rho_grid))
        object.__setattr__(self, "regimes", tuple(self.regimes))
        object.__setattr__(self, "modes", tuple(parse_mode(m) for m in self.modes))
        if self.instrument_subset is not None:
            object.__setattr__(self, "instrument_subset", tuple(self.instrument_subset))
        if self.replications < 2:
            raise DomainError("replications must be >= 2 (the ESE divides by n - 1)")
        if not self.rho_grid or not self.regimes or not self.modes:
            raise DomainError("rho_grid, regimes and modes must be nonempty")
        for r in self.regimes:
            if r not in REGIMES:
                raise DomainError(f"unknown regime {r!r}; expected one of {sorted(REGIMES)}")
        if self.jobs < 1:
            raise DomainError("jobs must be >= 1")
        if self.depth < 1:
            raise DomainError("depth must be >= 1")
        # validates rho and the parameter restrictions for every cell up front
        for regime in self.regimes:
            for rho in self.rho_grid:
                self.cell_config(regime, rho)

    def cell_config(self, regime: str, rho: float) -> DgpConfig:
        return replace(self.base.with_regime(regime), rho=float(rho), seed=int(self.seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["base"] = self.base.to_dict()
        return d

    def digest(self) -> str:
        """Hash of everything that affects results (``jobs`` excluded)."""
        d = self.to_dict()
        d.pop("jobs")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Replication:
    regime: str
    rho: float
    rep_index: int
    estimates: dict  # mode -> {param: value}, or None when that mode failed
    errors: dict  # mode -> message
    diagnostics: dict = field(default_factory=dict)  # mode -> {oir_p_T, oir_p_S, cd_F_T, cd_F_S}


def run_replication(cfg: McConfig, regime: str, rho: float, rep_index: int) -> Replication:
    """One dataset and one estimate per mode; failures are recorded, not raised."""
    est: dict = {m: None for m in cfg.modes}
    errs: dict = {}
    diag: dict = {}
    try:
        data = simulate(cfg.cell_config(regime, rho), rep_index)
    except ScitechError as exc:
        return Replication(regime, rho, rep_index, est, {m: f"simulate: {exc}" for m in cfg.modes})
    for mode in cfg.modes:
        try:
            rT, rS = estimate_system(data, mode, depth=cfg.depth, instrument_subset=cfg.instrument_subset)
        except (ScitechError, np.linalg.LinAlgError) as exc:
            errs[mode] = f"{type(exc).__name__}: {exc}"
            continue
        est[mode] = {**rT.estimates(), **rS.estimates()}
        diag[mode] = {"oir_p_T": rT.oir_pvalue, "oir_p_S": rS.oir_pvalue,
                      "cd_F_T": rT.cragg_donald_F, "cd_F_S": rS.cragg_donald_F}
    return Replication(regime, rho, rep_index, est, errs, diag)


def metrics(values: Sequence[float], truth: float) -> tuple[float, float, float]:
    """``(bias, rmse, ese)`` with divisors n, n and n - 1."""
    v = np.asarray(values, dtype=float)
    n = v.size
    dev = v - truth
    bias = float(dev.mean())
    rmse = math.sqrt(float(np.mean(dev ** 2)))
    ese = math.sqrt(float(np.sum((v - v.mean()) ** 2)) / (n - 1))
    return bias, rmse, ese


@dataclass(frozen=True)
class McCell:
    regime: str
    rho: float
    mode: str
    param: str
    bias: float
    rmse: float
    ese: float
    n_ok: int
    n_fail: int

    @property
    def key(self):
        return (self.regime, float(self.rho), self.mode, self.param)


@dataclass
class McReport:
    cells: list[McCell]
    metadata: dict = field(default_factory=dict)

    def cell(self, regime: str, rho: float, mode: str, param: str) -> McCell:
        key = (regime, float(rho), parse_mode(mode), param)
        for c in self.cells:
            if c.key == key:
                return c
        raise KeyError(key)

    def bias(self, regime, rho, mode, param) -> float:
        return self.cell(regime, rho, mode, param).bias

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for c in self.cells:
            w.writerow([c.regime, repr(float(c.rho)), c.mode, c.param, repr(c.bias), repr(c.rmse),
                        repr(c.ese), c.n_ok, c.n_fail])
        return buf.getvalue()

    def to_json(self, include_timing: bool = False) -> str:
        meta = dict(self.metadata)
        if not include_timing:
            meta.pop("wall_time", None)
        return json.dumps({"metadata": meta, "cells": [asdict(c) for c in self.cells]}, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, text: str) -> "McReport":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [h.strip() for h in rows[0]] != REPORT_COLUMNS:
            raise SchemaError(f"report header must be {REPORT_COLUMNS}")
        cells = []
        for k, r in enumerate(rows[1:], start=2):
            if not r:
                continue
            if len(r) != len(REPORT_COLUMNS):
                raise SchemaError(f"line {k}: expected {len(REPORT_COLUMNS)} fields")
            try:
                cells.append(McCell(r[0], float(r[1]), parse_mode(r[2]), r[3], float(r[4]), float(r[5]),
                                    float(r[6]), int(r[7]), int(r[8])))
            except ValueError as exc:
                raise SchemaError(f"line {k}: {exc}") from exc
        return cls(cells)


def aggregate(estimates: Mapping, truth: Mapping) -> McReport:
    """Summarize replications.

    ``estimates`` maps ``(regime, rho, mode)`` to a list with one entry per
    replication: a ``{param: value}`` dict, or ``None`` for a failed replication.
    ``truth`` maps ``(regime, rho)`` (or a bare ``{param: value}``) to true values.
    """
    cells = []
    for key in sorted(estimates, key=lambda k: (k[0], float(k[1]), k[2])):
        regime, rho, mode = key
        reps = estimates[key]
        ok = [r for r in reps if r is not None]
        n_fail = len(reps) - len(ok)
        if len(ok) < 2:
            raise AggregationError(f"cell regime={regime} rho={rho} mode={mode}: "
                                   f"{len(ok)} successful replications, need at least 2")
        tv = truth.get((regime, rho), truth) if isinstance(truth, Mapping) else truth
        for p in ok[0]:
            b, r, e = metrics([o[p] for o in ok], float(tv[p]))
            cells.append(McCell(regime, float(rho), mode, p, b, r, e, len(ok), n_fail))
    return McReport(cells)


def _run_task(args):
    cfg, regime, rho, rep = args
    with threadpool_limits(1):
        return run_replication(cfg, regime, rho, rep)


def _tasks(cfg: McConfig):
    return [(cfg, regime, rho, rep) for regime in cfg.regimes for rho in cfg.rho_grid
            for rep in range(cfg.replications)]


def replicate(cfg: McConfig) -> list[Replication]:
    """Every replication of the grid, ordered by ``(regime, rho, rep_index)``."""
    tasks = _tasks(cfg)
    if cfg.jobs == 1:
        results = [_run_task(t) for t in tasks]
    else:
        chunk = max(1, len(tasks) // (cfg.jobs * 8))
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_task, tasks, chunksize=chunk))
    return sorted(results, key=lambda r: (r.regime, r.rho, r.rep_index))


def run_experiment(cfg: McConfig, replications: list[Replication] | None = None) -> McReport:
    """Sweep the grid, or summarize ``replications`` already produced by :func:`replicate`.

    The report depends on ``cfg`` but not on ``cfg.jobs``.
    """
    t0 = time.perf_counter()
    results = replicate(cfg) if replications is None else replications

    grouped: dict = {}
    truth: dict = {}
    failures: list = []
    for res in results:
        for mode in cfg.modes:
            grouped.setdefault((res.regime, res.rho, mode), []).append(res.estimates[mode])
        for mode, msg in res.errors.items():
            failures.append({"regime": res.regime, "rho": res.rho, "rep": res.rep_index, "mode": mode, "error": msg})
        c = cfg.cell_config(res.regime, res.rho)
        truth[(res.regime, res.rho)] = dict(zip(PARAMS, [c.lambda_T, c.lambda_TS, *c.gamma_T,
                                                         c.lambda_S, c.lambda_ST, *c.gamma_S]))
    if failures:
        log.warning("%d estimation failures recorded", len(failures))
    report = aggregate(grouped, truth)
    report.metadata = {"seed": cfg.seed, "config_hash": cfg.digest(), "replications": cfg.replications,
                       "failures": failures, "wall_time": time.perf_counter() - t0}
    return report


# ---------------------------------------------------------------- reference comparison

@dataclass(frozen=True)
class Deviation:
    regime: str
    rho: float
    mode: str
    param: str
    metric: str
    ours: float
    reference: float
    delta: float
    tolerance: float
    passed: bool


@dataclass
class Comparison:
    rows: list[Deviation]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["regime", "rho", "mode", "param", "metric", "ours", "reference", "delta", "tolerance", "pass"])
        for r in self.rows:
            w.writerow([r.regime, repr(r.rho), r.mode, r.param, r.metric, repr(r.ours), repr(r.reference),
                        repr(r.delta), repr(r.tolerance), "pass" if r.passed else "fail"])
        return buf.getvalue()

    def summary(self) -> dict:
        failed = [r for r in self.rows if not r.passed]
        return {"compared": len(self.rows), "failed": len(failed), "passed": self.passed,
                "failures": [asdict(r) for r in failed]}


def load_reference(path=None) -> McReport:
    """Reference table in the report CSV schema; the bundled published table by default."""
    if path is None:
        text = resources.files("scitech_net").joinpath("data/reference_tables.csv").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return McReport.from_csv(text)


def compare_to_reference(report: McReport, reference: McReport,
                         tolerances: Mapping[str, float] | None = None,
                         params: Sequence[str] | None = None) -> Comparison:
    """Per-cell ``ours - reference`` for each metric in ``tolerances`` (default bias 0.08).

    Only the ``(regime, rho, mode)`` cells present in ``report`` are compared; within
    those, both tables must list the same parameters.
    """
    tolerances = dict(tolerances or {"bias": 0.08})
    for m in tolerances:
        if m not in ("bias", "rmse", "ese"):
            raise DomainError(f"unknown metric {m!r}")
    ours = {c.key: c for c in report.cells}
    groups = {k[:3] for k in ours}
    ref = {c.key: c for c in reference.cells if c.key[:3] in groups}
    if params is not None:
        ours = {k: v for k, v in ours.items() if k[3] in params}
        ref = {k: v for k, v in ref.items() if k[3] in params}
    if set(ours) != set(ref):
        missing = sorted(set(ours) ^ set(ref))[:5]
        raise SchemaError(f"report and reference cover different cells, e.g. {missing}")
    rows = []
    for key in sorted(ours):
        for metric, tol in tolerances.items():
            a, b = getattr(ours[key], metric), getattr(ref[key], metric)
            d = a - b
            rows.append(Deviation(*key, metric, a, b, d, float(tol), bool(abs(d) <= tol)))
    return Comparison(rows)
