"""CSV/JSON serialization of networks, covariates, abilities and simulated datasets.

All tables are UTF-8 with LF line endings and a header row. Floats are written
with ``repr`` so that a write/read cycle reproduces every value exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import DomainError, SchemaError
from .linkform import DyadDataset, build_dyads
from .netcore import CommunityPartition, LayeredNetwork

EDGE_HEADER = ["community", "src", "dst", "weight"]
BLOCK_FILES = {"G_T": "G_T.csv", "G_S": "G_S.csv", "G_TS": "G_TS.csv", "G_ST": "G_ST.csv"}


def _fmt(v) -> str:
    return repr(float(v))


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path, required: list[str], prefix_ok: bool = False):
    path = Path(path)
    if not path.is_file():
        raise DomainError(f"missing input file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file, expected header {required}")
    header = [h.strip() for h in rows[0]]
    ok = header[: len(required)] == required if prefix_ok else header == required
    if not ok:
        raise SchemaError(f"{path}: header {header} does not match {required}")
    body = [r for r in rows[1:] if r]
    for k, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise SchemaError(f"{path}:{k}: expected {len(header)} fields, got {len(r)}")
    return header, body


def _num(path, line, text, kind=float):
    try:
        return kind(text)
    except ValueError as exc:
        raise SchemaError(f"{path}:{line}: cannot parse {text!r} as {kind.__name__}") from exc


# ---------------------------------------------------------------- edge lists

def write_edge_list(path, m, row_partition: CommunityPartition) -> None:
    m = np.asarray(m, dtype=float)
    labels = row_partition.labels()
    src, dst = np.nonzero(m)
    _write_rows(path, EDGE_HEADER,
                ([int(labels[i]), int(i), int(j), _fmt(m[i, j])] for i, j in zip(src, dst)))


def read_edge_list(path, shape: tuple[int, int], row_partition: CommunityPartition | None = None) -> np.ndarray:
    _, body = _read_rows(path, EDGE_HEADER)
    m = np.zeros(shape)
    labels = row_partition.labels() if row_partition is not None else None
    for k, r in enumerate(body, start=2):
        c, i, j = (_num(path, k, r[q], int) for q in range(3))
        w = _num(path, k, r[3])
        if not (0 <= i < shape[0] and 0 <= j < shape[1]):
            raise DomainError(f"{path}:{k}: node index ({i}, {j}) outside {shape}")
        if labels is not None and labels[i] != c:
            raise DomainError(f"{path}:{k}: node {i} is in community {labels[i]}, row says {c}")
        m[i, j] = w
    return m


def write_network(directory, net: LayeredNetwork) -> None:
    d = Path(directory)
    parts = {"G_T": net.partition_T, "G_S": net.partition_S, "G_TS": net.partition_T, "G_ST": net.partition_S}
    for name, m in net.blocks().items():
        write_edge_list(d / BLOCK_FILES[name], m, parts[name])


def read_network(directory, partition_T: CommunityPartition, partition_S: CommunityPartition,
                 kind: str = "binary", files: dict | None = None) -> LayeredNetwork:
    d = Path(directory)
    files = {**BLOCK_FILES, **(files or {})}
    nT, nS = partition_T.total, partition_S.total
    g_T = read_edge_list(d / files["G_T"], (nT, nT), partition_T)
    g_S = read_edge_list(d / files["G_S"], (nS, nS), partition_S)
    g_TS = read_edge_list(d / files["G_TS"], (nT, nS), partition_T)
    g_ST = read_edge_list(d / files["G_ST"], (nS, nT), partition_S)
    return LayeredNetwork(g_T, g_S, g_TS, g_ST, partition_T, partition_S, kind=kind)


# ---------------------------------------------------------------- node tables

def write_covariates(path, x, partition: CommunityPartition) -> None:
    x = np.atleast_2d(np.asarray(x, dtype=float).T).T
    labels = partition.labels()
    header = ["node", "community"] + [f"x{k + 1}" for k in range(x.shape[1])]
    _write_rows(path, header, ([i, int(labels[i])] + [_fmt(v) for v in x[i]] for i in range(x.shape[0])))


def read_covariates(path):
    """Returns ``(x, partition)``; nodes must be listed as 0..n-1 in order."""
    header, body = _read_rows(path, ["node", "community"], prefix_ok=True)
    if len(header) < 3:
        raise SchemaError(f"{path}: no covariate columns")
    nodes = [_num(path, k, r[0], int) for k, r in enumerate(body, start=2)]
    if nodes != list(range(len(body))):
        raise SchemaError(f"{path}: nodes must be listed as 0..n-1 in order")
    labels = [_num(path, k, r[1], int) for k, r in enumerate(body, start=2)]
    x = np.array([[_num(path, k, v) for v in r[2:]] for k, r in enumerate(body, start=2)]).reshape(len(body), -1)
    return x, CommunityPartition.from_labels(labels)


def write_vector(path, name: str, v) -> None:
    _write_rows(path, ["node", name], ([i, _fmt(a)] for i, a in enumerate(np.asarray(v, dtype=float))))


def read_vector(path, name: str, n: int | None = None) -> np.ndarray:
    _, body = _read_rows(path, ["node", name])
    nodes = [_num(path, k, r[0], int) for k, r in enumerate(body, start=2)]
    if nodes != list(range(len(body))):
        raise SchemaError(f"{path}: nodes must be listed as 0..n-1 in order")
    v = np.array([_num(path, k, r[1]) for k, r in enumerate(body, start=2)])
    if n is not None and v.size != n:
        raise DomainError(f"{path}: {v.size} rows, expected {n}")
    return v


def write_equilibrium(path, y_T, y_S) -> None:
    rows = [[i, "T", _fmt(v)] for i, v in enumerate(y_T)] + [[i, "S", _fmt(v)] for i, v in enumerate(y_S)]
    _write_rows(path, ["node", "layer", "effort"], rows)


# ---------------------------------------------------------------- datasets

def dyad_features(dyads: DyadDataset, n: int) -> list[np.ndarray]:
    """Rebuild symmetric n x n feature matrices from a dyad table (zeros elsewhere)."""
    out = []
    for k in range(dyads.features.shape[1]):
        f = np.zeros((n, n))
        f[dyads.i, dyads.j] = dyads.features[:, k]
        f[dyads.j, dyads.i] = dyads.features[:, k]
        out.append(f)
    return out


def write_dataset(directory, ds) -> Path:
    """Write a simulated dataset to ``directory`` (created if needed)."""
    from .dgp import block_matrix

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    pT, pS = ds.cfg.partition_T, ds.cfg.partition_S
    write_network(d, ds.net)
    write_covariates(d / "covariates_T.csv", ds.features_T, pT)
    write_covariates(d / "covariates_S.csv", ds.features_S, pS)
    write_vector(d / "outcomes_T.csv", "y", ds.y_T)
    write_vector(d / "outcomes_S.csv", "y", ds.y_S)
    build_dyads(ds.net, "T", [block_matrix(ds.similarity_T)]).to_csv(d / "dyads_T.csv")
    build_dyads(ds.net, "S", [block_matrix(ds.similarity_S)]).to_csv(d / "dyads_S.csv")
    for layer in ("T", "S"):
        cols = [getattr(ds, f"{v}_{layer}") for v in ("mu", "nu", "u", "kappa", "eps")]
        _write_rows(d / f"latent_{layer}.csv", ["node", "mu", "nu", "u", "kappa", "eps"],
                    ([i] + [_fmt(c[i]) for c in cols] for i in range(cols[0].size)))
    truth = {**ds.truth, "rho": ds.cfg.rho, "seed": ds.cfg.seed, "replication": ds.replication,
             "row_normalize_networks": ds.cfg.row_normalize_networks,
             "structural_residual": ds.structural_residual}
    (d / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (d / "config.json").write_text(json.dumps(ds.cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return d


def read_dataset(directory, normalize: bool | None = None):
    """Load a dataset directory as :class:`ObservedData` (latent draws are not needed)."""
    from .estimators import ObservedData

    d = Path(directory)
    if not d.is_dir():
        raise DomainError(f"dataset directory not found: {d}")
    x_T, pT = read_covariates(d / "covariates_T.csv")
    x_S, pS = read_covariates(d / "covariates_S.csv")
    net = read_network(d, pT, pS)
    y_T = read_vector(d / "outcomes_T.csv", "y", pT.total)
    y_S = read_vector(d / "outcomes_S.csv", "y", pS.total)
    dy_T = DyadDataset.from_csv(_existing(d / "dyads_T.csv"))
    dy_S = DyadDataset.from_csv(_existing(d / "dyads_S.csv"))
    if normalize is None:
        normalize = True
        if (d / "truth.json").is_file():
            normalize = bool(json.loads((d / "truth.json").read_text()).get("row_normalize_networks", True))
    return ObservedData(net=net, x_T=x_T, x_S=x_S, y_T=y_T, y_S=y_S,
                        link_features_T=dyad_features(dy_T, pT.total),
                        link_features_S=dyad_features(dy_S, pS.total), normalize=normalize)


def _existing(path: Path) -> Path:
    if not path.is_file():
        raise DomainError(f"missing input file: {path}")
    return path
