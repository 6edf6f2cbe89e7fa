"""Command-line entry point: ``scitech-net {equilibrium,planner,simulate,estimate,montecarlo}``.

Exit codes: 0 success, 2 input or schema error, 3 violated precondition (e.g.
unstable equilibrium), 4 numerical failure, 5 failed reference comparison.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, dataio
from .dgp import DgpConfig, simulate
from .errors import DomainError, NumericError, PreconditionError, ScitechError
from .estimators import estimate_system, parse_mode, results_to_csv, results_to_json
from .game import nash_equilibrium, planner_optimum
from .montecarlo import McConfig, compare_to_reference, load_reference, run_experiment
from .netcore import AgentAbilities, CommunityPartition, GameParameters, check_stability

log = logging.getLogger("scitech_net")

EXIT_OK, EXIT_INPUT, EXIT_PRECONDITION, EXIT_NUMERIC, EXIT_COMPARISON = 0, 2, 3, 4, 5

_num = {"type": "number"}
_pos = {"type": "integer", "minimum": 1}
_pair = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}

DGP_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n_communities_T": _pos, "n_communities_S": _pos,
        "community_size_T": _pos, "community_size_S": _pos,
        "lambda_T": _num, "lambda_S": _num, "lambda_TS": _num, "lambda_ST": _num,
        "gamma_T": _pair, "gamma_S": _pair, "tau_T": _pair, "tau_S": _pair,
        "rho": {"type": "number", "minimum": -1, "maximum": 1},
        "kappa_levels": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "row_normalize_networks": {"type": "boolean"},
        "x2_sd": {"type": "number", "minimum": 0},
        "cross_link_prob": {"type": "number", "minimum": 0, "maximum": 1},
        "similarity_column": {"enum": [0, 1]},
    },
}

SEED = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}
MODES_SCHEMA = {"type": "array", "items": {"type": "string"}, "minItems": 1}
SUBSET_SCHEMA = {"type": ["array", "null"], "items": {"type": "string"}}

SCHEMAS = {
    "equilibrium": {
        "type": "object",
        "additionalProperties": False,
        "required": ["networks", "community_sizes_T", "community_sizes_S", "abilities_T", "abilities_S", "params"],
        "properties": {
            "networks": {
                "type": "object", "additionalProperties": False,
                "required": ["G_T", "G_S", "G_TS", "G_ST"],
                "properties": {k: {"type": "string"} for k in ("G_T", "G_S", "G_TS", "G_ST")},
            },
            "community_sizes_T": {"type": "array", "items": _pos, "minItems": 1},
            "community_sizes_S": {"type": "array", "items": _pos, "minItems": 1},
            "abilities_T": {"type": "string"},
            "abilities_S": {"type": "string"},
            "params": {
                "type": "object", "additionalProperties": False,
                "required": ["lambda_T", "lambda_S", "beta"],
                "properties": {"lambda_T": _num, "lambda_S": _num, "beta": _num},
            },
        },
    },
    "simulate": {
        "type": "object",
        "additionalProperties": False,
        "properties": {"seed": SEED, "replication": {"type": "integer", "minimum": 0}, "dgp": DGP_SCHEMA},
    },
    "estimate": {
        "type": "object",
        "additionalProperties": False,
        "properties": {"modes": MODES_SCHEMA, "depth": _pos, "instrument_subset": SUBSET_SCHEMA,
                       "normalize": {"type": "boolean"}},
    },
    "montecarlo": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "seed": SEED,
            "dgp": DGP_SCHEMA,
            "rho_grid": {"type": "array", "items": {"type": "number", "minimum": -1, "maximum": 1}, "minItems": 1},
            "regimes": {"type": "array", "items": {"enum": ["weak", "strong"]}, "minItems": 1},
            "replications": {"type": "integer", "minimum": 2},
            "modes": MODES_SCHEMA,
            "depth": _pos,
            "instrument_subset": SUBSET_SCHEMA,
            "tolerances": {"type": "object", "additionalProperties": False,
                           "properties": {m: {"type": "number", "minimum": 0} for m in ("bias", "rmse", "ese")}},
            "compare_params": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        },
    },
}


class InputError(DomainError):
    pass


def example_path(name: str = "six_agents") -> Path:
    return Path(str(resources.files("scitech_net").joinpath(f"data/example_{name}/config.json")))


def load_config(path, command: str) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"{path}: schema violation at {where}: {exc.message}") from exc
    return cfg


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _seed(cfg: dict, args) -> int:
    seed = args.seed if args.seed is not None else cfg.get("seed")
    if seed is None:
        raise InputError("a seed is required: set \"seed\" in the config or pass --seed")
    if not 0 <= seed <= 2**64 - 1:
        raise InputError("seed must be an unsigned 64-bit integer")
    return int(seed)


def _dgp(cfg: dict, seed: int, args) -> DgpConfig:
    d = dict(cfg.get("dgp", {}))
    if args.normalize is not None:
        d["row_normalize_networks"] = args.normalize == "on"
    return DgpConfig(**d, seed=seed)


def _modes(text: str | None, default) -> list[str]:
    if text is None:
        return [parse_mode(m) for m in default]
    return [parse_mode(m) for m in text.split(",") if m.strip()]


# ---------------------------------------------------------------- commands

def cmd_game(args, planner: bool) -> int:
    cfg_path = example_path() if args.example else args.config
    if cfg_path is None:
        raise InputError("--config (or --example) is required")
    cfg = load_config(cfg_path, "equilibrium")
    base = Path(cfg_path).parent
    pT = CommunityPartition(tuple(cfg["community_sizes_T"]))
    pS = CommunityPartition(tuple(cfg["community_sizes_S"]))
    files = {k: str(base / v) for k, v in cfg["networks"].items()}
    net = dataio.read_network(base, pT, pS, kind="binary", files=files)
    alpha = AgentAbilities(dataio.read_vector(base / cfg["abilities_T"], "alpha", pT.total),
                           dataio.read_vector(base / cfg["abilities_S"], "alpha", pS.total))
    p = GameParameters(**cfg["params"])
    st = check_stability(p, net, scale=2.0 if planner else 1.0)
    report = {"stable": st.stable, "margin": st.margin, "radius_T": st.radius_T, "radius_S": st.radius_S,
              "condition": "doubled peer effects" if planner else "nash"}
    print(f"stability margin {st.margin:.6g} (spectral radii T {st.radius_T:.6g}, S {st.radius_S:.6g})")
    solve = planner_optimum if planner else nash_equilibrium
    res = solve(alpha, p, net)
    out = Path(args.out)
    name = "planner" if planner else "equilibrium"
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_equilibrium(out / f"{name}.csv", res.y_T, res.y_S)
    report["residual"] = res.residual_norm
    _write(out / "stability.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / f'{name}.csv'} (best-response residual {res.residual_norm:.3g})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, "simulate") if args.config else {}
    seed = _seed(cfg, args)
    dgp = _dgp(cfg, seed, args)
    ds = simulate(dgp, int(cfg.get("replication", 0)))
    if not ds.structural_residual <= 1e-8 * (1 + max(np.abs(ds.y_T).max(), np.abs(ds.y_S).max())):
        raise NumericError(f"structural residual {ds.structural_residual:.3g} exceeds tolerance")
    out = dataio.write_dataset(args.out, ds)
    _write(out / "run_config.json", json.dumps({**cfg, "seed": seed}, indent=2, sort_keys=True) + "\n")
    print(f"wrote dataset to {out} (structural residual {ds.structural_residual:.3g})")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = load_config(args.config, "estimate") if args.config else {}
    normalize = cfg.get("normalize")
    if args.normalize is not None:
        normalize = args.normalize == "on"
    data = dataio.read_dataset(args.dataset, normalize=normalize)
    depth = args.iv_depth or cfg.get("depth", 3)
    results = []
    for mode in _modes(args.mode, cfg.get("modes", ["2SLS"])):
        try:
            results.extend(estimate_system(data, mode, depth=depth, instrument_subset=cfg.get("instrument_subset")))
        except NumericError as exc:
            sys.stderr.write(f"estimation failed\n  mode: {mode}\n  depth: {depth}\n"
                             f"  error: {type(exc).__name__}: {exc}\n")
            raise
    out = Path(args.out)
    _write(out / "estimates.csv", results_to_csv(results))
    _write(out / "estimates.json", results_to_json(results) + "\n")
    for r in results:
        print(f"{r.mode:8s} {r.equation}: " + ", ".join(f"{k}={v:.4f}" for k, v in r.estimates().items()))
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    cfg = load_config(args.config, "montecarlo") if args.config else {}
    seed = _seed(cfg, args)
    mc = McConfig(
        base=_dgp(cfg, seed, args),
        rho_grid=tuple(cfg.get("rho_grid", (0.4, 0.6, 0.8))),
        regimes=tuple(cfg.get("regimes", ("weak",))),
        replications=int(cfg.get("replications", 500)),
        modes=tuple(_modes(args.mode, cfg.get("modes", ["2SLS", "2SLS-EC"]))),
        seed=seed, jobs=args.jobs,
        depth=args.iv_depth or cfg.get("depth", 3),
        instrument_subset=cfg.get("instrument_subset"),
    )
    report = run_experiment(mc)
    out = Path(args.out)
    _write(out / "report.csv", report.to_csv())
    _write(out / "report.json", report.to_json() + "\n")
    _write(out / "run.json", json.dumps({"wall_time": report.metadata["wall_time"], "jobs": args.jobs,
                                         "config": mc.to_dict()}, indent=2, sort_keys=True) + "\n")
    n_fail = len(report.metadata["failures"])
    print(f"wrote {out / 'report.csv'} ({len(report.cells)} cells, {n_fail} failed estimations, "
          f"{report.metadata['wall_time']:.1f} s)")
    if args.compare:
        reference = load_reference(None if args.compare == "bundled" else args.compare)
        cmp = compare_to_reference(report, reference, cfg.get("tolerances"), cfg.get("compare_params"))
        _write(out / "comparison.csv", cmp.to_csv())
        _write(out / "comparison.json", json.dumps(cmp.summary(), indent=2, sort_keys=True) + "\n")
        s = cmp.summary()
        print(f"reference comparison: {s['compared'] - s['failed']}/{s['compared']} within tolerance")
        if not cmp.passed:
            return EXIT_COMPARISON
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scitech-net", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, hlp in (("equilibrium", "Nash equilibrium efforts"), ("planner", "planner-optimal efforts")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("--config", type=Path)
        p.add_argument("--example", action="store_true", help="use the bundled six-agent example")
        p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("simulate", help="draw one dataset")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--normalize", choices=["on", "off"])

    p = sub.add_parser("estimate", help="estimate both equations from a dataset directory")
    p.add_argument("dataset", type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mode", help="comma-separated list, e.g. 2sls,2sls-ec")
    p.add_argument("--normalize", choices=["on", "off"])
    p.add_argument("--iv-depth", type=int, dest="iv_depth")

    p = sub.add_parser("montecarlo", help="replication study over the rho grid")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--mode")
    p.add_argument("--normalize", choices=["on", "off"])
    p.add_argument("--iv-depth", type=int, dest="iv_depth")
    p.add_argument("--compare", help="reference CSV, or 'bundled' for the shipped table")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command in ("equilibrium", "planner"):
            return cmd_game(args, planner=args.command == "planner")
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "estimate":
            return cmd_estimate(args)
        return cmd_montecarlo(args)
    except PreconditionError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_PRECONDITION
    except ScitechError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return exc.exit_code
    except (TypeError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
