"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N PASS|FAIL`` line (also repeated in the pytest
terminal summary) and then asserts the same outcome.
"""

import hashlib
import math
import time

import numpy as np
import pytest
from scipy.special import expit

from scitech_net.dgp import DgpConfig, simulate
from scitech_net.estimators import estimate_system, two_sls, within_transform
from scitech_net.game import best_response_residual, nash_equilibrium, planner_optimum
from scitech_net.linkform import fit_logit
from scitech_net.montecarlo import McConfig, aggregate, metrics, replicate, run_experiment
from scitech_net.netcore import AgentAbilities, CommunityPartition, GameParameters, spectral_radius

from conftest import random_layered, random_stable_game
from test_game import damped_iteration
from test_linkform import dyads_from, irls_oracle, overlapping_dataset

SEED = 1
REPS = 500


def fmt(x):
    return f"{x:+.4f}"


@pytest.fixture(scope="module")
def exogenous_run():
    cfg = McConfig(rho_grid=(0.0,), regimes=("weak",), replications=REPS, seed=SEED)
    reps = replicate(cfg)
    return cfg, reps, run_experiment(cfg, reps)


@pytest.fixture(scope="module")
def weak_run():
    cfg = McConfig(rho_grid=(0.4, 0.6, 0.8), regimes=("weak",), replications=REPS, seed=SEED)
    t0 = time.perf_counter()
    reps = replicate(cfg)
    return cfg, reps, run_experiment(cfg, reps), time.perf_counter() - t0


@pytest.fixture(scope="module")
def strong_run():
    cfg = McConfig(rho_grid=(0.8,), regimes=("strong",), replications=REPS, seed=SEED)
    t0 = time.perf_counter()
    return run_experiment(cfg), time.perf_counter() - t0


def test_criterion_1_equilibrium_fixed_point(acceptance):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_res, worst_gap = 0.0, 0.0
    ok = True
    for _ in range(100):
        net, p, alpha = random_stable_game(rng, max_n=60)
        eq = nash_equilibrium(alpha, p, net)
        rT, rS = best_response_residual(eq.y_T, eq.y_S, alpha, p, net)
        scale = 1 + np.max(np.abs(eq.stacked))
        res = max(np.max(np.abs(rT)), np.max(np.abs(rS))) / scale
        y_T, y_S = damped_iteration(alpha, p, net)
        gap = max(np.max(np.abs(y_T - eq.y_T)), np.max(np.abs(y_S - eq.y_S)))
        worst_res, worst_gap = max(worst_res, res), max(worst_gap, gap)
        ok &= res <= 1e-8 and gap <= 1e-6
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 10
    acceptance(1, "equilibrium fixed point", ok,
               f"max scaled residual {worst_res:.2e} (<=1e-8), max oracle gap {worst_gap:.2e} (<=1e-6), "
               f"{elapsed:.1f} s (<10 s)")
    assert ok


def test_criterion_2_planner_dominance(acceptance):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    ok, weak_violations, min_linked_gap = True, 0, math.inf
    for _ in range(50):
        c = int(rng.integers(1, 4))
        net = random_layered(rng, rng.integers(2, 60 // c + 1, c), rng.integers(2, 60 // c + 1, c),
                             p_link=float(rng.uniform(0.05, 0.5)))
        # doubled effects must stay inside the stability region
        p = GameParameters(float(rng.uniform(0.01, 0.45)) / max(spectral_radius(net.g_T), 1e-9),
                           float(rng.uniform(0.01, 0.45)) / max(spectral_radius(net.g_S), 1e-9), 0.0)
        alpha = AgentAbilities(rng.uniform(0.1, 2.0, net.n_T), rng.uniform(0.1, 2.0, net.n_S))
        po, ne = planner_optimum(alpha, p, net), nash_equilibrium(alpha, p, net)
        diff = po.stacked - ne.stacked
        linked = np.concatenate([net.g_T.sum(axis=1) > 0, net.g_S.sum(axis=1) > 0])
        weak_violations += int(np.sum(diff < 0))
        if linked.any():
            min_linked_gap = min(min_linked_gap, float(diff[linked].min()))
        ok &= bool(np.all(diff >= 0) and np.all(diff[linked] > 0))
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 10
    acceptance(2, "planner dominance", ok,
               f"{weak_violations} agents with planner < Nash, smallest gap among linked agents "
               f"{min_linked_gap:.3e} (>0), {elapsed:.1f} s (<10 s)")
    assert ok


def test_criterion_3_logit_oracle(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        x, y, fit = overlapping_dataset(seed)
        oracle = irls_oracle(np.column_stack([np.ones(len(y)), x]), y)
        worst = max(worst, float(np.max(np.abs(fit.coefficients - oracle))))
    r = np.random.default_rng(303)
    w = 2 - (r.uniform(3, 7, 100_000) - r.uniform(3, 7, 100_000)) ** 2
    labels = (r.random(w.size) < expit(1 + 0.5 * w)).astype(int)
    big = fit_logit(dyads_from(w[:, None], labels))
    z = np.abs(big.coefficients - [1.0, 0.5]) / big.std_errors
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and bool(np.all(z <= 3)) and elapsed < 30
    acceptance(3, "logit oracle", ok,
               f"max |coef - IRLS| {worst:.2e} (<=1e-6), tau_hat {np.round(big.coefficients, 4).tolist()} "
               f"at {z.max():.2f} SE (<=3), {elapsed:.1f} s (<30 s)")
    assert ok


def test_criterion_4_within_and_2sls_algebra(acceptance):
    rng = np.random.default_rng(404)
    part = CommunityPartition((7, 12, 5, 30))
    j = within_transform(np.eye(part.total), part)
    idem = float(np.max(np.abs(j @ j - j)))
    annih = float(np.max(np.abs(within_transform(np.repeat(rng.normal(size=4), part.sizes), part))))
    z = rng.normal(size=(120, 4))
    y = rng.normal(size=120)
    ols_gap = float(np.max(np.abs(two_sls(y, z, z).delta - np.linalg.lstsq(z, y, rcond=None)[0])))
    h = np.column_stack([z, rng.normal(size=(120, 3))])
    delta = np.array([0.3, 0.1, 1.0, 0.5])
    exact_gap = float(np.max(np.abs(two_sls(z @ delta, z, h).delta - delta)))
    ok = idem <= 1e-12 and annih <= 1e-12 and ols_gap <= 1e-10 and exact_gap <= 1e-10
    acceptance(4, "within/2SLS algebra", ok,
               f"|JJ-J| {idem:.1e}, |J const| {annih:.1e} (<=1e-12); |2SLS-OLS| {ols_gap:.1e}, "
               f"exact recovery {exact_gap:.1e} (<=1e-10)")
    assert ok


@pytest.mark.slow
def test_criterion_5_exogenous_network_consistency(acceptance, exogenous_run):
    cfg, _, report = exogenous_run
    parts, ok = [], True
    for mode in ("2SLS", "2SLS-EC"):
        for param in ("lambda_T", "lambda_S"):
            b = report.bias("weak", 0.0, mode, param)
            ok &= abs(b) <= 0.02
            parts.append(f"{mode} {param} {fmt(b)}")
    fails = sum(c.n_fail for c in report.cells if c.param == "lambda_T")
    acceptance(5, "exogenous-network consistency (|bias| <= 0.02)", ok,
               ", ".join(parts) + f"; {cfg.replications} reps, {fails} failed estimations")
    assert ok


@pytest.mark.slow
def test_criterion_6_table_reproduction(acceptance, weak_run, strong_run):
    _, _, weak, t_weak = weak_run
    strong, t_strong = strong_run
    grid = (0.4, 0.6, 0.8)
    notes, ok = [], True

    def b(report, regime, rho, mode, param):
        return report.bias(regime, rho, mode, param)

    # (a) 2SLS biases negative and growing in magnitude with rho
    a_ok = True
    for param in ("lambda_T", "lambda_S"):
        seq = [b(weak, "weak", r, "2SLS", param) for r in grid]
        a_ok &= all(v < 0 for v in seq) and abs(seq[0]) < abs(seq[1]) < abs(seq[2])
        notes.append(f"2SLS {param} " + "/".join(fmt(v) for v in seq))
    # (b) EC at most half the 2SLS bias
    b_ok = True
    for param in ("lambda_T", "lambda_S"):
        seq = [b(weak, "weak", r, "2SLS-EC", param) for r in grid]
        b_ok &= all(abs(e) <= 0.5 * abs(b(weak, "weak", r, "2SLS", param)) for e, r in zip(seq, grid))
        notes.append(f"EC {param} " + "/".join(fmt(v) for v in seq))
    # (c) bands at rho = 0.8
    bands = [
        (weak, "weak", "2SLS", "lambda_T", -0.30, -0.13),
        (weak, "weak", "2SLS-EC", "lambda_T", -0.12, 0.00),
        (weak, "weak", "2SLS", "lambda_S", -0.26, -0.11),
        (weak, "weak", "2SLS-EC", "lambda_S", -0.13, 0.00),
        (strong, "strong", "2SLS", "lambda_T", -0.30, -0.10),
        (strong, "strong", "2SLS-EC", "lambda_T", -0.08, 0.04),
    ]
    c_ok, missed = True, []
    for rep, regime, mode, param, lo, hi in bands:
        v = b(rep, regime, 0.8, mode, param)
        if not lo <= v <= hi:
            c_ok = False
            missed.append(f"{regime} {mode} {param} {fmt(v)} not in [{lo}, {hi}]")
    elapsed = t_weak + t_strong
    ok = a_ok and b_ok and c_ok and elapsed < 45 * 60
    detail = (f"(a) {'pass' if a_ok else 'fail'}, (b) {'pass' if b_ok else 'fail'}, (c) {'pass' if c_ok else 'fail'}"
              f"{' [' + '; '.join(missed) + ']' if missed else ''}; weak rho 0.4/0.6/0.8: " + ", ".join(notes)
              + f"; {elapsed:.0f} s")
    acceptance(6, "table reproduction", ok, detail)
    assert ok


@pytest.mark.slow
def test_criterion_7_metric_identities(acceptance, exogenous_run, weak_run, strong_run):
    cells = exogenous_run[2].cells + weak_run[2].cells + strong_run[0].cells
    worst = max(abs(c.rmse ** 2 - (c.bias ** 2 + c.ese ** 2 * (c.n_ok - 1) / c.n_ok)) for c in cells)
    rep = aggregate({("weak", 0.4, "2SLS"): [{"lambda_T": 0.4}, {"lambda_T": 0.2}]}, {"lambda_T": 0.3})
    c = rep.cells[0]
    hand = max(abs(c.bias - 0.0), abs(c.rmse - 0.1), abs(c.ese - math.sqrt(0.02)))
    values = [0.31, 0.27, 0.35, 0.22, 0.30]
    b, r, e = metrics(values, 0.3)
    mean = sum(values) / 5
    oracle = (mean - 0.3, math.sqrt(sum((v - 0.3) ** 2 for v in values) / 5),
              math.sqrt(sum((v - mean) ** 2 for v in values) / 4))
    hand = max(hand, *(abs(u - v) for u, v in zip((b, r, e), oracle)))
    ok = worst <= 1e-10 and hand <= 1e-12
    acceptance(7, "metric identities", ok,
               f"{len(cells)} cells, max identity gap {worst:.1e} (<=1e-10), hand oracle gap {hand:.1e} (<=1e-12)")
    assert ok


def digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


@pytest.mark.slow
def test_criterion_8_determinism(acceptance):
    cfg = DgpConfig(rho=0.8, seed=SEED)
    d1, d2 = simulate(cfg, 3), simulate(cfg, 3)
    sim_ok = digest(d1.y_T, d1.y_S, d1.net.g_T, d1.net.g_S, d1.net.g_TS) == \
        digest(d2.y_T, d2.y_S, d2.net.g_T, d2.net.g_S, d2.net.g_TS)
    est_ok = all(digest(a.delta, a.robust_se, a.vcov) == digest(b.delta, b.robust_se, b.vcov)
                 for mode in ("2SLS", "2SLS-EC")
                 for a, b in zip(estimate_system(d1, mode), estimate_system(d2, mode)))
    mc = McConfig(rho_grid=(0.4, 0.6, 0.8), replications=16, seed=SEED)
    r1 = McConfig(**{**mc.__dict__, "jobs": 1})
    r8 = McConfig(**{**mc.__dict__, "jobs": 8})
    a, b, again = run_experiment(r1), run_experiment(r8), run_experiment(r1)
    mc_ok = a.to_csv() == b.to_csv() == again.to_csv() and a.to_json() == b.to_json() == again.to_json()
    ok = sim_ok and est_ok and mc_ok
    acceptance(8, "determinism", ok,
               f"simulate rerun {'identical' if sim_ok else 'differs'}, estimate rerun "
               f"{'identical' if est_ok else 'differs'}, run_experiment jobs 1/8/rerun "
               f"{'byte-identical' if mc_ok else 'differ'}")
    assert ok


@pytest.mark.slow
def test_criterion_9_diagnostics(acceptance, exogenous_run, weak_run):
    _, exo, _ = exogenous_run
    sizes = {}
    for eq in ("T", "S"):
        p = np.array([r.diagnostics["2SLS"][f"oir_p_{eq}"] for r in exo if "2SLS" in r.diagnostics])
        sizes[eq] = float(np.mean(p < 0.05))
    size_ok = all(0.02 <= s <= 0.09 for s in sizes.values())
    _, reps, _, _ = weak_run
    at8 = [r for r in reps if r.rho == 0.8]
    med = {m: {eq: float(np.median([r.diagnostics[m][f"oir_p_{eq}"] for r in at8 if m in r.diagnostics]))
               for eq in ("T", "S")} for m in ("2SLS", "2SLS-EC")}
    median_ok = all(med["2SLS"][eq] < med["2SLS-EC"][eq] for eq in ("T", "S"))
    ok = size_ok and median_ok
    acceptance(9, "diagnostics sanity", ok,
               f"OIR size at 5% (rho 0, 2SLS, {len(exo)} reps): T {sizes['T']:.3f}, S {sizes['S']:.3f} "
               f"(in [0.02, 0.09]); median OIR p at rho 0.8, 2SLS vs EC: technology {med['2SLS']['T']:.3f} vs "
               f"{med['2SLS-EC']['T']:.3f}, science {med['2SLS']['S']:.3f} vs {med['2SLS-EC']['S']:.3f}")
    assert ok
