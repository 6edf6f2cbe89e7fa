import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scitech_net.dgp import DgpConfig, simulate
from scitech_net.errors import AggregationError, DomainError, SchemaError
from scitech_net.estimators import estimate_system
from scitech_net.montecarlo import (
    PARAMS,
    McCell,
    McConfig,
    McReport,
    aggregate,
    compare_to_reference,
    load_reference,
    metrics,
    replicate,
    run_experiment,
    run_replication,
)

TINY = DgpConfig(n_communities_T=3, n_communities_S=3, community_size_T=15, community_size_S=15)


def tiny_mc(**kw):
    return McConfig(**{"base": TINY, "rho_grid": (0.0, 0.8), "replications": 3, "seed": 5, **kw})


def spreadsheet(values, truth):
    n = len(values)
    total = 0.0
    for v in values:
        total += v - truth
    bias = total / n
    sq = 0.0
    for v in values:
        sq += (v - truth) ** 2
    mean = sum(values) / n
    dev = 0.0
    for v in values:
        dev += (v - mean) ** 2
    return bias, math.sqrt(sq / n), math.sqrt(dev / (n - 1))


class TestConfig:
    def test_defaults(self):
        c = McConfig()
        assert c.rho_grid == (0.4, 0.6, 0.8) and c.replications == 500 and c.modes == ("2SLS", "2SLS-EC")

    @pytest.mark.parametrize("kw", [{"replications": 1}, {"rho_grid": ()}, {"regimes": ("medium",)},
                                    {"jobs": 0}, {"modes": ("ols",)}, {"rho_grid": (1.2,)}])
    def test_invalid(self, kw):
        with pytest.raises(DomainError):
            McConfig(**kw)

    def test_digest_ignores_jobs(self):
        assert tiny_mc(jobs=1).digest() == tiny_mc(jobs=4).digest()
        assert tiny_mc().digest() != tiny_mc(seed=6).digest()

    def test_cell_config(self):
        c = McConfig(seed=9).cell_config("strong", 0.6)
        assert (c.lambda_T, c.lambda_S, c.rho, c.seed) == (0.6, 0.5, 0.6, 9)


class TestReplication:
    def test_deterministic(self):
        cfg = tiny_mc()
        assert run_replication(cfg, "weak", 0.8, 1).estimates == run_replication(cfg, "weak", 0.8, 1).estimates

    def test_diagnostics_recorded(self):
        r = run_replication(tiny_mc(), "weak", 0.8, 0)
        for mode in ("2SLS", "2SLS-EC"):
            d = r.diagnostics[mode]
            assert 0 <= d["oir_p_T"] <= 1 and 0 <= d["oir_p_S"] <= 1 and d["cd_F_T"] >= 0

    def test_replicate_matches_experiment(self):
        cfg = tiny_mc()
        reps = replicate(cfg)
        assert [r.rep_index for r in reps[:3]] == [0, 1, 2] and len(reps) == 6
        assert run_experiment(cfg, reps).to_csv() == run_experiment(cfg).to_csv()

    def test_distinct_replications(self):
        cfg = tiny_mc()
        a, b = run_replication(cfg, "weak", 0.8, 0), run_replication(cfg, "weak", 0.8, 1)
        assert a.estimates["2SLS"] != b.estimates["2SLS"]
        assert not np.array_equal(simulate(cfg.cell_config("weak", 0.8), 0).y_T,
                                  simulate(cfg.cell_config("weak", 0.8), 1).y_T)

    def test_failures_recorded(self, monkeypatch):
        from scitech_net import montecarlo
        from scitech_net.errors import SingularityError

        def broken(*a, **k):
            raise SingularityError("H'H is singular")

        monkeypatch.setattr(montecarlo, "estimate_system", broken)
        r = run_replication(tiny_mc(), "weak", 0.0, 0)
        assert r.estimates == {"2SLS": None, "2SLS-EC": None}
        assert "SingularityError" in r.errors["2SLS"]

    @pytest.mark.slow
    def test_exogenous_networks_consistent_on_average(self):
        cfg = DgpConfig(rho=0.0, seed=17)
        for mode in ("2SLS", "2SLS-EC"):
            est, se = [], []
            for rep in range(100):
                rT, _ = estimate_system(simulate(cfg, rep), mode)
                est.append(rT.delta[0])
                se.append(rT.robust_se[0])
            assert abs(np.mean(est) - 0.3) <= 3 * np.mean(se)


class TestAggregate:
    def test_hand_case(self):
        b, r, e = metrics([0.4, 0.2], 0.3)
        assert b == pytest.approx(0, abs=1e-15) and r == pytest.approx(0.1) and e == pytest.approx(math.sqrt(0.02))

    def test_exact_estimates(self):
        assert metrics([0.3] * 5, 0.3) == (0.0, 0.0, 0.0)

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=50), st.floats(-10, 10))
    def test_spreadsheet_oracle_and_identities(self, values, truth):
        b, r, e = metrics(values, truth)
        ob, orr, oe = spreadsheet(values, truth)
        assert b == pytest.approx(ob, abs=1e-12) and r == pytest.approx(orr, abs=1e-12)
        assert e == pytest.approx(oe, abs=1e-12)
        n = len(values)
        assert r * r >= e * e * (n - 1) / n - 1e-12 and r >= abs(b) - 1e-12
        assert r * r == pytest.approx(b * b + e * e * (n - 1) / n, abs=1e-9)

    def test_report_cells(self):
        est = {("weak", 0.4, "2SLS"): [{"lambda_T": 0.4}, None, {"lambda_T": 0.2}]}
        rep = aggregate(est, {("weak", 0.4): {"lambda_T": 0.3}})
        c = rep.cell("weak", 0.4, "2SLS", "lambda_T")
        assert (c.n_ok, c.n_fail) == (2, 1) and c.rmse == pytest.approx(0.1)

    def test_too_few_names_cell(self):
        with pytest.raises(AggregationError, match="rho=0.6.*2SLS-EC"):
            aggregate({("weak", 0.6, "2SLS-EC"): [{"lambda_T": 0.4}, None]}, {"lambda_T": 0.3})


class TestExperiment:
    def test_smoke_and_identities(self):
        rep = run_experiment(replace(tiny_mc(), replications=2))
        assert len(rep.cells) == 2 * 2 * len(PARAMS)
        for c in rep.cells:
            assert c.n_ok + c.n_fail == 2
            assert c.rmse ** 2 >= c.ese ** 2 * (c.n_ok - 1) / c.n_ok - 1e-12 and c.rmse >= abs(c.bias) - 1e-12
        meta = json.loads(rep.to_json())["metadata"]
        assert "wall_time" not in meta and meta["seed"] == 5 and "wall_time" in rep.metadata

    def test_independent_of_worker_count(self):
        a = run_experiment(tiny_mc(jobs=1))
        b = run_experiment(tiny_mc(jobs=3))
        assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()

    def test_csv_round_trip(self):
        rep = run_experiment(replace(tiny_mc(), replications=2, rho_grid=(0.4,)))
        back = McReport.from_csv(rep.to_csv())
        assert back.cells == rep.cells

    def test_bad_csv(self):
        with pytest.raises(SchemaError):
            McReport.from_csv("a,b\n1,2\n")


class TestCompare:
    def report(self):
        ref = load_reference()
        return McReport([c for c in ref.cells if c.regime == "weak"])

    def test_bundled_reference(self):
        ref = load_reference()
        assert len(ref.cells) == 96
        assert ref.bias("weak", 0.8, "2SLS", "lambda_T") == pytest.approx(-0.216)
        assert ref.bias("weak", 0.8, "2SLS-EC", "lambda_T") == pytest.approx(-0.057)

    def test_equal_reports_pass(self):
        rep = self.report()
        cmp = compare_to_reference(rep, load_reference())
        assert cmp.passed and all(r.delta == 0 for r in cmp.rows)
        assert len(cmp.rows) == len(rep.cells)

    def test_one_cell_off(self):
        rep = self.report()
        target = rep.cells[7]
        rep.cells[7] = replace(target, bias=target.bias + 0.5)
        cmp = compare_to_reference(rep, load_reference(), {"bias": 0.08})
        failed = [r for r in cmp.rows if not r.passed]
        assert len(failed) == 1 and (failed[0].regime, failed[0].param) == (target.regime, target.param)
        assert cmp.summary()["failed"] == 1 and "fail" in cmp.to_csv()

    def test_key_mismatch(self):
        rep = self.report()
        rep.cells.append(McCell("weak", 0.4, "2SLS", "lambda_X", 0, 0, 0, 1, 0))
        with pytest.raises(SchemaError):
            compare_to_reference(rep, load_reference())

    def test_unknown_metric(self):
        with pytest.raises(DomainError):
            compare_to_reference(self.report(), load_reference(), {"mae": 1.0})
