import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scitech_net.dgp import DgpConfig
from scitech_net.netcore import (
    AgentAbilities,
    CommunityPartition,
    GameParameters,
    LayeredNetwork,
    assemble_block_diagonal,
    spectral_radius,
)

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_symmetric_binary(rng, n, p):
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return (upper | upper.T).astype(float)


def random_layered(rng, sizes_T, sizes_S, p_link=0.3, p_cross=0.6):
    """Random binary two-layer network; every technology agent has at most one science counterpart."""
    pT, pS = CommunityPartition(tuple(sizes_T)), CommunityPartition(tuple(sizes_S))
    g_T = assemble_block_diagonal([random_symmetric_binary(rng, n, p_link) for n in pT.sizes])
    g_S = assemble_block_diagonal([random_symmetric_binary(rng, n, p_link) for n in pS.sizes])
    g_TS = np.zeros((pT.total, pS.total))
    for sT, sS in zip(pT.slices(), pS.slices()):
        nT, nS = sT.stop - sT.start, sS.stop - sS.start
        perm = rng.permutation(nS)
        for k in range(min(nT, nS)):
            if rng.random() < p_cross:
                g_TS[sT.start + k, sS.start + perm[k]] = 1.0
    return LayeredNetwork(g_T, g_S, g_TS, g_TS.T.copy(), pT, pS)


def random_stable_game(rng, max_n=60, beta_range=(-0.4, 0.4), positive_alpha=False):
    c = int(rng.integers(1, 4))
    sizes_T = rng.integers(1, max_n // c + 1, size=c)
    sizes_S = rng.integers(1, max_n // c + 1, size=c)
    net = random_layered(rng, sizes_T, sizes_S, p_link=float(rng.uniform(0.05, 0.5)))
    beta = float(rng.uniform(*beta_range))
    budget = 1 - abs(beta)
    rT = max(spectral_radius(net.g_T), 1e-9)
    rS = max(spectral_radius(net.g_S), 1e-9)
    p = GameParameters(lambda_T=float(rng.uniform(0, 0.95)) * budget / rT,
                       lambda_S=float(rng.uniform(0, 0.95)) * budget / rS, beta=beta)
    lo = 0.1 if positive_alpha else -1.0
    alpha = AgentAbilities(rng.uniform(lo, 2.0, net.n_T), rng.uniform(lo, 2.0, net.n_S))
    return net, p, alpha


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_cfg():
    return DgpConfig(n_communities_T=4, n_communities_S=4, community_size_T=20, community_size_S=20, seed=7)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one acceptance outcome: prints the line and keeps it for the session summary."""
    store = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(number: int, title: str, passed: bool, detail: str) -> None:
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} | {detail}"
        store[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(ACCEPTANCE_KEY, {})
    if store:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(store):
            terminalreporter.write_line(store[n])
