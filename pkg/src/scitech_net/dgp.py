"""Simulated two-layer networks with endogenous link formation.

One draw produces: covariates (Uniform(3, 7) and a centred normal column),
community fixed effects, correlated heterogeneity pairs ``(nu, u)``, within-layer
links from a logit in a dyadic similarity plus ``u_i + u_j``, sparse cross-layer
links, heteroskedastic errors ``eps = nu * kappa`` and outcomes solved from the
simultaneous equations system.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import rng as rngmod
from .errors import DomainError, NumericError, SingularityError
from .netcore import CommunityPartition, GameParameters, LayeredNetwork, spectral_radius

DEFAULT_KAPPA = (1.0, math.sqrt(2.0), math.sqrt(3.0))
REGIMES = {"weak": (0.3, 0.2), "strong": (0.6, 0.5)}


@dataclass(frozen=True)
class DgpConfig:
    n_communities_T: int = 10
    n_communities_S: int = 10
    community_size_T: int = 30
    community_size_S: int = 30
    lambda_T: float = 0.3
    lambda_S: float = 0.2
    lambda_TS: float = 0.1
    lambda_ST: float = 0.1
    gamma_T: tuple[float, float] = (1.0, 0.5)
    gamma_S: tuple[float, float] = (1.0, 0.5)
    tau_T: tuple[float, float] = (1.0, 0.5)
    tau_S: tuple[float, float] = (1.0, 0.5)
    rho: float = 0.8
    kappa_levels: tuple[float, ...] = DEFAULT_KAPPA
    seed: int = 0
    row_normalize_networks: bool = True
    # open choices, kept overridable
    x2_sd: float = 0.5
    cross_link_prob: float = 0.5
    similarity_column: int = 0

    def __post_init__(self):
        for name in ("n_communities_T", "n_communities_S", "community_size_T", "community_size_S"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be a positive integer")
        for name in ("gamma_T", "gamma_S", "tau_T", "tau_S"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 2:
                raise DomainError(f"{name} must have length 2")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "kappa_levels", tuple(float(k) for k in self.kappa_levels))
        if not -1 <= self.rho <= 1:
            raise DomainError(f"rho must lie in [-1, 1], got {self.rho}")
        if not 0 <= int(self.seed) <= rngmod.MAX_SEED:
            raise DomainError("seed must be an unsigned 64-bit integer")
        if not 0 <= self.cross_link_prob <= 1:
            raise DomainError("cross_link_prob must lie in [0, 1]")
        if self.similarity_column not in (0, 1):
            raise DomainError("similarity_column must be 0 or 1")
        self.truth()  # validates the |lambda| + |lambda_cross| < 1 restrictions

    @property
    def partition_T(self) -> CommunityPartition:
        return CommunityPartition.equal(self.n_communities_T, self.community_size_T)

    @property
    def partition_S(self) -> CommunityPartition:
        return CommunityPartition.equal(self.n_communities_S, self.community_size_S)

    def truth(self) -> GameParameters:
        return GameParameters(lambda_T=self.lambda_T, lambda_S=self.lambda_S,
                              lambda_TS=self.lambda_TS, lambda_ST=self.lambda_ST, econometric=True)

    def with_regime(self, regime: str) -> "DgpConfig":
        lT, lS = REGIMES[regime]
        return replace(self, lambda_T=lT, lambda_S=lS)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SimulatedDataset:
    """One draw of the simulation with all intermediate quantities retained."""

    cfg: DgpConfig
    net: LayeredNetwork
    features_T: np.ndarray
    features_S: np.ndarray
    similarity_T: list
    similarity_S: list
    mu_T: np.ndarray
    mu_S: np.ndarray
    nu_T: np.ndarray
    nu_S: np.ndarray
    u_T: np.ndarray
    u_S: np.ndarray
    kappa_T: np.ndarray
    kappa_S: np.ndarray
    eps_T: np.ndarray
    eps_S: np.ndarray
    y_T: np.ndarray
    y_S: np.ndarray
    structural_residual: float
    replication: int = 0

    @property
    def truth(self) -> dict:
        c = self.cfg
        return {
            "lambda_T": c.lambda_T, "lambda_TS": c.lambda_TS,
            "gamma_T1": c.gamma_T[0], "gamma_T2": c.gamma_T[1],
            "lambda_S": c.lambda_S, "lambda_ST": c.lambda_ST,
            "gamma_S1": c.gamma_S[0], "gamma_S2": c.gamma_S[1],
        }

    def model_network(self) -> LayeredNetwork:
        return self.net.row_normalized() if self.cfg.row_normalize_networks else self.net

    def observed(self):
        from .estimators import ObservedData

        return ObservedData(
            net=self.net, x_T=self.features_T, x_S=self.features_S, y_T=self.y_T, y_S=self.y_S,
            link_features_T=[block_matrix(self.similarity_T)], link_features_S=[block_matrix(self.similarity_S)],
            normalize=self.cfg.row_normalize_networks,
        )


def block_matrix(blocks: Sequence[np.ndarray]) -> np.ndarray:
    from .netcore import assemble_block_diagonal

    return assemble_block_diagonal(blocks)


def draw_covariates(cfg: DgpConfig, rng: np.random.Generator):
    out = []
    for n in (cfg.partition_T.total, cfg.partition_S.total):
        x = np.empty((n, 2))
        x[:, 0] = rng.uniform(3.0, 7.0, size=n)
        x[:, 1] = rng.normal(0.0, cfg.x2_sd, size=n)
        out.append(x)
    return out[0], out[1]


def draw_fixed_effects(cfg: DgpConfig, rng: np.random.Generator):
    out = []
    for part in (cfg.partition_T, cfg.partition_S):
        mu = rng.standard_normal(part.n_communities)
        out.append(np.repeat(mu, part.sizes))
    return out[0], out[1]


def correlated_pair(z1: np.ndarray, z2: np.ndarray, rho: float):
    """Map independent standard normals to a unit-variance pair with correlation rho."""
    if not -1 <= rho <= 1:
        raise DomainError(f"|rho| must be <= 1, got {rho}")
    return z1, rho * z1 + math.sqrt(1.0 - rho * rho) * z2


def draw_heterogeneity(cfg: DgpConfig, rng: np.random.Generator):
    """``((nu_T, u_T), (nu_S, u_S))`` with per-agent correlation ``cfg.rho``.

    The underlying standard normals do not depend on rho, so draws at different rho
    share common random numbers.
    """
    out = []
    for n in (cfg.partition_T.total, cfg.partition_S.total):
        z = rng.standard_normal((2, n))
        out.append(correlated_pair(z[0], z[1], cfg.rho))
    return out[0], out[1]


def dyadic_similarity(features, partition: CommunityPartition | None = None, column: int = 0):
    """``w_ij = 2 - (x_i - x_j)^2`` on one covariate column.

    Returns one n x n matrix, or a list of per-community blocks when a partition is given.
    """
    x = np.asarray(features, dtype=float)
    x = x[:, column] if x.ndim == 2 else x
    if partition is None:
        return 2.0 - (x[:, None] - x[None, :]) ** 2
    if partition.total != x.size:
        raise DomainError("features do not match the partition")
    return [2.0 - (x[s, None] - x[None, s]) ** 2 for s in partition.slices()]


def generate_within_links(similarity, tau, u, rng: np.random.Generator) -> np.ndarray:
    """Symmetric binary block: each pair i<j links with prob. logistic(tau0 + tau1 w_ij + u_i + u_j)."""
    w = np.asarray(similarity, dtype=float)
    u = np.asarray(u, dtype=float)
    n = u.size
    prob = expit(tau[0] + tau[1] * w + u[:, None] + u[None, :])
    draws = rng.random((n, n))
    upper = np.triu(draws < prob, k=1)
    g = (upper | upper.T).astype(float)
    return g


def generate_cross_links(cfg: DgpConfig, rng: np.random.Generator):
    """Each technology row gets, with probability ``cross_link_prob``, one same-community science link."""
    pT, pS = cfg.partition_T, cfg.partition_S
    if pT.n_communities != pS.n_communities:
        raise DomainError("cross links need the same number of communities in both layers")
    g_TS = np.zeros((pT.total, pS.total))
    for sT, sS in zip(pT.slices(), pS.slices()):
        nT, nS = sT.stop - sT.start, sS.stop - sS.start
        active = rng.random(nT) < cfg.cross_link_prob
        cols = rng.integers(0, nS, size=nT)
        rows = np.flatnonzero(active)
        g_TS[sT.start + rows, sS.start + cols[rows]] = 1.0
    return g_TS, g_TS.T.copy()


def compose_errors(nu, kappa_levels: Sequence[float], partition: CommunityPartition | None = None):
    """``eps_i = nu_i * kappa_i``; kappa cycles through the sorted levels by within-community index.

    Returns ``(eps, kappa)``.
    """
    if len(kappa_levels) == 0:
        raise DomainError("kappa_levels is empty")
    nu = np.asarray(nu, dtype=float)
    levels = np.sort(np.asarray(kappa_levels, dtype=float))
    idx = partition.within_index() if partition is not None else np.arange(nu.size)
    kappa = levels[idx % levels.size]
    return nu * kappa, kappa


def stacked_interaction(net: LayeredNetwork, p: GameParameters, sT: slice, sS: slice) -> np.ndarray:
    """Community block of G(lambda) = [[lT G_T, lTS G_TS], [lST G_ST, lS G_S]]."""
    nT, nS = sT.stop - sT.start, sS.stop - sS.start
    g = np.zeros((nT + nS, nT + nS))
    g[:nT, :nT] = p.lambda_T * net.g_T[sT, sT]
    g[:nT, nT:] = p.lambda_TS * net.g_TS[sT, sS]
    g[nT:, :nT] = p.lambda_ST * net.g_ST[sS, sT]
    g[nT:, nT:] = p.lambda_S * net.g_S[sS, sS]
    return g


def structural_residual(net: LayeredNetwork, p: GameParameters, y_T, y_S, rhs_T, rhs_S) -> float:
    rT = y_T - p.lambda_T * net.g_T @ y_T - p.lambda_TS * net.g_TS @ y_S - rhs_T
    rS = y_S - p.lambda_S * net.g_S @ y_S - p.lambda_ST * net.g_ST @ y_T - rhs_S
    return float(max(np.max(np.abs(rT)), np.max(np.abs(rS))))


def solve_outcomes(net: LayeredNetwork, p: GameParameters, rhs_T, rhs_S):
    """Solve ``(I - G(lambda)) y = rhs`` per community.

    ``net`` is the network entering the model (already row-normalized if that is
    the convention). Returns ``(y_T, y_S, residual)``.
    """
    rhs_T = np.asarray(rhs_T, dtype=float)
    rhs_S = np.asarray(rhs_S, dtype=float)
    y_T = np.empty(net.n_T)
    y_S = np.empty(net.n_S)
    for c, (sT, sS) in enumerate(net.community_blocks()):
        g = stacked_interaction(net, p, sT, sS)
        radius = spectral_radius(g)
        if radius >= 1:
            raise NumericError(f"community {c}: spectral radius of G(lambda) is {radius:.6g} >= 1 "
                               f"(margin {1 - radius:.3g})")
        nT = sT.stop - sT.start
        try:
            sol = np.linalg.solve(np.eye(g.shape[0]) - g, np.concatenate([rhs_T[sT], rhs_S[sS]]))
        except np.linalg.LinAlgError as exc:
            raise SingularityError(f"community {c}: I - G(lambda) is singular") from exc
        y_T[sT], y_S[sS] = sol[:nT], sol[nT:]
    return y_T, y_S, structural_residual(net, p, y_T, y_S, rhs_T, rhs_S)


def simulate(cfg: DgpConfig, replication: int = 0) -> SimulatedDataset:
    """Draw one dataset; bit-identical for identical ``(cfg, replication)``."""
    pT, pS = cfg.partition_T, cfg.partition_S
    stream = lambda stage: rngmod.stream(cfg.seed, replication, stage)  # noqa: E731

    x_T, x_S = draw_covariates(cfg, stream("covariates"))
    mu_T, mu_S = draw_fixed_effects(cfg, stream("fixed_effects"))
    (nu_T, u_T), (nu_S, u_S) = draw_heterogeneity(cfg, stream("heterogeneity"))

    sim_T = dyadic_similarity(x_T, pT, cfg.similarity_column)
    sim_S = dyadic_similarity(x_S, pS, cfg.similarity_column)
    link_rng = stream("links")
    blocks_T = [generate_within_links(w, cfg.tau_T, u_T[s], link_rng) for w, s in zip(sim_T, pT.slices())]
    blocks_S = [generate_within_links(w, cfg.tau_S, u_S[s], link_rng) for w, s in zip(sim_S, pS.slices())]
    g_TS, g_ST = generate_cross_links(cfg, stream("cross_links"))
    net = LayeredNetwork(block_matrix(blocks_T), block_matrix(blocks_S), g_TS, g_ST, pT, pS)

    eps_T, kappa_T = compose_errors(nu_T, cfg.kappa_levels, pT)
    eps_S, kappa_S = compose_errors(nu_S, cfg.kappa_levels, pS)
    rhs_T = mu_T + x_T @ np.asarray(cfg.gamma_T) + eps_T
    rhs_S = mu_S + x_S @ np.asarray(cfg.gamma_S) + eps_S
    model_net = net.row_normalized() if cfg.row_normalize_networks else net
    y_T, y_S, resid = solve_outcomes(model_net, cfg.truth(), rhs_T, rhs_S)

    return SimulatedDataset(
        cfg=cfg, net=net, features_T=x_T, features_S=x_S, similarity_T=sim_T, similarity_S=sim_S,
        mu_T=mu_T, mu_S=mu_S, nu_T=nu_T, nu_S=nu_S, u_T=u_T, u_S=u_S, kappa_T=kappa_T, kappa_S=kappa_S,
        eps_T=eps_T, eps_S=eps_S, y_T=y_T, y_S=y_S, structural_residual=resid, replication=replication,
    )
