"""Linear-quadratic two-activity network game.

Each agent chooses a technology effort and a science effort. Cross-layer blocks
identify the same person in both layers, so agent ``i``'s own effort in the other
layer is ``(G_TS y_S)_i`` (technology agents) or ``(G_ST y_T)_i`` (science agents).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, PreconditionError, SingularityError
from .netcore import AgentAbilities, GameParameters, LayeredNetwork, check_stability

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EquilibriumResult:
    y_T: np.ndarray
    y_S: np.ndarray
    residual_norm: float

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.y_T, self.y_S])


def _layer_terms(y_own, alpha_own, g_own, lam, i):
    return y_own[i] * alpha_own[i] - 0.5 * y_own[i] ** 2 + lam * y_own[i] * (g_own[i] @ y_own)


def utility(i, y_T, y_S, p: GameParameters, net: LayeredNetwork, alpha: AgentAbilities, layer: str = "T") -> float:
    """Payoff of agent ``i`` (indexed in ``layer``).

    The agent's proceeds in its own layer, plus the proceeds of its counterpart(s)
    in the other layer weighted by the cross-block row, minus ``beta`` times the
    product of its two efforts. For an agent without a counterpart the other-layer
    effort is zero.
    """
    y_T = np.asarray(y_T, dtype=float)
    y_S = np.asarray(y_S, dtype=float)
    if layer == "T":
        y_own, y_oth, a_own, a_oth = y_T, y_S, alpha.alpha_T, alpha.alpha_S
        g_own, g_oth, cross, lam_own, lam_oth = net.g_T, net.g_S, net.g_TS, p.lambda_T, p.lambda_S
    elif layer == "S":
        y_own, y_oth, a_own, a_oth = y_S, y_T, alpha.alpha_S, alpha.alpha_T
        g_own, g_oth, cross, lam_own, lam_oth = net.g_S, net.g_T, net.g_ST, p.lambda_S, p.lambda_T
    else:
        raise DomainError(f"layer must be 'T' or 'S', got {layer!r}")
    if not 0 <= i < y_own.size:
        raise DomainError(f"agent index {i} out of range for layer {layer} of size {y_own.size}")

    u = _layer_terms(y_own, a_own, g_own, lam_own, i)
    for s in np.flatnonzero(cross[i]):
        w = cross[i, s]
        u += w * (_layer_terms(y_oth, a_oth, g_oth, lam_oth, s) - p.beta * y_own[i] * y_oth[s])
    return float(u)


def _check_dims(y_T, y_S, alpha: AgentAbilities, net: LayeredNetwork):
    alpha.check(net)
    if np.shape(y_T) != (net.n_T,) or np.shape(y_S) != (net.n_S,):
        raise DimensionError(
            f"effort vectors of shape {np.shape(y_T)}, {np.shape(y_S)} do not match ({net.n_T},), ({net.n_S},)"
        )


def best_response_residual(y_T, y_S, alpha: AgentAbilities, p: GameParameters, net: LayeredNetwork):
    """Effort minus best response, per layer; both vanish exactly at a Nash equilibrium."""
    y_T = np.asarray(y_T, dtype=float)
    y_S = np.asarray(y_S, dtype=float)
    _check_dims(y_T, y_S, alpha, net)
    br_T = alpha.alpha_T - p.beta * (net.g_TS @ y_S) + p.lambda_T * (net.g_T @ y_T)
    br_S = alpha.alpha_S - p.beta * (net.g_ST @ y_T) + p.lambda_S * (net.g_S @ y_S)
    return y_T - br_T, y_S - br_S


def _solve_stacked(alpha, p, net, peer_scale):
    """Solve [[I - s lT G_T, b G_TS], [b G_ST, I - s lS G_S]] y = alpha community by community."""
    y_T = np.empty(net.n_T)
    y_S = np.empty(net.n_S)
    lT, lS = peer_scale * p.lambda_T, peer_scale * p.lambda_S
    for sT, sS in net.community_blocks():
        nT, nS = sT.stop - sT.start, sS.stop - sS.start
        a = np.zeros((nT + nS, nT + nS))
        a[:nT, :nT] = np.eye(nT) - lT * net.g_T[sT, sT]
        a[:nT, nT:] = p.beta * net.g_TS[sT, sS]
        a[nT:, :nT] = p.beta * net.g_ST[sS, sT]
        a[nT:, nT:] = np.eye(nS) - lS * net.g_S[sS, sS]
        rhs = np.concatenate([alpha.alpha_T[sT], alpha.alpha_S[sS]])
        try:
            sol = np.linalg.solve(a, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularityError(f"singular equilibrium system in community block {sT}") from exc
        y_T[sT], y_S[sS] = sol[:nT], sol[nT:]
    return y_T, y_S


def _finish(y_T, y_S, alpha, p, net, peer_scale):
    scaled = GameParameters(p.lambda_T * peer_scale, p.lambda_S * peer_scale, p.beta)
    rT, rS = best_response_residual(y_T, y_S, alpha, scaled, net)
    res = float(max(np.max(np.abs(rT), initial=0.0), np.max(np.abs(rS), initial=0.0)))
    if np.any(y_T < 0) or np.any(y_S < 0):
        log.warning("equilibrium has negative efforts; the nonnegativity constraint is not imposed")
    return EquilibriumResult(y_T, y_S, res)


def nash_equilibrium(alpha: AgentAbilities, p: GameParameters, net: LayeredNetwork) -> EquilibriumResult:
    """Unique Nash equilibrium of the game under the spectral stability condition."""
    alpha.check(net)
    st = check_stability(p, net)
    if not st.stable:
        raise PreconditionError(f"stability condition violated (margin {st.margin:.6g})", margin=st.margin)
    y_T, y_S = _solve_stacked(alpha, p, net, 1.0)
    return _finish(y_T, y_S, alpha, p, net, 1.0)


def planner_optimum(alpha: AgentAbilities, p: GameParameters, net: LayeredNetwork) -> EquilibriumResult:
    """Efforts maximising the sum of utilities: the Nash system with doubled peer effects.

    ``residual_norm`` is measured against the planner's first-order conditions.
    """
    alpha.check(net)
    st = check_stability(p, net, scale=2.0)
    if not st.stable:
        raise PreconditionError(f"doubled-peer-effect system unstable (margin {st.margin:.6g})", margin=st.margin)
    y_T, y_S = _solve_stacked(alpha, p, net, 2.0)
    return _finish(y_T, y_S, alpha, p, net, 2.0)
