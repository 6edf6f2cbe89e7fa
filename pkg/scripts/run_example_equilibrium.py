"""Solve the bundled six-agent example for Nash and planner efforts and print both profiles."""

import json
from pathlib import Path

import numpy as np

from scitech_net import dataio
from scitech_net.cli import example_path
from scitech_net.game import nash_equilibrium, planner_optimum
from scitech_net.netcore import AgentAbilities, CommunityPartition, GameParameters, check_stability


def main() -> None:
    cfg_path = example_path()
    cfg = json.loads(cfg_path.read_text())
    base = Path(cfg_path).parent
    pT, pS = CommunityPartition(tuple(cfg["community_sizes_T"])), CommunityPartition(tuple(cfg["community_sizes_S"]))
    net = dataio.read_network(base, pT, pS, files={k: str(base / v) for k, v in cfg["networks"].items()})
    alpha = AgentAbilities(dataio.read_vector(base / cfg["abilities_T"], "alpha"),
                           dataio.read_vector(base / cfg["abilities_S"], "alpha"))
    p = GameParameters(**cfg["params"])
    for label, solve, scale in (("nash", nash_equilibrium, 1.0), ("planner", planner_optimum, 2.0)):
        st = check_stability(p, net, scale=scale)
        res = solve(alpha, p, net)
        print(f"{label:8s} margin {st.margin:.4f}")
        print(f"  technology {np.round(res.y_T, 4).tolist()}")
        print(f"  science    {np.round(res.y_S, 4).tolist()}")


if __name__ == "__main__":
    main()
