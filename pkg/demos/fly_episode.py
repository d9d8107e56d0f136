"""Fly one episode from a scenario file and draw the formation path as ASCII.

    python3 demos/fly_episode.py configs/corridor.cfg --seed 1
"""

import argparse
from pathlib import Path

import numpy as np

from formation_planner import ScenarioSpec, SwarmConfig, generate_scenario, run_episode

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def ascii_map(grid, path, cols=100):
    occ = grid.cells.any(axis=2)
    res = grid.resolution
    width, height = occ.shape[0] * res, occ.shape[1] * res
    cell = width / cols
    rows = max(1, int(round(height / (2 * cell))))
    canvas = np.full((rows, cols), ".")
    for j in range(rows):
        for i in range(cols):
            x0, y0 = int(i * cell / res), int(j * 2 * cell / res)
            block = occ[x0:int((i + 1) * cell / res) + 1, y0:int((j + 1) * 2 * cell / res) + 1]
            if block.any():
                canvas[j, i] = "#"
    for k, (x, y) in enumerate(path):
        i = min(cols - 1, int((x - grid.origin[0]) / cell))
        j = min(rows - 1, int((y - grid.origin[1]) / (2 * cell)))
        canvas[j, i] = "X" if k == len(path) - 1 else "o"
    return "\n".join("".join(r) for r in canvas[::-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario", type=Path, nargs="?", default=CONFIGS / "corridor.cfg")
    ap.add_argument("--swarm", type=Path, default=CONFIGS / "swarm.cfg")
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    spec = ScenarioSpec.from_file(args.scenario).with_seed(args.seed)
    cfg = SwarmConfig.from_file(args.swarm).with_seed(args.seed)
    report = run_episode(cfg, spec)

    trace = np.array([row[:4] for row in report.trace], float)  # t, uav, x, y
    times = np.unique(trace[:, 0])
    path = [trace[trace[:, 0] == t, 2:4].mean(axis=0) for t in times]
    print(ascii_map(generate_scenario(spec), path))
    print(f"{report.reason}: success={report.success} t={report.completion_time:.1f}s "
          f"avg_ef={report.avg_similarity:.4f} max_ef={report.max_similarity:.4f} "
          f"min_scale={report.min_scale:.2f} clearance={report.min_obstacle_clearance:.2f}")


if __name__ == "__main__":
    main()
