#!/usr/bin/env python3
"""Coarse grid search for the default tank-loop PID gains.

Simulates a 0 -> 10 cm bottom-level setpoint step for every gain combination
on a coarse grid, under both sampler placements, and reports the candidates
whose output stays within 0.1 cm of the setpoint over the final tenth of a
300 s run. The winner is frozen into openlab.tanks.TUNED_PID / TUNED_DELTA.

Run from the repository root:  python3 tools/tune_gains.py
"""

import itertools
import sys

sys.path.insert(0, "src")

from openlab.blocks import ControlLoop, LoopConfig, PidParams, Placement
from openlab.experiment import LocalTankBinding
from openlab.tanks import TankParams

SETPOINT = 10.0
DURATION = 300.0
DT = 0.01
TAIL = 0.9  # judge the last 10 % of the run

KP_GRID = (0.6, 1.2, 2.0, 3.0)
KI_GRID = (0.03, 0.06, 0.12, 0.2)
KD_GRID = (0.0, 1.0)
DELTA_GRID = (0.02, 0.05, 0.1, 0.2)


def run_case(pid: PidParams, placement: Placement, delta: float) -> tuple[float, float]:
    """Returns (max |y-r| over the tail window, settling time to 0.1 cm)."""
    cfg = LoopConfig(placement=placement, setpoint=SETPOINT, pid=pid,
                     delta=delta, dt=DT, refine_events=False)
    loop = ControlLoop(cfg, LocalTankBinding(TankParams()))
    n = round(DURATION / DT)
    tail_start = round(TAIL * n)
    worst_tail = 0.0
    settled_at = float("nan")
    inside_since = None
    for k in range(n):
        rec = loop.step()
        err = abs(rec.y - SETPOINT)
        if err < 0.1:
            if inside_since is None:
                inside_since = rec.t
        else:
            inside_since = None
        if k >= tail_start:
            worst_tail = max(worst_tail, err)
    if inside_since is not None:
        settled_at = inside_since
    return worst_tail, settled_at


def main() -> int:
    results = []
    for kp, ki, kd in itertools.product(KP_GRID, KI_GRID, KD_GRID):
        pid = PidParams(kp=kp, ki=ki, kd=kd, u_min=0.0, u_max=10.0)
        row = {"pid": pid}
        ok = True
        for delta in DELTA_GRID:
            worst = 0.0
            for placement in (Placement.ERROR_SAMPLED, Placement.CONTROL_SAMPLED):
                tail_err, settled = run_case(pid, placement, delta)
                worst = max(worst, tail_err)
            row[delta] = worst
        results.append(row)
        line = f"kp={kp:<4} ki={ki:<5} kd={kd:<3}"
        for delta in DELTA_GRID:
            line += f"  d={delta}: {row[delta]:.4f}"
        print(line, flush=True)

    print("\ncandidates with tail error < 0.1 cm at the smallest delta:")
    for row in results:
        if row[DELTA_GRID[0]] < 0.1:
            print(f"  {row['pid']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
