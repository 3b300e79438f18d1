"""Benchmark of the damped fixed-point solver across network sizes.

Reports convergence rates, iteration counts, and the agreement between the
fixed point and the direct linear-system solution (single-good case).

Usage:
    python scripts/solver_benchmark.py [--seeds 100] [--ports 3 4 5 6]
                                       [--damping 0.5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from portflow import (
    SyntheticSpec,
    build_omega,
    fixed_point,
    generate_instance,
    representative_solve,
    verify_equilibrium,
)
from portflow.errors import PortflowError


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=100)
    parser.add_argument("--ports", type=int, nargs="+", default=[3, 4, 5, 6])
    parser.add_argument("--damping", type=float, default=0.5)
    args = parser.parse_args()

    header = ["K", "converged", "verified", "iter_med", "iter_max",
              "linear_gap", "ms/solve"]
    print(("{:>12}" * len(header)).format(*header))
    for K in args.ports:
        iterations = []
        converged = verified = 0
        worst_gap = 0.0
        start = time.perf_counter()
        for seed in range(args.seeds):
            spec = SyntheticSpec(seed=seed, K=K)
            instance = generate_instance(spec)
            try:
                result = fixed_point(instance.params, instance.network,
                                     instance.values,
                                     damping=args.damping)
            except PortflowError:
                continue
            if not result.converged:
                continue
            converged += 1
            iterations.append(result.iterations)
            report = verify_equilibrium(result, instance.params,
                                        instance.network, instance.values)
            verified += int(report.passes)
            system = build_omega(instance.params, instance.network,
                                 instance.values)
            solution = representative_solve(
                system, float(instance.params.capacities[0]))
            gap = np.abs(solution.phi - result.field.occupancy[0]) \
                / np.abs(result.field.occupancy[0])
            worst_gap = max(worst_gap, float(gap.max()))
        elapsed = time.perf_counter() - start
        print(f"{K:>12d}{converged:>12d}{verified:>12d}"
              f"{int(np.median(iterations)):>12d}"
              f"{int(np.max(iterations)):>12d}"
              f"{worst_gap:>12.2e}"
              f"{1000.0 * elapsed / max(converged, 1):>12.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
