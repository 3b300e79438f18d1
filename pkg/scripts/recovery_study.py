"""Monte-Carlo study of parameter recovery as a function of the noise level.

For each noise level, simulates many seeded instances, runs the full
inference pipeline, and reports the median and worst relative errors of the
congestion coefficients and the pairwise value differences.

Usage:
    python scripts/recovery_study.py [--seeds 50] [--ports 5]
                                     [--horizon 1000]
                                     [--noise 0.0 0.005 0.01 0.02]
                                     [--csv recovery.csv]
"""

from __future__ import annotations

import argparse
import time
from pathlib import Path

import numpy as np

from portflow import (
    CrowdednessConfig,
    GaugeConfig,
    InferenceConfig,
    SyntheticSpec,
    generate_instance,
    infer_pipeline,
    simulate_series,
)
from portflow.errors import PortflowError
from portflow.io import write_table


def one_seed(seed: int, noise: float, K: int, horizon: int):
    spec = SyntheticSpec(seed=seed, K=K, horizon_days=horizon,
                         noise_sigma=noise)
    instance = generate_instance(spec)
    simulated = simulate_series(spec, instance)
    config = InferenceConfig(
        crowdedness=CrowdednessConfig(shift_days=spec.shift_days,
                                      window_days=spec.window_days),
        gauge=GaugeConfig(r_bar=spec.r_bar),
        good=simulated.regressed_good, seed=seed)
    result = infer_pipeline(simulated.series, instance.network, config)
    calibration = result.calibration
    r_true = instance.params.congestion
    r_err = np.median(np.abs(calibration.congestion - r_true) / r_true)
    v_true = instance.values.values[0]
    dv_true = v_true[None, :] - v_true[:, None]
    dv_hat = calibration.values[None, :] - calibration.values[:, None]
    off = ~np.eye(K, dtype=bool)
    dv_err = np.median(np.abs(dv_hat[off] - dv_true[off])
                       / np.abs(dv_true[off]))
    c_err = (abs(calibration.transport_cost - instance.params.transport[0])
             / instance.params.transport[0])
    return r_err, dv_err, c_err


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=50)
    parser.add_argument("--ports", type=int, default=5)
    parser.add_argument("--horizon", type=int, default=1000)
    parser.add_argument("--noise", type=float, nargs="+",
                        default=[0.0, 0.005, 0.01, 0.02])
    parser.add_argument("--csv", type=Path, default=None,
                        help="optional path for the result table")
    args = parser.parse_args()

    header = ["noise", "seeds_ok", "r_median", "r_p90", "dv_median",
              "dv_p90", "c_median", "seconds"]
    print(("{:>10}" * len(header)).format(*header))
    rows = []
    for noise in args.noise:
        start = time.perf_counter()
        r_errs, dv_errs, c_errs = [], [], []
        failures = 0
        for seed in range(args.seeds):
            try:
                r_err, dv_err, c_err = one_seed(seed, noise, args.ports,
                                                args.horizon)
            except PortflowError:
                failures += 1
                continue
            r_errs.append(r_err)
            dv_errs.append(dv_err)
            c_errs.append(c_err)
        elapsed = time.perf_counter() - start
        row = [noise, len(r_errs),
               float(np.median(r_errs)), float(np.percentile(r_errs, 90)),
               float(np.median(dv_errs)), float(np.percentile(dv_errs, 90)),
               float(np.median(c_errs)), elapsed]
        rows.append(row)
        print(f"{noise:>10.3f}{len(r_errs):>10d}"
              + "".join(f"{x:>10.4f}" for x in row[2:7])
              + f"{elapsed:>10.1f}")
        if failures:
            print(f"           ({failures} seeds failed and were skipped)")
    if args.csv is not None:
        write_table(args.csv, header, rows)
        print(f"wrote {args.csv}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
