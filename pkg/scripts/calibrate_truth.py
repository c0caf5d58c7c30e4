"""Recalibrate the default true coefficients and print the truth table of a scenario."""
import argparse

import numpy as np

from stdmarker.simgen import (DEFAULT_BETA1, ROC_TARGET_T, ROC_TARGET_VALUES, calibrate_beta1,
                              load_scenario, scenario_truth)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="default")
    args = ap.parse_args()

    beta1 = calibrate_beta1()
    print("calibrated beta1:", ", ".join(f"{b:.10f}" for b in beta1))
    print("frozen DEFAULT_BETA1:", ", ".join(f"{b:.10f}" for b in DEFAULT_BETA1))
    print("max difference:", float(np.max(np.abs(np.subtract(beta1, DEFAULT_BETA1)))))

    scn = load_scenario(args.scenario)
    truth = scenario_truth(scn)
    for label in scn.labels:
        print(f"\n{label}: beta = {np.round(truth.beta[label], 6).tolist()}")
        print("  t      ROC(t)   target")
        for t, v in zip(truth.t, truth.roc[label]):
            target = dict(zip(ROC_TARGET_T, ROC_TARGET_VALUES)).get(float(t), float("nan"))
            print(f"  {t:.1f}   {v:.4f}   {target:.2f}")
        print("  y        Risk(y)   p        CDF_R(p)")
        for y, r, p, c in zip(truth.y[label], truth.risk[label], truth.p[label], truth.cdf[label]):
            print(f"  {y:7.3f}  {r:.4f}    {p:.4f}   {c:.4f}")


if __name__ == "__main__":
    main()
