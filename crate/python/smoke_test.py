"""Smoke test for the sgdf_py extension: synthesize, retrieve, check."""

import math
import sys

import numpy as np

import sgdf_py


def check(name, ok, detail=""):
    print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    return ok


def main():
    results = []

    peak = sgdf_py.eval_df_kernel(math.pi / 6, 1.0, 3.0, 0.0, 0.0)
    results.append(check("kernel peak", abs(peak - 1 / (6 * math.pi)) < 1e-12, f"{peak:.7f}"))

    g = sgdf_py.eval_grid_image(8.0, 0.2, 2.0, 2.0)
    results.append(check("grid hole center", abs(g - 1.0) < 1e-12, f"{g}"))

    ig, isg = sgdf_py.synthesize_uniform(96, 96, 8.0, 0.2, 0.8, math.pi / 6, 1.0, 3.0)
    ig, isg = np.asarray(ig), np.asarray(isg)
    results.append(check("mean ratio", abs(isg.mean() / ig.mean() - 0.8) < 1e-6))

    p = sgdf_py.estimate_grid_period(ig.tolist())
    results.append(check("period", abs(p - 8.0) < 0.02, f"{p:.4f}"))

    r = sgdf_py.retrieve(ig.tolist(), isg.tolist(), period=8.0, kernel_size=8,
                         odd=1.5, pixel_size=12.3e-6)
    valid = np.asarray(r["valid"])
    t = np.asarray(r["transmission"])[valid]
    theta = np.asarray(r["theta"])[valid]
    major = np.asarray(r["sigma_major_sq"])[valid]
    minor = np.asarray(r["sigma_minor_sq"])[valid]
    results.append(check("transmission", abs(t.mean() - 0.8) < 1e-3, f"{t.mean():.6f}"))
    results.append(check("direction", abs(np.median(theta) - math.pi / 6) < 0.01,
                         f"{np.median(theta):.5f}"))
    results.append(check("widths", abs(major.mean() / 9 - 1) < 0.02 and abs(minor.mean() - 1) < 0.02,
                         f"{major.mean():.4f} {minor.mean():.4f}"))
    # 3 px at 8.2 µrad per pixel
    tm = np.sqrt(np.asarray(r["theta_major_sq"])[valid].mean()) * 1e6
    results.append(check("major angle", abs(tm - 24.6) < 0.25, f"{tm:.3f} urad"))

    asy = sgdf_py.theta_asy(9.0, 1.0)
    results.append(check("asymmetry", abs(asy - 2 / 3) < 1e-12, f"{asy}"))

    try:
        sgdf_py.retrieve(ig.tolist(), isg.tolist(), odd=1.5)
        results.append(check("half geometry rejected", False))
    except ValueError:
        results.append(check("half geometry rejected", True))

    print(f"smoke test: {sum(results)} of {len(results)} checks passed")
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
