"""Population-level effect of contaminating each cell of the solar design.

Fits the estimating functional at the contaminated model probabilities (no
sampling noise) and prints the relative squared error for two values of
beta, so one can see which outlier cells beta > 0 actually downweights.

    python3 scripts/scan_contamination_cell.py --eps 0.2 --betas 0 0.6
"""

import argparse
import warnings

import numpy as np

from stepstress.divergence import FailureCounts
from stepstress.estimation import FitOptions, fit_mdpde
from stepstress.model import cell_probabilities
from stepstress.montecarlo import ContaminationSpec, contaminate, default_solar_design


def functional(pi, design, beta):
    # integer counts with frequencies equal to pi up to 1e-12
    counts = FailureCounts(np.round(pi * 1e12).astype(np.int64))
    opts = FitOptions(raise_on_failure=False, compute_covariance=False)
    fit = fit_mdpde(counts, design.plan, design.grid, beta, opts)
    return fit.theta_hat.as_array(), fit.flags


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eps", type=float, default=0.2)
    ap.add_argument("--betas", type=float, nargs="+", default=[0.0, 0.6])
    args = ap.parse_args()
    d = default_solar_design()
    th0 = d.theta0.as_array()
    pi0 = cell_probabilities(d.theta0, d.plan, d.grid)
    print("cell  pi0      " + "  ".join(f"relSE(b={b:g})" for b in args.betas) + "  note")
    warnings.simplefilter("ignore")
    for cell in range(1, d.grid.n_cells + 1):
        pi = contaminate(pi0, ContaminationSpec(cell, args.eps))
        errs, notes = [], []
        for b in args.betas:
            th, flags = functional(pi, d, b)
            errs.append(float(np.sum(((th - th0) / th0) ** 2)))
            if "boundary_estimate" in flags:
                notes.append(f"b={b:g} at boundary")
        print(f"{cell:4d}  {pi0[cell - 1]:.4f}  " + "  ".join(f"{e:12.4g}" for e in errs)
              + "  " + ", ".join(notes))


if __name__ == "__main__":
    main()
