"""Regenerate the bundled solar dataset (N = 200 draw from theta0, seed 2027).

    python3 scripts/make_bundled_data.py src/stepstress/data/solar_counts.csv
"""

import sys

from stepstress.config import write_counts
from stepstress.model import cell_probabilities
from stepstress.montecarlo import default_solar_design, rep_stream, sample_counts

SEED = 2027


def main(path):
    d = default_solar_design()
    counts = sample_counts(cell_probabilities(d.theta0, d.plan, d.grid), d.N, rep_stream(SEED, 0))
    write_counts(counts, path)
    print(f"wrote {path}: {counts.n}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "solar_counts.csv")
