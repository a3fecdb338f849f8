"""Write a seeded synthetic ratings file plus its oracle statistics.

    python3 scripts/make_sample_ratings.py [--out tests/fixtures/ratings] [--seed 7]

50 guidance messages rated by 3 raters on 3 criteria (1-5 Likert).  For
Relevance, raters R1 and R3 agree on every item, so that pair has rho = 1
and kappa = 1.  Expected values come from tests/oracles.py.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import random
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))
import oracles  # noqa: E402

CRITERIA = ("Relevance", "Accuracy", "Usefulness")
RATERS = ("R1", "R2", "R3")
N_ITEMS = 50


def simulate(seed: int) -> dict[str, dict[str, list[int]]]:
    rng = random.Random(seed)
    quality = [rng.gauss(3.8, 0.8) for _ in range(N_ITEMS)]
    clamp = lambda v: max(1, min(5, int(round(v))))
    out: dict[str, dict[str, list[int]]] = {}
    for crit in CRITERIA:
        bias = {"Relevance": 0.4, "Accuracy": 0.0, "Usefulness": -0.2}[crit]
        out[crit] = {r: [clamp(q + bias + rng.gauss(0, 0.7)) for q in quality] for r in RATERS}
    out["Relevance"]["R3"] = list(out["Relevance"]["R1"])
    return out


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=ROOT / "tests" / "fixtures" / "ratings")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    data = simulate(args.seed)

    with open(args.out / "sample_ratings.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("criterion", "rater", "item", "score"))
        for crit in CRITERIA:
            for r in RATERS:
                for i, v in enumerate(data[crit][r], start=1):
                    w.writerow([crit, r, i, v])

    expected = {"descriptive": {}, "pairs": {}}
    for crit in CRITERIA:
        pooled = [v for r in RATERS for v in data[crit][r]]
        mean, sd = oracles.mean_sd(pooled)
        expected["descriptive"][crit] = {"mean": mean, "sd": sd, "min": min(pooled), "max": max(pooled),
                                         "n": len(pooled)}
        for a, b in itertools.combinations(RATERS, 2):
            va, vb = data[crit][a], data[crit][b]
            expected["pairs"][f"{crit}/{a}-{b}"] = {"rho": oracles.spearman_rho(va, vb),
                                                    "kappa": oracles.quadratic_kappa(va, vb, 5)}
    (args.out / "expected_stats.json").write_text(json.dumps(expected, indent=1) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
