"""Run the full audit on the bundled mini-sector fixture and print a short report.

    python3 scripts/run_mini_audit.py [--out out/mini_sector]
"""

from __future__ import annotations

import argparse
import csv
import json
from pathlib import Path

from sidewalk_audit.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]
FIXTURE = ROOT / "tests" / "fixtures" / "mini_sector"


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=ROOT / "out" / "mini_sector")
    args = ap.parse_args()
    rc = cli_main(["audit", "--config", str(FIXTURE / "audit.ini"), "--out", str(args.out), "--log-level", "warning"])
    if rc:
        raise SystemExit(rc)

    rows = list(csv.DictReader(open(args.out / "summary.csv", encoding="utf-8")))
    segs = [r for r in rows if r["level"] == "segment"]
    worst = sorted(segs, key=lambda r: float(r["score"]))[:5]
    print(f"audited segments: {len(segs)}")
    print("least accessible segments:")
    for r in worst:
        print(f"  {r['id']:6s} {float(r['score']):.3f}")
    print("category scores:")
    for r in rows:
        if r["level"] == "category":
            score = r["score"] if r["score"] == "no data" else f"{float(r['score']):.3f}"
            print(f"  {r['id']:20s} {score}  (POIs: {r['weight']})")
    print("findings:", json.loads((args.out / "findings.json").read_text())["findings"])


if __name__ == "__main__":
    main()
