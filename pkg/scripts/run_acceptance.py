"""Run the fourteen acceptance criteria and print one PASS/FAIL line each.

    python3 scripts/run_acceptance.py [--jobs 2] [--only 1 3 12] [--out runs/acceptance]
"""
import argparse
import json
import sys
from pathlib import Path

from potheories.harness.acceptance import run_acceptance


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--only", type=int, nargs="*")
    ap.add_argument("--out")
    args = ap.parse_args()
    results, runner = run_acceptance(args.jobs, args.only, echo=print)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for rep in runner.reports.values():
            (out / f"{rep.scenario}.json").write_text(rep.to_json() + "\n")
        timing = {k: round(v, 2) for k, v in runner.runtime.items()}
        (out / "runtimes.json").write_text(json.dumps(timing, indent=1, sort_keys=True) + "\n")
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria pass")
    return 0 if n_pass == len(results) else 1


if __name__ == "__main__":
    sys.exit(main())
