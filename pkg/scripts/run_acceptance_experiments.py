"""Run the frozen reference experiments and print the comparison table.

    python3 scripts/run_acceptance_experiments.py [--out-dir runs/reference]

Trains SFT and the GRPO variants (full, code-only, vis-only, G=4) from the
same pretrained base and evaluates everything greedily on the held-out split.
"""
import argparse
import json
from pathlib import Path

from chartgrpo.evaluation import format_eval_table
from chartgrpo.experiments import acceptance_config, run_reference_experiments


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out-dir", default=None, help="keep per-run metrics and checkpoints here")
    p.add_argument("--seed", type=int, default=42)
    args = p.parse_args()
    results = run_reference_experiments(acceptance_config(args.seed), out_dir=args.out_dir)
    table = results.table()
    print(format_eval_table(table))
    print(f"\nwall time {results.seconds:.1f}s")
    if args.out_dir:
        out = Path(args.out_dir) / "reference_results.json"
        out.write_text(json.dumps({k: v.as_dict() for k, v in table.items()}, indent=2) + "\n")
        print(f"wrote {out}")


if __name__ == "__main__":
    main()
