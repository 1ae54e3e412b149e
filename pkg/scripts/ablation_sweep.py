"""Sweep the standard reward-component variants and several group sizes at a fixed
sample budget, starting from the acceptance base policy.

    python3 scripts/ablation_sweep.py --out-dir runs/sweep [--steps 300]
"""
import argparse
import dataclasses

from chartgrpo.evaluation import STANDARD_REWARD_VARIANTS, AblationSpec, format_eval_table, run_ablation
from chartgrpo.experiments import acceptance_config, standard_split
from chartgrpo.trainer import base_policy


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--group-sizes", type=int, nargs="+", default=[2, 4, 8, 16])
    args = p.parse_args()
    cfg = dataclasses.replace(acceptance_config(args.seed), total_steps=args.steps)
    train, held = standard_split(cfg.seed)
    variants = list(STANDARD_REWARD_VARIANTS)
    variants += [AblationSpec(f"full_g{g}", group_size=g) for g in args.group_sizes if g != cfg.group_size]
    table = run_ablation(cfg, variants, train, held, init=base_policy(cfg), out_dir=args.out_dir)
    print(format_eval_table(table))


if __name__ == "__main__":
    main()
