"""Retrain the learned policies under several seeds and print per-seed metrics.

The collection seed and the trainer seeds move together, so the spread reflects both
dataset and optimisation noise. Writes nothing outside the chosen run directory.

    python scripts/seed_spread.py --seeds 0,1,2 --algs iql,dpo --out runs/spread
"""
from __future__ import annotations

import argparse
from dataclasses import replace
from pathlib import Path

from pa_retrieval.config import RunConfig
from pa_retrieval.eval import evaluate_policy, format_table
from pa_retrieval.pipeline import Pipeline


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--algs", default="bc,cql,iql,dpo")
    ap.add_argument("--out", type=Path, default=Path("runs/spread"))
    args = ap.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]
    algs = args.algs.split(",")

    base = Pipeline(RunConfig(), args.out / "base")
    base.gen_corpus()
    base.gen_requests()
    corpus = base.corpus()
    _, test = base.requests()
    env = base.env(corpus)
    rows = []
    for seed in seeds:
        # same corpus and requests, different behavior rollouts and trainer init
        pipe = Pipeline(replace(RunConfig(), seed=seed), args.out / "base")
        path = args.out / f"dataset_seed{seed}.jsonl"
        if not path.exists():
            pipe.collect(path=path)
        ds = pipe.dataset(corpus, path=path)
        for alg in algs:
            cfg = replace(getattr(pipe.cfg, alg), seed=seed)
            r = evaluate_policy(pipe.train(alg, ds, cfg, corpus), env, test)
            rows.append([alg, seed, r.accuracy, r.mean_steps, r.mean_return])
            print(f"{alg} seed={seed} acc={r.accuracy:.3f} steps={r.mean_steps:.2f} ret={r.mean_return:.3f}",
                  flush=True)
    print(format_table(["alg", "seed", "accuracy", "steps", "return"], rows))


if __name__ == "__main__":
    main()
