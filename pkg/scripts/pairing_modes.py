"""Train DPO with transition-level and trajectory-level pairing on one dataset and compare.

    python scripts/pairing_modes.py --out runs/default
Needs gen-corpus, gen-requests and collect to have run in --out.
"""
from __future__ import annotations

import argparse
from dataclasses import replace
from pathlib import Path

from pa_retrieval.config import RunConfig
from pa_retrieval.eval import evaluate_policy, format_table
from pa_retrieval.pipeline import Pipeline


def main() -> None:
    ap = argparse.ArgumentParser(description="DPO pairing-mode comparison")
    ap.add_argument("--out", type=Path, default=Path("runs/default"))
    args = ap.parse_args()
    pipe = Pipeline(RunConfig(), args.out)
    corpus = pipe.corpus()
    _, test = pipe.requests()
    ds = pipe.dataset(corpus)
    lens = [ep.steps_total for ep in ds.episodes]
    rows = []
    for mode in ("transition", "trajectory"):
        art = pipe.train("dpo", ds, replace(pipe.cfg.dpo, pairing_mode=mode), corpus)
        r = evaluate_policy(art, pipe.env(corpus), test)
        rows.append([mode, r.accuracy, r.mean_steps, r.mean_return])
    print(f"logged episode lengths: min {min(lens)}, max {max(lens)}")
    print(format_table(["pairing", "accuracy", "steps", "return"], rows))


if __name__ == "__main__":
    main()
