"""File-based experiment stages. Each stage reads the outputs of earlier stages from the run
directory and writes its own; the CLI is a thin wrapper around these functions."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Sequence

from .config import RunConfig
from .corpus import Corpus, PARequest, build_corpus, generate_requests, load_requests, save_requests
from .data import Dataset, collect_dataset, load_dataset, policy_from_name, save_dataset
from .env import RetrievalEnv
from .eval import (ABLATION_KINDS, EvalReport, OpeReport, SignificanceReport, evaluate_policy, fqe_estimate,
                   format_table, main_table_rows, paired_t_test, pareto_frontier, per_procedure_report,
                   run_ablation, summarise_ablation, to_csv, wis_estimate)
from .trainers import PolicyArtifact, fixed_k, heuristic, train_bc, train_cql, train_dpo, train_iql
from .trainers.artifact import LEARNED_KINDS

TRAINERS = {"bc": train_bc, "cql": train_cql, "iql": train_iql, "dpo": train_dpo}
# main-table order
ROW_ORDER = ("dpo", "cql", "bc", "iql")


class MissingStageError(RuntimeError):
    """An input file produced by an earlier stage is absent."""

    def __init__(self, stage: str, path: Path):
        super().__init__(f"missing {path} (run `{stage}` first)")
        self.stage = stage


@dataclass
class Layout:
    root: Path

    @property
    def config(self) -> Path:
        return self.root / "config.json"

    @property
    def corpus(self) -> Path:
        return self.root / "corpus.jsonl"

    @property
    def train_requests(self) -> Path:
        return self.root / "requests_train.jsonl"

    @property
    def test_requests(self) -> Path:
        return self.root / "requests_test.jsonl"

    def dataset(self, lam: float) -> Path:
        return self.root / "datasets" / f"lambda_{lam:g}.jsonl"

    def policy(self, kind: str) -> Path:
        return self.root / "policies" / f"{kind}.json"

    @property
    def evaluation(self) -> Path:
        return self.root / "eval" / "results.json"

    @property
    def ope(self) -> Path:
        return self.root / "eval" / "ope.json"

    @property
    def significance(self) -> Path:
        return self.root / "eval" / "significance.json"

    def ablation(self, kind: str) -> Path:
        return self.root / "ablations" / kind

    @property
    def report(self) -> Path:
        return self.root / "report"


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingStageError(stage, path)
    return path


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


class Pipeline:
    def __init__(self, cfg: RunConfig, root: Path | None = None):
        self.cfg = cfg
        self.layout = Layout(Path(root) if root is not None else cfg.output_root())

    # ---------------------------------------------------------------- loaders
    def corpus(self) -> Corpus:
        return Corpus.load(_need(self.layout.corpus, "gen-corpus"))

    def requests(self) -> tuple[list[PARequest], list[PARequest]]:
        return (load_requests(_need(self.layout.train_requests, "gen-requests")),
                load_requests(_need(self.layout.test_requests, "gen-requests")))

    def env(self, corpus: Corpus, lam: float | None = None) -> RetrievalEnv:
        return RetrievalEnv(corpus, self.cfg.lam if lam is None else lam)

    def dataset(self, corpus: Corpus | None = None, lam: float | None = None, path: Path | None = None) -> Dataset:
        corpus = corpus or self.corpus()
        lam = self.cfg.lam if lam is None else lam
        train, _ = self.requests()
        path = _need(path or self.layout.dataset(lam), "collect")
        _, episodes = load_dataset(path, self.env(corpus, lam), train)
        return Dataset.from_episodes(episodes, lam)

    def policy(self, kind: str) -> PolicyArtifact:
        return PolicyArtifact.load(_need(self.layout.policy(kind), f"train {kind}"))

    def mixture(self):
        return [(policy_from_name(name), float(w)) for name, w in self.cfg.mixture]

    def baselines(self) -> list[PolicyArtifact]:
        ks = sorted(self.cfg.baseline_k, reverse=True)
        return [fixed_k(k) for k in ks] + [heuristic(self.cfg.baseline_theta)]

    # ---------------------------------------------------------------- stages
    def save_config(self) -> Path:
        # the location is not part of the experiment; keep reruns elsewhere byte-identical
        return _write(self.layout.config, replace(self.cfg, out_dir="").dumps())

    def gen_corpus(self) -> Path:
        self.save_config()
        corpus = build_corpus(self.cfg.corpus_seed)
        self.layout.root.mkdir(parents=True, exist_ok=True)
        corpus.save(self.layout.corpus)
        return self.layout.corpus

    def gen_requests(self) -> tuple[Path, Path]:
        corpus = self.corpus()
        train = generate_requests(corpus, self.cfg.train_seed, self.cfg.n_train, self.cfg.outcome_weights)
        test = generate_requests(corpus, self.cfg.test_seed, self.cfg.n_test, self.cfg.outcome_weights,
                                 start_id=self.cfg.n_train, split="test")
        save_requests(train, self.layout.train_requests)
        save_requests(test, self.layout.test_requests)
        return self.layout.train_requests, self.layout.test_requests

    def collect(self, lam: float | None = None, path: Path | None = None) -> Path:
        lam = self.cfg.lam if lam is None else lam
        corpus = self.corpus()
        train, _ = self.requests()
        mixture = self.mixture()
        episodes = collect_dataset(self.env(corpus, lam), train, self.cfg.collect_seed, self.cfg.n_train, mixture,
                                   resample=self.cfg.resample)
        path = path or self.layout.dataset(lam)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_dataset(episodes, path, seed=self.cfg.collect_seed, lam=lam, mixture=mixture,
                     corpus_hash=corpus.content_hash())
        return path

    def train(self, kind: str, dataset: Dataset | None = None, cfg=None, corpus: Corpus | None = None
              ) -> PolicyArtifact:
        if kind not in TRAINERS:
            raise ValueError(f"unknown algorithm {kind!r}; choose from {sorted(TRAINERS)}")
        corpus = corpus or self.corpus()
        dataset = dataset or self.dataset(corpus)
        art = TRAINERS[kind](dataset, cfg or getattr(self.cfg, kind))
        art.config["corpus_hash"] = corpus.content_hash()
        art.config["lam"] = dataset.lam
        return art

    def train_stage(self, kind: str) -> Path:
        art = self.train(kind)
        path = self.layout.policy(kind)
        path.parent.mkdir(parents=True, exist_ok=True)
        art.save(path)
        return path

    def learned(self) -> list[PolicyArtifact]:
        found = [k for k in ROW_ORDER if self.layout.policy(k).exists()]
        if not found:
            raise MissingStageError("train", self.layout.root / "policies")
        return [self.policy(k) for k in found]

    def evaluate(self) -> Path:
        corpus = self.corpus()
        _, test = self.requests()
        env = self.env(corpus)
        reports = [evaluate_policy(p, env, test, seed=self.cfg.seed) for p in self.learned() + self.baselines()]
        return _write(self.layout.evaluation, _dump([r.to_json() for r in reports]))

    def reports(self) -> list[EvalReport]:
        raw = json.loads(_need(self.layout.evaluation, "eval").read_text())
        return [EvalReport.from_json(d) for d in raw]

    def ope(self) -> Path:
        corpus = self.corpus()
        ds = self.dataset(corpus)
        rows = [OpeReport(p.label, p.kind, wis_estimate(p, ds), fqe_estimate(p, ds, epochs=self.cfg.fqe_epochs,
                                                                              seed=self.cfg.seed))
                for p in self.learned()]
        returns = [ep.total_return for ep in ds.episodes]
        out = {"dataset_return_bounds": [min(returns), max(returns)], "policies": [asdict(r) for r in rows]}
        return _write(self.layout.ope, _dump(out))

    def significance(self) -> Path:
        reports = {r.kind if r.kind in LEARNED_KINDS else r.policy: r for r in self.reports()}
        learned = [k for k in ROW_ORDER if k in reports]
        baselines = [r.policy for r in self.reports() if r.kind not in LEARNED_KINDS]
        pairs = [(a, b) for i, a in enumerate(learned) for b in learned[i + 1:]]
        pairs += [(a, b) for a in learned for b in baselines]
        out = []
        for a, b in pairs:
            ra, rb = reports[a], reports[b]
            out.append(paired_t_test(_correct(ra), _correct(rb), f"{ra.policy} vs {rb.policy}",
                                     n_boot=self.cfg.n_boot, seed=self.cfg.seed).to_json())
        return _write(self.layout.significance, _dump(out))

    def ablate(self, kind: str, grid: Sequence[float] | None = None, seeds: Sequence[int] | None = None) -> Path:
        if kind not in ABLATION_KINDS:
            raise ValueError(f"ablation kind must be one of {sorted(ABLATION_KINDS)}")
        grid = list(grid if grid is not None else getattr(self.cfg.ablation, f"{kind}_grid"))
        seeds = list(seeds if seeds is not None else self.cfg.ablation.seeds)
        corpus = self.corpus()
        _, test = self.requests()
        folder = self.layout.ablation(kind)
        folder.mkdir(parents=True, exist_ok=True)
        datasets: dict[float, Dataset] = {}

        def dataset_for(lam: float) -> Dataset:
            if lam not in datasets:
                if kind == "lambda":
                    path = folder / f"dataset_lambda_{lam:g}.jsonl"
                    if not path.exists():
                        self.collect(lam, path)
                    datasets[lam] = self.dataset(corpus, lam, path)
                else:
                    datasets[lam] = self.dataset(corpus)
            return datasets[lam]

        def train_and_eval(value: float, seed: int) -> EvalReport:
            algo = ABLATION_KINDS[kind]
            lam = value if kind == "lambda" else self.cfg.lam
            base = getattr(self.cfg, algo)
            if kind == "beta":
                cfg = replace(base, beta_dpo=value, seed=seed)
            elif kind == "alpha":
                cfg = replace(base, alpha=value, seed=seed)
            else:
                cfg = replace(base, seed=seed)
            art = self.train(algo, dataset_for(lam), cfg, corpus)
            return evaluate_policy(art, self.env(corpus, lam), test, seed=seed)

        rows = run_ablation(kind, grid, seeds, train_and_eval)
        summary = summarise_ablation(rows)
        _write(folder / "rows.json", _dump([asdict(r) for r in rows]))
        _write(folder / "summary.json", _dump(summary))
        headers = [kind, "seeds", "accuracy", "mean_steps", "mean_return"]
        table = [[s["value"], s["seeds"], s["accuracy"], s["mean_steps"], s["mean_return"]] for s in summary]
        _write(folder / "summary.txt", format_table(headers, table))
        _write(folder / "summary.csv", to_csv(headers, table))
        return folder

    def report(self) -> Path:
        out = self.layout.report
        reports = self.reports()
        headers = ["policy", "accuracy", "return", "steps"]
        rows = main_table_rows(reports)
        _write(out / "main.txt", format_table(headers, rows))
        _write(out / "main.csv", to_csv(headers, rows))
        points = [(r.mean_steps, r.accuracy) for r in reports]
        front = set(pareto_frontier(points))
        _write(out / "pareto.csv", to_csv(["policy", "mean_steps", "accuracy", "on_frontier"],
                                          [[r.policy, s, a, int((s, a) in front)]
                                           for r, (s, a) in zip(reports, points)]))
        proc = per_procedure_report(reports)
        prow = [[c] + [proc["accuracy"][r.policy][c] for r in reports] + [int(c in proc["hard"])]
                for c in proc["procedures"]]
        pheaders = ["cpt"] + [r.policy for r in reports] + ["all_learned_below_1"]
        _write(out / "per_procedure.txt", format_table(pheaders, prow))
        _write(out / "per_procedure.csv", to_csv(pheaders, prow))
        summary: dict = {"main": [{"policy": r.policy, "kind": r.kind, "accuracy": r.accuracy,
                                   "mean_return": r.mean_return, "mean_steps": r.mean_steps} for r in reports],
                         "pareto": [[s, a] for s, a in pareto_frontier(points)],
                         "per_procedure": proc}
        for kind in ROW_ORDER:
            if self.layout.policy(kind).exists():
                _write(out / f"curves_{kind}.csv", _curves_csv(self.policy(kind).metrics))
        if self.layout.ope.exists():
            ope = json.loads(self.layout.ope.read_text())
            orow = [[p["policy"], p["wis_estimate"], p["fqe_mean_q"]] for p in ope["policies"]]
            _write(out / "ope.txt", format_table(["policy", "wis", "fqe_mean_q"], orow))
            summary["ope"] = ope
        if self.layout.significance.exists():
            sig = json.loads(self.layout.significance.read_text())
            srow = [[s["label"], s["delta_accuracy"], s["t_statistic"], s["p_text"],
                     f"[{s['ci95'][0]:.1f}, {s['ci95'][1]:.1f}]"] for s in sig]
            _write(out / "significance.txt", format_table(["comparison", "delta_pp", "t", "p", "ci95_pp"], srow))
            summary["significance"] = sig
        for kind in ABLATION_KINDS:
            f = self.layout.ablation(kind) / "summary.json"
            if f.exists():
                summary.setdefault("ablations", {})[kind] = json.loads(f.read_text())
        _write(out / "report.json", _dump(summary))
        return out

    def run_all(self, ablations: Sequence[str] = tuple(ABLATION_KINDS)) -> Path:
        self.gen_corpus()
        self.gen_requests()
        self.collect()
        for kind in ROW_ORDER:
            self.train_stage(kind)
        self.evaluate()
        self.ope()
        self.significance()
        for kind in ablations:
            self.ablate(kind)
        return self.report()


def _correct(r: EvalReport) -> list[float]:
    return [float(e.correct) for e in r.episodes]


def _curves_csv(metrics: dict[str, list[float]]) -> str:
    rows = [[name, i, v] for name in sorted(metrics) for i, v in enumerate(metrics[name])]
    return to_csv(["metric", "epoch", "value"], rows)


__all__ = ["Layout", "MissingStageError", "Pipeline", "ROW_ORDER", "TRAINERS"]
