import csv
import json

import pytest
from hypothesis import given, settings, strategies as st

from pa_retrieval.cli import main
from pa_retrieval.config import OUT_ENV, RunConfig

TINY = ["--set", "n_train=60", "--set", "n_test=20", "--set", "bc.epochs=2", "--set", "cql.epochs=2",
        "--set", "iql.epochs=2", "--set", "dpo.epochs=2", "--set", "dpo.warmup_epochs=2", "--set", "fqe_epochs=2",
        "--set", "n_boot=50"]


def test_default_config_round_trip():
    cfg = RunConfig()
    assert RunConfig.from_json(json.loads(cfg.dumps())) == cfg


@given(st.integers(0, 10_000), st.floats(0.0, 1.0), st.floats(0.01, 10.0), st.sampled_from(["transition", "trajectory"]))
@settings(max_examples=40, deadline=None)
def test_config_round_trip_is_identity(seed, lam, alpha, mode):
    cfg = RunConfig().with_overrides([f"seed={seed}", f"lam={lam!r}", f"cql.alpha={alpha!r}",
                                      f"dpo.pairing_mode={mode}"])
    assert RunConfig.from_json(json.loads(cfg.dumps())) == cfg
    assert cfg.cql.alpha == alpha and cfg.dpo.pairing_mode == mode


def test_overrides_parse_json_values():
    cfg = RunConfig().with_overrides(["ablation.lambda_grid=[0.05,0.2]", "iql.epochs=10", "resample=true"])
    assert cfg.ablation.lambda_grid == [0.05, 0.2]
    assert cfg.iql.epochs == 10 and isinstance(cfg.iql.epochs, int)
    assert cfg.resample is True


@pytest.mark.parametrize("bad", ["nope=1", "cql.nope=1", "seed", "lam=-1", "k=5"])
def test_bad_overrides_raise(bad):
    with pytest.raises(ValueError):
        RunConfig().with_overrides([bad])


def test_out_dir_comes_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(OUT_ENV, str(tmp_path))
    assert RunConfig().output_root() == tmp_path
    assert RunConfig(out_dir="elsewhere").output_root().name == "elsewhere"


def test_gen_corpus_is_reproducible(tmp_path):
    assert main(["gen-corpus", "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-corpus", "--out", str(tmp_path / "b")]) == 0
    for name in ("corpus.jsonl", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_missing_stage_names_the_stage(tmp_path, capsys):
    assert main(["collect", "--out", str(tmp_path)]) == 1
    assert "gen-corpus" in capsys.readouterr().err
    assert main(["eval", "--out", str(tmp_path)]) == 1


def test_usage_errors_exit_one(tmp_path, capsys):
    assert main(["train", "ppo", "--out", str(tmp_path)]) == 1
    assert main(["gen-corpus", "--set", "bogus=3", "--out", str(tmp_path)]) == 1
    assert main([]) == 1
    assert main(["--help"]) == 0


def test_environment_variable_sets_output_root(monkeypatch, tmp_path):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env_root"))
    assert main(["gen-corpus"]) == 0
    assert (tmp_path / "env_root" / "corpus.jsonl").exists()


def test_show_config_prints_effective_config(capsys):
    assert main(["show-config", "--set", "cql.alpha=0.5", "--seed", "3"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["cql"]["alpha"] == 0.5 and d["seed"] == 3


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    assert main(["all", "--out", str(root)] + TINY) == 0
    return root


def _csv_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_full_pipeline_produces_seven_rows(tiny_run):
    rows = _csv_rows(tiny_run / "report" / "main.csv")
    assert len(rows) == 7
    assert [r["policy"] for r in rows][:4] == ["DPO (transition)", "CQL", "BC", "IQL"]
    for name in ("pareto.csv", "per_procedure.csv", "ope.txt", "significance.txt", "report.json",
                 "curves_cql.csv"):
        assert (tiny_run / "report" / name).exists()


def test_lambda_ablation_outputs(tiny_run):
    folder = tiny_run / "ablations" / "lambda"
    assert len(_csv_rows(folder / "summary.csv")) == 3
    assert len(sorted(folder.glob("dataset_lambda_*.jsonl"))) == 3
    for kind in ("beta", "alpha"):
        assert len(_csv_rows(tiny_run / "ablations" / kind / "summary.csv")) == 3


def test_stages_can_be_rerun_individually(tiny_run):
    assert main(["ablate", "alpha", "--grid", "0.5", "--out", str(tiny_run)] + TINY) == 0
    assert len(_csv_rows(tiny_run / "ablations" / "alpha" / "summary.csv")) == 1
    assert main(["report", "--out", str(tiny_run)] + TINY) == 0
