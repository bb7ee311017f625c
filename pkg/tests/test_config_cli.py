import math
from pathlib import Path

import numpy as np
import pytest

from pcinit.cli import main
from pcinit.config import RunConfig, clone, from_text, load_config, set_key, to_text
from pcinit.inits import InfeasibleInitError, InitStrategy
from pcinit.plot import curves
from pcinit.runner import DECODER_SPACE, MLP_SPACE, grid_search, run_experiment, summarize
from pcinit.smm import read_metrics

GRAPHS = Path(__file__).resolve().parents[1] / "graphs"

TINY = ["--dataset", "synthetic", "--set", "data.synthetic_per_class=20", "--batch-size", "100", "--T-train", "2",
        "--no-wall-time"]


def test_text_round_trip():
    cfg = RunConfig(run_id="x", seeds=[3, 4])
    cfg.init = InitStrategy("average", m=2)
    set_key(cfg, "train.alpha_eval", "0.05")
    set_key(cfg, "train.adam_betas", "0.8, 0.9")
    set_key(cfg, "checkpoint", "false")
    back, grid = from_text(to_text(cfg))
    assert to_text(back) == to_text(cfg) and grid == {}
    assert back.seeds == [3, 4] and back.init.m == 2 and back.train.adam_betas == (0.8, 0.9)
    assert back.train.alpha_eval == 0.05 and back.checkpoint is False
    assert to_text(clone(cfg)) == to_text(cfg)


def test_unknown_keys_and_bad_values():
    cfg = RunConfig()
    with pytest.raises(KeyError):
        set_key(cfg, "train.gamma", "1")
    with pytest.raises(KeyError):
        set_key(cfg, "optim.beta", "1")
    with pytest.raises(ValueError):
        set_key(cfg, "train.beta", "fast")
    with pytest.raises(ValueError):
        set_key(cfg, "init.kind", "warm")
    with pytest.raises(KeyError):
        from_text("[bogus]\nx = 1\n")


def test_validation_rules():
    cfg = RunConfig()
    set_key(cfg, "model.preset", "decoder4")
    cfg.init = InitStrategy("forward")
    with pytest.raises(InfeasibleInitError):
        cfg.validate()
    cfg.init = InitStrategy("average")
    with pytest.raises(ValueError):
        cfg.validate()
    cfg = RunConfig()
    assert cfg.batching == "shuffled"
    cfg.init = InitStrategy("average")
    assert cfg.batching == "stream"
    set_key(cfg, "data.batching", "shuffled")
    assert cfg.batching == "shuffled"


def test_grid_section_parsed():
    _, grid = from_text("[run]\nmethod = pc\n[grid]\ntrain.alpha = 0.1, 0.3\nmodel.activation = tanh\n")
    assert grid == {"train.alpha": ["0.1", "0.3"], "model.activation": ["tanh"]}


def test_full_search_space_sizes():
    assert math.prod(len(v) for v in MLP_SPACE.values()) == 3 * 6 * 5 * 8 * 6 * 3
    assert math.prod(len(v) for v in DECODER_SPACE.values()) == 3 * 3 * 3 * 3 * 4 * 4


def fake_runner(cfg):
    return {"metric": "test_accuracy", "best_mean": cfg.train.alpha * 10 - cfg.train.beta, "best_std": 0.0}


def test_grid_search_cartesian_product(tmp_path):
    template = RunConfig(out_dir=str(tmp_path))
    best, table = grid_search({"train.alpha": [0.1]}, template, runner=fake_runner)
    assert len(table) == 1 and best.train.alpha == 0.1
    best, table = grid_search({"train.alpha": [0.1, 0.3], "train.beta": [0.001, 0.01]}, template,
                              runner=fake_runner)
    assert len(table) == 4
    assert {(r["train.alpha"], r["train.beta"]) for r in table} == {(0.1, 0.001), (0.1, 0.01), (0.3, 0.001),
                                                                   (0.3, 0.01)}
    assert best.train.alpha == 0.3 and best.train.beta == 0.001
    assert load_config(tmp_path / "best.ini")[0].train.alpha == 0.3
    assert len((tmp_path / "grid.csv").read_text().splitlines()) == 5
    with pytest.raises(ValueError):
        grid_search({}, template, runner=fake_runner)
    with pytest.raises(ValueError):
        grid_search({"train.alpha": []}, template, runner=fake_runner)


def test_summarize_from_rows():
    rows = [{"seed": s, "test_accuracy": a, "smm_train_cum": c} for s, a, c in
            [(0, 0.1, 0), (0, 0.9, 10), (0, 0.8, 20), (1, "nan", 0), (1, 0.7, 10)]]
    s = summarize(rows, "classify")
    assert s["best_per_seed"] == [0.9, 0.7] and s["final_per_seed"] == [0.8, 0.7]
    assert s["best_mean"] == pytest.approx(0.8) and s["smm_train_total"] == [20, 10]


def test_train_epochs_zero_writes_only_initial_eval(tmp_path):
    out = tmp_path / "r"
    assert main(["eval", *TINY, "--out", str(out)]) == 0
    rows = read_metrics(out / "metrics.csv")
    assert len(rows) == 1 and rows[0]["epoch"] == "0" and rows[0]["smm_train_cum"] == "0"


def test_train_is_bit_reproducible_without_wall_time(tmp_path):
    args = [*TINY, "--epochs", "2", "--init", "avg", "--seed", "0,1"]
    assert main(["train", *args, "--out", str(tmp_path / "a")]) == 0
    assert main(["train", *args, "--out", str(tmp_path / "b")]) == 0
    a, b = (tmp_path / "a" / "metrics.csv").read_bytes(), (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a == b and len(a.splitlines()) == 1 + 2 * 3
    ckpt = tmp_path / "a" / "checkpoint_seed1.pcn"
    assert ckpt.exists()
    assert main(["eval", *TINY, "--checkpoint", str(ckpt)]) == 0


def test_exit_codes(tmp_path, capsys):
    assert main(["train", "--bogus"]) == 1
    assert main(["train", *TINY, "--set", "train.gamma=1"]) == 1
    assert main(["train", *TINY, "--preset", "decoder4", "--init", "forward", "--out", str(tmp_path)]) == 1
    assert "forward initialization" in capsys.readouterr().err
    assert main(["train", *TINY, "--dataset", "mnist", "--data-dir", str(tmp_path), "--out", str(tmp_path)]) == 1
    code = main(["train", *TINY, "--init", "zero", "--alpha", "1000", "--out", str(tmp_path / "d")])
    assert code == 2 and "diverged" in capsys.readouterr().err


def test_dagcheck_outputs(capsys):
    assert main(["dagcheck", str(GRAPHS / "forward_dag.graph")]) == 0
    assert capsys.readouterr().out.startswith("FEASIBLE order=0 ")
    assert main(["dagcheck", str(GRAPHS / "loop.graph")]) == 1
    assert capsys.readouterr().out.strip() == "INFEASIBLE cycle=1 2 3"
    assert main(["dagcheck", str(GRAPHS / "input_not_root.graph")]) == 1
    assert capsys.readouterr().out.strip() == "INFEASIBLE unclamped_root=0"


def test_grid_and_plot_subcommands(tmp_path):
    out = tmp_path / "g"
    assert main(["grid", *TINY, "--epochs", "1", "--out", str(out), "--space", "train.alpha=0.05,0.1"]) == 0
    assert len((out / "grid.csv").read_text().splitlines()) == 3
    csvs = [str(out / f"cell000{i}" / "metrics.csv") for i in range(2)]
    svg = tmp_path / "p.svg"
    assert main(["plot", *csvs, "--out", str(svg)]) == 0
    assert svg.read_text().lstrip().startswith("<?xml") and "<svg" in svg.read_text()


def test_curves_average_seeds():
    rows = [{"run_id": "r", "seed": s, "smm_train_cum": c, "test_accuracy": a}
            for s, c, a in [(0, 0, 0.1), (0, 10, 0.5), (1, 0, 0.3), (1, 10, 0.7)]]
    assert curves(rows) == {"r": ([0.0, 10.0], [0.2, 0.6])}


def test_run_experiment_summary_matches_csv(tmp_path):
    cfg = RunConfig(out_dir=str(tmp_path), seeds=[0, 1], record_wall_time=False, checkpoint=False)
    for k, v in {"data.dataset": "synthetic", "data.synthetic_per_class": 20, "train.epochs": 1,
                 "train.batch_size": 100}.items():
        set_key(cfg, k, v)
    s = run_experiment(cfg)
    rows = read_metrics(tmp_path / "metrics.csv")
    assert s["best_per_seed"] == [max(float(r["test_accuracy"]) for r in rows if r["seed"] == str(k))
                                  for k in (0, 1)]
    assert isinstance(s["nets"][0].weights[0], np.ndarray)


def test_grid_template_validated_per_cell(tmp_path):
    # the template alone (forward init on the decoder) is invalid; the grid cells are not
    args = ["grid", *TINY, "--preset", "decoder4", "--init", "forward", "--epochs", "1", "--T-eval", "1",
            "--out", str(tmp_path), "--space", "init.kind=zero"]
    assert main(args) == 0
    assert main(args[:-2] + ["--space", "init.kind=forward"]) == 1
