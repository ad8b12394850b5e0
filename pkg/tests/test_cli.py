import json
import subprocess
import sys

import pytest

from pedcross import artifacts as art
from pedcross.cli import EXIT_CONFIG, EXIT_DATA, EXIT_INVALID, load_config, main, parse_grid

TINY = ["--set", "train.hidden=[8,8]", "--set", "train.replay_capacity=256", "--max-episodes", "3"]


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    assert main(["train", "--out", str(root / "ideal"), "--mode", "ideal", "--seed", "7", *TINY]) == 0
    assert main(["train", "--out", str(root / "cond"), "--mode", "conditioned", "--grid", "0:0.2:0.1", *TINY]) == 0
    assert main(["train", "--out", str(root / "ps"), "--mode", "per-sigma", "--sigma", "0.1", "0.2", *TINY]) == 0
    return root


def test_parse_grid():
    assert len(parse_grid("0:1:0.05")) == 21
    assert parse_grid("0.1,0.3") == [0.1, 0.3]
    with pytest.raises(ValueError):
        parse_grid("1:0:0.1")


def test_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"train": {"gamma": 0.9}}))
    cfg, seed = load_config(str(p), ["train.lr=0.01", "env.meas_var_source=true", "env.tag=abc", "seed=3"])
    # values are JSON when they parse, plain strings otherwise
    assert cfg == {"train": {"gamma": 0.9, "lr": 0.01}, "env": {"meas_var_source": True, "tag": "abc"}, "seed": 3}
    assert seed is None


def test_train_outputs(runs):
    assert (runs / "ideal/checkpoints/ideal.qnet.zip").exists()
    m = json.loads((runs / "ideal/manifest.json").read_text())
    assert m["command"] == "train" and m["seed"] == 7
    assert m["config"]["train"]["mode"] == "ideal"
    assert sorted((runs / "ps/checkpoints").iterdir())[0].name == "per-sigma_0.100.qnet.zip"


def test_per_sigma_grid_cardinality(tmp_path):
    args = ["train", "--out", str(tmp_path), "--mode", "per-sigma", "--grid", "0:1:0.05", "--workers", "4",
            "--set", "train.hidden=[4]", "--set", "train.replay_capacity=64", "--max-episodes", "1"]
    assert main(args) == 0
    assert len(list((tmp_path / "checkpoints").glob("*.qnet.zip"))) == 21


def test_train_replay_identical(runs, tmp_path):
    assert main(["train", "--config", str(runs / "ps/manifest.json"), "--out", str(tmp_path)]) == 0
    for name in ("per-sigma_0.100.qnet.zip", "per-sigma_0.200.qnet.zip"):
        assert (tmp_path / "checkpoints" / name).read_bytes() == (runs / "ps/checkpoints" / name).read_bytes()
    assert (tmp_path / "manifest.json").read_bytes() == (runs / "ps/manifest.json").read_bytes()


def test_eval_and_replay(runs, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", "--out", str(out), "--checkpoint", str(runs / "ideal/checkpoints"),
                 str(runs / "cond/checkpoints"), "--sigma", "0", "--n", "20", "--tta-n", "1000"]) == 0
    head = (out / "acceptance.csv").read_text().splitlines()[0]
    assert head == ",".join(art.CSV_SCHEMAS["acceptance.csv"])
    again = tmp_path / "ev2"
    assert main(["eval", "--config", str(out / "manifest.json"), "--out", str(again)]) == 0
    for f in ("trials.csv", "acceptance.csv", "cit_cdf.csv", "tta_dispersion.csv", "plot_data.json"):
        assert (out / f).read_bytes() == (again / f).read_bytes()


def test_eval_incompatible_sigma(runs, tmp_path, capsys):
    rc = main(["eval", "--out", str(tmp_path), "--checkpoint", str(runs / "ideal/checkpoints"),
               "--sigma", "0.1", "--n", "5"])
    assert rc == EXIT_CONFIG
    assert "ideal" in capsys.readouterr().err


def test_synth_and_fit(runs, tmp_path):
    syn = tmp_path / "syn"
    assert main(["synth", "--out", str(syn), "--bank", str(runs / "cond"), "--sigma", "0.1", "0.2",
                 "--repeats", "2", "--seed", "4"]) == 0
    rows = (syn / "dataset.csv").read_text().splitlines()
    assert rows[0] == "participant_id,v0_mps,d0_m,cit_s" and len(rows) == 1 + 2 * 6 * 2
    fit = tmp_path / "fit"
    assert main(["fit", "--out", str(fit), "--data", str(syn / "dataset.csv"), "--bank", str(runs / "ps"),
                 "--conditioned", str(runs / "cond"), "--n", "30"]) == 0
    v = json.loads((fit / "variants.json").read_text())
    assert [r["variant"] for r in v["variants"]] == ["LMD", "LMP", "LSP"]
    assert main(["validate", str(tmp_path), str(runs)]) == 0


def test_synth_sigma_outside_grid(runs, tmp_path, capsys):
    rc = main(["synth", "--out", str(tmp_path), "--bank", str(runs / "cond"), "--sigma", "0.35"])
    assert rc == EXIT_DATA
    assert "outside" in capsys.readouterr().err


def test_fit_bad_data(runs, tmp_path, capsys):
    p = tmp_path / "d.csv"
    p.write_text("participant_id,v0_mps,d0_m,cit_s\nP1,6.94,15.9,x\n")
    rc = main(["fit", "--out", str(tmp_path / "o"), "--data", str(p), "--bank", str(runs / "ps")])
    assert rc == EXIT_DATA
    assert ":2:" in capsys.readouterr().err


def test_bad_config(tmp_path):
    assert main(["train", "--out", str(tmp_path), "--set", "train.gamma=3"]) == EXIT_CONFIG
    assert main(["train", "--out", str(tmp_path), "--set", "train.bogus=1"]) == EXIT_CONFIG
    assert main(["train", "--out", str(tmp_path), "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_validate_flags_broken_files(tmp_path):
    (tmp_path / "acceptance.csv").write_text("wrong,header\n")
    (tmp_path / "manifest.json").write_text('{"schema_version": 1}')
    assert main(["validate", str(tmp_path)]) == EXIT_INVALID


def test_console_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "pedcross.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("train", "eval", "fit", "synth", "validate"):
        assert cmd in out.stdout
