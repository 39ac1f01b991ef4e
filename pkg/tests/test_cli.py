import json

import pytest

from qcprobe.autoencoder import BN, RELU, NetworkSpec, conv, dense, pool
from qcprobe.cli import DEFAULTS, main, read_config_file, resolve_config, UsageError
from qcprobe.checkpoint import read_header


def _spec_file(tmp_path, name="tiny", pools=1, length=64):
    layers = (conv(5, 3), RELU, BN, pool()) + (conv(3, 2), RELU, BN, pool()) * pools + (dense(4),)
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(NetworkSpec(length, layers, 4, name).to_dict()))
    return str(path)


SMALL = ["--set", "n_records=8", "--set", "duration=4", "--epochs", "1", "--batch", "4"]


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.suffix == ".csv"}


# ----------------------------------------------------------------- usage

def test_no_command_is_usage_error(capsys):
    assert main([]) == 1
    assert "error" in capsys.readouterr().err


def test_unknown_flag_and_inapplicable_option(tmp_path):
    assert main(["synth", "--bogus"]) == 1
    assert main(["synth", "--repeats", "3", "--out", str(tmp_path)]) == 1
    assert main(["synth", "--set", "nonsense=1", "--out", str(tmp_path)]) == 1
    assert main(["synth", "--set", "n_records=abc", "--out", str(tmp_path)]) == 1


def test_bad_spec_is_usage_error(tmp_path):
    assert main(["train", "--spec", "no-such-thing", "--out", str(tmp_path)]) == 1


def test_runtime_failure_exit_code(tmp_path):
    spec = _spec_file(tmp_path)
    # a mask as long as the signal cannot be built
    assert main(["masked", "--set", f"good={spec}", "--set", f"bad={spec}", "--mask", "0:64",
                 "--out", str(tmp_path / "r")] + SMALL) == 2


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nn_records = 7\nrr_jitter=0.05\n\n")
    values = read_config_file(cfg)
    assert values == {"n_records": "7", "rr_jitter": "0.05"}
    resolved = resolve_config("synth", values, {"n_records": "3"})
    assert resolved["n_records"] == 3 and resolved["rr_jitter"] == 0.05
    assert resolved["data_seed"] == DEFAULTS["synth"]["data_seed"]
    with pytest.raises(UsageError):
        resolve_config("synth", {"epochs": "3"}, {})


# -------------------------------------------------------------- commands

def test_synth_writes_manifest_and_records(tmp_path):
    out = tmp_path / "s"
    assert main(["synth", "--out", str(out), "--set", "n_records=3", "--set", "duration=4"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "synth" and manifest["config"]["n_records"] == 3
    assert sorted(p.name for p in out.iterdir()) == sorted(["manifest.json"] + manifest["outputs"])
    assert (out / "rec-0002.txt").exists()


def test_gp_command(tmp_path):
    out = tmp_path / "g"
    assert main(["gp", "--out", str(out), "--set", "n_per_kernel=2", "--set", "length=64"]) == 0
    assert len(list(out.glob("gp-*.txt"))) == 2 * len(DEFAULTS["gp"]["kernels"].split(","))


def test_gradcheck_command(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path / "gc")]) == 0
    assert "pass" in capsys.readouterr().out.lower()


def test_train_then_interpolate(tmp_path):
    spec = _spec_file(tmp_path, pools=2)
    out = tmp_path / "t"
    assert main(["train", "--spec", spec, "--out", str(out)] + SMALL) == 0
    head = read_header(out / "model.qcae")
    assert head["input_length"] == 64 and head["latent_dim"] == 4
    interp = tmp_path / "i"
    assert main(["interpolate", "--set", f"model={out / 'model.qcae'}", "--steps", "4",
                 "--out", str(interp)]) == 0
    assert (interp / "panels.svg").exists()
    rows = (interp / "interpolation.csv").read_text().splitlines()
    assert len(rows) == 5


def test_masked_sweep_compare_small(tmp_path):
    good, bad = _spec_file(tmp_path, "g", 1), _spec_file(tmp_path, "b", 2)
    common = ["--set", f"good={good}", "--set", f"bad={bad}", "--mask", "24:16"] + SMALL
    assert main(["masked", "--out", str(tmp_path / "m")] + common) == 0
    assert main(["compare", "--out", str(tmp_path / "c"), "--set", "n_gp=8"] + common) == 0
    assert main(["sweep", "--spec", good, "--sizes", "0,16", "--repeats", "1",
                 "--out", str(tmp_path / "w")] + SMALL) == 0
    assert (tmp_path / "w" / "sweep.csv").read_text().count("\n") == 3


def test_rerun_gives_identical_csvs(tmp_path):
    spec = _spec_file(tmp_path, pools=2)
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--spec", spec, "--out", str(out)] + SMALL) == 0
        runs.append(_files(out))
    assert runs[0] == runs[1] and runs[0]
