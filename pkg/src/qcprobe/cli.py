"""Command-line entry point: ``qcprobe <command> [flags]``.

Every run writes ``manifest.json`` into its output directory before doing
any work. The manifest holds the fully resolved configuration, so rerunning
with the same manifest reproduces the CSVs byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .autoencoder import (PRESETS, NetworkSpec, RegionMask, TrainConfig, build_autoencoder,
                          paper_spec, split_dataset, train,
                          uniform_kernel_spec)
from .checkpoint import load_checkpoint, save_checkpoint
from .engine import grad_check, masked_mse
from .engine.gradcheck import draw_off_kinks
from .probes import (error_report, interpolate_latent, run_area_sweep, run_masked_experiment,
                     run_periodicity_comparison, wave_track)
from .report import emit_csv, emit_svg_plot
from .signal_core import (DEFAULT_GP_KERNELS, CycleParams, GPKernelSpec, PreprocessConfig,
                          load_records, normalize_to_reference, preprocess, sample_gp_trajectory,
                          synth_cycle_crop, synth_cycle_dataset, synth_dataset, synth_ecg,
                          wave_window, write_peaks, write_record)

COMMANDS = ("synth", "gp", "train", "interpolate", "masked", "sweep", "compare", "gradcheck")

# Synthetic ECG cohort shared by the commands that need one when --data is absent.
_COHORT = {"n_records": 100, "data_seed": 1, "rr_min": 0.75, "rr_max": 0.85, "rr_jitter": 0.02,
           "phase": "0.1", "duration": 10.0, "fs": 500}

# Strictly periodic cohort for the masked-region probes: fixed RR, random phase,
# so hidden content can only be inferred from the visible cycles of the same signal.
_MASK_COHORT = dict(_COHORT, n_records=50, data_seed=5, rr_min=0.8, rr_max=0.8, rr_jitter=0.0,
                    phase="random")

DEFAULTS = {
    "synth": dict(_COHORT),
    "gp": {"n_per_kernel": 25, "length": 512, "fs": 128.0, "data_seed": 2,
           "kernels": ",".join(f"{k.kind}:{k.length_scale}" for k in DEFAULT_GP_KERNELS)},
    "train": dict(_COHORT, spec="paper", epochs=300, lr=1e-3, batch=16, seed=0,
                  mask="", test_fraction=0.2, split_seed=0),
    "interpolate": {"model": "", "spec": "paper", "input_length": 256, "n_train": 100,
                    "data_seed": 3, "epochs": 60, "lr": 1e-3, "batch": 16, "seed": 0,
                    "delay_a": 0.15, "delay_b": 0.385, "pair_seed": 900001, "steps": 8,
                    "id_a": "", "id_b": "", "window_a": "", "window_b": ""},
    "masked": dict(_MASK_COHORT, good="good", bad="bad", mask="", mask_size=230,
                   epochs=200, lr=1e-3, batch=2, seed=0),
    "sweep": dict(_MASK_COHORT, spec="good", sizes="0,128,230,306,384,462",
                  repeats=10, epochs=200, lr=1e-3, batch=2, seed=0),
    "compare": dict(_MASK_COHORT, good="good", bad="bad", mask="", mask_size=230,
                    n_gp=50, gp_seed=2, gp_kernels="squared-exponential:0.2",
                    epochs=200, lr=1e-3, batch=2, seed=0),
    "gradcheck": {"input_length": 32, "kernel": 5, "channels": 0.2, "batch": 2,
                  "seed": 0, "tolerance": 1e-5, "h": 1e-5},
}

_FLAG_KEYS = {"seed": "seed", "spec": "spec", "mask": "mask", "steps": "steps", "sizes": "sizes",
              "repeats": "repeats", "epochs": "epochs", "lr": "lr", "batch": "batch"}


class UsageError(Exception):
    pass


# ----------------------------------------------------------------- config

def _coerce(text, default):
    if isinstance(default, bool):
        if text.lower() not in ("true", "false", "1", "0"):
            raise UsageError(f"expected true/false, got {text!r}")
        return text.lower() in ("true", "1")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise UsageError(f"cannot parse {text!r} as {type(default).__name__}") from None
    return text


def read_config_file(path):
    """Flat ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    out = {}
    for i, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{i}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def resolve_config(command, file_values, flag_values):
    """Defaults, then the config file, then command-line flags."""
    cfg = dict(DEFAULTS[command])
    for source in (file_values, flag_values):
        for key, value in source.items():
            if key not in cfg:
                raise UsageError(f"option {key!r} does not apply to {command}")
            cfg[key] = _coerce(str(value), cfg[key]) if isinstance(value, str) else value
    return cfg


def _spec_from(name, input_length=None):
    if name in PRESETS:
        return PRESETS[name](**({} if input_length is None else {"input_length": input_length}))
    path = Path(name)
    if not path.is_file():
        raise UsageError(f"--spec must be one of {sorted(PRESETS)} or a JSON file, got {name!r}")
    return NetworkSpec.from_dict(json.loads(path.read_text()))


def _mask_from(text, length, default_size=None):
    if text:
        try:
            start, size = (int(v) for v in text.split(":"))
        except ValueError:
            raise UsageError(f"--mask expects START:LEN, got {text!r}") from None
        return RegionMask.block(length, start, size)
    if default_size:
        return RegionMask.centered(length, default_size)
    return None


def _train_config(cfg, mask=None, seed=None):
    return TrainConfig(epochs=cfg["epochs"], batch_size=cfg["batch"], lr=cfg["lr"],
                       seed=cfg["seed"] if seed is None else seed, mask=mask)


def _spans(mask):
    if mask is None:
        return []
    idx = np.flatnonzero(mask.unpunished)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.r_[idx[0], idx[breaks + 1]]
    stops = np.r_[idx[breaks], idx[-1]] + 1
    return [(int(a), int(b)) for a, b in zip(starts, stops)]


# ------------------------------------------------------------------ data

def _phase(cfg):
    if cfg["phase"] in ("random", ""):
        return None
    try:
        return float(cfg["phase"])
    except ValueError:
        raise UsageError(f"phase must be a number in [0, 1) or 'random', got {cfg['phase']!r}") from None


def _cohort(cfg, input_length, data_dir=None):
    prep = PreprocessConfig(target_length=input_length)
    if data_dir:
        return [preprocess(r, prep) for r in load_records(data_dir)]
    phase = _phase(cfg)
    params = replace(CycleParams(), rr_jitter=cfg["rr_jitter"])
    return synth_dataset(cfg["n_records"], seed=cfg["data_seed"], params=params,
                         rr_range=(cfg["rr_min"], cfg["rr_max"]), duration=cfg["duration"],
                         fs=cfg["fs"], cfg=prep, phase=phase)


def _kernels(text):
    out = []
    for item in text.split(","):
        kind, _, scale = item.strip().partition(":")
        try:
            out.append(GPKernelSpec(kind, float(scale)))
        except ValueError as err:
            raise UsageError(f"bad kernel {item!r}: {err}") from None
    return out


def _gp_dataset(kernels, n, length, fs, seed):
    return [sample_gp_trajectory(k, length, fs, seed=seed * 100003 + i)
            for k in kernels for i in range(n)]


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_digests(paths):
    out = {}
    for p in paths:
        if not p:
            continue
        p = Path(p)
        files = sorted(f for f in p.rglob("*") if f.is_file()) if p.is_dir() else [p]
        for f in files:
            out[str(f)] = _digest(f)
    return out


# -------------------------------------------------------------- commands

class Run:
    """Output directory bookkeeping: manifest first, then declared outputs."""

    def __init__(self, command, cfg, out_dir, inputs, outputs):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.outputs = list(outputs)
        self.manifest = {"command": command, "version": __version__, "seed": cfg.get("seed"),
                         "config": dict(sorted(cfg.items())), "inputs": _input_digests(inputs),
                         "outputs": self.outputs}
        with open(self.dir / "manifest.json", "w", newline="\n") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def path(self, name):
        if name not in self.outputs:
            raise RuntimeError(f"{name} is not a declared output")
        return self.dir / name


def cmd_synth(cfg, args):
    names = [f"rec-{i:04d}.txt" for i in range(cfg["n_records"])]
    run = Run("synth", cfg, args.out, [], ["records.csv"] + names +
              [n.replace(".txt", ".peaks") for n in names])
    rng = np.random.default_rng(cfg["data_seed"])
    params = replace(CycleParams(), rr_jitter=cfg["rr_jitter"])
    phase = _phase(cfg)
    rows = []
    for i, name in enumerate(names):
        rr = float(rng.uniform(cfg["rr_min"], cfg["rr_max"]))
        rec, peaks = synth_ecg(replace(params, rr_mean=rr), cfg["duration"], cfg["fs"],
                               seed=cfg["data_seed"] * 100003 + i, phase=phase)
        write_record(rec, run.path(name))
        write_peaks(peaks, run.path(name.replace(".txt", ".peaks")))
        rows.append({"file": name, "id": rec.id, "fs": rec.fs, "n_samples": len(rec),
                     "rr_mean": rr, "n_peaks": len(peaks)})
    emit_csv(rows, run.path("records.csv"))


def cmd_gp(cfg, args):
    kernels = _kernels(cfg["kernels"])
    recs = _gp_dataset(kernels, cfg["n_per_kernel"], cfg["length"], cfg["fs"], cfg["data_seed"])
    names = [f"gp-{i:04d}.txt" for i in range(len(recs))]
    run = Run("gp", cfg, args.out, [], ["trajectories.csv"] + names)
    rows = []
    for name, rec in zip(names, recs):
        write_record(rec, run.path(name))
        rows.append({"file": name, "id": rec.id, "kernel": rec.label, "fs": rec.fs,
                     "n_samples": len(rec), "std": float(rec.samples.std())})
    emit_csv(rows, run.path("trajectories.csv"))


def cmd_train(cfg, args):
    spec = _spec_from(cfg["spec"])
    mask = _mask_from(cfg["mask"], spec.input_length)
    run = Run("train", cfg, args.out, [args.data, args.config] + ([cfg["spec"]] if cfg["spec"] not in PRESETS else []),
              ["model.qcae", "history.csv", "evaluation.csv", "loss.svg"])
    records = _cohort(cfg, spec.input_length, args.data)
    train_set, test_set = split_dataset(records, cfg["test_fraction"], cfg["split_seed"])
    tcfg = _train_config(cfg, mask)
    model = build_autoencoder(spec, cfg["seed"])
    hist = train(model, train_set, tcfg)
    save_checkpoint(model, run.path("model.qcae"), tcfg)
    emit_csv([{"epoch": i + 1, "punished_loss": p, "unpunished_error": u}
              for i, (p, u) in enumerate(zip(hist.punished_loss, hist.unpunished_error))],
             run.path("history.csv"))
    rows = []
    for split, recs in (("train", train_set), ("test", test_set)):
        if not recs:
            continue
        x = np.stack([r.samples for r in recs])
        err = ((model.reconstruct_batch(x) - x) ** 2).mean(axis=1)
        rows += [{"record": r.id, "split": split, "mse": float(e)} for r, e in zip(recs, err)]
    emit_csv(rows, run.path("evaluation.csv"))
    emit_svg_plot([{"x": np.arange(1, hist.epochs + 1), "y": hist.punished_loss, "label": "punished loss"}],
                  "line", run.path("loss.svg"), title="training loss", xlabel="epoch", ylabel="MSE")
    test_err = [r["mse"] for r in rows if r["split"] == "test"]
    if test_err:
        print(f"held-out MSE {np.mean(test_err):.6g} over {len(test_err)} records")


def _window(text):
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"windows are START:STOP, got {text!r}") from None
    return lo, hi


def cmd_interpolate(cfg, args):
    run = Run("interpolate", cfg, args.out, [args.data, args.config, cfg["model"]],
              ["interpolation.csv", "tracking.csv", "panels.svg"])
    if cfg["model"]:
        model = load_checkpoint(cfg["model"])
    else:
        spec = _spec_from(cfg["spec"], cfg["input_length"])
        model = build_autoencoder(spec, cfg["seed"])
        train(model, synth_cycle_dataset(cfg["n_train"], cfg["data_seed"], target_length=spec.input_length),
              _train_config(cfg))
    n = model.spec.input_length
    if args.data:
        recs = {r.id: r for r in load_records(args.data)}
        try:
            a, b = recs[cfg["id_a"]], recs[cfg["id_b"]]
        except KeyError as err:
            raise UsageError(f"record {err} not found in {args.data}") from None
        a, b = (preprocess(r, PreprocessConfig(target_length=n)) for r in (a, b))
        wa, wb = _window(cfg["window_a"]), _window(cfg["window_b"])
    else:
        a = synth_cycle_crop(cfg["delay_a"], cfg["pair_seed"], n)
        b = synth_cycle_crop(cfg["delay_b"], cfg["pair_seed"], n)
        wa, wb = wave_window(a), wave_window(b)
    result = interpolate_latent(model, a, b, cfg["steps"])
    track = wave_track(result, wa, wb)
    span = cfg["steps"] - 1
    emit_csv([{"step": t, "fraction": t / span, "center_of_mass": track.center_of_mass[t],
               "energy_a": track.energy_a[t], "energy_b": track.energy_b[t],
               "energy_union": track.energy_union[t]} for t in range(cfg["steps"])],
             run.path("interpolation.csv"))
    emit_csv([{"classification": track.classification, "weakest_ratio": track.weakest_ratio,
               "backtrack": track.backtrack, "window_a": f"{wa[0]}:{wa[1]}", "window_b": f"{wb[0]}:{wb[1]}",
               **track.thresholds}], run.path("tracking.csv"))
    emit_svg_plot([{"y": s, "label": f"step {t}"} for t, s in enumerate(result.decoded)], "panel-grid",
                  run.path("panels.svg"), title="latent interpolation", spans=[wa, wb])
    print(f"wave track: {track.classification}")


def _summary_rows(reports):
    return [{"network": r.network, "dataset": r.dataset, "n_records": len(r.ids),
             "mean_inside": r.mean_inside, "std_inside": r.std_inside,
             "mean_outside": r.mean_outside, "std_outside": r.std_outside} for r in reports]


def cmd_masked(cfg, args):
    good, bad = _spec_from(cfg["good"]), _spec_from(cfg["bad"])
    if good.input_length != bad.input_length:
        raise UsageError("good and bad specs need the same input length")
    mask = _mask_from(cfg["mask"], good.input_length, cfg["mask_size"])
    run = Run("masked", cfg, args.out, [args.data, args.config], ["errors.csv", "summary.csv", "errors.svg"])
    data = _cohort(cfg, good.input_length, args.data)
    reports = run_masked_experiment(good, bad, data, mask, _train_config(cfg))
    emit_csv([row for r in reports for row in r.rows()], run.path("errors.csv"))
    emit_csv(_summary_rows(reports), run.path("summary.csv"))
    emit_svg_plot([{"x": r.mse_outside, "y": r.mse_inside, "label": r.network} for r in reports],
                  "scatter", run.path("errors.svg"), title="reconstruction error by region",
                  xlabel="MSE outside unpunished area", ylabel="MSE inside unpunished area")
    for r in reports:
        print(f"{r.network}: inside {r.mean_inside:.6g} outside {r.mean_outside:.6g}")


def cmd_sweep(cfg, args):
    spec = _spec_from(cfg["spec"])
    try:
        sizes = [int(s) for s in str(cfg["sizes"]).split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--sizes expects comma-separated integers, got {cfg['sizes']!r}") from None
    run = Run("sweep", cfg, args.out, [args.data, args.config], ["sweep.csv", "sweep.svg"])
    data = _cohort(cfg, spec.input_length, args.data)
    points = run_area_sweep(spec, data, sizes, cfg["repeats"], _train_config(cfg), cfg["seed"])
    emit_csv([p.row() for p in points], run.path("sweep.csv"))
    emit_svg_plot([{"x": sizes, "y": [p.mean_inside_error for p in points],
                    "yerr": [p.std_inside_error for p in points], "label": "inside"},
                   {"x": sizes, "y": [p.mean_outside_error for p in points],
                    "yerr": [p.std_outside_error for p in points], "label": "outside"}],
                  "line", run.path("sweep.svg"), title="error against unpunished area size",
                  xlabel="unpunished area (samples)", ylabel="MSE")


def cmd_compare(cfg, args):
    good, bad = _spec_from(cfg["good"]), _spec_from(cfg["bad"])
    n = good.input_length
    mask = _mask_from(cfg["mask"], n, cfg["mask_size"])
    run = Run("compare", cfg, args.out, [args.data, args.config], ["scatter.csv", "summary.csv", "scatter.svg"])
    ecg = _cohort(cfg, n, args.data)
    ref = np.concatenate([r.samples for r in ecg])
    kernels = _kernels(cfg["gp_kernels"])
    per_kernel = -(-cfg["n_gp"] // len(kernels))
    gp = _gp_dataset(kernels, per_kernel, n, ecg[0].fs, cfg["gp_seed"])[:cfg["n_gp"]]
    gp = [normalize_to_reference(r, float(ref.mean()), float(ref.std())) for r in gp]
    rows, reports = run_periodicity_comparison(good, bad, ecg, gp, mask, _train_config(cfg))
    emit_csv(rows, run.path("scatter.csv"))
    emit_csv(_summary_rows(reports), run.path("summary.csv"))
    emit_svg_plot([{"x": r.mse_outside, "y": r.mse_inside, "label": f"{r.network} / {r.dataset}"}
                   for r in reports], "scatter", run.path("scatter.svg"),
                  title="errors inside and outside the unpunished area",
                  xlabel="MSE outside", ylabel="MSE inside")
    for r in reports:
        print(f"{r.network}/{r.dataset}: inside {r.mean_inside:.6g} outside {r.mean_outside:.6g}")


def cmd_gradcheck(cfg, args):
    run = Run("gradcheck", cfg, args.out, [args.config], ["gradcheck.csv"])
    spec = uniform_kernel_spec(paper_spec(cfg["input_length"]), cfg["kernel"], cfg["channels"])
    model = build_autoencoder(spec, cfg["seed"])
    rng = np.random.default_rng(cfg["seed"])
    x = draw_off_kinks(model.layers, (cfg["batch"], 1, cfg["input_length"]), rng)
    mask = RegionMask.centered(cfg["input_length"], cfg["input_length"] // 4).flags
    report = grad_check(model.layers, x, lambda out: masked_mse(out, x, mask), cfg["tolerance"], cfg["h"])
    emit_csv([{"tensor": name, "max_rel_error": err} for name, err in sorted(report.per_tensor.items())]
             + [{"tensor": "all", "max_rel_error": report.max_rel_error}], run.path("gradcheck.csv"))
    print(report.summary())
    return 0 if report.passed else 2


HANDLERS = {"synth": cmd_synth, "gp": cmd_gp, "train": cmd_train, "interpolate": cmd_interpolate,
            "masked": cmd_masked, "sweep": cmd_sweep, "compare": cmd_compare, "gradcheck": cmd_gradcheck}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="qcprobe", description="Autoencoder probes for quasi-periodic signals.")
    p.add_argument("--version", action="version", version=f"qcprobe {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--out", default=None, help="output directory (default: runs/<command>)")
        s.add_argument("--data", default=None, help="directory or file of records")
        s.add_argument("--config", default=None, help="key=value config file")
        s.add_argument("--seed", type=int)
        s.add_argument("--spec")
        s.add_argument("--mask", help="unpunished block START:LEN")
        s.add_argument("--steps", type=int)
        s.add_argument("--sizes")
        s.add_argument("--repeats", type=int)
        s.add_argument("--epochs", type=int)
        s.add_argument("--lr", type=float)
        s.add_argument("--batch", type=int)
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key")
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
        file_values = read_config_file(args.config) if args.config else {}
        flags = {}
        for item in args.set:
            if "=" not in item:
                raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            flags[key] = value
        for flag, key in _FLAG_KEYS.items():
            value = getattr(args, flag)
            if value is not None:
                if key not in DEFAULTS[args.command]:
                    raise UsageError(f"--{flag} does not apply to {args.command}")
                flags[key] = str(value)
        cfg = resolve_config(args.command, file_values, flags)
        if args.out is None:
            args.out = str(Path("runs") / args.command)
    except (UsageError, OSError) as err:
        parser.print_usage(sys.stderr)
        print(f"qcprobe: error: {err}", file=sys.stderr)
        return 1
    try:
        code = HANDLERS[args.command](cfg, args)
    except UsageError as err:
        print(f"qcprobe: error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # runtime failure of the pipeline
        print(f"qcprobe: {args.command} failed: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
