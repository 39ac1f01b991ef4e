"""Diagnostics: latent interpolation with wave tracking, masked (unpunished
region) reconstruction experiments, and unpunished-area sweeps."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .autoencoder import RegionMask, TrainConfig, build_autoencoder, decode, encode, train

# wave_track thresholds
TELEPORT_ENERGY = 0.5
DRIFT_ENERGY = 0.5
DRIFT_BACKTRACK = 0.05


class InvalidWindowError(ValueError):
    pass


def max_workers():
    try:
        return max(1, int(os.environ.get("QCPROBE_THREADS", "1")))
    except ValueError:
        return 1


def _run_jobs(fn, jobs):
    """Run independent jobs; results come back in job order regardless of scheduling."""
    workers = min(max_workers(), len(jobs)) or 1
    if workers == 1:
        return [fn(job) for job in jobs]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, jobs))


# ------------------------------------------------------------- interpolation

@dataclass
class InterpolationResult:
    steps: int
    latents: np.ndarray
    decoded: list
    metrics: dict = field(default_factory=dict)


def _samples(x):
    return x.samples if hasattr(x, "samples") else np.asarray(x, dtype=np.float64)


def interpolate_latent(model, a, b, steps=8):
    """Decode ``steps`` evenly spaced points of the segment between the codes of ``a`` and ``b``.

    Endpoints are exactly the two codes, and each point is decoded on its own,
    so ``decoded[0]`` is bit-identical to ``decode(encode(a))``.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    za, zb = encode(model, _samples(a)), encode(model, _samples(b))
    span = steps - 1
    latents = [za]
    for t in range(1, span):
        latents.append(((span - t) * za + t * zb) / span)
    latents.append(zb)
    decoded = [decode(model, z).samples for z in latents]
    return InterpolationResult(steps, np.array(latents), decoded)


def _detrended(x, lo, hi):
    """Samples of ``x[lo:hi]`` minus the straight line through the two end samples."""
    seg = np.asarray(x[lo:hi], dtype=np.float64)
    if seg.size < 2:
        return seg - seg.mean() if seg.size else seg
    line = np.linspace(seg[0], seg[-1], seg.size)
    return seg - line


@dataclass
class WaveTrack:
    classification: str
    energy_a: np.ndarray
    energy_b: np.ndarray
    energy_union: np.ndarray
    center_of_mass: np.ndarray
    weakest_ratio: float
    backtrack: float
    thresholds: dict = field(default_factory=lambda: {
        "teleport_energy": TELEPORT_ENERGY, "drift_energy": DRIFT_ENERGY,
        "drift_backtrack": DRIFT_BACKTRACK})


def wave_track(result, window_a, window_b):
    """Classify how a wave moves from ``window_a`` (first signal) to ``window_b`` (last).

    ``teleport``: at some step the wave is simultaneously weak at both sites,
    i.e. ``min_t max(E_t^A / E_0^A, E_t^B / E_last^B) < 0.5``.
    ``drift``: the center of mass over the union of both windows moves
    monotonically (backtracking at most 5% of the net displacement) and the
    union energy never falls below half the smaller endpoint level.
    Anything else is ``ambiguous``.
    """
    sig = [np.asarray(s, dtype=np.float64) for s in result.decoded]
    n = sig[0].size
    (a0, a1), (b0, b1) = (tuple(int(v) for v in window_a), tuple(int(v) for v in window_b))
    for lo, hi in ((a0, a1), (b0, b1)):
        if not 0 <= lo < hi <= n:
            raise InvalidWindowError(f"window [{lo}, {hi}) outside signal of length {n}")
    u0, u1 = min(a0, b0), max(a1, b1)

    def energy(x, lo, hi):
        d = _detrended(x, lo, hi)
        return float(d @ d)

    ea = np.array([energy(x, a0, a1) for x in sig])
    eb = np.array([energy(x, b0, b1) for x in sig])
    eu = np.array([energy(x, u0, u1) for x in sig])
    if ea[0] <= 0 or eb[-1] <= 0:
        raise InvalidWindowError("tracked window has zero energy at its endpoint")
    pos = np.arange(u0, u1, dtype=np.float64)
    com = []
    for x in sig:
        w = np.abs(_detrended(x, u0, u1))
        com.append(float(w @ pos / w.sum()) if w.sum() > 0 else float(pos.mean()))
    com = np.array(com)

    weakest = float(np.min(np.maximum(ea / ea[0], eb / eb[-1])))
    net = com[-1] - com[0]
    direction = 1.0 if net >= 0 else -1.0
    progress = direction * (com - com[0])
    backtrack = float(np.max(np.maximum.accumulate(progress) - progress))
    floor = DRIFT_ENERGY * min(eu[0], eu[-1])

    if weakest < TELEPORT_ENERGY:
        label = "teleport"
    elif backtrack <= DRIFT_BACKTRACK * abs(net) + 1e-9 and np.all(eu >= floor):
        label = "drift"
    else:
        label = "ambiguous"
    result.metrics = {"energy_a": ea, "energy_b": eb, "center_of_mass": com}
    return WaveTrack(label, ea, eb, eu, com, weakest, backtrack)


# ------------------------------------------------------------- error reports

@dataclass
class ErrorReport:
    ids: list
    mse_inside: np.ndarray  # unpunished region
    mse_outside: np.ndarray  # punished region
    n_inside: int
    n_outside: int
    network: str = ""
    dataset: str = ""

    @property
    def mean_inside(self):
        return float(np.mean(self.mse_inside))

    @property
    def mean_outside(self):
        return float(np.mean(self.mse_outside))

    @property
    def std_inside(self):
        return float(np.std(self.mse_inside))

    @property
    def std_outside(self):
        return float(np.std(self.mse_outside))

    def rows(self):
        return [{"record": rid, "network": self.network, "dataset": self.dataset,
                 "mse_inside": float(i), "mse_outside": float(o)}
                for rid, i, o in zip(self.ids, self.mse_inside, self.mse_outside)]


def error_report(model, records, mask, network="", dataset=""):
    """Per-record reconstruction error split by the mask.

    With an all-punished mask the inside error is defined as the outside error.
    """
    x = np.stack([_samples(r) for r in records])
    err = (model.reconstruct_batch(x) - x) ** 2
    flags = mask.flags
    outside = err[:, flags].mean(axis=1)
    inside = err[:, ~flags].mean(axis=1) if (~flags).any() else outside.copy()
    ids = [getattr(r, "id", str(i)) for i, r in enumerate(records)]
    return ErrorReport(ids, inside, outside, int((~flags).sum()), int(flags.sum()), network, dataset)


def _train_and_report(spec, dataset, cfg, mask, network, dataset_tag, eval_records=None, seed=None):
    model = build_autoencoder(spec, cfg.seed if seed is None else seed)
    train(model, dataset, replace(cfg, mask=mask))
    return error_report(model, eval_records if eval_records is not None else dataset, mask,
                        network, dataset_tag)


def run_masked_experiment(good_spec, bad_spec, dataset, mask, cfg=TrainConfig(), eval_records=None):
    """Train the good and bad presets on the same data and seed; returns (good, bad) reports."""
    if mask.unpunished.sum() == 0:
        raise ValueError("mask has no unpunished samples; nothing to compare inside it")
    if not dataset:
        raise ValueError("empty dataset")
    jobs = [(good_spec, "good"), (bad_spec, "bad")]
    return tuple(_run_jobs(lambda j: _train_and_report(j[0], dataset, cfg, mask, j[1], "ecg",
                                                       eval_records), jobs))


def run_periodicity_comparison(spec_good, spec_bad, ecg_dataset, gp_dataset, mask, cfg=TrainConfig()):
    """Good/bad x ECG/GP trainings; one scatter row per evaluated record."""
    if not ecg_dataset or not gp_dataset:
        raise ValueError("both ECG and GP datasets must be non-empty")
    if mask.unpunished.sum() == 0:
        raise ValueError("mask has no unpunished samples")
    jobs = [(spec, net, data, tag)
            for spec, net in ((spec_good, "good"), (spec_bad, "bad"))
            for data, tag in ((ecg_dataset, "ecg"), (gp_dataset, "gp"))]
    reports = _run_jobs(lambda j: _train_and_report(j[0], j[2], cfg, mask, j[1], j[3]), jobs)
    rows = [row for rep in reports for row in rep.rows()]
    return rows, reports


@dataclass
class SweepPoint:
    area_size: int
    repeats: int
    mean_inside_error: float
    std_inside_error: float
    mean_outside_error: float
    std_outside_error: float = 0.0

    def row(self):
        return {"area_size": self.area_size, "repeats": self.repeats,
                "mean_inside_error": self.mean_inside_error,
                "std_inside_error": self.std_inside_error,
                "mean_outside_error": self.mean_outside_error,
                "std_outside_error": self.std_outside_error}


def run_area_sweep(spec, dataset, sizes, repeats=10, cfg=TrainConfig(), base_seed=None):
    """For each unpunished-block size, ``repeats`` trainings with seeds ``base + index``.

    The block is centered and contiguous; size 0 is plain training. Each
    repeat contributes the mean error over the dataset; points report the mean
    and std over repeats.
    """
    sizes = [int(s) for s in sizes]
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    n = spec.input_length
    for s in sizes:
        if s < 0 or s >= n:
            raise ValueError(f"unpunished area {s} must be in [0, {n})")
    base = cfg.seed if base_seed is None else base_seed
    jobs = [(s, r) for s in sizes for r in range(repeats)]

    def job(j):
        size, r = j
        mask = RegionMask.full(n) if size == 0 else RegionMask.centered(n, size)
        rep = _train_and_report(spec, dataset, replace(cfg, seed=base + r), mask,
                                spec.name, "sweep")
        return rep.mean_inside, rep.mean_outside

    results = _run_jobs(job, jobs)
    points = []
    for i, s in enumerate(sizes):
        chunk = np.array(results[i * repeats:(i + 1) * repeats])
        points.append(SweepPoint(s, repeats, float(chunk[:, 0].mean()), float(chunk[:, 0].std()),
                                 float(chunk[:, 1].mean()), float(chunk[:, 1].std())))
    return points


# ------------------------------------------------------ interpolation sweeps

def hyperparameter_sensitivity(base_spec, variations, pairs, dataset, cfg=TrainConfig(), seeds=(0,)):
    """Repeat interpolation + wave tracking for each network variation.

    ``pairs`` is a list of ``(a, b, window_a, window_b)``. Returns one row per
    variation with classification counts over seeds and pairs.
    """
    rows = []
    for spec in variations:
        counts = {"drift": 0, "teleport": 0, "ambiguous": 0}
        for seed in seeds:
            model = build_autoencoder(spec, seed)
            train(model, dataset, replace(cfg, seed=seed))
            for a, b, wa, wb in pairs:
                counts[wave_track(interpolate_latent(model, a, b, 8), wa, wb).classification] += 1
        rows.append({"variation": spec.name, **counts})
    return rows
