"""Signal records: file I/O, preprocessing, R-peak detection, cycle cropping,
synthetic ECG and Gaussian-process trajectory generation."""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg
from scipy import ndimage
from scipy import signal as sps

SOURCES = ("ecg-file", "synthetic", "gaussian-process")


class SignalFormatError(ValueError):
    """Malformed signal file; ``line`` is 1-based."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class MissingLeadError(LookupError):
    pass


class InsufficientLengthError(ValueError):
    pass


class InvalidParamsError(ValueError):
    pass


class GPFactorizationError(np.linalg.LinAlgError):
    def __init__(self, retries):
        self.retries = retries
        super().__init__(f"covariance Cholesky failed after {retries} jitter retries")


@dataclass
class SignalRecord:
    samples: np.ndarray
    fs: float
    source: str = "synthetic"
    label: str = ""
    id: str = ""
    lead: str = "V6"
    annotations: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 2:
            raise ValueError("a signal needs at least 2 samples")
        if not self.fs > 0:
            raise ValueError(f"sampling rate must be positive, got {self.fs}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.fs


@dataclass(frozen=True)
class PreprocessConfig:
    target_length: int = 512
    detrend_window: int = 300  # 0.6 s at 500 Hz
    window_seconds: float = 4.0
    window_offset: float = 0.0  # seconds from record start

    def __post_init__(self):
        if self.target_length < 2 or self.detrend_window < 1 or self.window_seconds <= 0:
            raise ValueError(f"invalid preprocessing config {self}")

    def check_pooling(self, n_pools):
        if self.target_length % (2 ** n_pools):
            raise ValueError(f"target_length {self.target_length} is not divisible by 2**{n_pools}")


@dataclass(frozen=True)
class WaveParams:
    offset: float  # wave center as a fraction of the RR interval
    width: float  # Gaussian sigma, seconds
    amplitude: float
    jitter: float = 0.0  # per-record relative jitter of width and amplitude
    offset_jitter: float = 0.0  # per-record absolute jitter of offset (fraction of RR)


@dataclass(frozen=True)
class CycleParams:
    rr_mean: float = 0.8
    rr_jitter: float = 0.05
    p: WaveParams = WaveParams(0.22, 0.025, 0.15, 0.1)
    qrs: WaveParams = WaveParams(0.40, 0.012, 1.0, 0.1)
    t: WaveParams = WaveParams(0.68, 0.040, 0.30, 0.1)
    noise_std: float = 0.0

    def waves(self):
        return {"p": self.p, "qrs": self.qrs, "t": self.t}

    def validate(self):
        if not 0.6 <= self.rr_mean <= 1.0:
            raise InvalidParamsError(f"rr_mean {self.rr_mean} s outside the 60-100 bpm range")
        if not 0 <= self.rr_jitter < 1:
            raise InvalidParamsError("rr_jitter must be in [0, 1)")
        rr_lo = self.rr_mean * (1 - self.rr_jitter)
        rr_hi = self.rr_mean * (1 + self.rr_jitter)
        for name, w in self.waves().items():
            if w.width <= 0:
                raise InvalidParamsError(f"{name} width must be positive")
            half = _half_extent(name, w)
            for rr in (rr_lo, rr_hi):
                for off in (w.offset - w.offset_jitter, w.offset + w.offset_jitter):
                    if off * rr - half < 0 or off * rr + half > rr:
                        raise InvalidParamsError(
                            f"{name} wave window [{off * rr - half:.3f}, {off * rr + half:.3f}] s "
                            f"leaves the RR interval of {rr:.3f} s")


@dataclass(frozen=True)
class GPKernelSpec:
    kind: str = "squared-exponential"
    length_scale: float = 0.2
    variance: float = 1.0

    def __post_init__(self):
        if self.kind not in ("squared-exponential", "exponential"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.length_scale <= 0 or self.variance <= 0:
            raise ValueError("length_scale and variance must be positive")

    def __call__(self, d):
        d = np.abs(np.asarray(d, dtype=np.float64))
        if self.kind == "squared-exponential":
            return self.variance * np.exp(-0.5 * (d / self.length_scale) ** 2)
        return self.variance * np.exp(-d / self.length_scale)

    @property
    def name(self):
        short = "se" if self.kind == "squared-exponential" else "exp"
        return f"{short}-{self.length_scale:g}"


DEFAULT_GP_KERNELS = (
    GPKernelSpec("squared-exponential", 0.05),
    GPKernelSpec("squared-exponential", 0.2),
    GPKernelSpec("squared-exponential", 0.5),
    GPKernelSpec("exponential", 0.2),
)

# QRS is a tall R bump flanked by negative Q and S bumps
_Q_REL = (-2.0, 0.8, -0.12)  # (center offset in R widths, width factor, amplitude factor)
_S_REL = (2.0, 0.8, -0.20)


def _half_extent(name, w):
    scale = 1 + w.jitter
    if name == "qrs":
        return (2.0 + 3 * 0.8) * w.width * scale
    return 3.0 * w.width * scale


# ---------------------------------------------------------------- file format

_HEADER = re.compile(r"^# fs=(\d+) lead=(\S+) label=(\S*) id=(\S+)$")


def format_value(v):
    """Shortest decimal that round-trips to the same float, never in exponent form."""
    return np.format_float_positional(float(v), unique=True, trim="0")


def write_record(record, path):
    """Write one record in the columnar text format; returns the path."""
    path = Path(path)
    fs = int(round(record.fs))
    if fs != record.fs:
        raise ValueError(f"columnar format stores integer rates, got {record.fs}")
    for name, value in (("lead", record.lead), ("label", record.label), ("id", record.id)):
        if re.search(r"\s", value) or (name != "label" and not value):
            raise ValueError(f"{name} {value!r} must be non-empty and contain no whitespace")
    lines = [f"# fs={fs} lead={record.lead} label={record.label} id={record.id}"]
    lines += [format_value(v) for v in record.samples]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def write_peaks(peaks, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(f"{int(p)}\n" for p in peaks))
    return Path(path)


def read_peaks(path):
    return [int(line) for line in Path(path).read_text(encoding="utf-8").split()]


def read_record(path, source="ecg-file"):
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SignalFormatError(path, 1, "empty file, expected a '# fs=...' header")
    m = _HEADER.match(lines[0])
    if not m:
        raise SignalFormatError(path, 1, f"malformed header {lines[0]!r}")
    fs, lead, label, rid = int(m[1]), m[2], m[3], m[4]
    if fs <= 0:
        raise SignalFormatError(path, 1, "fs must be positive")
    values = []
    for lineno, line in enumerate(lines[1:], start=2):
        text = line.strip()
        if not text:
            continue
        try:
            values.append(float(text))
        except ValueError:
            raise SignalFormatError(path, lineno, f"not a decimal value: {text!r}") from None
    if len(values) == 0:
        raise SignalFormatError(path, len(lines) + 1, "no data rows")
    if len(values) < 2:
        raise SignalFormatError(path, len(lines), "a signal needs at least 2 samples")
    rec = SignalRecord(np.array(values), fs, source, label, rid, lead)
    peaks_file = path.with_suffix(".peaks")
    if peaks_file.exists():
        rec.annotations["r_peaks"] = read_peaks(peaks_file)
    return rec


def load_records(path, lead="V6"):
    """Load every record of ``lead`` from a signal file or a directory of them.

    Files are read in sorted name order; samples are returned raw.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    files = sorted(p for p in path.iterdir() if p.suffix in (".txt", ".sig", ".csv")) \
        if path.is_dir() else [path]
    records = [read_record(f) for f in files]
    if not records:
        raise SignalFormatError(path, 1, "no signal files found")
    chosen = [r for r in records if r.lead == lead]
    if not chosen:
        leads = sorted({r.lead for r in records})
        raise MissingLeadError(f"lead {lead!r} not found in {path} (have {', '.join(leads)})")
    return chosen


# ------------------------------------------------------------- preprocessing

def standardize(x):
    x = np.asarray(x, dtype=np.float64)
    std = x.std()
    if not std > 0 or not np.isfinite(std):
        raise ValueError("zero-variance signal cannot be standardized")
    z = (x - x.mean()) / std
    # one more pass removes the residual rounding in mean and scale
    return (z - z.mean()) / z.std()


def resample_linear(x, n):
    """Linear-interpolation resampling that maps first and last samples onto each other."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == n:
        return x.copy()
    return np.interp(np.linspace(0.0, x.size - 1, n), np.arange(x.size), x)


def moving_median(x, width):
    """Centered running median; an even width is widened to the next odd size."""
    width = int(width) | 1
    return ndimage.median_filter(np.asarray(x, dtype=np.float64), size=width, mode="nearest")


def remove_baseline(x, width):
    """Remove a least-squares linear trend, then a centered moving median."""
    x = sps.detrend(np.asarray(x, dtype=np.float64), type="linear")
    return x - moving_median(x, width)


def preprocess(record, cfg=PreprocessConfig()):
    """Baseline removal, window cut, linear resampling to ``cfg.target_length``, standardization."""
    n = len(record)
    if n < cfg.detrend_window:
        raise InsufficientLengthError(
            f"{record.id}: {n} samples is shorter than the detrend window {cfg.detrend_window}")
    start = int(round(cfg.window_offset * record.fs))
    width = int(round(cfg.window_seconds * record.fs))
    if start < 0 or start + width > n:
        raise InsufficientLengthError(
            f"{record.id}: need {cfg.window_seconds} s from {cfg.window_offset} s, have {n / record.fs:.3f} s")
    clean = remove_baseline(record.samples, cfg.detrend_window)
    window = resample_linear(clean[start:start + width], cfg.target_length)
    out = replace(record, samples=standardize(window),
                  fs=cfg.target_length / cfg.window_seconds, annotations={})
    return out


def normalize_to_reference(record, ref_mean, ref_std):
    """Affine map so that the output has exactly ``ref_mean`` and (population) ``ref_std``."""
    x = record.samples
    if not x.std() > 0:
        raise ValueError("zero-variance signal cannot be normalized")
    if ref_std <= 0:
        raise ValueError("reference std must be positive")
    y = standardize(x) * ref_std + ref_mean
    y = y - (y.mean() - ref_mean)
    return replace(record, samples=y)


# ------------------------------------------------------------- R peaks, crops

def detect_r_peaks(record, refractory=0.33, baseline_window=0.6, refine=0.05):
    """R-peak indices of a standardized record, ascending.

    Candidates are local maxima of the baseline-free signal above half its
    99th percentile; the tallest candidate wins inside each refractory span,
    and survivors snap to the raw-signal maximum within ``refine`` seconds.
    """
    x = np.asarray(record.samples, dtype=np.float64)
    fs = record.fs
    clean = x - moving_median(x, max(3, int(round(baseline_window * fs))))
    threshold = 0.5 * np.percentile(clean, 99)
    if not threshold > 0:
        return []
    inner = clean[1:-1]
    cand = np.flatnonzero((inner > clean[:-2]) & (inner >= clean[2:]) & (inner > threshold)) + 1
    gap = refractory * fs
    kept = []
    for i in cand[np.argsort(-clean[cand], kind="stable")]:
        if all(abs(i - j) >= gap for j in kept):
            kept.append(int(i))
    half = int(round(refine * fs))
    peaks = []
    for i in sorted(kept):
        lo, hi = max(0, i - half), min(x.size, i + half + 1)
        peaks.append(lo + int(np.argmax(x[lo:hi])))
    # refinement can pull two survivors together; keep the taller of any clash
    out = []
    for p in peaks:
        if out and p - out[-1] < gap:
            if x[p] > x[out[-1]]:
                out[-1] = p
            continue
        out.append(p)
    return out


class CropList(list):
    """List of cropped records; ``skipped`` holds the peaks too close to an edge."""

    def __init__(self, items=(), skipped=()):
        super().__init__(items)
        self.skipped = list(skipped)


def crop_cycles(record, peaks, target_length=256, window_seconds=1.0):
    """One centered ``window_seconds`` window per peak, resampled and standardized.

    Peaks whose window would leave the record are skipped. Wave annotations from
    the generator are carried into each crop in resampled sample units.
    """
    n = len(record)
    width = int(round(window_seconds * record.fs))
    crops, skipped = [], []
    cycles = record.annotations.get("cycles")
    scale = (target_length - 1) / (width - 1)
    for k, p in enumerate(peaks):
        start = int(p) - width // 2
        if start < 0 or start + width > n:
            skipped.append(int(p))
            continue
        seg = resample_linear(record.samples[start:start + width], target_length)
        ann = {"start": start, "stop": start + width, "peak": int(p)}
        if cycles:
            cyc = min(cycles, key=lambda c: abs(c["r"] * record.fs - p))
            ann["waves"] = {
                name: {"center": (cyc[name] * record.fs - start) * scale,
                       "width": cyc[name + "_width"] * record.fs * scale}
                for name in ("p", "r", "t")
            }
        crops.append(SignalRecord(standardize(seg), target_length / window_seconds, record.source,
                                  record.label, f"{record.id}-c{k:02d}", record.lead, ann))
    return CropList(crops, skipped)


# ---------------------------------------------------------- synthetic signals

def synth_ecg(params=CycleParams(), duration=10.0, fs=500, seed=0, label="synthetic", phase=None):
    """Sum-of-Gaussians ECG. Returns ``(record, r_peak_indices)``.

    ``phase`` in [0, 1) fixes where in its cycle the record begins; by default
    it is random.

    Morphology (width, amplitude, wave offsets) is drawn once per record; RR
    intervals are drawn per cycle. Ground-truth peaks are the signal argmax
    inside each cycle whose R center lies in the record.
    """
    params.validate()
    if duration < params.rr_mean:
        raise InvalidParamsError("duration shorter than one RR interval")
    rng = np.random.default_rng(seed)
    n = int(round(duration * fs))
    t = np.arange(n) / fs

    morph = {}
    for name, w in params.waves().items():
        morph[name] = (
            w.offset + w.offset_jitter * rng.uniform(-1, 1),
            w.width * (1 + w.jitter * rng.uniform(-1, 1)),
            w.amplitude * (1 + w.jitter * rng.uniform(-1, 1)),
        )

    frac = rng.uniform(0, 1)
    start = -params.rr_mean * (frac if phase is None else phase)
    bumps, cycles = [], []
    while start < duration:
        rr = params.rr_mean * (1 + params.rr_jitter * rng.uniform(-1, 1))
        cyc = {"start": start, "rr": rr}
        for name, (off, width, amp) in morph.items():
            center = start + off * rr
            if name == "qrs":
                bumps.append((center, width, amp))
                for rel, wf, af in (_Q_REL, _S_REL):
                    bumps.append((center + rel * width, wf * width, af * amp))
                cyc["r"], cyc["r_width"] = center, width
            else:
                bumps.append((center, width, amp))
                cyc[name], cyc[name + "_width"] = center, width
        cycles.append(cyc)
        start += rr

    x = np.zeros(n)
    for center, width, amp in bumps:
        lo = max(0, int(np.floor((center - 8 * width) * fs)))
        hi = min(n, int(np.ceil((center + 8 * width) * fs)) + 1)
        if lo < hi:
            x[lo:hi] += amp * np.exp(-0.5 * ((t[lo:hi] - center) / width) ** 2)
    if params.noise_std > 0:
        x += params.noise_std * rng.standard_normal(n)

    peaks, kept = [], []
    for cyc in cycles:
        if not 0 <= cyc["r"] * fs <= n - 1:
            continue
        lo = max(0, int(np.ceil(cyc["start"] * fs)))
        hi = min(n, int(np.ceil((cyc["start"] + cyc["rr"]) * fs)))
        peaks.append(lo + int(np.argmax(x[lo:hi])))
        kept.append(cyc)
    rec = SignalRecord(x, fs, "synthetic", label, f"syn-{seed:06d}")
    rec.annotations.update(r_peaks=list(peaks), cycles=kept,
                           rr_intervals=[c["rr"] for c in cycles])
    return rec, peaks


def wave_window(record, name="t", n_widths=3.0):
    """(start, stop) sample range of a generator wave in a crop; requires crop annotations."""
    w = record.annotations["waves"][name]
    lo = int(np.floor(w["center"] - n_widths * w["width"]))
    hi = int(np.ceil(w["center"] + n_widths * w["width"])) + 1
    return max(0, lo), min(len(record), hi)


@functools.lru_cache(maxsize=32)
def _gp_factor(kernel, length, fs, jitter=1e-10, retries=5):
    t = np.arange(length) / fs
    cov = kernel(t[:, None] - t[None, :])
    for attempt in range(retries + 1):
        eps = jitter * (2 ** attempt) * kernel.variance
        try:
            return scipy.linalg.cholesky(cov + eps * np.eye(length), lower=True)
        except np.linalg.LinAlgError:
            continue
    raise GPFactorizationError(retries)


def sample_gp_trajectory(kernel, length, fs, seed=0):
    """One zero-mean GP draw on the grid ``i / fs`` via Cholesky of the covariance."""
    if length < 2:
        raise ValueError("length must be >= 2")
    chol = _gp_factor(kernel, int(length), float(fs))
    z = np.random.default_rng(seed).standard_normal(int(length))
    return SignalRecord(chol @ z, fs, "gaussian-process", kernel.name, f"gp-{kernel.name}-{seed:06d}")


def synth_dataset(n, seed=0, params=CycleParams(), rr_range=(0.6, 1.0), duration=10.0, fs=500,
                  cfg=PreprocessConfig(), phase=None):
    """``n`` preprocessed synthetic ECGs, each with its own heart rate drawn from ``rr_range``.

    A fixed ``phase`` gives an aligned cohort: every record starts at the same
    point of its cycle.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        rr = float(rng.uniform(*rr_range))
        rec, _ = synth_ecg(replace(params, rr_mean=rr), duration, fs, seed=seed * 100003 + i,
                           phase=phase)
        out.append(preprocess(rec, cfg))
    return out


# ------------------------------------------------------ single-cycle crops

def t_shift_params(delay, base=CycleParams(), r_offset=0.3, t_width=0.035):
    """Cycle parameters at 60 bpm with the T wave ``delay`` seconds after R."""
    return replace(base, rr_mean=1.0, rr_jitter=0.0,
                   qrs=replace(base.qrs, offset=r_offset, offset_jitter=0.0),
                   t=replace(base.t, offset=r_offset + delay, width=t_width, offset_jitter=0.0))


def synth_cycle_crop(delay, seed=0, target_length=256, base=CycleParams()):
    """One R-centered cycle crop whose T wave sits ``delay`` seconds after R.

    Morphology depends only on ``seed``, so two crops with the same seed and
    different delays differ only in where the T wave is.
    """
    rec, peaks = synth_ecg(t_shift_params(delay, base), duration=4.0, fs=500, seed=seed, phase=0.0)
    crop = crop_cycles(rec, peaks, target_length)[0]
    crop.id = f"cyc-{seed:06d}"
    crop.annotations["t_delay"] = float(delay)
    return crop


def synth_cycle_dataset(n, seed=0, delay_range=(0.15, 0.39), target_length=256, base=CycleParams()):
    """``n`` single-cycle crops with the T-R delay drawn uniformly from ``delay_range``."""
    rng = np.random.default_rng(seed)
    return [synth_cycle_crop(float(rng.uniform(*delay_range)), seed * 100003 + i, target_length, base)
            for i in range(n)]
