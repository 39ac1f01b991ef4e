"""Central finite-difference check of the analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

from .layers import MaxPool2, ReLU, run_layers
from .optim import ParamStore
from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_entry: str
    n_checked: int
    tolerance: float
    per_tensor: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance

    def summary(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"gradcheck {status}: max relative error {self.max_rel_error:.3e} "
                f"at {self.worst_entry} over {self.n_checked} entries (tolerance {self.tolerance:g})")


def relative_error(analytic, numeric, floor):
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(network, x, loss, tolerance=1e-5, h=1e-5, floor=1e-5):
    """Compare backprop against central differences for every parameter and input entry.

    ``network`` is a list of layers run in train mode, ``x`` the input tensor
    (batch >= 2 when batchnorm is present) and ``loss`` a callable mapping the
    network output to a scalar tensor. ``floor`` bounds the denominator of the
    relative error so that entries whose true gradient is at round-off level
    are judged on absolute error instead.
    """
    store = ParamStore(network)
    inp = Tensor(np.array(x.values if isinstance(x, Tensor) else x, dtype=np.float64), True)

    def value():
        return float(loss(run_layers(network, Tensor(inp.values), train=True)).values)

    store.zero_grad()
    inp.zero_grad()
    loss(run_layers(network, inp, train=True)).backward()

    targets = [(name, t) for name, t in store.trainable.items()] + [("input", inp)]
    worst, worst_name, n_checked = 0.0, "", 0
    per_tensor = {}
    for name, tensor in targets:
        analytic = tensor.grad.copy()
        numeric = np.zeros_like(analytic)
        flat = tensor.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = value()
            flat[i] = orig - h
            down = value()
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        err = relative_error(analytic, numeric, floor)
        n_checked += err.size
        tensor_max = float(err.max()) if err.size else 0.0
        per_tensor[name] = tensor_max
        if tensor_max > worst:
            worst = tensor_max
            where = ",".join(str(int(i)) for i in np.unravel_index(int(err.argmax()), err.shape))
            worst_name = f"{name}[{where}]"
    return GradCheckReport(worst, worst_name, n_checked, tolerance, per_tensor)


def kink_margin(network, x):
    """Smallest distance of any ReLU input from 0 or of any max-pool pair from a tie.

    Finite differences are only meaningful when this is well above the step size.
    Exact pool ties are skipped: they come from pairs of dead ReLU units, which
    stay tied under small perturbations.
    """
    out = Tensor(np.array(x.values if isinstance(x, Tensor) else x, dtype=np.float64))
    margin = np.inf
    for layer in network:
        if isinstance(layer, ReLU):
            margin = min(margin, float(np.abs(out.values).min()))
        elif isinstance(layer, MaxPool2):
            v = out.values.reshape(out.values.shape[:-1] + (-1, 2))
            gap = np.abs(v[..., 0] - v[..., 1])
            gap = gap[gap > 0]
            if gap.size:
                margin = min(margin, float(gap.min()))
        out = layer.forward(out, train=True)
    return margin


def draw_off_kinks(network, shape, rng, margin=1e-3, tries=100):
    """Standard-normal input whose kink margin is at least ``margin`` (redrawn until it is)."""
    best, best_margin = None, -1.0
    for _ in range(tries):
        x = rng.standard_normal(shape)
        m = kink_margin(network, x)
        if m >= margin:
            return x
        if m > best_margin:
            best, best_margin = x, m
    return best
