"""Kernel backend selection.

The compiled extension is used when it imports cleanly; setting
``QCPROBE_KERNELS=python`` forces the numpy fallback.
"""

import os

from . import _pykernels

if os.environ.get("QCPROBE_KERNELS", "").lower() == "python":
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = _impl.BACKEND

conv1d_forward = _impl.conv1d_forward
conv1d_backward = _impl.conv1d_backward
maxpool2_forward = _impl.maxpool2_forward
maxpool2_backward = _impl.maxpool2_backward
upsample2_forward = _impl.upsample2_forward
upsample2_backward = _impl.upsample2_backward

__all__ = [
    "BACKEND",
    "conv1d_forward",
    "conv1d_backward",
    "maxpool2_forward",
    "maxpool2_backward",
    "upsample2_forward",
    "upsample2_backward",
]
