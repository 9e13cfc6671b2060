"""Hot-loop kernels, compiled when available.

The Cython extension ``msol._ckernels`` is preferred; the numpy fallback in
``msol._pykernels`` has identical semantics.  Set ``MSOL_PURE_PYTHON=1`` to
force the fallback.  :data:`BACKEND` names the active implementation.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("MSOL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels

sample_categorical = _impl.sample_categorical
sample_bernoulli = _impl.sample_bernoulli
taxi_step = _impl.taxi_step
bandits_step = _impl.bandits_step
discounted_returns = _impl.discounted_returns

__all__ = [
    "BACKEND",
    "sample_categorical",
    "sample_bernoulli",
    "taxi_step",
    "bandits_step",
    "discounted_returns",
]
