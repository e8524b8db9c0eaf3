"""Backend selection for the policy math kernels.

Two interchangeable implementations exist: a compiled Cython extension
(``_fast``) and a pure-numpy fallback (``pyref``). The compiled one is
preferred when importable; set ``GRPO_GROUND_BACKEND=python`` or
``=compiled`` to force a choice, or call :func:`set_backend` at runtime.

The two backends agree to float64 round-off but not bit-for-bit (loop
orders differ from BLAS), so anything pinned bit-exactly in tests runs
against the ``python`` backend explicitly.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

from . import pyref

try:
    from . import _fast
except ImportError:
    _fast = None

HAVE_COMPILED = _fast is not None

_BACKENDS = {"python": pyref}
if HAVE_COMPILED:
    _BACKENDS["compiled"] = _fast


def _resolve(name: str):
    if name == "auto":
        return _fast if HAVE_COMPILED else pyref
    if name not in _BACKENDS:
        known = ", ".join(sorted(set(_BACKENDS) | {"auto"}))
        raise ValueError(f"unknown kernel backend {name!r} (choose from: {known})")
    return _BACKENDS[name]


_active = _resolve(os.environ.get("GRPO_GROUND_BACKEND", "auto"))


def active_backend() -> str:
    return _active.NAME


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def set_backend(name: str) -> str:
    """Switch the active backend; returns the previous backend name."""
    global _active
    previous = _active.NAME
    _active = _resolve(name)
    return previous


@contextmanager
def use_backend(name: str):
    previous = set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def batch_forward(w_in, b_in, w_coord, b_coord, w_fmt, b_fmt, X):
    return _active.batch_forward(w_in, b_in, w_coord, b_coord, w_fmt, b_fmt, X)


def backward(w_coord, w_fmt, X, hidden, dl_coord, dl_fmt):
    return _active.backward(w_coord, w_fmt, X, hidden, dl_coord, dl_fmt)
