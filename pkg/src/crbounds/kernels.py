"""Backend selection for hot loops: compiled extension if importable, else numpy."""

from __future__ import annotations

from . import _sgd_fallback

try:
    from . import _sgd_core
except ImportError:  # extension not built
    _sgd_core = None

BACKEND = "compiled" if _sgd_core is not None else "python"


def available_backends() -> tuple:
    return ("compiled", "python") if _sgd_core is not None else ("python",)


def sgd_epochs(*args, backend: str | None = None):
    backend = backend or BACKEND
    if backend == "compiled":
        if _sgd_core is None:
            raise RuntimeError("compiled SGD kernel is not available")
        return _sgd_core.sgd_epochs(*args)
    if backend == "python":
        return _sgd_fallback.sgd_epochs(*args)
    raise ValueError(f"unknown backend {backend!r}")
