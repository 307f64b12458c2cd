"""Kernel backend selection.

Hot numeric loops in this package exist twice: a scalar-loop version that
numba JIT-compiles, and a vectorized pure-numpy fallback.  The active path
is chosen once per process from the ``PRODMC_BACKEND`` environment variable:

* ``PRODMC_BACKEND=numba``  -- require numba, fail loudly if missing
* ``PRODMC_BACKEND=numpy``  -- force the pure-numpy fallback
* unset / empty             -- use numba when importable, else fall back

Individual kernel entry points also accept ``use_numba=True/False`` so the
benchmark suite can time both paths inside one process.
"""

from __future__ import annotations

import os

_ENV_VAR = "PRODMC_BACKEND"

# Resolved lazily: None = undecided, True/False = decided.
_numba_default: bool | None = None


def _numba_importable() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def default_backend_is_numba() -> bool:
    """Return True if kernels should JIT-compile by default."""
    global _numba_default
    if _numba_default is None:
        choice = os.environ.get(_ENV_VAR, "").strip().lower()
        if choice == "numpy":
            _numba_default = False
        elif choice == "numba":
            if not _numba_importable():
                raise RuntimeError(
                    f"{_ENV_VAR}=numba but numba is not importable"
                )
            _numba_default = True
        elif choice == "":
            _numba_default = _numba_importable()
        else:
            raise RuntimeError(
                f"unrecognized {_ENV_VAR}={choice!r}; expected 'numba' or 'numpy'"
            )
    return _numba_default


def resolve_backend(use_numba: bool | None) -> bool:
    """Resolve a per-call override against the process default."""
    if use_numba is None:
        return default_backend_is_numba()
    if use_numba and not _numba_importable():
        raise RuntimeError("use_numba=True requested but numba is not importable")
    return bool(use_numba)


def backend_name() -> str:
    return "numba" if default_backend_is_numba() else "numpy"
