"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import GradCheckError, TapeError
from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    tol: float

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_error.max()) if self.rel_error.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"{status}: max rel err {self.max_rel_error:.3e} over {self.rel_error.size} elements (tol {self.tol:g})"


def _scalar(out: Tensor, flat_index) -> float:
    if out.size != 1:
        raise TapeError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    value = float(out.data.reshape(-1)[0])
    if not np.isfinite(value):
        raise GradCheckError("non-finite function value", flat_index)
    return value


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor | np.ndarray,
    step: float = 1e-5,
    tol: float = 1e-4,
    indices=None,
) -> GradCheckReport:
    """Compare the tape gradient of scalar ``f`` at ``x`` to central differences.

    The per-element error is ``|g_analytic - g_numeric| / max(1, |g_numeric|)``.
    ``indices`` optionally restricts the check to a subset of flat element
    positions, which keeps checks on large parameter tensors affordable.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    with Tape() as tape:
        out = f(probe)
        _scalar(out, None)
        if out._node is None:
            analytic = np.zeros_like(base)
        else:
            tape.backward(out)
            analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

    flat = base.reshape(-1)
    positions = np.arange(flat.size) if indices is None else np.asarray(indices, dtype=int)
    numeric = np.empty(positions.size)
    for k, i in enumerate(positions):
        saved = flat[i]
        flat[i] = saved + step
        f_plus = _scalar(f(Tensor(base.copy())), int(i))
        flat[i] = saved - step
        f_minus = _scalar(f(Tensor(base.copy())), int(i))
        flat[i] = saved
        numeric[k] = (f_plus - f_minus) / (2.0 * step)

    picked = analytic.reshape(-1)[positions]
    rel = np.abs(picked - numeric) / np.maximum(1.0, np.abs(numeric))
    return GradCheckReport(analytic=picked, numeric=numeric, rel_error=rel, tol=tol)


def grad_check_param(
    f: Callable[[], Tensor],
    param: Tensor,
    step: float = 1e-5,
    tol: float = 1e-4,
    indices=None,
) -> GradCheckReport:
    """Finite-difference check with respect to a leaf parameter used inside ``f``.

    ``param.data`` is perturbed in place and restored afterwards.
    """
    original = param.data
    saved_flag, saved_grad = param.requires_grad, param.grad
    try:
        base = np.array(original, dtype=np.float64)
        param.data, param.requires_grad, param.grad = base.copy(), True, None
        with Tape() as tape:
            out = f()
            _scalar(out, None)
            if out._node is not None:
                tape.backward(out)
        analytic = param.grad if param.grad is not None else np.zeros_like(base)

        flat = base.reshape(-1)
        positions = np.arange(flat.size) if indices is None else np.asarray(indices, dtype=int)
        numeric = np.empty(positions.size)
        param.requires_grad = False
        for k, i in enumerate(positions):
            saved = flat[i]
            flat[i] = saved + step
            param.data = base.copy()
            f_plus = _scalar(f(), int(i))
            flat[i] = saved - step
            param.data = base.copy()
            f_minus = _scalar(f(), int(i))
            flat[i] = saved
            numeric[k] = (f_plus - f_minus) / (2.0 * step)
    finally:
        param.data, param.requires_grad, param.grad = original, saved_flag, saved_grad
    picked = analytic.reshape(-1)[positions]
    rel = np.abs(picked - numeric) / np.maximum(1.0, np.abs(numeric))
    return GradCheckReport(analytic=picked, numeric=numeric, rel_error=rel, tol=tol)
