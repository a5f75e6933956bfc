"""Caputo time derivatives of order ``0 < alpha <= 1``.

Two discretizations are provided: the L1 scheme (any strictly increasing time
mesh) and Grunwald-Letnikov convolution weights (uniform meshes).  Both act on
a :class:`FractionalHistory` that stores every past state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

Array = np.ndarray


class HistoryError(ValueError):
    pass


@dataclass(frozen=True)
class FractionalSpec:
    alpha: float = 1.0
    scheme: str = "L1"
    history_cap: int | None = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"fractional order must lie in (0, 1], got {self.alpha}")
        if self.scheme not in ("L1", "GL"):
            raise ValueError(f"unknown fractional scheme {self.scheme!r}")
        if self.history_cap is not None and self.history_cap < 1:
            raise ValueError("history_cap must be >= 1")


@dataclass
class FractionalHistory:
    """Past time points and states.  With ``cap`` set only the initial state
    and the latest ``cap`` states are kept (memory before the window is lost)."""

    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    cap: int | None = None
    initial: object = None

    def append(self, t: float, state) -> None:
        if self.times and not t > self.times[-1]:
            raise HistoryError(f"time {t} does not increase past {self.times[-1]}")
        state = np.array(state, dtype=float, copy=True)
        if not self.times and self.initial is None:
            self.initial = state
        self.times.append(float(t))
        self.states.append(state)
        if self.cap is not None and len(self.times) > self.cap:
            del self.times[0]
            del self.states[0]

    def __len__(self) -> int:
        return len(self.times)

    @property
    def t0(self) -> float:
        return self.times[0]


def _check_times(times) -> Array:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise HistoryError("need at least two time points")
    if np.any(np.diff(t) <= 0):
        raise HistoryError("time points must be strictly increasing")
    return t


def _pow(x: Array, e: float) -> Array:
    # 0**0 is taken as 0: the alpha -> 1 limit of the L1 weights
    return np.where(x > 0, np.abs(x) ** e, 0.0)


def l1_weights(times, alpha: float) -> Array:
    """``w_m = ((t_n - t_m)^(1-a) - (t_n - t_{m+1})^(1-a)) / (t_{m+1} - t_m)``,
    ``m = 0..n-1``."""
    t = _check_times(times)
    tn = t[-1]
    e = 1.0 - alpha
    return (_pow(tn - t[:-1], e) - _pow(tn - t[1:], e)) / np.diff(t)


def l1_caputo(history: FractionalHistory, alpha: float):
    """L1 approximation of the Caputo derivative at the newest time point."""
    if len(history) < 2:
        raise HistoryError("L1 needs at least two history entries")
    w = l1_weights(history.times, alpha)
    out = 0.0
    for m in range(len(w)):
        out = out + w[m] * (history.states[m + 1] - history.states[m])
    return out / gamma(2.0 - alpha)


def gl_weights(alpha: float, n: int) -> Array:
    """``c_j = (-1)^j binom(alpha, j)`` for ``j = 0..n-1`` by recursion."""
    if n < 1:
        raise ValueError("need n >= 1 weights")
    c = np.empty(n)
    c[0] = 1.0
    for j in range(1, n):
        c[j] = c[j - 1] * (1.0 - (alpha + 1.0) / j)
    return c


def _uniform_step(times, t_new: float | None = None) -> float:
    t = np.asarray(list(times) + ([] if t_new is None else [t_new]), dtype=float)
    d = np.diff(t)
    if d.size == 0:
        raise HistoryError("need at least two time points")
    if np.any(np.abs(d - d[0]) > 1e-9 * d[0]):
        raise HistoryError("Grunwald-Letnikov weights need a uniform time mesh")
    return float(d[0])


def gl_caputo(history: FractionalHistory, alpha: float):
    """``dt^-alpha sum_j c_j (phi_{n-j} - phi_0)`` at the newest time point."""
    if len(history) < 2:
        raise HistoryError("GL needs at least two history entries")
    dt = _uniform_step(history.times)
    n = len(history) - 1
    c = gl_weights(alpha, n)
    phi0 = history.initial
    out = 0.0
    for j in range(n):
        out = out + c[j] * (history.states[n - j] - phi0)
    return out * dt**-alpha


def caputo(history: FractionalHistory, spec: FractionalSpec):
    if spec.scheme == "L1":
        return l1_caputo(history, spec.alpha)
    return gl_caputo(history, spec.alpha)


def implicit_split(history: FractionalHistory, spec: FractionalSpec, t_new: float):
    """Coefficients ``(a, b)`` with ``d^alpha phi(t_new) ~ a phi_new - b``
    given the stored history up to the previous step."""
    if len(history) < 1:
        raise HistoryError("history must hold the initial state")
    if not t_new > history.times[-1]:
        raise HistoryError("new time must exceed the last stored time")
    alpha = spec.alpha
    states = history.states
    if spec.scheme == "L1":
        w = l1_weights(history.times + [t_new], alpha)
        g = gamma(2.0 - alpha)
        a = w[-1] / g
        b = a * states[-1]
        for m in range(len(w) - 1):
            b = b - (w[m] / g) * (states[m + 1] - states[m])
        return a, b
    dt = t_new - history.times[-1]
    if len(history) > 1:
        _uniform_step(history.times, t_new)
    n = len(history)
    c = gl_weights(alpha, n)
    phi0 = history.initial
    scale = dt**-alpha
    b = phi0
    for j in range(1, n):
        b = b - c[j] * (states[n - j] - phi0)
    return scale, scale * b


def fractional_step(history: FractionalHistory, spec: FractionalSpec, t_new: float, A=None, f=0.0):
    """Solve ``(a I - A) phi = b + f`` for the new state and append it.

    ``A`` is ``None``, a scalar (times identity) or a sparse matrix acting on
    the flattened state.
    """
    a, b = implicit_split(history, spec, t_new)
    rhs = b + f
    if A is None:
        new = rhs / a
    elif np.isscalar(A):
        new = rhs / (a - A)
    else:
        shape = np.shape(rhs)
        n = int(np.prod(shape)) if shape else 1
        M = (a * sp.identity(n, format="csc") - sp.csc_matrix(A)).tocsc()
        r = np.ravel(rhs)
        new = spla.spsolve(M, r).reshape(shape)
        res = np.linalg.norm(M @ new.ravel() - r)
        if not np.isfinite(res) or res > 1e-8 * max(np.linalg.norm(r), 1e-300):
            from .elliptic import SolverError

            raise SolverError("fractional step solve failed", residual=res)
    history.append(t_new, new)
    return new

