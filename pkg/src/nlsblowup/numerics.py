"""Numerical kernels: Chebyshev collocation, quadrature, Newton, IVPs,
natural cubic splines and banded complex LU.

Everything here is a pure function of its inputs.  The spline and banded
kernels are compiled with numba because the simulator calls them once per
time step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numba
import numpy as np
from scipy.integrate import solve_ivp

from .errors import (
    InvalidArgument,
    IVPDiverged,
    NoConvergence,
    SingularJacobian,
    SingularPivot,
    StepUnderflow,
)

# ---------------------------------------------------------------------------
# Chebyshev grid and differentiation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChebyshevGrid:
    """Chebyshev-Gauss-Lobatto points mapped onto ``[0, domain_length]``.

    Nodes are ascending: ``nodes[0] == 0`` and ``nodes[-1] == domain_length``.
    """

    n_points: int
    domain_length: float
    nodes: np.ndarray = field(repr=False)

    @property
    def theta(self) -> np.ndarray:
        return np.pi * np.arange(self.n_points) / (self.n_points - 1)


def build_grid(n: int, domain_length: float, *, min_points: int = 8) -> ChebyshevGrid:
    """Chebyshev grid with ``n`` points on ``[0, domain_length]``.

    ``min_points`` exists only so tiny grids can be built in tests.
    """
    if int(n) != n or n < min_points:
        raise InvalidArgument(f"need at least {min_points} grid points, got {n}")
    if not (domain_length > 0 and math.isfinite(domain_length)):
        raise InvalidArgument(f"domain_length must be positive, got {domain_length}")
    n = int(n)
    k = np.arange(n)
    # sin^2 form is symmetric under k -> n-1-k and hits both ends exactly
    nodes = domain_length * np.sin(0.5 * np.pi * k / (n - 1)) ** 2
    nodes[0] = 0.0
    nodes[-1] = float(domain_length)
    return ChebyshevGrid(n, float(domain_length), nodes)


@dataclass(frozen=True, eq=False)
class DiffMatrices:
    d1: np.ndarray
    d2: np.ndarray


def build_diff_matrices(grid: ChebyshevGrid) -> DiffMatrices:
    """First and second derivative matrices on ``grid``.

    The first-derivative matrix is the classical Chebyshev one, built with
    trigonometric node differences and the negative-sum diagonal; the second
    derivative is its square.
    """
    n = grid.n_points
    th = grid.theta
    # x_i - x_j for x = cos(theta), via the product formula
    dx = -2.0 * np.sin(0.5 * (th[:, None] + th[None, :])) * np.sin(
        0.5 * (th[:, None] - th[None, :])
    )
    c = np.ones(n)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n)
    np.fill_diagonal(dx, 1.0)
    dmat = np.outer(c, 1.0 / c) / dx
    np.fill_diagonal(dmat, 0.0)
    # xi = L(1 - x)/2  =>  d/dxi = -(2/L) d/dx
    d1 = (-2.0 / grid.domain_length) * dmat
    np.fill_diagonal(d1, -d1.sum(axis=1))
    return DiffMatrices(d1, d1 @ d1)


def cheb_interpolate(grid: ChebyshevGrid, values: np.ndarray, x) -> np.ndarray:
    """Evaluate the polynomial interpolant of ``values`` at ``x`` (barycentric)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    values = np.asarray(values)
    n = grid.n_points
    w = (-1.0) ** np.arange(n)
    w[0] *= 0.5
    w[-1] *= 0.5
    diff = x[:, None] - grid.nodes[None, :]
    exact = diff == 0.0
    diff[exact] = 1.0
    kern = w[None, :] / diff
    out = (kern @ values) / kern.sum(axis=1)
    rows, cols = np.nonzero(exact)
    out[rows] = values[cols]
    return out


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


def clenshaw_curtis_weights(grid: ChebyshevGrid) -> np.ndarray:
    """Clenshaw-Curtis weights for the nodes of ``grid``."""
    n_int = grid.n_points - 1
    th = grid.theta
    w = np.zeros(n_int + 1)
    inner = th[1:-1]
    v = np.ones(n_int - 1)
    if n_int % 2 == 0:
        w[0] = w[-1] = 1.0 / (n_int**2 - 1)
        for k in range(1, n_int // 2):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k * k - 1)
        v -= np.cos(n_int * inner) / (n_int**2 - 1)
    else:
        w[0] = w[-1] = 1.0 / n_int**2
        for k in range(1, (n_int - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * inner) / (4 * k * k - 1)
    w[1:-1] = 2.0 * v / n_int
    return 0.5 * grid.domain_length * w


def integrate_radial(f, grid: ChebyshevGrid, d: float) -> float:
    """Approximate the integral of ``f(xi) xi**(d-1)`` over ``[0, L]``."""
    f = np.asarray(f)
    if f.shape != grid.nodes.shape:
        raise InvalidArgument("samples must live on the grid nodes")
    radial = grid.nodes ** (d - 1.0) if d != 1 else np.ones_like(grid.nodes)
    out = clenshaw_curtis_weights(grid) @ (f * radial)
    return out.item() if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Damped Newton
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NewtonSettings:
    """Controls for :func:`newton_solve`.

    ``floor_tol`` handles tolerances below what binary64 can deliver: when
    the line search cannot reduce a residual that is already below it, the
    iterate is accepted as converged at the rounding floor.  At that point
    ``polish_iterations`` further full Newton steps are taken and the
    iterate with the smallest residual is returned.
    """

    residual_tol: float = 1e-15
    max_iterations: int = 100
    damping: float = 0.5
    min_step: float = 2.0**-20
    floor_tol: float = 1e-10
    polish_iterations: int = 8

    def __post_init__(self):
        if not self.residual_tol > 0:
            raise InvalidArgument("residual_tol must be positive")
        if self.max_iterations < 1:
            raise InvalidArgument("max_iterations must be >= 1")
        if not 0 < self.damping < 1:
            raise InvalidArgument("damping must lie in (0, 1)")


class NewtonResult(NamedTuple):
    solution: np.ndarray
    final_residual: float
    iterations: int
    history: list


def _sup(r: np.ndarray) -> float:
    return float(np.max(np.abs(r))) if r.size else 0.0


def newton_solve(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    jacobian_fn: Callable[[np.ndarray], np.ndarray],
    x0,
    settings: NewtonSettings = NewtonSettings(),
) -> NewtonResult:
    """Damped Newton iteration with backtracking on the sup-norm residual."""
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("initial guess is not finite")
    r = np.asarray(residual_fn(x), dtype=float)
    rn = _sup(r)
    if not math.isfinite(rn):
        raise NoConvergence("residual of the initial guess is not finite", x, rn, 0)
    history = [rn]
    for it in range(1, settings.max_iterations + 1):
        if rn <= settings.residual_tol:
            return NewtonResult(x, rn, it - 1, history)
        jac = np.asarray(jacobian_fn(x), dtype=float)
        try:
            dx = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(f"singular Jacobian at iteration {it}", x, rn, it) from exc
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian(f"non-finite Newton step at iteration {it}", x, rn, it)
        step = 1.0
        while True:
            xt = x + step * dx
            rt = np.asarray(residual_fn(xt), dtype=float)
            rtn = _sup(rt)
            if math.isfinite(rtn) and rtn < rn:
                break
            step *= settings.damping
            if step < settings.min_step:
                if rn <= settings.floor_tol:
                    return _polish(residual_fn, jacobian_fn, x, r, rn, it - 1, history, settings)
                raise NoConvergence(
                    f"line search stalled at residual {rn:.3e} (iteration {it})", x, rn, it
                )
        x, r, rn = xt, rt, rtn
        history.append(rn)
    if rn <= settings.residual_tol:
        return NewtonResult(x, rn, settings.max_iterations, history)
    raise NoConvergence(
        f"no convergence after {settings.max_iterations} iterations (residual {rn:.3e})",
        x,
        rn,
        settings.max_iterations,
    )


def _polish(residual_fn, jacobian_fn, x, r, rn, iterations, history, settings):
    best = (rn, x, iterations)
    for k in range(1, settings.polish_iterations + 1):
        try:
            dx = np.linalg.solve(np.asarray(jacobian_fn(x), dtype=float), -r)
        except np.linalg.LinAlgError:
            break
        x = x + dx
        r = np.asarray(residual_fn(x), dtype=float)
        rn = _sup(r)
        if not math.isfinite(rn):
            break
        history.append(rn)
        if rn < best[0]:
            best = (rn, x, iterations + k)
        if rn <= settings.residual_tol:
            break
    return NewtonResult(best[1], best[0], best[2], history)


# ---------------------------------------------------------------------------
# Adaptive IVP integration
# ---------------------------------------------------------------------------


class Trajectory(NamedTuple):
    t: np.ndarray
    y: np.ndarray  # shape (n_states, n_times)
    sol: Callable | None


def rk45_integrate(
    rhs: Callable,
    y0,
    span: Sequence[float],
    rel_tol: float = 1e-10,
    abs_tol: float = 1e-12,
    *,
    t_eval=None,
    amplitude_bound: float | None = None,
    max_step: float = np.inf,
) -> Trajectory:
    """Integrate ``y' = rhs(t, y)`` with the Dormand-Prince 5(4) pair.

    If ``amplitude_bound`` is given, integration stops with
    :class:`IVPDiverged` as soon as ``max|y[:half]|`` exceeds it.
    """
    t0, t1 = map(float, span)
    if not t0 < t1:
        raise InvalidArgument("span must be increasing")
    if not (rel_tol > 0 and abs_tol > 0):
        raise InvalidArgument("tolerances must be positive")
    y0 = np.asarray(y0)
    events = None
    if amplitude_bound is not None:
        half = max(1, y0.size // 2)

        def blown(t, y):
            return amplitude_bound - np.max(np.abs(y[:half]))

        blown.terminal = True
        events = [blown]
    res = solve_ivp(
        rhs,
        (t0, t1),
        y0,
        method="RK45",
        rtol=rel_tol,
        atol=abs_tol,
        t_eval=t_eval,
        dense_output=True,
        events=events,
        max_step=max_step,
    )
    if events is not None and res.status == 1:
        raise IVPDiverged(f"trajectory exceeded amplitude {amplitude_bound} at t={res.t[-1]:.4g}")
    if res.status != 0:
        raise StepUnderflow(res.message)
    return Trajectory(res.t, res.y, res.sol)


# ---------------------------------------------------------------------------
# Natural cubic spline
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def spline_second_derivatives(xs, ys):
    """Second derivatives at the knots of the natural cubic spline."""
    n = xs.shape[0]
    m = np.zeros(n, dtype=ys.dtype)
    if n < 3:
        return m
    # Thomas algorithm on the interior equations
    cp = np.zeros(n, dtype=np.float64)
    dp = np.zeros(n, dtype=ys.dtype)
    for i in range(1, n - 1):
        hl = xs[i] - xs[i - 1]
        hr = xs[i + 1] - xs[i]
        diag = 2.0 * (hl + hr)
        rhs = 6.0 * ((ys[i + 1] - ys[i]) / hr - (ys[i] - ys[i - 1]) / hl)
        if i > 1:
            diag -= hl * cp[i - 1]
            rhs -= hl * dp[i - 1]
        cp[i] = hr / diag
        dp[i] = rhs / diag
    m[n - 2] = dp[n - 2]
    for i in range(n - 3, 0, -1):
        m[i] = dp[i] - cp[i] * m[i + 1]
    return m


@numba.njit(cache=True)
def spline_eval_point(xs, ys, m, q):
    n = xs.shape[0]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xs[mid] <= q:
            lo = mid
        else:
            hi = mid
    hseg = xs[hi] - xs[lo]
    A = (xs[hi] - q) / hseg
    B = (q - xs[lo]) / hseg
    return A * ys[lo] + B * ys[hi] + ((A**3 - A) * m[lo] + (B**3 - B) * m[hi]) * hseg * hseg / 6.0


class NaturalCubicSpline:
    """C2 interpolant with zero second derivative at both end knots."""

    def __init__(self, xs, ys):
        xs = np.ascontiguousarray(xs, dtype=float)
        if xs.ndim != 1 or xs.size < 2 or np.any(np.diff(xs) <= 0):
            raise InvalidArgument("knots must be strictly increasing")
        ys = np.asarray(ys)
        self.is_complex = np.iscomplexobj(ys)
        self.xs = xs
        self.ys = np.ascontiguousarray(ys, dtype=complex)
        self.m = spline_second_derivatives(self.xs, self.ys)

    def __call__(self, query):
        q = np.atleast_1d(np.asarray(query, dtype=float))
        if np.any(q < self.xs[0]) or np.any(q > self.xs[-1]):
            raise InvalidArgument("query outside the knot range")
        out = np.array([spline_eval_point(self.xs, self.ys, self.m, qi) for qi in q])
        if not self.is_complex:
            out = out.real
        return out[0] if np.ndim(query) == 0 else out


def cubic_spline_eval(xs, ys, query):
    return NaturalCubicSpline(xs, ys)(query)


# ---------------------------------------------------------------------------
# Banded complex matrices
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _band_lu_inplace(ab, kl, ku):
    # ab[i, kl + j - i] holds A[i, j]; returns -1 on success else failing row
    n = ab.shape[0]
    for k in range(n):
        piv = ab[k, kl]
        scale = 0.0
        for j in range(max(0, k - kl), min(n, k + ku + 1)):
            scale = max(scale, abs(ab[k, kl + j - k]))
        if abs(piv) <= 1e-14 * scale or not np.isfinite(abs(piv)) or scale == 0.0:
            return k
        for i in range(k + 1, min(n, k + kl + 1)):
            lik = ab[i, kl + k - i] / piv
            ab[i, kl + k - i] = lik
            for j in range(k + 1, min(n, k + ku + 1)):
                ab[i, kl + j - i] -= lik * ab[k, kl + j - k]
    return -1


@numba.njit(cache=True)
def band_lu_solve(lu, kl, ku, b):
    n = lu.shape[0]
    x = b.copy()
    for i in range(n):
        s = x[i]
        for j in range(max(0, i - kl), i):
            s -= lu[i, kl + j - i] * x[j]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, min(n, i + ku + 1)):
            s -= lu[i, kl + j - i] * x[j]
        x[i] = s / lu[i, kl]
    return x


@numba.njit(cache=True)
def band_matvec(ab, kl, ku, x):
    n = ab.shape[0]
    y = np.zeros(n, dtype=np.complex128)
    for i in range(n):
        s = 0j
        for j in range(max(0, i - kl), min(n, i + ku + 1)):
            s += ab[i, kl + j - i] * x[j]
        y[i] = s
    return y


class BandedMatrix:
    """Square complex matrix stored by rows inside a fixed band.

    ``data[i, kl + j - i]`` holds entry ``(i, j)`` for ``-kl <= j - i <= ku``.
    Reads outside the band return zero.
    """

    def __init__(self, n: int, kl: int, ku: int, data=None):
        self.n, self.kl, self.ku = int(n), int(kl), int(ku)
        if data is None:
            data = np.zeros((self.n, self.kl + self.ku + 1), dtype=complex)
        self.data = np.ascontiguousarray(data, dtype=complex)
        if self.data.shape != (self.n, self.kl + self.ku + 1):
            raise InvalidArgument("band storage has the wrong shape")

    @classmethod
    def from_dense(cls, a, kl: int, ku: int) -> "BandedMatrix":
        a = np.asarray(a)
        n = a.shape[0]
        i, j = np.nonzero(a)
        if np.any(j - i > ku) or np.any(i - j > kl):
            raise InvalidArgument("matrix has entries outside the requested band")
        out = cls(n, kl, ku)
        for off in range(-kl, ku + 1):
            rows = np.arange(max(0, -off), min(n, n - off))
            out.data[rows, kl + off] = a[rows, rows + off]
        return out

    def __getitem__(self, idx):
        i, j = idx
        if not (0 <= i < self.n and 0 <= j < self.n):
            raise IndexError(idx)
        off = j - i
        if off < -self.kl or off > self.ku:
            return 0j
        return self.data[i, self.kl + off]

    def __setitem__(self, idx, value):
        i, j = idx
        off = j - i
        if off < -self.kl or off > self.ku:
            raise InvalidArgument(f"entry {idx} lies outside the band")
        self.data[i, self.kl + off] = value

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=complex)
        for off in range(-self.kl, self.ku + 1):
            rows = np.arange(max(0, -off), min(self.n, self.n - off))
            a[rows, rows + off] = self.data[rows, self.kl + off]
        return a

    def matvec(self, x) -> np.ndarray:
        return band_matvec(self.data, self.kl, self.ku, np.ascontiguousarray(x, dtype=complex))

    def lu(self) -> "BandedLU":
        """LU factorization without pivoting; raises on a vanishing pivot."""
        lu = self.data.copy()
        bad = _band_lu_inplace(lu, self.kl, self.ku)
        if bad >= 0:
            raise SingularPivot(f"numerically singular pivot at row {bad}", row=bad)
        return BandedLU(lu, self.kl, self.ku)


@dataclass(frozen=True, eq=False)
class BandedLU:
    data: np.ndarray
    kl: int
    ku: int

    def solve(self, b) -> np.ndarray:
        return band_lu_solve(self.data, self.kl, self.ku, np.ascontiguousarray(b, dtype=complex))
