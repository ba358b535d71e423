"""Dynamic-rescaling time stepper for the radial focusing NLS.

The rescaled field v(xi, tau) lives on the uniform grid xi_j = j h,
j = 0..N, and obeys

    i v_tau + Delta v + N(v) = 0,   N(v) = i a (xi v_xi + v / sigma) + |v|^(2 sigma) v,

with a(tau) chosen so that |v(0, tau)| stays at 1.  Space uses sixth-order
central differences; time uses Crank-Nicolson for the Laplacian and a
two-step Adams predictor-corrector for N.  The far-field value comes from
the transport equation v_tau + a (v / sigma + xi v_xi) = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numba
import numpy as np

from .errors import Instability, InvalidArgument, NotBlowingUp, ZetaOutOfRange
from .numerics import BandedMatrix, spline_eval_point, spline_second_derivatives
from .profile import ProblemParams, ScaledProfile

BC_EXACT = "exact-interpolation"
BC_AB = "adams-bashforth-ode"
CORRECTOR_TRAPEZOID = "trapezoid"
CORRECTOR_LAGGED = "lagged"

# Sixth-order central stencils on offsets -3..3
D1_STENCIL = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0
D2_STENCIL = np.array([2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0]) / 180.0
# Right ghosts: v_{k+1} = sum_i c[i] v_{k-i}.  The first ghost uses the
# 6-point rule (degree 5); the 8-point rule there gives the Crank-Nicolson
# matrix a growing boundary mode.  Later ghosts use the 8-point rule.
EXTRAP_FIRST = np.array([6.0, -15.0, 20.0, -15.0, 6.0, -1.0])
EXTRAP = np.array([8.0, -28.0, 56.0, -70.0, 56.0, -28.0, 8.0, -1.0])

KL, KU = 7, 3  # ghost folding widens only the lower band
SPLINE_WINDOW = 32


def default_dtau(sigma: float) -> float:
    return 1e-4 / 2 ** (sigma - 2)


def default_domain_length(d: float) -> float:
    return 100.0 if d < 3.5 else 200.0


@dataclass(frozen=True)
class SimConfig:
    """Discretization and stopping settings.

    ``dtau`` and ``domain_length`` default to the values tied to sigma and d.
    ``corrector`` selects the nonlinear average in the corrector pass:
    ``"trapezoid"`` uses 1/2 N(v_pred) + 1/2 N(v^m) with a re-evaluated at
    the predictor, ``"lagged"`` uses 1/2 N(v_pred) + 1/2 N(v^(m-1)) with a
    frozen (first order in dtau).
    """

    params: ProblemParams
    h: float = 0.1
    dtau: float | None = None
    domain_length: float | None = None
    stop_L: float = 1e-24
    tau_max: float = 2000.0
    bc_kind: str = BC_EXACT
    record_every: int = 100
    corrector: str = CORRECTOR_TRAPEZOID
    amplitude_tol: float = 1e-2
    max_defocusing_steps: int = 1000

    def __post_init__(self):
        if self.dtau is None:
            object.__setattr__(self, "dtau", default_dtau(self.params.sigma))
        if self.domain_length is None:
            object.__setattr__(self, "domain_length", default_domain_length(self.params.d))
        for name in ("h", "dtau", "stop_L", "tau_max", "domain_length", "amplitude_tol"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        ratio = self.domain_length / self.h
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise InvalidArgument("domain_length / h must be an integer")
        if round(ratio) < 16:
            raise InvalidArgument("grid needs at least 16 intervals")
        if self.bc_kind not in (BC_EXACT, BC_AB):
            raise InvalidArgument(f"unknown bc_kind {self.bc_kind!r}")
        if self.corrector not in (CORRECTOR_TRAPEZOID, CORRECTOR_LAGGED):
            raise InvalidArgument(f"unknown corrector {self.corrector!r}")
        if self.record_every < 1:
            raise InvalidArgument("record_every must be at least 1")

    @property
    def n_intervals(self) -> int:
        return int(round(self.domain_length / self.h))

    @property
    def xi(self) -> np.ndarray:
        return np.arange(self.n_intervals + 1) * self.h


@dataclass(frozen=True, eq=False)
class RescaledState:
    config: SimConfig = field(repr=False)
    v: np.ndarray = field(repr=False)
    tau: float
    ln_L: float
    a: float
    step_index: int
    v_prev: np.ndarray = field(repr=False)
    a_prev: float

    @property
    def L(self) -> float:
        return math.exp(self.ln_L)


@dataclass(frozen=True)
class TraceRecord:
    step_index: int
    tau: float
    delta_t: float  # physical time elapsed since the previous record
    ln_L: float
    a: float
    sup_v: float
    dist_to_Q: float | None = None


@dataclass(eq=False)
class SimulationTrace:
    config: SimConfig
    records: list = field(default_factory=list)
    T: float = float("nan")
    a_end: float = float("nan")
    stopped_by: str = ""
    final_state: RescaledState | None = field(default=None, repr=False)
    defocusing_steps: int = 0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------


def _ghost_representations(n: int):
    """Right ghosts v_{N+1..N+3} as coefficient maps over real nodes."""
    reps = {}

    def rep(k):
        if k <= n:
            return {k: 1.0}
        if k not in reps:
            acc = {}
            coeffs = EXTRAP_FIRST if k == n + 1 else EXTRAP
            for i, e in enumerate(coeffs):
                for j, c in rep(k - 1 - i).items():
                    acc[j] = acc.get(j, 0.0) + e * c
            reps[k] = acc
        return reps[k]

    return rep


def _stencil_row(j, n, weights, rep):
    """Fold a 7-point stencil centred at j into a map over real nodes."""
    row = {}
    for off, w in zip(range(-3, 4), weights):
        if w == 0:
            continue
        k = j + off
        for idx, c in rep(abs(k)).items():  # v_{-k} = v_k
            row[idx] = row.get(idx, 0.0) + w * c
    return row


@dataclass(frozen=True, eq=False)
class Operators:
    """Banded D1, D2 and radial Laplacian plus the factorized CN matrix.

    Band storage is ``data[i, KL + j - i]`` with KL sub- and KU
    super-diagonals; ghost elimination only widens the lower band.  The
    Laplacian row i is ``c2[i] * D2 + c1[i] * D1``.
    """

    n: int
    h: float
    lap: np.ndarray  # real band data
    d1: np.ndarray
    d2: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    cn_lu: np.ndarray  # LU of I - i dtau/2 Lap with the last row replaced by e_N
    cn_inv_diag: np.ndarray
    cn_lower: np.ndarray  # first column of each row's L part (skyline)
    xi: np.ndarray


def _band(n, rows):
    m = BandedMatrix(n + 1, KL, KU)
    for i, row in enumerate(rows):
        for j, c in row.items():
            m[i, j] = c
    return m


@lru_cache(maxsize=16)
def build_operators(d: float, h: float, n: int, dtau: float) -> Operators:
    rep = _ghost_representations(n)
    d1_rows, d2_rows, lap_rows = [], [], []
    c1, c2 = np.zeros(n + 1), np.ones(n + 1)
    c2[0] = d  # (d-1)/xi v_xi -> (d-1) v_xixi at the origin
    c1[1:] = (d - 1) / (np.arange(1, n + 1) * h)
    for j in range(n + 1):
        r1 = {k: c / h for k, c in _stencil_row(j, n, D1_STENCIL, rep).items()}
        r2 = {k: c / h**2 for k, c in _stencil_row(j, n, D2_STENCIL, rep).items()}
        lap = {k: c2[j] * c for k, c in r2.items()}
        for k, c in r1.items():
            lap[k] = lap.get(k, 0.0) + c1[j] * c
        d1_rows.append(r1)
        d2_rows.append(r2)
        lap_rows.append(lap)
    lap_m = _band(n, lap_rows)
    cn = BandedMatrix(n + 1, KL, KU, -0.5j * dtau * lap_m.data)
    cn.data[:, KL] += 1.0
    cn.data[n, :] = 0.0
    cn.data[n, KL] = 1.0
    lu = cn.lu()
    lower = np.array([min(row) if row else i for i, row in enumerate(lap_rows)])
    lower[n] = n
    return Operators(
        n, h, np.ascontiguousarray(lap_m.data.real),
        np.ascontiguousarray(_band(n, d1_rows).data.real),
        np.ascontiguousarray(_band(n, d2_rows).data.real),
        c1, c2, lu.data, 1.0 / lu.data[:, KL], np.minimum(lower, np.arange(n + 1)),
        np.arange(n + 1) * h,
    )


def operators_for(config: SimConfig) -> Operators:
    return build_operators(float(config.params.d), float(config.h), config.n_intervals,
                           float(config.dtau))


# ---------------------------------------------------------------------------
# Compiled kernels
# ---------------------------------------------------------------------------

_A1, _A2, _A3 = 45.0 / 60.0, -9.0 / 60.0, 1.0 / 60.0
_B0, _B1, _B2, _B3 = -490.0 / 180.0, 270.0 / 180.0, -27.0 / 180.0, 2.0 / 180.0


@numba.njit(cache=True)
def _band_row(ab, x, i):
    n = x.shape[0]
    s = 0j
    for j in range(max(0, i - KL), min(n, i + KU + 1)):
        s += ab[i, KL + j - i] * x[j]
    return s


@numba.njit(cache=True)
def _matvec_into(ab, x, out):
    for i in range(x.shape[0]):
        out[i] = _band_row(ab, x, i)


@numba.njit(cache=True)
def _d1_into(d1, h, v, out):
    """Sixth-order v_xi; interior rows use the fixed stencil."""
    n = v.shape[0] - 1
    ih = 1.0 / h
    for i in range(3):
        out[i] = _band_row(d1, v, i)
    for i in range(3, n - 2):
        out[i] = ih * (_A1 * (v[i + 1] - v[i - 1]) + _A2 * (v[i + 2] - v[i - 2])
                       + _A3 * (v[i + 3] - v[i - 3]))
    for i in range(n - 2, n + 1):
        out[i] = _band_row(d1, v, i)


@numba.njit(cache=True)
def _lap_into(d2, c1, c2, h, v, dv, out):
    """Radial Laplacian given v_xi in ``dv``."""
    n = v.shape[0] - 1
    ih2 = 1.0 / (h * h)
    for i in range(3):
        out[i] = c2[i] * _band_row(d2, v, i) + c1[i] * dv[i]
    for i in range(3, n - 2):
        out[i] = ih2 * (_B0 * v[i] + _B1 * (v[i + 1] + v[i - 1]) + _B2 * (v[i + 2] + v[i - 2])
                        + _B3 * (v[i + 3] + v[i - 3])) + c1[i] * dv[i]
    for i in range(n - 2, n + 1):
        out[i] = c2[i] * _band_row(d2, v, i) + c1[i] * dv[i]


@numba.njit(cache=True)
def _lu_solve_inplace(lu, inv_diag, lower, x):
    n = x.shape[0]
    for i in range(n):
        s = x[i]
        for j in range(lower[i], i):
            s -= lu[i, KL + j - i] * x[j]
        x[i] = s
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, min(n, i + KU + 1)):
            s -= lu[i, KL + j - i] * x[j]
        x[i] = s * inv_diag[i]


@numba.njit(cache=True)
def _compute_a(lap, v, sigma):
    s = 0j
    for j in range(KU + 1):
        s += lap[0, KL + j] * v[j]
    return -sigma * (np.conj(v[0]) * s).imag


@numba.njit(cache=True)
def _power(m2, sigma):
    if sigma == 1.0:
        return m2
    if sigma == 2.0:
        return m2 * m2
    if sigma == 3.0:
        return m2 * m2 * m2
    return m2**sigma


@numba.njit(cache=True)
def _nonlinear_from(v, dv, a, sigma, xi, out):
    """out = i a (xi v_xi + v / sigma) + |v|^(2 sigma) v given v_xi."""
    inv = 1.0 / sigma
    for j in range(v.shape[0]):
        vj = v[j]
        m2 = vj.real * vj.real + vj.imag * vj.imag
        out[j] = 1j * a * (xi[j] * dv[j] + vj * inv) + _power(m2, sigma) * vj


@numba.njit(cache=True)
def _nonlinear(v, a, sigma, xi, d1, h):
    dv = np.empty_like(v)
    _d1_into(d1, h, v, dv)
    out = np.empty_like(v)
    _nonlinear_from(v, dv, a, sigma, xi, out)
    return out


@numba.njit(cache=True)
def _transport_rhs_at_end(v, a, sigma, xi, d1):
    n = v.shape[0] - 1
    dv = 0j
    for j in range(n - KL, n + 1):
        dv += d1[n, KL + j - n] * v[j]
    return -a * (v[n] / sigma + xi[n] * dv)


@numba.njit(cache=True)
def _boundary(v, v_prev, a, a_prev, sigma, dtau, xi, d1, use_exact):
    """New far-field value; second output flags a defocusing step."""
    n = v.shape[0] - 1
    ratio = math.exp(0.5 * dtau * (a_prev + a)) - 2.0 * dtau * a
    defocusing = ratio >= 1.0
    if use_exact and not defocusing and ratio > 0.0:
        zeta = xi[n] * ratio
        lo = max(0, n + 1 - SPLINE_WINDOW)
        if zeta < xi[lo]:
            lo = 0
        xs = xi[lo:]
        ys = v[lo:].copy()
        m = spline_second_derivatives(xs, ys)
        return spline_eval_point(xs, ys, m, zeta) * ratio ** (1.0 / sigma), defocusing
    f_now = _transport_rhs_at_end(v, a, sigma, xi, d1)
    f_old = _transport_rhs_at_end(v_prev, a_prev, sigma, xi, d1)
    return v[n] + 0.5 * dtau * (3.0 * f_now - f_old), defocusing


@numba.njit(cache=True)
def _step_into(v, n_prev, a, sigma, dtau, xi, ops_h, lap, d1, d2, c1, c2, lu, inv_diag, lower,
               bc_value, trapezoid, n_now, base, work, out):
    """One predictor-corrector step written to ``out``; N(v, a) to ``n_now``."""
    n = v.shape[0] - 1
    _d1_into(d1, ops_h, v, work)
    _lap_into(d2, c1, c2, ops_h, v, work, base)
    _nonlinear_from(v, work, a, sigma, xi, n_now)
    for j in range(n + 1):
        base[j] = v[j] + 0.5j * dtau * base[j]
        work[j] = base[j] + 1j * dtau * (1.5 * n_now[j] - 0.5 * n_prev[j])
    work[n] = bc_value
    _lu_solve_inplace(lu, inv_diag, lower, work)  # predictor
    _d1_into(d1, ops_h, work, out)
    if trapezoid:
        a_pred = _compute_a(lap, work, sigma)
        _nonlinear_from(work, out, a_pred, sigma, xi, out)
        for j in range(n + 1):
            out[j] = base[j] + 1j * dtau * (0.5 * out[j] + 0.5 * n_now[j])
    else:
        _nonlinear_from(work, out, a, sigma, xi, out)
        for j in range(n + 1):
            out[j] = base[j] + 1j * dtau * (0.5 * out[j] + 0.5 * n_prev[j])
    out[n] = bc_value
    _lu_solve_inplace(lu, inv_diag, lower, out)


def _kernel_ops(ops: Operators):
    return (ops.h, ops.lap, ops.d1, ops.d2, ops.c1, ops.c2, ops.cn_lu, ops.cn_inv_diag,
            ops.cn_lower)


@numba.njit(cache=True)
def _full_rhs(u, au, sigma, xi, h, lap, d1):
    n = u.shape[0] - 1
    f = np.empty_like(u)
    _matvec_into(lap, u, f)
    f = 1j * f + 1j * _nonlinear(u, au, sigma, xi, d1, h)
    f[n] = _transport_rhs_at_end(u, au, sigma, xi, d1)
    return f


@numba.njit(cache=True)
def _rk2_step(v, a, sigma, dtau, xi, h, lap, d1):
    k1 = _full_rhs(v, a, sigma, xi, h, lap, d1)
    v_star = v + dtau * k1
    k2 = _full_rhs(v_star, _compute_a(lap, v_star, sigma), sigma, xi, h, lap, d1)
    return v + 0.5 * dtau * (k1 + k2)


STATUS_RUNNING, STATUS_STOP, STATUS_NONFINITE, STATUS_AMPLITUDE, STATUS_DEFOCUS = 0, 1, 2, 3, 4


@numba.njit(cache=True)
def _advance(v, v_prev, n_prev, scal, counters, n_steps, sigma, dtau, xi, h, lap, d1, d2, c1, c2,
             lu, inv_diag, lower, use_exact, trapezoid, ln_stop, amp_tol, max_defocus):
    """Advance in place by up to ``n_steps``.

    scal = [a, a_prev, ln_L, dt_sum, dt_comp]; counters = [step, defocus_run,
    defocus_total].  Returns (status, steps_taken).
    """
    a, a_prev, ln_L = scal[0], scal[1], scal[2]
    dt_sum, dt_comp = scal[3], scal[4]
    status = STATUS_RUNNING
    n_now = np.empty_like(v)
    base = np.empty_like(v)
    work = np.empty_like(v)
    v_new = np.empty_like(v)
    k = 0
    while k < n_steps:
        bc, defocusing = _boundary(v, v_prev, a, a_prev, sigma, dtau, xi, d1, use_exact)
        _step_into(v, n_prev, a, sigma, dtau, xi, h, lap, d1, d2, c1, c2, lu, inv_diag, lower,
                   bc, trapezoid, n_now, base, work, v_new)
        sup = 0.0
        finite = True
        for j in range(v_new.shape[0]):
            m = abs(v_new[j])
            if not np.isfinite(m):
                finite = False
                break
            if m > sup:
                sup = m
        if not finite:
            status = STATUS_NONFINITE
            break
        a_new = _compute_a(lap, v_new, sigma)
        if abs(sup - 1.0) > amp_tol or abs(abs(v_new[0]) - 1.0) > amp_tol:
            status = STATUS_AMPLITUDE
            break
        ln_new = ln_L - 0.5 * dtau * (a_new + a)
        # Kahan accumulation of dtau L^2
        y = dtau * math.exp(2.0 * ln_new) - dt_comp
        t = dt_sum + y
        dt_comp = (t - dt_sum) - y
        dt_sum = t
        v_prev[:] = v
        v[:] = v_new
        n_prev[:] = n_now
        a_prev, a, ln_L = a, a_new, ln_new
        counters[0] += 1
        k += 1
        if defocusing:
            counters[1] += 1
            counters[2] += 1
        else:
            counters[1] = 0
        if ln_L < ln_stop:
            status = STATUS_STOP
            break
        if counters[1] >= max_defocus:
            status = STATUS_DEFOCUS
            break
    scal[0], scal[1], scal[2], scal[3], scal[4] = a, a_prev, ln_L, dt_sum, dt_comp
    return status, k


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def compute_a(state: RescaledState) -> float:
    """a = -sigma Im(conj(v) Delta v) at the origin."""
    ops = operators_for(state.config)
    return float(_compute_a(ops.lap, np.ascontiguousarray(state.v, dtype=complex),
                            float(state.config.params.sigma)))


def init_from_physical(u0: Callable, config: SimConfig) -> RescaledState:
    """Rescale physical data so that sup |v0| = |v0(0)| = 1."""
    u_origin = complex(np.asarray(u0(np.array([0.0])), dtype=complex)[0])
    amp = abs(u_origin)
    if not np.isfinite(amp):
        raise InvalidArgument("u0(0) is not finite")
    if amp == 0:
        raise InvalidArgument("u0 vanishes at the origin")
    sigma = config.params.sigma
    L0 = amp ** (-sigma)
    xi = config.xi
    v0 = L0 ** (1 / sigma) * np.asarray(u0(xi * L0), dtype=complex)
    if not np.all(np.isfinite(v0)):
        raise InvalidArgument("initial samples are not finite")
    if np.max(np.abs(v0)) > abs(v0[0]) * (1 + 1e-12):
        raise InvalidArgument("sup |u0| is not attained at the origin")
    state = RescaledState(config, v0, 0.0, math.log(L0), 0.0, 0, v0.copy(), 0.0)
    a0 = compute_a(state)
    return replace(state, a=a0, a_prev=a0)


def apply_boundary(state: RescaledState) -> complex:
    """Far-field value for the next step (raises when the step defocuses)."""
    cfg = state.config
    ops = operators_for(cfg)
    value, defocusing = _boundary(
        np.ascontiguousarray(state.v, dtype=complex),
        np.ascontiguousarray(state.v_prev, dtype=complex),
        state.a, state.a_prev, float(cfg.params.sigma), cfg.dtau, ops.xi, ops.d1,
        cfg.bc_kind == BC_EXACT,
    )
    if defocusing and cfg.bc_kind == BC_EXACT:
        raise ZetaOutOfRange("L(tau_{m+1}) / L(tau_m) >= 1: the step is defocusing")
    return complex(value)


def _advance_state(state: RescaledState, v_new: np.ndarray) -> RescaledState:
    cfg = state.config
    a_new = compute_a(replace(state, v=v_new))
    ln_new = state.ln_L - 0.5 * cfg.dtau * (a_new + state.a)
    return RescaledState(cfg, v_new, (state.step_index + 1) * cfg.dtau, ln_new, a_new,
                         state.step_index + 1, state.v, state.a)


def _check_finite(v, step_index):
    if not np.all(np.isfinite(v)):
        raise Instability(f"non-finite field at step {step_index}", step_index)


def bootstrap_first_step(state: RescaledState) -> RescaledState:
    """Heun (RK2) step from tau = 0 to supply the second starting level."""
    if state.step_index != 0:
        raise InvalidArgument("bootstrap applies only at step 0")
    cfg = state.config
    ops = operators_for(cfg)
    v_new = _rk2_step(np.ascontiguousarray(state.v, dtype=complex), state.a,
                      float(cfg.params.sigma), cfg.dtau, ops.xi, ops.h, ops.lap, ops.d1)
    _check_finite(v_new, 1)
    return _advance_state(state, v_new)


def step(state: RescaledState) -> RescaledState:
    """One CN / Adams predictor-corrector step (needs step_index >= 1)."""
    if state.step_index < 1:
        raise InvalidArgument("the two-step scheme needs a bootstrap step first")
    cfg = state.config
    ops = operators_for(cfg)
    sigma = float(cfg.params.sigma)
    v = np.ascontiguousarray(state.v, dtype=complex)
    v_prev = np.ascontiguousarray(state.v_prev, dtype=complex)
    bc, _ = _boundary(v, v_prev, state.a, state.a_prev, sigma, cfg.dtau, ops.xi, ops.d1,
                      cfg.bc_kind == BC_EXACT)
    n_prev = _nonlinear(v_prev, state.a_prev, sigma, ops.xi, ops.d1, ops.h)
    v_new = np.empty_like(v)
    scratch = [np.empty_like(v) for _ in range(3)]
    _step_into(v, n_prev, state.a, sigma, cfg.dtau, ops.xi, *_kernel_ops(ops), bc,
               cfg.corrector == CORRECTOR_TRAPEZOID, *scratch, v_new)
    _check_finite(v_new, state.step_index + 1)
    return _advance_state(state, v_new)


def evolve(state: RescaledState, tau_end: float) -> RescaledState:
    """Step (bootstrapping if needed) until tau reaches ``tau_end``."""
    n_target = int(round(tau_end / state.config.dtau))
    if state.step_index == 0 and n_target > 0:
        state = bootstrap_first_step(state)
    while state.step_index < n_target:
        state = step(state)
    return state


def run(u0, config: SimConfig, q_reference: ScaledProfile | None = None) -> SimulationTrace:
    """Evolve from physical data ``u0`` until L < stop_L or tau > tau_max.

    ``u0`` is a callable of r or an already rescaled RescaledState.  With
    ``q_reference`` each record carries sup | |v| - |Q~| | on the overlap.
    """
    from .analysis import resample_modulus

    state = u0 if isinstance(u0, RescaledState) else init_from_physical(u0, config)
    cfg = state.config
    ops = operators_for(cfg)
    sigma = float(cfg.params.sigma)
    trace = SimulationTrace(cfg)

    q_mod = overlap = None
    if q_reference is not None:
        overlap = ops.xi <= q_reference.eta[-1]
        q_mod = resample_modulus(q_reference, ops.xi[overlap])

    def dist(v):
        if q_mod is None:
            return None
        return float(np.max(np.abs(np.abs(v[overlap]) - q_mod)))

    ln_start = state.ln_L
    if state.step_index == 0:
        state = bootstrap_first_step(state)
    v = state.v.astype(complex).copy()
    v_prev = state.v_prev.astype(complex).copy()
    n_prev = _nonlinear(v_prev, state.a_prev, sigma, ops.xi, ops.d1, ops.h)
    # dt for the steps already taken (the bootstrap) enters the first record
    first_dt = cfg.dtau * math.exp(2 * state.ln_L)
    scal = np.array([state.a, state.a_prev, state.ln_L, first_dt, 0.0])
    counters = np.array([state.step_index, 0, 0], dtype=np.int64)
    ln_stop = math.log(cfg.stop_L)
    max_steps = int(math.floor(cfg.tau_max / cfg.dtau + 1e-9))
    total_comp = [0.0, 0.0]  # Kahan sum of record increments -> T

    def add_total(x):
        y = x - total_comp[1]
        t = total_comp[0] + y
        total_comp[1] = (t - total_comp[0]) - y
        total_comp[0] = t

    def snapshot():
        return RescaledState(cfg, v.copy(), int(counters[0]) * cfg.dtau, float(scal[2]),
                             float(scal[0]), int(counters[0]), v_prev.copy(), float(scal[1]))

    def emit():
        dt = scal[3] + 0.0  # compensated sum since the last record
        add_total(dt)
        trace.records.append(TraceRecord(int(counters[0]), int(counters[0]) * cfg.dtau, float(dt),
                                         float(scal[2]), float(scal[0]),
                                         float(np.max(np.abs(v))), dist(v)))
        scal[3] = 0.0
        scal[4] = 0.0

    status = STATUS_RUNNING
    since = int(counters[0])  # steps since the last record
    while True:
        budget = min(cfg.record_every - since, max_steps - int(counters[0]))
        if budget <= 0:
            if since:
                emit()
            trace.stopped_by = "tau_max"
            break
        status, taken = _advance(v, v_prev, n_prev, scal, counters, budget, sigma, cfg.dtau,
                                 ops.xi, *_kernel_ops(ops), cfg.bc_kind == BC_EXACT,
                                 cfg.corrector == CORRECTOR_TRAPEZOID, ln_stop,
                                 cfg.amplitude_tol, cfg.max_defocusing_steps)
        since += taken
        if status in (STATUS_NONFINITE, STATUS_AMPLITUDE):
            if since and taken:
                emit()
            trace.final_state = snapshot()
            trace.T = total_comp[0]
            trace.stopped_by = "instability"
            what = "non-finite field" if status == STATUS_NONFINITE else "amplitude drifted off 1"
            raise Instability(f"{what} at step {int(counters[0]) + 1}", int(counters[0]) + 1, trace)
        if since >= cfg.record_every or status != STATUS_RUNNING:
            emit()
            since = 0
        if status == STATUS_STOP:
            trace.stopped_by = "stop_L"
            break
        if status == STATUS_DEFOCUS:
            trace.final_state = snapshot()
            trace.T = total_comp[0]
            trace.defocusing_steps = int(counters[2])
            trace.stopped_by = "defocusing"
            raise NotBlowingUp(
                f"L grew for {cfg.max_defocusing_steps} consecutive steps "
                f"(tau = {counters[0] * cfg.dtau:.4g}, ln L = {scal[2]:.4g} from {ln_start:.4g})",
                trace,
            )
    trace.T = total_comp[0]
    trace.a_end = float(scal[0])
    trace.defocusing_steps = int(counters[2])
    trace.final_state = snapshot()
    return trace


# ---------------------------------------------------------------------------
# Initial data families
# ---------------------------------------------------------------------------


def gaussian(amplitude: float):
    return lambda r: amplitude * np.exp(-np.asarray(r, dtype=float) ** 2)


def rational(amplitude: float):
    return lambda r: amplitude / (1 + np.asarray(r, dtype=float) ** 2) ** 4


INIT_FAMILIES = {"gaussian": gaussian, "rational": rational}


def parse_init(spec: str):
    """``"gaussian:5"`` -> the callable 5 exp(-r^2)."""
    family, sep, amp = spec.partition(":")
    if not sep or family not in INIT_FAMILIES:
        raise InvalidArgument(f"initial data must be FAMILY:AMPLITUDE with FAMILY in "
                              f"{sorted(INIT_FAMILIES)}, got {spec!r}")
    try:
        value = float(amp)
    except ValueError:
        raise InvalidArgument(f"bad amplitude {amp!r}") from None
    if not value > 0:
        raise InvalidArgument("amplitude must be positive")
    return INIT_FAMILIES[family](value)


# Reference blow-up cases: (d, sigma) -> (gaussian A, rational A)
TABLE1 = {
    (3, 1): (5.0, 6.0),
    (4, 1): (6.0, 8.0),
    (5, 1): (6.0, 8.0),
    (2, 2): (2.0, 2.5),
    (3, 2): (3.0, 3.0),
    (4, 2): (3.0, 3.0),
    (3, 3): (2.5, 2.5),
}
