"""Self-similar profiles of the supercritical radial NLS.

The profile Q = P + iW solves

    Q'' + (d-1)/xi Q' - Q + i a (Q/sigma + xi Q') + |Q|^{2 sigma} Q = 0

on [0, K] with Q'(0) = 0, Im Q(0) = 0 and the far-field condition
(1/sigma + i/a) Q(K) + K Q'(K) = 0.  The eigen-parameter ``a`` is an
unknown, so the collocated system has 2n + 1 unknowns.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ContinuationStalled,
    ConvergedToTrivial,
    InvalidArgument,
    NoConvergence,
    NotEnergyCritical,
)
from .numerics import (
    ChebyshevGrid,
    DiffMatrices,
    NewtonSettings,
    build_diff_matrices,
    build_grid,
    cheb_interpolate,
    integrate_radial,
    newton_solve,
    rk45_integrate,
)

DEFAULT_N = 257
DEFAULT_K = 200.0
TRIVIAL_TOL = 1e-6


@dataclass(frozen=True)
class ProblemParams:
    d: float
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise InvalidArgument(f"sigma must be positive, got {self.sigma}")
        if not (self.d > 0 and math.isfinite(self.d)):
            raise InvalidArgument(f"dimension must be positive, got {self.d}")

    @property
    def p(self) -> float:
        return 2 * self.sigma + 1

    @property
    def s_c(self) -> float:
        return self.d / 2 - 1 / self.sigma

    def check_supercritical(self):
        if self.d < 2:
            raise InvalidArgument(f"need d >= 2, got {self.d}")
        if not self.s_c > 0:
            raise InvalidArgument(f"need s_c > 0 (mass-supercritical), got {self.s_c}")
        return self


@functools.lru_cache(maxsize=16)
def _cached_setup(n: int, length: float):
    grid = build_grid(n, length)
    return grid, build_diff_matrices(grid)


def grid_and_matrices(n: int = DEFAULT_N, domain_length: float = DEFAULT_K):
    return _cached_setup(int(n), float(domain_length))


def _mats_for(grid: ChebyshevGrid) -> DiffMatrices:
    cached_grid, mats = _cached_setup(grid.n_points, grid.domain_length)
    return mats


# ---------------------------------------------------------------------------
# Collocation system
# ---------------------------------------------------------------------------


def unpack(x, n):
    return x[:n], x[n : 2 * n], x[2 * n]


def _nonlinear_parts(P, W, sigma):
    rho = P * P + W * W
    rho_s = rho**sigma
    # rho^(sigma-1) is singular at rho = 0 for sigma < 1; its products with P^2 etc. are not
    safe = np.where(rho > 0, rho, 1.0)
    rho_sm1 = np.where(rho > 0, safe ** (sigma - 1.0), 0.0)
    return rho_s, rho_sm1


def assemble_residual(x, params: ProblemParams, grid: ChebyshevGrid, mats: DiffMatrices,
                      omega: float = 1.0) -> np.ndarray:
    """Residual of the collocated profile system.

    Rows are ordered as: real ODE at interior nodes, imaginary ODE at
    interior nodes, then P'(0), W(0), W'(0) and the two far-field rows.
    ``omega`` multiplies the -Q term; it is 1 for the equation as solved and
    differs only when checking rescaled members of the profile family.
    """
    x = np.asarray(x, dtype=float)
    n = grid.n_points
    if x.shape != (2 * n + 1,):
        raise InvalidArgument(f"expected {2 * n + 1} unknowns, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("non-finite unknowns")
    P, W, a = unpack(x, n)
    d, sigma = params.d, params.sigma
    xi = grid.nodes
    dP, dW = mats.d1 @ P, mats.d1 @ W
    ddP, ddW = mats.d2 @ P, mats.d2 @ W
    rho_s, _ = _nonlinear_parts(P, W, sigma)
    inner = slice(1, n - 1)
    xin = xi[inner]
    lapP = ddP[inner] + (d - 1) / xin * dP[inner]
    lapW = ddW[inner] + (d - 1) / xin * dW[inner]
    rP = lapP - omega * P[inner] - a * (W[inner] / sigma + xin * dW[inner]) + rho_s[inner] * P[inner]
    rW = lapW - omega * W[inner] + a * (P[inner] / sigma + xin * dP[inner]) + rho_s[inner] * W[inner]
    K = xi[-1]
    bc = np.array(
        [
            dP[0],
            W[0],
            dW[0],
            P[-1] / sigma - W[-1] / a + K * dP[-1],
            P[-1] / a + W[-1] / sigma + K * dW[-1],
        ]
    )
    return np.concatenate([rP, rW, bc])


def assemble_jacobian(x, params: ProblemParams, grid: ChebyshevGrid, mats: DiffMatrices,
                      omega: float = 1.0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = grid.n_points
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("non-finite unknowns")
    P, W, a = unpack(x, n)
    d, sigma = params.d, params.sigma
    xi = grid.nodes
    D1, D2 = mats.d1, mats.d2
    rho_s, rho_sm1 = _nonlinear_parts(P, W, sigma)
    inner = np.arange(1, n - 1)
    xin = xi[inner]
    lap = D2[inner] + ((d - 1) / xin)[:, None] * D1[inner]
    xD1 = xin[:, None] * D1[inner]
    sel = np.zeros((n - 2, n))
    sel[np.arange(n - 2), inner] = 1.0

    dNP_dP = rho_s + 2 * sigma * rho_sm1 * P * P
    dNW_dW = rho_s + 2 * sigma * rho_sm1 * W * W
    cross = 2 * sigma * rho_sm1 * P * W

    J = np.zeros((2 * n + 1, 2 * n + 1))
    m = n - 2
    J[:m, :n] = lap - omega * sel + sel * dNP_dP[None, :]
    J[:m, n : 2 * n] = -a * (sel / sigma + xD1) + sel * cross[None, :]
    J[:m, 2 * n] = -(W[inner] / sigma + xin * (D1[inner] @ W))
    J[m : 2 * m, :n] = a * (sel / sigma + xD1) + sel * cross[None, :]
    J[m : 2 * m, n : 2 * n] = lap - omega * sel + sel * dNW_dW[None, :]
    J[m : 2 * m, 2 * n] = P[inner] / sigma + xin * (D1[inner] @ P)

    r = 2 * m
    K = xi[-1]
    J[r, :n] = D1[0]
    J[r + 1, n] = 1.0
    J[r + 2, n : 2 * n] = D1[0]
    J[r + 3, :n] = K * D1[-1]
    J[r + 3, n - 1] += 1 / sigma
    J[r + 3, 2 * n - 1] = -1 / a
    J[r + 3, 2 * n] = W[-1] / a**2
    J[r + 4, n : 2 * n] = K * D1[-1]
    J[r + 4, n - 1] = 1 / a
    J[r + 4, 2 * n - 1] += 1 / sigma
    J[r + 4, 2 * n] = -P[-1] / a**2
    return J


# ---------------------------------------------------------------------------
# Initial guesses by shooting
# ---------------------------------------------------------------------------


def profile_rhs(params: ProblemParams, a: float):
    d, sigma = params.d, params.sigma

    def rhs(xi, y):
        q, dq = y[0], y[1]
        nl = abs(q) ** (2 * sigma) * q
        ddq = -(d - 1) / xi * dq + q - 1j * a * (q / sigma + xi * dq) - nl
        return np.array([dq, ddq])

    return rhs


def series_start(params: ProblemParams, a: float, q0: float, eps: float):
    """Q and Q' at xi = eps from the expansion about the regular singular point."""
    c = (q0 - 1j * a * q0 / params.sigma - abs(q0) ** (2 * params.sigma) * q0) / params.d
    return np.array([q0 + 0.5 * c * eps**2, c * eps], dtype=complex)


def shoot(params: ProblemParams, a: float, q0: float, xi_eval, *, eps: float = 1e-6,
          rel_tol: float = 1e-10, abs_tol: float = 1e-12, amplitude_bound: float = 1e3):
    """Integrate the profile ODE as an IVP and sample Q, Q' at ``xi_eval``.

    Samples at ``xi <= eps`` take the series values.
    """
    xi_eval = np.asarray(xi_eval, dtype=float)
    q = np.zeros(xi_eval.shape, dtype=complex)
    dq = np.zeros(xi_eval.shape, dtype=complex)
    if q0 == 0:
        return q, dq
    near = xi_eval <= eps
    for i in np.nonzero(near)[0]:
        q[i], dq[i] = series_start(params, a, q0, max(xi_eval[i], 0.0))
    far = ~near
    if np.any(far):
        y0 = series_start(params, a, q0, eps)
        traj = rk45_integrate(profile_rhs(params, a), y0, (eps, float(xi_eval[far].max())),
                              rel_tol, abs_tol, t_eval=xi_eval[far],
                              amplitude_bound=amplitude_bound)
        q[far], dq[far] = traj.y[0], traj.y[1]
    return q, dq


def initial_guess_by_shooting(params: ProblemParams, a_est: float, q0_est: float,
                              grid: ChebyshevGrid, **kw) -> np.ndarray:
    """Packed [P; W; a] from an IVP shot; loose tolerances suffice for a guess."""
    kw.setdefault("rel_tol", 1e-7)
    kw.setdefault("abs_tol", 1e-9)
    if not a_est > 0:
        raise InvalidArgument("a_est must be positive")
    if q0_est < 0:
        raise InvalidArgument("q0_est must be non-negative")
    q, _ = shoot(params, a_est, q0_est, grid.nodes, **kw)
    return np.concatenate([q.real, q.imag, [a_est]])


# ---------------------------------------------------------------------------
# Solving
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProfileSolution:
    params: ProblemParams
    grid: ChebyshevGrid
    p_real: np.ndarray = field(repr=False)
    w_imag: np.ndarray = field(repr=False)
    a: float
    residual_norm: float
    iterations: int = 0

    @property
    def mats(self) -> DiffMatrices:
        return _mats_for(self.grid)

    @property
    def q(self) -> np.ndarray:
        return self.p_real + 1j * self.w_imag

    @property
    def q0(self) -> float:
        return float(self.p_real[0])

    @property
    def dq(self) -> np.ndarray:
        return self.mats.d1 @ self.q

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.p_real, self.w_imag, [self.a]])

    def n_maxima(self) -> int:
        """Number of local maxima of |Q| (the origin counts when |Q| decreases there)."""
        c = np.abs(self.q)
        interior = np.sum((c[1:-1] > c[:-2]) & (c[1:-1] >= c[2:]))
        return int(interior + (c[0] > c[1]))

    def evaluate(self, xi):
        """Q and Q' at arbitrary points by polynomial interpolation."""
        return cheb_interpolate(self.grid, self.q, xi), cheb_interpolate(self.grid, self.dq, xi)


def solve_profile(params: ProblemParams, guess, settings: NewtonSettings = NewtonSettings(),
                  grid: ChebyshevGrid | None = None) -> ProfileSolution:
    """Newton solve of the collocated profile system from ``guess``.

    ``guess`` is the packed vector [P; W; a] on ``grid`` (default N=257,
    K=200, inferred from the guess length when possible).
    """
    guess = np.asarray(guess, dtype=float)
    if grid is None:
        n = (guess.size - 1) // 2
        grid, mats = grid_and_matrices(n, DEFAULT_K)
    else:
        mats = _mats_for(grid)
    if guess.shape != (2 * grid.n_points + 1,):
        raise InvalidArgument("guess does not match the grid")
    if not np.all(np.isfinite(guess)):
        raise InvalidArgument("guess is not finite")

    def res(x):
        return assemble_residual(x, params, grid, mats)

    def jac(x):
        return assemble_jacobian(x, params, grid, mats)

    x, rn, iters, _ = newton_solve(res, jac, guess, settings)
    n = grid.n_points
    P, W, a = x[:n].copy(), x[n : 2 * n].copy(), float(x[2 * n])
    if np.max(np.abs(P)) < TRIVIAL_TOL:
        sol = ProfileSolution(params, grid, P, W, a, rn, iters)
        raise ConvergedToTrivial("Newton converged to the zero solution", sol)
    if P[0] < 0:  # Q -> -Q is also a solution; keep Q(0) > 0
        P, W = -P, -W
    if not a > 0:
        raise NoConvergence(f"converged to a = {a:.6g} <= 0", x, rn, iters)
    return ProfileSolution(params, grid, P, W, a, rn, iters)


def solve_from_estimates(params: ProblemParams, a_est: float, q0_est: float,
                         n: int = DEFAULT_N, domain_length: float = DEFAULT_K,
                         settings: NewtonSettings = NewtonSettings()) -> ProfileSolution:
    """Shooting guess followed by Newton: the standard entry point."""
    params.check_supercritical()
    grid, _ = grid_and_matrices(n, domain_length)
    guess = initial_guess_by_shooting(params, a_est, q0_est, grid)
    return solve_profile(params, guess, settings, grid)


def resample(sol: ProfileSolution, n: int, domain_length: float | None = None) -> np.ndarray:
    """Packed unknown vector of ``sol`` interpolated onto another grid."""
    grid, _ = grid_and_matrices(n, domain_length or sol.grid.domain_length)
    q = cheb_interpolate(sol.grid, sol.q, grid.nodes)
    return np.concatenate([q.real, q.imag, [sol.a]])


# ---------------------------------------------------------------------------
# Continuation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContinuationEntry:
    params: ProblemParams
    a: float
    q0: float
    converged: bool
    iterations: int


@dataclass
class ContinuationRecord:
    entries: list = field(default_factory=list)
    step_history: list = field(default_factory=list)
    solutions: list = field(default_factory=list)

    @property
    def converged(self):
        return [e for e in self.entries if e.converged]


def extrapolate(ts, xs, t_new):
    """Lagrange extrapolation through the last (up to three) points.

    For equally spaced points this is 3 x_k - 3 x_{k-1} + x_{k-2}.
    """
    ts = list(ts)[-3:]
    xs = list(xs)[-3:]
    out = 0.0
    for i, (ti, xi) in enumerate(zip(ts, xs)):
        w = 1.0
        for j, tj in enumerate(ts):
            if j != i:
                w *= (t_new - tj) / (ti - tj)
        out = out + w * xi
    return out


def _leg(record, sol, name, target, step, min_step, settings):
    current = getattr(sol.params, name)
    ts, xs = [current], [sol.x]
    h = step
    while abs(target - current) > 1e-12:
        h = min(h, abs(target - current))
        t_new = current + math.copysign(h, target - current)
        if abs(target - t_new) < 1e-9:
            t_new = target
        params = replace(sol.params, **{name: t_new})
        guess = extrapolate(ts, xs, t_new)
        try:
            new = solve_profile(params, guess, settings, sol.grid)
        except (NoConvergence, ConvergedToTrivial) as exc:
            its = getattr(exc, "iterations", None) or 0
            record.entries.append(ContinuationEntry(params, float("nan"), float("nan"), False, its))
            h *= 0.5
            if h < min_step:
                raise ContinuationStalled(
                    f"continuation stalled at {name}={current:.6g} (step below {min_step})", record
                ) from exc
            continue
        record.entries.append(ContinuationEntry(params, new.a, new.q0, True, new.iterations))
        record.solutions.append(new)
        record.step_history.append((name, t_new - current))
        sol, current = new, t_new
        ts.append(t_new)
        xs.append(new.x)
        h = min(step, 2 * h)
    return sol


def continue_in_parameter(start: ProfileSolution, target: ProblemParams, step: float = 0.1,
                          settings: NewtonSettings = NewtonSettings(),
                          min_step: float = 1e-3) -> ContinuationRecord:
    """Walk from ``start.params`` to ``target``: first in d, then in sigma."""
    if not step > 0:
        raise InvalidArgument("step must be positive")
    record = ContinuationRecord()
    record.entries.append(
        ContinuationEntry(start.params, start.a, start.q0, True, start.iterations)
    )
    record.solutions.append(start)
    sol = _leg(record, start, "d", target.d, step, min_step, settings)
    _leg(record, sol, "sigma", target.sigma, step, min_step, settings)
    return record


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PhasePath:
    xi: np.ndarray
    c: np.ndarray
    d_log: np.ndarray
    psi: np.ndarray

    @property
    def points(self):
        return list(zip(self.c, self.d_log))


def phase_path_from_samples(xi, q, dq, floor: float = 1e-30) -> PhasePath:
    xi, q, dq = map(np.asarray, (xi, q, dq))
    c = np.abs(q)
    keep = c > floor
    xi, q, dq, c = xi[keep], q[keep], dq[keep], c[keep]
    ratio = dq / q
    return PhasePath(xi, c, ratio.real, ratio.imag)


def phase_path(sol: ProfileSolution) -> PhasePath:
    return phase_path_from_samples(sol.grid.nodes, sol.q, sol.dq)


def _last_major_maximum(c: np.ndarray, significance: float = 0.1) -> int:
    peaks = [0] if c.size > 1 and c[0] >= c[1] else []
    peaks += list(np.nonzero((c[1:-1] > c[:-2]) & (c[1:-1] >= c[2:]))[0] + 1)
    big = [i for i in peaks if c[i] >= significance * c.max()]
    return big[-1] if big else int(np.argmax(c))


def detect_oscillation(path: PhasePath, c_threshold: float | None = None,
                       min_sign_changes: int = 3):
    """Count sign changes of D on the terminal part of the path.

    The terminal part starts after the last major maximum of C and keeps
    only points with C below ``c_threshold`` (default: half that maximum).
    Small wiggles of C from a fast-oscillating tail never count as major
    maxima: a maximum is major when it reaches 10% of the global maximum.
    """
    if path.c.size == 0:
        raise InvalidArgument("empty phase path")
    peak = _last_major_maximum(path.c)
    if c_threshold is None:
        c_threshold = 0.5 * path.c[peak]
    tail = path.d_log[peak:][path.c[peak:] < c_threshold]
    signs = np.sign(tail[tail != 0])
    changes = int(np.count_nonzero(signs[1:] != signs[:-1]))
    return changes >= min_sign_changes, changes


def shoot_phase_path(params: ProblemParams, a: float, q0: float, xi_max: float = 50.0,
                     points_per_wave: int = 20) -> PhasePath:
    """Phase path of the IVP solution with the given (a, Q(0)).

    Sampling resolves the fast tail oscillation exp(-i a xi^2 / 2).
    """
    spacing = 2 * np.pi / (max(a, 1e-3) * xi_max) / points_per_wave
    xi = np.arange(spacing, xi_max, spacing)
    q, dq = shoot(params, a, q0, xi, amplitude_bound=1e6)
    return phase_path_from_samples(xi, q, dq)


@dataclass(frozen=True, eq=False)
class HamiltonianStudy:
    k_trunc: np.ndarray
    h_value: np.ndarray


def _subgrid(sol: ProfileSolution, upper: float, n_quad: int | None = None):
    n_quad = n_quad or 2 * sol.grid.n_points - 1
    if upper >= sol.grid.domain_length and n_quad == sol.grid.n_points:
        return sol.grid, sol.q, sol.dq
    sub = build_grid(n_quad, upper)
    q, dq = sol.evaluate(sub.nodes)
    return sub, q, dq


def hamiltonian_integrand(q, dq, sigma):
    return np.abs(dq) ** 2 - np.abs(q) ** (2 * sigma + 2) / (sigma + 1)


def hamiltonian_study(sol: ProfileSolution, k_values, n_quad: int | None = None) -> HamiltonianStudy:
    k_values = np.asarray(k_values, dtype=float)
    if np.any(np.diff(k_values) <= 0):
        raise InvalidArgument("truncation radii must be ascending")
    if k_values.max() > sol.grid.domain_length * (1 + 1e-12):
        raise InvalidArgument("truncation radius exceeds the domain")
    sigma, d = sol.params.sigma, sol.params.d
    out = []
    for k in k_values:
        sub, q, dq = _subgrid(sol, min(k, sol.grid.domain_length), n_quad)
        out.append(integrate_radial(hamiltonian_integrand(q, dq, sigma), sub, d))
    return HamiltonianStudy(k_values, np.array(out))


def c0_predicted(a: float, sigma: float) -> float:
    return ((sigma + 1) * (1 / sigma**2 + 1 / a**2)) ** (1 / (2 * sigma))


def c0_check(sol: ProfileSolution, xi_star: float | None = None):
    """Far-field amplitude |Q| xi^(1/sigma) against the closed form.

    Returns (c_num, c_pred, abs_err, rel_err).
    """
    if abs(sol.params.s_c - 1) > 1e-12:
        raise NotEnergyCritical(f"s_c = {sol.params.s_c} is not 1")
    xi = sol.grid.nodes
    if xi_star is None:
        j = int(np.nonzero(xi <= 0.9 * sol.grid.domain_length)[0][-1])
        xi_star, q_star = xi[j], sol.q[j]
    else:
        q_star = sol.evaluate(xi_star)[0][0]
    c_num = abs(q_star) * xi_star ** (1 / sol.params.sigma)
    c_pred = c0_predicted(sol.a, sol.params.sigma)
    return c_num, c_pred, abs(c_num - c_pred), abs(c_num / c_pred - 1)


def identity_residuals(sol: ProfileSolution, xi: float, n_quad: int | None = None):
    """Residuals of the two integral identities satisfied by every solution."""
    if not 0 < xi <= sol.grid.domain_length:
        raise InvalidArgument("xi must lie in (0, K]")
    sigma, d, a = sol.params.sigma, sol.params.d, sol.a
    sub, q, dq = _subgrid(sol, xi, n_quad)
    abs2 = np.abs(q) ** 2
    int_s_dq2 = integrate_radial(np.abs(dq) ** 2, sub, 2)
    int_s_q2 = integrate_radial(abs2, sub, 2)
    int_s_qp = integrate_radial(abs2 ** (sigma + 1), sub, 2)
    int_im_dqq = integrate_radial((dq * np.conj(q)).imag, sub, 1)
    qe, dqe = q[-1], dq[-1]
    q0sq = abs(q[0]) ** 2
    qe2 = abs(qe) ** 2
    res1 = (
        abs(xi * dqe + qe / sigma) ** 2
        + 2 * (d - 2 - 1 / sigma) * int_s_dq2
        + (2 - 2 / sigma) * int_s_q2
        - (d - 2) / sigma * q0sq
        - xi**2 * qe2
        + ((d - 2) / sigma - 1 / sigma**2) * qe2
        + xi**2 * qe2 ** (sigma + 1) / (sigma + 1)
        + 2 / (sigma * (sigma + 1)) * int_s_qp
    )
    res2 = (
        2 * (xi * dqe * np.conj(qe)).imag
        + 2 * (d - 2) * int_im_dqq
        + 2 * a * (1 / sigma - 1) * int_s_q2
        + a * xi**2 * qe2
    )
    return abs(res1), abs(res2)


def volterra_rhs(q_fn, q0, a, params: ProblemParams, xi: float, n_quad: int = 257):
    """Right-hand side of the Volterra form of the profile equation at ``xi``.

    ``q_fn`` evaluates Q at arbitrary points; no derivatives are used.
    """
    d, sigma = params.d, params.sigma
    sub = build_grid(n_quad, xi)
    s = sub.nodes
    q = q_fn(s)
    local = q0 - 1j * a * integrate_radial(q, sub, 2)
    if abs(d - 2) < 1e-12:
        weight = np.zeros_like(s)
        pos = s > 0
        weight[pos] = s[pos] * (math.log(xi) - np.log(s[pos]))
        coef = 1 + 1j * a * (2 - 1 / sigma)
        return local + integrate_radial((coef - np.abs(q) ** (2 * sigma)) * q * weight, sub, 1)
    weight = s - s ** (d - 1) / xi ** (d - 2)
    coef = 1 + 1j * a * (d - 1 / sigma)
    return local + integrate_radial((coef - np.abs(q) ** (2 * sigma)) * q * weight, sub, 1) / (d - 2)


def volterra_residual(sol: ProfileSolution, xi_max: float = 50.0, n_quad: int = 257) -> float:
    """Sup over nodes in (0, xi_max] of |Q - Volterra RHS|."""
    nodes = sol.grid.nodes
    nodes = nodes[(nodes > 0) & (nodes <= xi_max)]
    if sol.q0 == 0 and not np.any(sol.q):
        return 0.0

    def q_fn(s):
        return cheb_interpolate(sol.grid, sol.q, s)

    q_at = cheb_interpolate(sol.grid, sol.q, nodes)
    worst = 0.0
    for xi, qv in zip(nodes, q_at):
        worst = max(worst, abs(qv - volterra_rhs(q_fn, sol.q[0], sol.a, sol.params, xi, n_quad)))
    return worst


@dataclass(frozen=True, eq=False)
class ScaledProfile:
    """Member of the profile family with prescribed amplitude at the origin."""

    eta: np.ndarray
    q: np.ndarray
    a: float
    scale: float  # ratio target_sup / Q(0)
    source: ProfileSolution = field(repr=False)

    def modulus_at(self, eta):
        """|q~| at ``eta`` via the source profile's polynomial interpolant."""
        xi = np.asarray(eta, dtype=float) * self.scale ** self.source.params.sigma
        return self.scale * np.abs(cheb_interpolate(self.source.grid, self.source.q, xi))


def rescale_family(sol: ProfileSolution, target_sup: float):
    """Rescale Q to amplitude ``target_sup`` at the origin.

    q~(eta) = lam Q(lam^sigma eta) and a~ = a lam^(2 sigma) with
    lam = target_sup / Q(0).  Returns (ScaledProfile, a~).
    """
    if not target_sup > 0:
        raise InvalidArgument("target_sup must be positive")
    sigma = sol.params.sigma
    lam = target_sup / sol.q0
    a_tilde = sol.a * lam ** (2 * sigma)
    prof = ScaledProfile(sol.grid.nodes / lam**sigma, lam * sol.q, a_tilde, lam, sol)
    return prof, a_tilde
