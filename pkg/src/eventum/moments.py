"""Closed-moment (Gaussian) oracle for the posterior dynamics.

For the position-coupled posterior equation with L_k = lambda_k Q the
first and second posterior moments of a Gaussian state close on
themselves (see docs/moment_filter.md for the derivation):

    dq   = v dt                      + 2 Vqq sum_k lambda_k dwt_k
    dv   = -<phi'(Q)>/m dt           + (2 Vqp / m) sum_k lambda_k dwt_k
    dVqq = ( 2 Vqp / m - 4 L2 Vqq^2 ) dt
    dVqp = ( Vpp / m - m w^2 Vqq - 4 L2 Vqq Vqp ) dt
    dVpp = ( hbar^2 L2 - 2 m w^2 Vqp - 4 L2 Vqp^2 ) dt

with L2 = sum_k lambda_k^2 and w^2 the quadratic-potential curvature
(zero for free and linear potentials).  The covariance flow is
deterministic and autonomous; the mean is a diffusion driven by the
innovations with gain proportional to the covariances.

For the free particle the flow has a unique attracting fixed point

    Vqp* = hbar / 2
    Vqq* = sqrt(hbar / m) / (2 Lambda) = kappa / (2 Lambda^2)
    Vpp* = Lambda hbar sqrt(hbar m)

(Lambda = sqrt(L2), kappa = Lambda sqrt(hbar/m)), which saturates the
purity identity Vqq Vpp - Vqp^2 = hbar^2/4; the identity itself is
invariant under the flow (d/dt of the defect is -4 L2 Vqq times the
defect), so the Heisenberg floor is preserved.

In the stationary-gain regime the posterior mean follows the damped
oscillator

    z'' + 2 kappa z' + 2 kappa^2 z = -g(t)

for the deviation z(t) = q(t) - x(t) from the expected input trajectory
x(t) with forcing g = x''.  Its characteristic roots are -kappa (1 -+ i),
so for g = 0

    z(t) = exp(-kappa t) (A cos kappa t + B sin kappa t),
    A = z(0),  B = z(0) + z'(0) / kappa,

and the mean collapses onto the straight input trajectory x(t) = u t - q
as

    q(t) = u t + exp(-kappa t) (q cos kappa t
           + (q + (v0 - u)/kappa) sin kappa t) - q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgumentError
from .grid import SystemParams
from .noise import NoisePath

__all__ = [
    "GaussianPosterior",
    "DeviationSolution",
    "solve_deviation",
    "ode_residual",
    "explicit_mean",
    "covariance_flow",
    "GaussianFilterTrajectory",
    "integrate_gaussian_filter",
    "RiccatiFixedPoint",
    "riccati_stationary",
    "riccati_report",
]


@dataclass(frozen=True)
class GaussianPosterior:
    """Posterior mean position/velocity and symmetric covariances."""

    q: float
    v: float
    vqq: float
    vqp: float
    vpp: float

    def __post_init__(self):
        if self.vqq < 0 or self.vpp < 0:
            raise InvalidArgumentError("variances must be nonnegative")

    def heisenberg_defect(self, hbar: float) -> float:
        """Vqq Vpp - Vqp^2 - (hbar/2)^2; >= 0 for physical Gaussians."""
        return self.vqq * self.vpp - self.vqp ** 2 - (hbar / 2.0) ** 2

    def satisfies_floor(self, hbar: float, slack: float = 1e-6) -> bool:
        return self.vqq * self.vpp - self.vqp ** 2 >= (hbar / 2.0) ** 2 * (1.0 - slack)

    @staticmethod
    def from_packet(q0: float, p0: float, width: float, m: float,
                    hbar: float) -> "GaussianPosterior":
        """Moments of a minimum-uncertainty packet of the given width."""
        vqq = width ** 2
        return GaussianPosterior(q=q0, v=p0 / m, vqq=vqq, vqp=0.0,
                                 vpp=(hbar / 2.0) ** 2 / vqq)


@dataclass(frozen=True)
class DeviationSolution:
    """Solution z(t) of z'' + 2 kappa z' + 2 kappa^2 z = -g(t).

    The closed-form branch (g absent) is exact; the forced branch holds a
    dense RK4 solution with cubic Hermite evaluation between nodes.
    """

    kappa: float
    z0: float
    zp0: float
    forcing: Optional[Callable[[float], float]] = None
    _ts: Optional[np.ndarray] = None
    _zs: Optional[np.ndarray] = None
    _zps: Optional[np.ndarray] = None

    @property
    def closed_form(self) -> bool:
        return self.forcing is None

    def _coeffs(self):
        a = self.z0
        b = self.z0 + self.zp0 / self.kappa
        return a, b

    def z(self, t):
        t = np.asarray(t, dtype=float)
        if self.closed_form:
            a, b = self._coeffs()
            k = self.kappa
            return np.exp(-k * t) * (a * np.cos(k * t) + b * np.sin(k * t))
        return self._interp(t, 0)

    def z_prime(self, t):
        t = np.asarray(t, dtype=float)
        if self.closed_form:
            a, b = self._coeffs()
            k = self.kappa
            c, s = np.cos(k * t), np.sin(k * t)
            return np.exp(-k * t) * (k * (b - a) * c - k * (a + b) * s)
        return self._interp(t, 1)

    def _interp(self, t, order):
        ts, zs, zps = self._ts, self._zs, self._zps
        if np.any(t < ts[0] - 1e-12) or np.any(t > ts[-1] + 1e-12):
            raise InvalidArgumentError("t outside the integrated span")
        h = ts[1] - ts[0]
        i = np.clip(((t - ts[0]) / h).astype(int), 0, len(ts) - 2)
        s = (t - ts[i]) / h
        z0, z1 = zs[i], zs[i + 1]
        p0, p1 = zps[i] * h, zps[i + 1] * h
        if order == 0:
            h00 = (1 + 2 * s) * (1 - s) ** 2
            h10 = s * (1 - s) ** 2
            h01 = s ** 2 * (3 - 2 * s)
            h11 = s ** 2 * (s - 1)
            return h00 * z0 + h10 * p0 + h01 * z1 + h11 * p1
        d00 = 6 * s * (s - 1)
        d10 = (1 - s) * (1 - 3 * s)
        d01 = -6 * s * (s - 1)
        d11 = s * (3 * s - 2)
        return (d00 * z0 + d10 * p0 + d01 * z1 + d11 * p1) / h


def solve_deviation(kappa: float, z0: float, zp0: float,
                    g: Optional[Callable[[float], float]] = None,
                    t_max: float = 20.0, n_steps: int = 20_000) -> DeviationSolution:
    """Solve the deviation ODE; closed form for g absent, RK4 otherwise."""
    if kappa <= 0:
        raise InvalidArgumentError("kappa must be positive")
    if g is None:
        return DeviationSolution(kappa=kappa, z0=z0, zp0=zp0)
    h = t_max / n_steps
    ts = np.linspace(0.0, t_max, n_steps + 1)
    zs = np.empty(n_steps + 1)
    zps = np.empty(n_steps + 1)
    zs[0], zps[0] = z0, zp0

    def f(t, y):
        z, zp = y
        return np.array([zp, -2.0 * kappa * zp - 2.0 * kappa ** 2 * z - g(t)])

    y = np.array([z0, zp0], dtype=float)
    for k in range(n_steps):
        t = ts[k]
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        zs[k + 1], zps[k + 1] = y
    return DeviationSolution(kappa=kappa, z0=z0, zp0=zp0, forcing=g,
                             _ts=ts, _zs=zs, _zps=zps)


def ode_residual(sol: DeviationSolution, t_grid: np.ndarray) -> float:
    """Max |z'' + 2 kappa z' + 2 kappa^2 z + g| measured by fourth-order
    central differences, independent of how z was produced."""
    t = np.asarray(t_grid, dtype=float)
    h = min(1e-2 / sol.kappa, (t.max() - t.min()) / 64) if t.size > 1 else 1e-3
    g = sol.forcing or (lambda _t: 0.0)
    worst = 0.0
    for ti in t:
        pts = ti + h * np.arange(-2, 3)
        if pts[0] < 0:
            pts = pts - pts[0]
        z = sol.z(pts)
        zp = (z[0] - 8 * z[1] + 8 * z[3] - z[4]) / (12 * h)
        zpp = (-z[0] + 16 * z[1] - 30 * z[2] + 16 * z[3] - z[4]) / (12 * h ** 2)
        mid = pts[2]
        resid = zpp + 2 * sol.kappa * zp + 2 * sol.kappa ** 2 * sol.z(mid) + g(float(mid))
        worst = max(worst, abs(float(resid)))
    return worst


def explicit_mean(u: float, q: float, v0: float, kappa: float, t) -> float:
    """Posterior mean position along a straight expected input trajectory.

    Equals x(t) + z(t) with x(t) = u t - q and z solving the deviation ODE
    from z(0) = q, z'(0) = v0 - u; tends to x(t) as t grows (the mean
    collapses onto the expected input trajectory at rate kappa).
    """
    if kappa <= 0:
        raise InvalidArgumentError("kappa must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise InvalidArgumentError("t must be nonnegative")
    k = kappa
    val = u * t + np.exp(-k * t) * (q * np.cos(k * t)
                                    + (q + (v0 - u) / k) * np.sin(k * t)) - q
    return float(val) if val.ndim == 0 else val


def _covariance_rhs(vqq, vqp, vpp, params: SystemParams):
    l2 = params.lam_total_sq
    m = params.m
    w2 = params.potential.coefficient ** 2 if params.potential.kind == "quadratic" else 0.0
    dvqq = 2.0 * vqp / m - 4.0 * l2 * vqq ** 2
    dvqp = vpp / m - m * w2 * vqq - 4.0 * l2 * vqq * vqp
    dvpp = params.hbar ** 2 * l2 - 2.0 * m * w2 * vqp - 4.0 * l2 * vqp ** 2
    return dvqq, dvqp, dvpp


def covariance_flow(params: SystemParams, start: GaussianPosterior,
                    dt: float, n_steps: int) -> np.ndarray:
    """RK4 integration of the deterministic covariance (Riccati) flow.

    Returns an array of shape (n_steps + 1, 3) with columns Vqq, Vqp, Vpp.
    """
    if params.potential.kind not in ("free", "linear", "quadratic"):
        raise InvalidArgumentError("unsupported potential")
    out = np.empty((n_steps + 1, 3))
    y = np.array([start.vqq, start.vqp, start.vpp], dtype=float)
    out[0] = y

    def f(y_):
        return np.array(_covariance_rhs(y_[0], y_[1], y_[2], params))

    for k in range(n_steps):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = y
    return out


@dataclass(frozen=True)
class GaussianFilterTrajectory:
    times: np.ndarray
    q: np.ndarray
    v: np.ndarray
    vqq: np.ndarray
    vqp: np.ndarray
    vpp: np.ndarray

    def moments_at(self, step: int) -> GaussianPosterior:
        return GaussianPosterior(q=float(self.q[step]), v=float(self.v[step]),
                                 vqq=float(self.vqq[step]),
                                 vqp=float(self.vqp[step]),
                                 vpp=float(self.vpp[step]))


def integrate_gaussian_filter(params: SystemParams, start: GaussianPosterior,
                              path: NoisePath) -> GaussianFilterTrajectory:
    """Advance the closed-moment filter along one innovation path.

    The covariances follow the deterministic RK4 flow; the means take
    Euler-Maruyama steps with gains 2 Vqq and 2 Vqp / m against the same
    increments that drive the grid-level posterior integrator, which makes
    the two directly comparable path by path.
    """
    if params.potential.kind not in ("free", "linear", "quadratic"):
        raise InvalidArgumentError("unsupported potential")
    lambdas = params.lambdas
    if path.d != params.d:
        raise InvalidArgumentError(
            f"noise has {path.d} channels, params have {params.d}")
    n_steps, dt = path.n_steps, path.dt
    cov = covariance_flow(params, start, dt, n_steps)
    q = np.empty(n_steps + 1)
    v = np.empty(n_steps + 1)
    q[0], v[0] = start.q, start.v
    m = params.m
    for k in range(n_steps):
        lam_dw = float(lambdas @ path.increments[k])
        grad = params.potential.gradient_mean(q[k], m)
        vqq, vqp = cov[k, 0], cov[k, 1]
        q[k + 1] = q[k] + v[k] * dt + 2.0 * vqq * lam_dw
        v[k + 1] = v[k] - grad / m * dt + 2.0 * vqp / m * lam_dw
    times = dt * np.arange(n_steps + 1)
    return GaussianFilterTrajectory(times=times, q=q, v=v, vqq=cov[:, 0],
                                    vqp=cov[:, 1], vpp=cov[:, 2])


@dataclass(frozen=True)
class RiccatiFixedPoint:
    """Stationary posterior covariances of the free-particle filter."""

    vqq: float
    vqp: float
    vpp: float
    kappa: float
    scale_two_kappa: float  # the 2 lambda sqrt(hbar/m) combination, reported
    # alongside the computed fixed point for comparison, never asserted


def riccati_stationary(params: SystemParams) -> RiccatiFixedPoint:
    """Closed-form attracting fixed point of the free covariance flow.

    Solving the stationarity equations of the covariance flow:
    Vqp* = hbar/2, Vqq* = sqrt(hbar/m) / (2 Lambda), Vpp* = Lambda hbar
    sqrt(hbar m).  Undefined for lambda = 0 (free spreading never
    localizes), which raises instead of returning a number.
    """
    if params.potential.kind != "free":
        raise InvalidArgumentError("stationary covariances exist for the free potential only")
    lam = math.sqrt(params.lam_total_sq)
    if lam == 0.0:
        raise InvalidArgumentError(
            "lambda = 0 has no stationary point: dispersion spreads freely")
    hbar, m = params.hbar, params.m
    vqp = hbar / 2.0
    vqq = math.sqrt(hbar / m) / (2.0 * lam)
    vpp = lam * hbar * math.sqrt(hbar * m)
    return RiccatiFixedPoint(vqq=vqq, vqp=vqp, vpp=vpp, kappa=params.kappa,
                             scale_two_kappa=2.0 * lam * math.sqrt(hbar / m))


def riccati_report(params: SystemParams) -> dict:
    """JSON-ready report with the computed fixed point and, side by side,
    the kappa-scaled constant 2 lambda sqrt(hbar/m) quoted for the
    stationary dispersion; the two are reported without asserting equality
    (their units differ under the natural reading)."""
    fp = riccati_stationary(params)
    return {
        "vqq_stationary": fp.vqq,
        "vqp_stationary": fp.vqp,
        "vpp_stationary": fp.vpp,
        "kappa": fp.kappa,
        "purity_defect": fp.vqq * fp.vpp - fp.vqp ** 2 - (params.hbar / 2) ** 2,
        "quoted_scale_two_lambda_sqrt_hbar_over_m": fp.scale_two_kappa,
    }
