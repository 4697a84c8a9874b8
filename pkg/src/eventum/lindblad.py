"""Deterministic Lindblad evolution: the vacuum mean of the stochastic
dynamics and the oracle for unraveling checks.

The right-hand side is kept in the damping-operator form

    d rho / dt = -K rho - rho K^dagger + sum_j L_j rho L_j^dagger,

which preserves the trace exactly when K + K^dagger = sum_j L_j^dagger L_j
(that normalization is a checked precondition, not an assumption).  For a
continuously observed particle K = (i/hbar) H + (1/2) sum_k lambda_k^2 Q^2
and L_k = lambda_k Q.

Integration is fixed-step RK4 with Hermitian symmetrization after every
step; the deterministic oracle must stay well below the Monte Carlo error
of the trajectory ensembles it is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericalFailureError
from .grid import OperatorSet, SystemParams

__all__ = [
    "DensityMatrix",
    "validate_density",
    "lindblad_rhs",
    "normalization_residual",
    "integrate_lindblad",
    "LindbladTrajectory",
    "coupling_operators",
    "trace_norm",
    "purity",
]


@dataclass(frozen=True)
class DensityMatrix:
    """Dense density matrix with its trace recorded at construction."""

    entries: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=complex)
        object.__setattr__(self, "entries", arr)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise InvalidArgumentError("density matrix must be square")

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.entries)))

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.entries + self.entries.conj().T))[0])


def validate_density(rho: DensityMatrix, trace_expected: Optional[float] = None,
                     herm_tol: float = 1e-10, trace_tol: float = 1e-8,
                     eig_floor: float = -1e-8) -> None:
    """Hermiticity within 1e-10, trace within 1e-8 of its expected value,
    minimum eigenvalue above -1e-8.  Raises on violation."""
    if rho.hermiticity_defect() > herm_tol:
        raise NumericalFailureError(
            f"density hermiticity defect {rho.hermiticity_defect()}")
    if trace_expected is not None and abs(rho.trace - trace_expected) > trace_tol:
        raise NumericalFailureError(
            f"trace {rho.trace} drifted from {trace_expected}")
    low = rho.min_eigenvalue()
    if low < eig_floor:
        raise NumericalFailureError(f"minimum eigenvalue {low} below floor")


def normalization_residual(K: np.ndarray, L_list: Sequence[np.ndarray]) -> float:
    """Spectral norm of K + K^dagger - sum_j L_j^dagger L_j."""
    acc = K + K.conj().T
    for L in L_list:
        acc = acc - L.conj().T @ L
    return float(np.linalg.norm(acc, 2))


def lindblad_rhs(rho: np.ndarray, K: np.ndarray,
                 L_list: Sequence[np.ndarray],
                 check_normalization: bool = True) -> np.ndarray:
    """d rho / dt = -K rho - rho K^dagger + sum_j L_j rho L_j^dagger.

    The normalization K + K^dagger = sum L^dagger L is checked (residual
    <= 1e-10) so that the returned derivative is exactly traceless.
    """
    rho = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    if check_normalization:
        resid = normalization_residual(K, L_list)
        if resid > 1e-10:
            raise InvalidArgumentError(
                f"normalization residual {resid:.3e} exceeds 1e-10; "
                "K + K^dagger must equal sum L^dagger L")
    out = -(K @ rho) - rho @ K.conj().T
    for L in L_list:
        out += L @ rho @ L.conj().T
    return out


@dataclass(frozen=True)
class LindbladTrajectory:
    times: np.ndarray
    states: list  # list[DensityMatrix] at the sample times

    def state_at(self, t: float) -> DensityMatrix:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 + 1e-9 * abs(t):
            raise InvalidArgumentError(f"time {t} not among sampled times")
        return self.states[i]


def integrate_lindblad(rho0, K: np.ndarray, L_list: Sequence[np.ndarray],
                       T: float, dt: float,
                       sample_times: Optional[Sequence[float]] = None,
                       trace_drift_guard: float = 1e-6) -> LindbladTrajectory:
    """Fixed-step RK4 integration of the Lindblad equation on [0, T].

    rho is symmetrized after every step; trace preservation is monitored
    and drift beyond the guard raises a numerical failure suggesting a
    smaller dt.  States are sampled at `sample_times` (default: 0 and T).
    """
    rho = rho0.entries.copy() if isinstance(rho0, DensityMatrix) else \
        np.asarray(rho0, dtype=complex).copy()
    if T < 0 or dt <= 0:
        raise InvalidArgumentError("need T >= 0 and dt > 0")
    resid = normalization_residual(K, L_list)
    if resid > 1e-10:
        raise InvalidArgumentError(
            f"normalization residual {resid:.3e} exceeds 1e-10")
    n_steps = int(round(T / dt)) if T > 0 else 0
    if T > 0 and abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise InvalidArgumentError("T must be an integer number of dt steps")
    if sample_times is None:
        sample_times = [0.0, T] if T > 0 else [0.0]
    sample_steps = {}
    for t in sample_times:
        k = int(round(t / dt)) if dt > 0 else 0
        if abs(k * dt - t) > 1e-9 * max(1.0, T) or not (0 <= k <= n_steps):
            raise InvalidArgumentError(f"sample time {t} not on the step grid")
        sample_steps[k] = t

    trace0 = float(np.real(np.trace(rho)))
    out_times, out_states = [], []

    def rhs(r):
        return lindblad_rhs(r, K, L_list, check_normalization=False)

    for k in range(n_steps + 1):
        if k in sample_steps:
            out_times.append(sample_steps[k])
            out_states.append(DensityMatrix(rho.copy()))
        if k == n_steps:
            break
        k1 = rhs(rho)
        k2 = rhs(rho + 0.5 * dt * k1)
        k3 = rhs(rho + 0.5 * dt * k2)
        k4 = rhs(rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        drift = abs(float(np.real(np.trace(rho))) - trace0)
        if drift > trace_drift_guard or not np.all(np.isfinite(rho.real)):
            raise NumericalFailureError(
                f"trace drifted by {drift:.3e} at step {k + 1}; reduce dt")
    return LindbladTrajectory(times=np.asarray(out_times), states=out_states)


def coupling_operators(ops: OperatorSet, params: SystemParams):
    """K and L_list for position coupling: L_k = lambda_k Q,
    K = (i/hbar) H + (1/2) sum_k lambda_k^2 Q^2."""
    q2 = ops.Q @ ops.Q
    K = (1j / params.hbar) * ops.H + 0.5 * params.lam_total_sq * q2
    L_list = [lam * ops.Q for lam in params.lambdas]
    return K, L_list


def trace_norm(a: np.ndarray) -> float:
    """Sum of absolute eigenvalues of a Hermitian matrix (trace norm)."""
    h = 0.5 * (a + a.conj().T)
    return float(np.sum(np.abs(np.linalg.eigvalsh(h))))


def purity(rho: DensityMatrix) -> float:
    m = rho.entries
    return float(np.real(np.trace(m @ m)))


def write_lindblad_csv(traj: LindbladTrajectory, ops: OperatorSet, fileobj) -> None:
    """Emit (t, trace, purity, <Q>, dispersion(Q)) rows for the sampled states."""
    x = ops.x
    fileobj.write("t,trace,purity,q_mean,q_dispersion\n")
    for t, rho in zip(traj.times, traj.states):
        m = rho.entries
        tr = rho.trace
        q = float(np.real(np.sum(x * np.diag(m).real)) / tr)
        q2 = float(np.real(np.sum(x ** 2 * np.diag(m).real)) / tr)
        row = (float(t), tr, purity(rho) / tr ** 2, q, max(q2 - q ** 2, 0.0))
        fileobj.write(",".join(repr(v) for v in row) + "\n")
