"""Euler-Maruyama integration of the stochastic decoherence equation and
of the nonlinear posterior (state-diffusion) equation.

Linear (decoherence) form, for unnormalized states, driven by input noise:

    d psi = -((i/hbar) H + (1/2) sum_k lambda_k^2 Q^2) psi dt
            + sum_k lambda_k Q psi dw_k

Nonlinear posterior form, for unit states, driven by the innovations:

    d psi = -((i/hbar) H + (1/2) sum_k lambda_k^2 Qt^2) psi dt
            + sum_k lambda_k Qt psi dwt_k,      Qt = Q - <Q>,

with per-step renormalization.  Both integrators record the measurement
bookkeeping per channel:

    x_hat_k = 2 lambda_k <Q>      (from the normalized state)
    dwt_k   = dw_k - x_hat_k dt   (innovations)
    dY_k    = x_hat_k dt + dwt_k  (output record)

so dY - dwt = x_hat dt holds bit-exactly as constructed.  The linear
solution's squared norm is the likelihood density of the output record;
its ensemble mean is an isometry check, and the ensemble of outer products
is the unraveling of the Lindblad flow.

Trajectories are batched column-wise ((n, batch) arrays, one GEMM per
step); each trajectory owns a counter-based noise stream so ensembles are
reproducible and safe to chunk across threads.  Ensemble reductions sum in
trajectory-index order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericalFailureError
from .grid import GridSpec, OperatorSet, SystemParams, WaveFunction, apply_momentum
from .lindblad import DensityMatrix
from .noise import NoisePath, sample_noise_path

__all__ = [
    "NoisePath",
    "sample_noise_path",
    "TrajectoryRecord",
    "integrate_linear",
    "integrate_posterior",
    "integrate_ensemble",
    "ensemble_density",
    "write_trajectory_csv",
    "NORM_SQ_FLOOR",
    "NORM_SQ_CEIL",
]

NORM_SQ_FLOOR = 1e-12
NORM_SQ_CEIL = 1e12


@dataclass(frozen=True)
class TrajectoryRecord:
    """Time series of one noise realization.

    Moment arrays have one entry per step boundary (n_steps + 1); the
    increment arrays have one row per step of shape (n_steps, d).  States
    are decimated: `stored_steps` lists the step indices whose amplitudes
    appear in `states`.  `q_mean`, `p_mean`, `q_dispersion` are posterior
    (normalized-state) moments even for the linear integrator, whose raw
    norm^2 is tracked separately in `norms_sq`.
    """

    kind: str
    grid: GridSpec
    dt: float
    trajectory_index: int
    times: np.ndarray
    norms_sq: np.ndarray
    q_mean: np.ndarray
    p_mean: np.ndarray
    q_dispersion: np.ndarray
    x_hat: np.ndarray
    output_increments: np.ndarray
    input_increments: np.ndarray
    innovation_increments: np.ndarray
    stored_steps: np.ndarray
    states: np.ndarray
    frame_offsets: Optional[np.ndarray] = None

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def d(self) -> int:
        return self.x_hat.shape[1]

    def state_at_step(self, step: int) -> WaveFunction:
        pos = np.searchsorted(self.stored_steps, step)
        if pos >= len(self.stored_steps) or self.stored_steps[pos] != step:
            raise InvalidArgumentError(f"step {step} not stored (stride decimation)")
        return WaveFunction(self.states[pos].copy(), self.grid)


def _stored_steps(n_steps: int, stride: int) -> np.ndarray:
    steps = list(range(0, n_steps + 1, max(stride, 1)))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return np.asarray(steps, dtype=int)


def _check_psi0(psi0: WaveFunction, ops: OperatorSet) -> np.ndarray:
    if psi0.grid != ops.grid:
        raise InvalidArgumentError("state and operators live on different grids")
    if abs(psi0.norm_sq - 1.0) > 1e-6:
        raise InvalidArgumentError(f"initial state norm^2 = {psi0.norm_sq}, expected 1")
    return np.asarray(psi0.amplitudes, dtype=complex)


def _integrate_batch(kind: str, psi0: np.ndarray, ops: OperatorSet,
                     params: SystemParams, increments: np.ndarray, dt: float,
                     store_stride: int, recenter: bool):
    """Shared stepping core over a (n, batch) state block.

    increments: (n_steps, d, batch) Wiener increments (input noise for the
    linear equation, innovations for the posterior equation).
    Returns per-batch moment arrays and stored states.
    """
    if kind not in ("linear", "posterior"):
        raise InvalidArgumentError(f"unknown integrator kind {kind!r}")
    if recenter and kind != "posterior":
        raise InvalidArgumentError("recentering applies to the posterior integrator only")
    if recenter and params.potential.kind != "free":
        raise InvalidArgumentError("recentering requires the free potential")

    n_steps, d, batch = increments.shape
    lambdas = params.lambdas
    if d != params.d:
        raise InvalidArgumentError(f"noise has {d} channels, params have {params.d}")
    grid, hbar = ops.grid, params.hbar
    x = grid.x[:, None]
    dx = grid.dx
    lam2 = params.lam_total_sq
    H = ops.H

    psi = np.repeat(psi0[:, None], batch, axis=1) if psi0.ndim == 1 else psi0.copy()
    stored = _stored_steps(n_steps, store_stride)
    stored_set = set(int(s) for s in stored)

    norms = np.empty((n_steps + 1, batch))
    qm = np.empty((n_steps + 1, batch))
    pm = np.empty((n_steps + 1, batch))
    qd = np.empty((n_steps + 1, batch))
    xh = np.empty((n_steps, d, batch))
    states = np.empty((len(stored), grid.n, batch), dtype=complex)
    offsets = np.zeros(batch)
    offs = np.zeros((n_steps + 1, batch)) if recenter else None
    store_pos = 0

    # self-weight of the recentring trigger: shift once the on-grid mean
    # leaves a few cells, so rolls stay rare and tails stay buried
    recenter_cells = 4

    for k in range(n_steps + 1):
        dens = np.abs(psi) ** 2
        nrm2 = dens.sum(axis=0) * dx
        if not np.all(np.isfinite(nrm2)):
            raise NumericalFailureError(f"non-finite state norm at step {k}")
        if np.any(nrm2 < NORM_SQ_FLOOR) or np.any(nrm2 > NORM_SQ_CEIL):
            raise NumericalFailureError(
                f"norm^2 left [{NORM_SQ_FLOOR}, {NORM_SQ_CEIL}] at step {k}; "
                "blowup guard tripped (check dt)")
        q_grid = (x * dens).sum(axis=0) * dx / nrm2
        q2 = (x ** 2 * dens).sum(axis=0) * dx / nrm2
        p_val = (np.conj(psi) * apply_momentum(psi, grid, hbar)).sum(axis=0).real * dx / nrm2

        norms[k] = nrm2
        qm[k] = q_grid + offsets
        pm[k] = p_val
        qd[k] = np.maximum(q2 - q_grid ** 2, 0.0)
        if k in stored_set:
            states[store_pos] = psi
            store_pos += 1
        if offs is not None:
            offs[k] = offsets
        if k == n_steps:
            break

        x_hat = 2.0 * lambdas[:, None] * (q_grid + offsets)[None, :]
        xh[k] = x_hat

        dw = increments[k]                       # (d, batch)
        lam_dw = (lambdas[:, None] * dw).sum(axis=0)   # (batch,)
        h_psi = H @ psi
        if kind == "linear":
            drift = (-1j / hbar) * h_psi - (0.5 * lam2) * (x ** 2) * psi
            psi = psi + drift * dt + x * psi * lam_dw[None, :]
        else:
            xt = x - q_grid[None, :]
            drift = (-1j / hbar) * h_psi - (0.5 * lam2) * (xt ** 2) * psi
            psi = psi + drift * dt + xt * psi * lam_dw[None, :]
            step_nrm2 = (np.abs(psi) ** 2).sum(axis=0) * dx
            if np.any(step_nrm2 < NORM_SQ_FLOOR) or not np.all(np.isfinite(step_nrm2)):
                raise NumericalFailureError(f"posterior step collapsed at step {k}")
            psi = psi / np.sqrt(step_nrm2)[None, :]
            if recenter:
                new_q = ((x[:, 0:1] * np.abs(psi) ** 2).sum(axis=0) * dx)
                shift_cells = np.rint(new_q / dx).astype(int)
                shift_cells[np.abs(shift_cells) < recenter_cells] = 0
                if np.any(shift_cells):
                    cols = np.nonzero(shift_cells)[0]
                    idx = (np.arange(grid.n)[:, None] + shift_cells[cols][None, :]) % grid.n
                    psi[:, cols] = psi[idx, cols[None, :]]
                    offsets = offsets + shift_cells * dx

    return norms, qm, pm, qd, xh, stored, states, offs


def _records_from_batch(kind, grid, dt, paths, batch_out, innovations_from):
    norms, qm, pm, qd, xh, stored, states, offs = batch_out
    n_steps = norms.shape[0] - 1
    times = dt * np.arange(n_steps + 1)
    records = []
    for b, path in enumerate(paths):
        x_hat = np.ascontiguousarray(xh[:, :, b])
        driving = path.increments
        if innovations_from == "driving":
            dwt = driving
            d_y = x_hat * dt + dwt
            dw = x_hat * dt + dwt
        else:
            dw = driving
            dwt = dw - x_hat * dt
            d_y = x_hat * dt + dwt
        records.append(TrajectoryRecord(
            kind=kind, grid=grid, dt=dt, trajectory_index=path.trajectory_index,
            times=times, norms_sq=norms[:, b].copy(), q_mean=qm[:, b].copy(),
            p_mean=pm[:, b].copy(), q_dispersion=qd[:, b].copy(), x_hat=x_hat,
            output_increments=d_y, input_increments=dw,
            innovation_increments=dwt, stored_steps=stored,
            states=np.ascontiguousarray(states[:, :, b]),
            frame_offsets=None if offs is None else offs[:, b].copy()))
    return records


def integrate_linear(psi0: WaveFunction, ops: OperatorSet, params: SystemParams,
                     path: NoisePath, store_stride: int = 1) -> TrajectoryRecord:
    """Integrate the linear decoherence equation along one input-noise path.

    States are stored unnormalized (their norm^2 is the output-record
    likelihood); the output record dY uses the posterior mean of the
    normalized state.
    """
    amp = _check_psi0(psi0, ops)
    inc = path.increments[:, :, None]  # (n_steps, d, 1)
    out = _integrate_batch("linear", amp, ops, params, inc, path.dt,
                           store_stride, recenter=False)
    return _records_from_batch("linear", ops.grid, path.dt, [path], out,
                               innovations_from="input")[0]


def integrate_posterior(psi0: WaveFunction, ops: OperatorSet,
                        params: SystemParams, path: NoisePath,
                        store_stride: int = 1,
                        recenter: bool = False) -> TrajectoryRecord:
    """Integrate the nonlinear posterior equation driven by innovations.

    The state is renormalized every step; the output record is rebuilt as
    dY = x_hat dt + dwt.  With `recenter` (free potential only) the packet
    is kept near the grid center by exact cell shifts and the recorded
    q_mean includes the accumulated frame offset; dispersions and
    innovations are translation invariant, so long collapse runs stay on a
    modest grid.
    """
    amp = _check_psi0(psi0, ops)
    inc = path.increments[:, :, None]
    out = _integrate_batch("posterior", amp, ops, params, inc, path.dt,
                           store_stride, recenter=recenter)
    return _records_from_batch("posterior", ops.grid, path.dt, [path], out,
                               innovations_from="driving")[0]


def _worker_count(n_workers: Optional[int]) -> int:
    if n_workers is not None:
        return max(1, int(n_workers))
    env = os.environ.get("EVENTUM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidArgumentError(f"EVENTUM_THREADS={env!r} is not an integer")
    return 1


def integrate_ensemble(kind: str, psi0: WaveFunction, ops: OperatorSet,
                       params: SystemParams, n_trajectories: int, dt: float,
                       n_steps: int, master_seed: int,
                       store_stride: Optional[int] = None,
                       recenter: bool = False,
                       paths: Optional[Sequence[NoisePath]] = None,
                       n_workers: Optional[int] = None) -> list:
    """Integrate an ensemble of independent trajectories.

    Noise paths are drawn per trajectory index from the counter-based
    stream keyed by `master_seed` (or supplied explicitly).  Trajectories
    are batched column-wise; with several workers the batch is chunked and
    results are reassembled in index order, so the record list is always
    ordered by trajectory index.
    """
    amp = _check_psi0(psi0, ops)
    if store_stride is None:
        store_stride = max(n_steps, 1)
    if paths is None:
        paths = [sample_noise_path(master_seed, i, dt, n_steps, params.d)
                 for i in range(n_trajectories)]
    else:
        paths = list(paths)
        if len(paths) != n_trajectories:
            raise InvalidArgumentError("paths length must equal n_trajectories")

    def run_chunk(chunk):
        inc = np.stack([p.increments for p in chunk], axis=2)  # (steps, d, B)
        out = _integrate_batch(kind, amp, ops, params, inc, dt,
                               store_stride, recenter)
        return _records_from_batch(
            kind, ops.grid, dt, chunk, out,
            innovations_from="driving" if kind == "posterior" else "input")

    workers = _worker_count(n_workers)
    if workers == 1 or n_trajectories <= 1:
        return run_chunk(paths)
    chunk_size = math.ceil(n_trajectories / workers)
    chunks = [paths[i:i + chunk_size] for i in range(0, n_trajectories, chunk_size)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run_chunk, chunks))
    records = []
    for part in results:
        records.extend(part)
    return records


def ensemble_density(trajectories: Sequence[TrajectoryRecord],
                     sample_times: Iterable[float]) -> list:
    """Measure-weighted mean of the outer products psi psi^dagger dx.

    Expects linear (unnormalized) trajectory records sharing grid, dt, and
    stored steps; the outer-product weight of each path is its likelihood
    norm^2, carried implicitly by the unnormalized amplitudes.  Returns one
    Hermitian DensityMatrix per sample time; the trace is the ensemble
    mean norm^2 (1 up to Monte Carlo error for an isometric flow).
    """
    trajectories = list(trajectories)
    if not trajectories:
        raise InvalidArgumentError("empty ensemble")
    first = trajectories[0]
    for rec in trajectories:
        if rec.grid != first.grid or rec.dt != first.dt or \
                not np.array_equal(rec.stored_steps, first.stored_steps):
            raise InvalidArgumentError("trajectories do not share grid/dt/samples")
    dx = first.grid.dx
    out = []
    for t in sample_times:
        step = int(round(t / first.dt))
        if abs(step * first.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise InvalidArgumentError(f"sample time {t} not on the step grid")
        pos = np.searchsorted(first.stored_steps, step)
        if pos >= len(first.stored_steps) or first.stored_steps[pos] != step:
            raise InvalidArgumentError(f"step {step} not stored in the records")
        block = np.stack([rec.states[pos] for rec in trajectories], axis=1)
        rho = (block @ block.conj().T) * (dx / len(trajectories))
        rho = 0.5 * (rho + rho.conj().T)
        out.append(DensityMatrix(rho))
    return out


def write_trajectory_csv(records, fileobj, include_index: bool = True) -> None:
    """Emit trajectory records as CSV.

    Columns: [trajectory_index,] t, norm_sq, q_mean, p_mean, q_dispersion,
    dY_1..d, dw_1..d, dwt_1..d.  The first row of each trajectory carries
    the initial moments with zero increments; subsequent rows carry
    end-of-step moments and that step's increments.  Floats are written
    with shortest round-trip formatting, so identical runs produce
    identical bytes.
    """
    if isinstance(records, TrajectoryRecord):
        records = [records]
    d = records[0].d
    cols = ["t", "norm_sq", "q_mean", "p_mean", "q_dispersion"]
    cols += [f"dY_{k + 1}" for k in range(d)]
    cols += [f"dw_{k + 1}" for k in range(d)]
    cols += [f"dwt_{k + 1}" for k in range(d)]
    if include_index:
        cols = ["trajectory_index"] + cols
    fileobj.write(",".join(cols) + "\n")
    for rec in records:
        zeros = [0.0] * (3 * d)
        for k in range(rec.n_steps + 1):
            row = [rec.times[k], rec.norms_sq[k], rec.q_mean[k],
                   rec.p_mean[k], rec.q_dispersion[k]]
            if k == 0:
                row += zeros
            else:
                j = k - 1
                row += list(rec.output_increments[j])
                row += list(rec.input_increments[j])
                row += list(rec.innovation_increments[j])
            cells = [repr(float(v)) for v in row]
            if include_index:
                cells = [str(rec.trajectory_index)] + cells
            fileobj.write(",".join(cells) + "\n")
