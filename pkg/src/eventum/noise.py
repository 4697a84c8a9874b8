"""Reproducible Wiener increment streams.

Increments come from counter-based Philox generators keyed by
(master_seed, stream_tag, trajectory_index), so a path is a pure function
of those three integers: identical inputs give bitwise-identical arrays,
distinct trajectory indices give statistically independent streams, and no
generator state is shared between trajectories (safe for parallel
ensembles).

Stream tags keep the Gaussian driving noise, the uniform outcome draws of
the repeated-interaction model, and the shared coupling normals on
non-overlapping keys.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "GAUSSIAN_STREAM",
    "UNIFORM_STREAM",
    "COUPLING_STREAM",
    "NoisePath",
    "generator_for",
    "sample_noise_path",
    "sample_standard_normals",
    "sample_uniforms",
    "coarsen",
]

GAUSSIAN_STREAM = 1
UNIFORM_STREAM = 2
COUPLING_STREAM = 3


def generator_for(master_seed: int, trajectory_index: int,
                  stream: int = GAUSSIAN_STREAM) -> np.random.Generator:
    """Philox generator keyed by (master_seed, stream, trajectory_index)."""
    if trajectory_index < 0 or trajectory_index >= 2 ** 48:
        raise InvalidArgumentError("trajectory_index out of range")
    key = np.array([np.uint64(master_seed % 2 ** 64),
                    (np.uint64(stream) << np.uint64(48))
                    | np.uint64(trajectory_index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class NoisePath:
    """Wiener increments dw ~ Normal(0, dt), shape (n_steps, d).

    Reproducible from (seed, trajectory_index) alone; see module docstring.
    """

    seed: int
    trajectory_index: int
    dt: float
    n_steps: int
    increments: np.ndarray

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        object.__setattr__(self, "increments", inc)
        if self.dt <= 0:
            raise InvalidArgumentError("dt must be positive")
        if self.n_steps < 1:
            raise InvalidArgumentError("need n_steps >= 1")
        if inc.shape[0] != self.n_steps or inc.ndim != 2:
            raise InvalidArgumentError(
                f"increments shape {inc.shape} incompatible with n_steps={self.n_steps}")

    @property
    def d(self) -> int:
        return self.increments.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


def sample_noise_path(master_seed: int, trajectory_index: int, dt: float,
                      n_steps: int, d: int = 1) -> NoisePath:
    """Sample one trajectory's Wiener increments deterministically."""
    if dt <= 0:
        raise InvalidArgumentError("dt must be positive")
    if n_steps < 1:
        raise InvalidArgumentError("need n_steps >= 1")
    rng = generator_for(master_seed, trajectory_index, GAUSSIAN_STREAM)
    inc = rng.normal(0.0, np.sqrt(dt), size=(n_steps, d))
    return NoisePath(seed=master_seed, trajectory_index=trajectory_index,
                     dt=dt, n_steps=n_steps, increments=inc)


def sample_standard_normals(master_seed: int, trajectory_index: int,
                            shape, stream: int = COUPLING_STREAM) -> np.ndarray:
    """Standard normals from a tagged deterministic stream."""
    rng = generator_for(master_seed, trajectory_index, stream)
    return rng.normal(size=shape)


def sample_uniforms(master_seed: int, trajectory_index: int, shape,
                    stream: int = UNIFORM_STREAM) -> np.ndarray:
    """Uniform(0, 1) draws from a tagged deterministic stream."""
    rng = generator_for(master_seed, trajectory_index, stream)
    return rng.random(size=shape)


def coarsen(path: NoisePath, factor: int) -> NoisePath:
    """Aggregate consecutive increments: the same Brownian path on a grid
    coarsened by an integer factor (for step-halving comparisons)."""
    if factor < 1 or path.n_steps % factor:
        raise InvalidArgumentError("factor must divide n_steps")
    inc = path.increments.reshape(path.n_steps // factor, factor, path.d).sum(axis=1)
    return NoisePath(seed=path.seed, trajectory_index=path.trajectory_index,
                     dt=path.dt * factor, n_steps=path.n_steps // factor,
                     increments=inc)
