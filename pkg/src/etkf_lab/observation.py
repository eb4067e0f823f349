"""Synthetic observations ``y_j = H u_j + xi_j`` with reproducible noise.

Noise draws are derived from the path ``(run_seed, replicate_id, step)``
rather than from a shared mutable generator, so replicates can run in any
order or concurrently and still reproduce the same sequence.

Sampling method (fixed for replay stability): numpy ``PCG64`` bit generator
seeded through ``SeedSequence(run_seed, spawn_key=(replicate_id, tag, step))``,
standard normals from ``Generator.standard_normal`` (ziggurat).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .analysis import NoiseCovariance, ObservationOperator
from .errors import DimensionMismatch

# stream tags keep the noise path disjoint from other consumers of the same seed
TAG_NOISE = 0
TAG_ENSEMBLE = 1
TAG_TRUTH = 2


def path_rng(run_seed: int, replicate_id: int, tag: int, step: int = 0) -> np.random.Generator:
    """Independent generator for one node of the seed tree."""
    ss = np.random.SeedSequence(int(run_seed), spawn_key=(int(replicate_id), int(tag), int(step)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class NoiseStream:
    run_seed: int
    replicate_id: int = 0

    def normals(self, step: int, d: int) -> np.ndarray:
        return path_rng(self.run_seed, self.replicate_id, TAG_NOISE, step).standard_normal(d)


@dataclass(frozen=True)
class ObservationRecord:
    step_index: int
    value: np.ndarray
    noise_seed_path: tuple[int, int, int]


def sample_noise(stream: NoiseStream, step: int, Gamma: NoiseCovariance) -> np.ndarray:
    """One ``N(0, Gamma)`` draw for assimilation step ``step``."""
    return Gamma.sample_transform(stream.normals(step, Gamma.dim))


def observe(u, H: ObservationOperator, Gamma: NoiseCovariance, stream: NoiseStream, step: int) -> ObservationRecord:
    u = np.asarray(u, dtype=float)
    if u.shape != (H.m,):
        raise DimensionMismatch(f"state has shape {u.shape}, operator expects ({H.m},)")
    if H.d != Gamma.dim:
        raise DimensionMismatch(f"observation dimension {H.d} != noise dimension {Gamma.dim}")
    value = H.apply(u) + sample_noise(stream, step, Gamma)
    if not np.all(np.isfinite(value)):
        raise ValueError("observation is not finite")
    value.setflags(write=False)
    return ObservationRecord(step, value, (stream.run_seed, stream.replicate_id, step))


def write_observations_csv(records, path) -> None:
    """Write ``step, y_1..y_d`` rows with 17 significant digits."""
    records = list(records)
    d = len(records[0].value) if records else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + [f"y_{i + 1}" for i in range(d)])
        for rec in records:
            w.writerow([rec.step_index] + [f"{x:.17g}" for x in rec.value])


def read_observations_csv(path) -> list[tuple[int, np.ndarray]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [(int(r[0]), np.array([float(x) for x in r[1:]])) for r in rows[1:]]
