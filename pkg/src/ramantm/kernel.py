"""Discretized storage and retrieval kernels and their mode decomposition.

A kernel is stored as a matrix with the grid measures folded in, so that its
singular values are the amplitudes of the memory's eigenmodes and their
squares are per-mode efficiencies. Inputs are represented either by the
coefficients over an orthonormal probe basis (HG modes by default) or by
unit-norm grid impulses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import SpaceGrid, TemporalEnvelope, TimeGrid, hg_basis
from .memory import CouplingSpec, MemoryParams, SpinWave, _propagate

ORTHONORMALITY_TOL = 1e-6
PASSIVITY_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Kernel:
    """Linear map between a time grid and a space grid.

    ``matrix`` has shape (n_out, n_in). For a storage kernel the rows are
    space samples scaled by sqrt(w_z) and the columns are probe coefficients;
    for a retrieval kernel the roles are swapped and rows carry sqrt(dt).
    ``probes`` holds the input basis (TemporalEnvelopes or SpinWaves).
    """

    input_grid: TimeGrid | SpaceGrid
    output_grid: SpaceGrid | TimeGrid
    matrix: np.ndarray
    probes: tuple = field(default=())
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        n_out = self.output_grid.n_samples
        if m.ndim != 2 or m.shape[0] != n_out:
            raise ValueError("kernel rows must match the output grid")
        if self.probes and len(self.probes) != m.shape[1]:
            raise ValueError("kernel columns must match the probe basis")
        object.__setattr__(self, "matrix", m)

    @property
    def is_storage(self) -> bool:
        return isinstance(self.output_grid, SpaceGrid)

    @property
    def output_weights(self) -> np.ndarray:
        if self.is_storage:
            return self.output_grid.weights
        return np.full(self.output_grid.n_samples, self.output_grid.dt)

    def coefficients(self, x) -> np.ndarray:
        """Probe-basis coefficients of an input envelope or spin-wave."""
        if isinstance(x, TemporalEnvelope):
            return np.array([np.vdot(p.amplitude, x.amplitude) * p.grid.dt for p in self.probes])
        if isinstance(x, SpinWave):
            w = x.grid.weights
            return np.array([np.sum(np.conj(p.amplitude) * x.amplitude * w) for p in self.probes])
        return np.asarray(x, dtype=complex)

    def apply(self, x):
        """Act on an input; returns a SpinWave or TemporalEnvelope."""
        y = self.matrix @ self.coefficients(x) / np.sqrt(self.output_weights)
        if self.is_storage:
            return SpinWave(self.output_grid, y)
        return TemporalEnvelope(self.output_grid, y)

    @property
    def max_singular_value(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


@dataclass(frozen=True, eq=False)
class KernelSVD:
    singular_values: np.ndarray
    input_modes: list
    output_modes: list
    u: np.ndarray
    vh: np.ndarray

    @property
    def efficiencies(self) -> np.ndarray:
        return self.singular_values**2

    @property
    def single_modeness(self) -> float:
        e = self.efficiencies
        return float(e[0] / e.sum()) if e.sum() > 0 else float("nan")

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.singular_values) @ self.vh


def impulse_probes(grid: TimeGrid) -> list[TemporalEnvelope]:
    eye = np.eye(grid.n_samples) / math.sqrt(grid.dt)
    return [TemporalEnvelope(grid, row) for row in eye]


def spin_impulse_probes(grid: SpaceGrid) -> list[SpinWave]:
    w = grid.weights
    eye = np.eye(grid.n_samples) / np.sqrt(w)[:, None]
    return [SpinWave(grid, col) for col in eye.T]


def build_storage_kernel(
    control: CouplingSpec,
    params: MemoryParams,
    probe_basis: Sequence[TemporalEnvelope] | None = None,
    n_modes: int = 30,
) -> Kernel:
    """Storage kernel K1 probed with an orthonormal set of input envelopes.

    Defaults to HG_0..HG_{n_modes-1} sharing the control's grid and 50 ns
    waist. All probes are propagated in one batch.
    """
    grid = control.grid
    probes = list(probe_basis) if probe_basis is not None else hg_basis(n_modes, grid)
    for p in probes:
        if not p.grid.same_as(grid):
            raise ValueError("probe basis must share the control's time grid")
    amps = np.array([p.amplitude for p in probes])
    gram = amps.conj() @ amps.T * grid.dt
    if np.max(np.abs(gram - np.eye(len(probes)))) > ORTHONORMALITY_TOL:
        raise ValueError("probe basis is not orthonormal")
    traj = _propagate(amps, control.rabi(params), grid.dt, params)
    sg = params.space_grid
    mat = (traj.b_final * np.sqrt(sg.weights)).T
    meta = {"coupling_C": control.coupling_C, "n_probes": len(probes), "kind": "storage"}
    return Kernel(grid, sg, mat, tuple(probes), meta)


def build_retrieval_kernel(
    control: CouplingSpec,
    params: MemoryParams,
    probe_basis: Sequence[SpinWave] | None = None,
) -> Kernel:
    """Retrieval kernel K2 from spin-wave probes (grid impulses by default)."""
    sg = params.space_grid
    grid = control.grid
    probes = list(probe_basis) if probe_basis is not None else spin_impulse_probes(sg)
    amps = np.array([p.amplitude for p in probes])
    gram = (amps.conj() * sg.weights) @ amps.T
    if np.max(np.abs(gram - np.eye(len(probes)))) > ORTHONORMALITY_TOL:
        raise ValueError("probe basis is not orthonormal")
    zero = np.zeros((len(probes), grid.n_samples), complex)
    traj = _propagate(zero, control.rabi(params), grid.dt, params, b0=amps)
    mat = traj.e_out.T * math.sqrt(grid.dt)
    meta = {"coupling_C": control.coupling_C, "n_probes": len(probes), "kind": "retrieval"}
    return Kernel(sg, grid, mat, tuple(probes), meta)


def svd(kernel: Kernel, rank: int | None = None) -> KernelSVD:
    """Truncated SVD; modes are returned unit-normalized on their grids."""
    full = min(kernel.matrix.shape)
    rank = full if rank is None else rank
    if not 1 <= rank <= full:
        raise ValueError(f"rank must be in [1, {full}]")
    u, s, vh = np.linalg.svd(kernel.matrix, full_matrices=False)
    u, s, vh = u[:, :rank], s[:rank], vh[:rank]
    out_w = np.sqrt(kernel.output_weights)
    outputs, inputs = [], []
    for k in range(rank):
        amp = u[:, k] / out_w
        outputs.append(
            SpinWave(kernel.output_grid, amp)
            if kernel.is_storage
            else TemporalEnvelope(kernel.output_grid, amp)
        )
        coef = np.conj(vh[k])
        if kernel.probes:
            inputs.append(_combine(kernel.probes, coef))
        else:
            inputs.append(coef)
    return KernelSVD(s, inputs, outputs, u, vh)


def _combine(probes, coef):
    amp = np.tensordot(coef, np.array([p.amplitude for p in probes]), axes=1)
    first = probes[0]
    if isinstance(first, TemporalEnvelope):
        return TemporalEnvelope(first.grid, amp)
    return SpinWave(first.grid, amp)


def crosstalk_matrix(
    signal_modes: Sequence[TemporalEnvelope],
    control_modes: Sequence[TemporalEnvelope],
    coupling_C: float,
    params: MemoryParams,
) -> np.ndarray:
    """eta_stor for every (signal n, control m) pair; rows index the signal.

    One batched solver sweep per control mode.
    """
    grid = signal_modes[0].grid
    amps = np.array([s.amplitude for s in signal_modes])
    for m in list(signal_modes) + list(control_modes):
        if not m.grid.same_as(grid):
            raise ValueError("all modes must share one time grid")
    n_in = np.sum(np.abs(amps) ** 2, axis=1) * grid.dt
    w = params.space_grid.weights
    out = np.zeros((len(signal_modes), len(control_modes)))
    for j, c in enumerate(control_modes):
        traj = _propagate(amps, CouplingSpec(coupling_C, c.normalized()).rabi(params), grid.dt, params)
        out[:, j] = (np.abs(traj.b_final) ** 2 @ w) / n_in
    return out


def nearest_neighbour_crosstalk(matrix: np.ndarray) -> float:
    """Entry (1, 0): signal HG_1 stored with the HG_0 control."""
    return float(matrix[1, 0])


def component_filter_ratios(
    superposition: TemporalEnvelope,
    component_controls: Sequence[TemporalEnvelope],
    params: MemoryParams,
    coupling_C: float = 0.60,
) -> np.ndarray:
    """Storage efficiency of one input under each component control."""
    return crosstalk_matrix([superposition], component_controls, coupling_C, params)[0]


def kernel_to_csv(matrix: np.ndarray, path) -> None:
    np.savetxt(path, matrix, delimiter=",", fmt="%.17g")
