"""Write-control optimization at fixed pulse energy.

A first-order Krotov-style scheme: each iteration runs the forward storage
problem and its discrete adjoint (``memory.storage_gradient``), moves the
control along the efficiency gradient, and projects back onto the sphere
int |Om|^2 dtau = W. Steps that do not raise the efficiency are halved, so
accepted iterates are monotone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import TemporalEnvelope, hg_basis
from .memory import CouplingSpec, MemoryParams, storage_gradient


class OptimizationError(RuntimeError):
    pass


@dataclass
class OptimizationConfig:
    """Iteration controls.

    ``energy_W`` defaults to the energy of the requested coupling strength and
    ``seed_control`` to the control matched to the target signal.
    ``step_scale`` is the initial step as a fraction of ||Om||.
    """

    energy_W: float | None = None
    max_iters: int = 500
    tol: float = 1e-6
    step_scale: float = 0.1
    seed_control: CouplingSpec | None = None
    max_halvings: int = 10
    growth: float = 1.5

    def __post_init__(self):
        if self.energy_W is not None and not self.energy_W > 0:
            raise ValueError("energy_W must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.step_scale > 0:
            raise ValueError("step_scale must be positive")


@dataclass
class OptimizationTrace:
    eta: list = field(default_factory=list)
    control_energy: list = field(default_factory=list)
    update_norm: list = field(default_factory=list)
    stop_reason: str = ""
    final_control: CouplingSpec | None = None

    @property
    def n_iters(self) -> int:
        return len(self.eta) - 1

    def to_rows(self) -> list[tuple[int, float, float]]:
        return [(k, e, u) for k, (e, u) in enumerate(zip(self.eta, self.update_norm))]


def _project(om: np.ndarray, energy: float, dt: float) -> np.ndarray:
    return om * math.sqrt(energy / (np.sum(np.abs(om) ** 2) * dt))


def optimize_write_control(
    target_signal: TemporalEnvelope,
    coupling_C: float,
    params: MemoryParams,
    config: OptimizationConfig | None = None,
) -> tuple[CouplingSpec, OptimizationTrace]:
    """Maximize eta_stor of ``target_signal`` over controls of fixed energy."""
    config = config or OptimizationConfig()
    if abs(target_signal.norm_sq - 1.0) > 1e-8:
        raise ValueError("target_signal must be unit-normalized")
    grid = target_signal.grid
    energy = config.energy_W if config.energy_W is not None else params.energy_for_coupling(coupling_C)
    seed = config.seed_control or CouplingSpec(coupling_C, target_signal)
    if config.seed_control is not None and config.seed_control.coupling_C == 0:
        raise OptimizationError("seed control is zero")
    trace = OptimizationTrace()
    if energy == 0 or coupling_C == 0:
        trace.eta.append(0.0)
        trace.control_energy.append(0.0)
        trace.update_norm.append(0.0)
        trace.stop_reason = "zero coupling"
        trace.final_control = CouplingSpec(0.0, seed.control_shape)
        return trace.final_control, trace

    om = _project(seed.control_shape.amplitude.astype(complex), energy, grid.dt)
    eta, grad = storage_gradient(target_signal, om, params)
    trace.eta.append(eta)
    trace.control_energy.append(energy)
    trace.update_norm.append(0.0)
    step = config.step_scale
    trace.stop_reason = "max_iters"
    for _ in range(config.max_iters):
        gnorm = np.linalg.norm(grad)
        if gnorm == 0:
            trace.stop_reason = "zero gradient"
            break
        direction = grad * (np.linalg.norm(om) / gnorm)
        for _ in range(config.max_halvings + 1):
            cand = _project(om + step * direction, energy, grid.dt)
            eta_c, grad_c = storage_gradient(target_signal, cand, params)
            if eta_c > eta:
                break
            step *= 0.5
        else:
            trace.stop_reason = "stalled"
            break
        rel = (eta_c - eta) / eta
        trace.update_norm.append(float(np.sqrt(np.sum(np.abs(cand - om) ** 2) * grid.dt)))
        trace.eta.append(eta_c)
        trace.control_energy.append(float(np.sum(np.abs(cand) ** 2) * grid.dt))
        om, eta, grad = cand, eta_c, grad_c
        step *= config.growth
        if rel < config.tol:
            trace.stop_reason = "tol"
            break
    final = CouplingSpec(params.coupling_for_energy(energy), TemporalEnvelope(grid, om).normalized())
    trace.final_control = final
    return final, trace


def energy_centroid(env: TemporalEnvelope) -> float:
    return env.centroid()


@dataclass
class CrosstalkStudy:
    coupling_C: float
    standard: np.ndarray
    optimized: np.ndarray
    controls: list
    traces: list
    tomography: dict | None = None

    def summary(self) -> dict:
        out = {
            "coupling_C": self.coupling_C,
            "standard_diag_mean": float(np.mean(np.diag(self.standard))),
            "standard_nn": float(self.standard[1, 0]),
            "optimized_diag_mean": float(np.mean(np.diag(self.optimized))),
            "optimized_nn": float(self.optimized[1, 0]),
        }
        if self.tomography is not None:
            out["tomography"] = self.tomography
        return out


def optimized_crosstalk_study(
    dim: int,
    C_list: Sequence[float],
    params: MemoryParams,
    config: OptimizationConfig | None = None,
    with_tomography: bool = False,
    n_controls: int = 1000,
    seed: int = 0,
) -> list[CrosstalkStudy]:
    """Standard vs optimized crosstalk matrices for HG_0..HG_{dim-1}."""
    from .kernel import crosstalk_matrix
    from .tomography import tomography_report

    modes = hg_basis(dim)
    studies = []
    for C in C_list:
        standard = crosstalk_matrix(modes, modes, C, params)
        controls, traces = [], []
        for m in modes:
            ctrl, tr = optimize_write_control(m, C, params, config)
            controls.append(ctrl.control_shape)
            traces.append(tr)
        optimized = crosstalk_matrix(modes, controls, C, params)
        tomo = None
        if with_tomography:
            tomo = tomography_report(C, params, dim, control_modes=controls, n_controls=n_controls, seed=seed)
        studies.append(CrosstalkStudy(C, standard, optimized, controls, traces, tomo))
    return studies
