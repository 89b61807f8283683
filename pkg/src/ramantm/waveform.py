"""Dual-drive intensity/phase EOM chain: drive inversion, LTI response
estimation and pre-distortion, electrode crosstalk, bias and energy trims.

Modulator model (voltages are effective arm voltages)::

    A   = sin(pi (V1 + V2) / (2 V_pi))
    Phi = pi (V1 - V2) / (2 V_pi)

Electrode crosstalk mixes the arms, V1_eff = V1 + eps V2 and
V2_eff = V2 + eps V1. A bias offset ``delta`` shifts the sum V1 + V2 by
delta (delta / 2 per arm). Spectral operations zero-pad by ``PAD_FACTOR``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .grid import TemporalEnvelope, TimeGrid

PAD_FACTOR = 4
DEFAULT_FLOOR = 1e-3


class WaveformError(ValueError):
    pass


class DriveRangeError(WaveformError):
    pass


@dataclass(frozen=True, eq=False)
class FrequencyResponse:
    """Complex response samples on a frequency grid (Hz).

    Evaluation interpolates real and imaginary parts linearly and holds the
    end values outside the grid. ``valid`` marks bins where the response was
    measured above the probe's magnitude floor.
    """

    freqs: np.ndarray
    values: np.ndarray
    floor: float = DEFAULT_FLOOR
    low_cut: float | None = None
    valid: np.ndarray | None = None

    def __post_init__(self):
        f = np.asarray(self.freqs, float)
        v = np.asarray(self.values, complex)
        if f.shape != v.shape:
            raise ValueError("frequency and response arrays differ in length")
        if not np.all(np.isfinite(v)):
            raise ValueError("response must be finite")
        order = np.argsort(f)
        object.__setattr__(self, "freqs", f[order])
        object.__setattr__(self, "values", v[order])
        if self.valid is not None:
            object.__setattr__(self, "valid", np.asarray(self.valid, bool)[order])

    def __call__(self, f) -> np.ndarray:
        f = np.asarray(f, float)
        r = np.interp(f, self.freqs, self.values.real) + 1j * np.interp(f, self.freqs, self.values.imag)
        if self.low_cut:
            r = r * (1j * f / self.low_cut) / (1.0 + 1j * f / self.low_cut)
        return r

    @classmethod
    def from_function(cls, fn: Callable, f_max: float, n: int = 4097, **kw) -> "FrequencyResponse":
        f = np.linspace(-f_max, f_max, n)
        return cls(f, fn(f), **kw)

    @classmethod
    def ideal(cls, f_max: float = 1e12) -> "FrequencyResponse":
        return cls(np.array([-f_max, f_max]), np.ones(2, complex))

    @classmethod
    def rc_low_pass(cls, tau: float, f_max: float, n: int = 65537) -> "FrequencyResponse":
        return cls.from_function(lambda f: 1.0 / (1.0 + 2j * np.pi * f * tau), f_max, n)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["f_Hz", "re", "im"])
            for f, v in zip(self.freqs, self.values):
                w.writerow([f"{f:.17g}", f"{v.real:.17g}", f"{v.imag:.17g}"])


@dataclass(frozen=True)
class EomModel:
    v_pi: float = 1.0
    crosstalk_eps: float = 0.0
    bias_offset: float = 0.0
    response: FrequencyResponse | None = None
    rail: float | None = None

    def __post_init__(self):
        if not self.v_pi > 0:
            raise ValueError("v_pi must be positive")
        if not abs(self.crosstalk_eps) < 1:
            raise ValueError("|crosstalk_eps| must be < 1")

    @property
    def at_null(self) -> bool:
        return self.bias_offset == 0.0

    def meta(self) -> dict:
        return {
            "v_pi": self.v_pi,
            "eps": self.crosstalk_eps,
            "bias_offset": self.bias_offset,
            "floor": self.response.floor if self.response else None,
        }


@dataclass(frozen=True, eq=False)
class DriveWaveforms:
    grid: TimeGrid
    v1: np.ndarray
    v2: np.ndarray
    phase_resets: np.ndarray = field(default_factory=lambda: np.zeros(0, int))

    def __post_init__(self):
        v1 = np.asarray(self.v1, float)
        v2 = np.asarray(self.v2, float)
        if v1.shape != (self.grid.n_samples,) or v2.shape != v1.shape:
            raise ValueError("drives must match the grid length")
        object.__setattr__(self, "v1", v1)
        object.__setattr__(self, "v2", v2)

    def to_csv(self, path, model: EomModel | None = None) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "V1", "V2"])
            for t, a, b in zip(self.grid.times, self.v1, self.v2):
                w.writerow([f"{t:.17g}", f"{a:.17g}", f"{b:.17g}"])
        if model is not None:
            meta = {**model.meta(), "phase_resets": self.phase_resets.tolist()}
            with open(str(path) + ".json", "w") as fh:
                json.dump(meta, fh, indent=2, sort_keys=True)


def _mix(v1, v2, eps):
    return v1 + eps * v2, v2 + eps * v1


def _unmix(u1, u2, eps):
    det = 1.0 - eps * eps
    return (u1 - eps * u2) / det, (u2 - eps * u1) / det


def wrap_phase(phi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Wrap to (-pi, pi]; returns the wrapped phase and reset indices."""
    wrapped = np.angle(np.exp(1j * np.asarray(phi, float)))
    jumps = np.flatnonzero(np.abs(np.diff(wrapped)) > np.pi) + 1
    return wrapped, jumps


def drives_from_target(amplitude, phase, model: EomModel, grid: TimeGrid) -> DriveWaveforms:
    """Invert the modulator relations (and crosstalk) for target A(t), Phi(t).

    With a voltage rail set, a phase that drives an arm past the rail is
    wrapped modulo 2 pi; the reset points are recorded. If the wrapped drive
    still exceeds the rail, :class:`DriveRangeError` is raised.
    """
    a = np.broadcast_to(np.asarray(amplitude, float), (grid.n_samples,))
    phi = np.broadcast_to(np.asarray(phase, float), (grid.n_samples,))
    if np.any(np.abs(a) > 1.0 + 1e-12):
        raise WaveformError("|A| must not exceed 1")
    if not model.at_null:
        raise WaveformError("drive inversion assumes the bias is at null")
    k = model.v_pi / math.pi
    s = np.arcsin(np.clip(a, -1.0, 1.0))
    resets = np.zeros(0, int)

    def arms(p):
        return _unmix(k * (s + p), k * (s - p), model.crosstalk_eps)

    v1, v2 = arms(phi)
    if model.rail is not None and max(np.max(np.abs(v1)), np.max(np.abs(v2))) > model.rail:
        phi, resets = wrap_phase(phi)
        v1, v2 = arms(phi)
        if max(np.max(np.abs(v1)), np.max(np.abs(v2))) > model.rail:
            raise DriveRangeError("drive exceeds the voltage rail even after modulo-2pi phase wrapping")
    return DriveWaveforms(grid, v1, v2, resets)


def apply_response(x: np.ndarray, dt: float, response: FrequencyResponse | None) -> np.ndarray:
    """Filter samples through ``response`` (zero-padded FFT)."""
    if response is None:
        return np.asarray(x)
    x = np.asarray(x)
    n = x.size
    m = PAD_FACTOR * n
    f = np.fft.fftfreq(m, dt)
    y = np.fft.ifft(np.fft.fft(x, m) * response(f))[:n]
    return y.real if np.isrealobj(x) else y


def eom_output(drives: DriveWaveforms, model: EomModel) -> TemporalEnvelope:
    dt = drives.grid.dt
    v1 = apply_response(drives.v1, dt, model.response)
    v2 = apply_response(drives.v2, dt, model.response)
    v1, v2 = _mix(v1, v2, model.crosstalk_eps)
    total = v1 + v2 + model.bias_offset
    amp = np.sin(math.pi * total / (2.0 * model.v_pi))
    phi = math.pi * (v1 - v2) / (2.0 * model.v_pi)
    return TemporalEnvelope(drives.grid, amp * np.exp(1j * phi))


def calibrate_bias(model: EomModel) -> float:
    """Correction voltage (added to the sum) that nulls the zero-drive output."""
    def leak(c):
        return math.sin(math.pi * (model.bias_offset + c) / (2.0 * model.v_pi))

    span = model.v_pi
    return float(brentq(leak, -model.bias_offset - 0.9 * span, -model.bias_offset + 0.9 * span, xtol=1e-15))


def effective_v_pi(model: EomModel) -> dict:
    """Half-wave voltages seen by amplitude-type and phase-type drives.

    Measured on the modulator output (response and bias ignored). Amplitude
    drive V1 = V2 = V gives A = sin(pi/4) at V = V_pi_amp / 4. Phase drive
    V1 = c + V, V2 = c - V, with c holding A at 1, gives Phi = pi/2 at
    V = V_pi_phase / 2. For the linear mixing model these are
    V_pi / (1 + eps) and V_pi / (1 - eps).
    """
    bare = replace(model, response=None, bias_offset=0.0)
    g = TimeGrid(0.0, 1.0, 2)

    def out(v1, v2):
        return eom_output(DriveWaveforms(g, [v1, v1], [v2, v2]), bare).amplitude[0]

    top = bare.v_pi / (1.0 + abs(bare.crosstalk_eps))
    v_amp = brentq(lambda v: out(v, v).real - math.sin(math.pi / 4), 0.0, 0.5 * top, xtol=1e-15)
    c = bare.v_pi / (2.0 * (1.0 + bare.crosstalk_eps))
    hi = 0.99 * bare.v_pi / (1.0 - bare.crosstalk_eps)  # keeps Phi below pi
    v_ph = brentq(lambda v: np.angle(out(c + v, c - v)) - math.pi / 2, 0.0, hi, xtol=1e-15)
    return {"amplitude": 4.0 * v_amp, "phase": 2.0 * v_ph}


@dataclass
class Predistortion:
    waveform: np.ndarray
    residual: float
    guarded_fraction: float


def estimate_response(
    probe: np.ndarray,
    measured: np.ndarray,
    dt: float,
    floor: float = DEFAULT_FLOOR,
    band: float | None = None,
) -> FrequencyResponse:
    """R(f) = H(f) / X(f) from a probe and the chain's measured output.

    Bins where |X| is below ``floor`` times its peak are marked invalid and
    set to 1. A spectral null of the probe inside ``|f| <= band`` is an error.
    """
    x = np.asarray(probe)
    h = np.asarray(measured)
    if x.shape != h.shape:
        raise ValueError("probe and output must have equal length")
    m = PAD_FACTOR * x.size
    f = np.fft.fftfreq(m, dt)
    X = np.fft.fft(x, m)
    H = np.fft.fft(h, m)
    ok = np.abs(X) >= floor * np.max(np.abs(X))
    if band is not None and np.any(~ok & (np.abs(f) <= band)):
        raise WaveformError("probe spectrum has nulls inside the band of interest")
    R = np.ones(m, complex)
    R[ok] = H[ok] / X[ok]
    return FrequencyResponse(f, R, floor=floor, valid=ok)


def predistort(
    target: np.ndarray,
    response: FrequencyResponse,
    dt: float,
    floor: float | None = None,
    strict: bool = True,
    energy_tol: float = 1e-8,
) -> Predistortion:
    """x' = IFFT[FFT(target) / R], with bins where |R| < floor * max|R| dropped.

    In strict mode, dropping more than ``energy_tol`` of the target's
    spectral energy raises instead of truncating silently. The residual is
    the relative L2 error of response(x') against the target.
    """
    floor = response.floor if floor is None else floor
    t = np.asarray(target)
    n = t.size
    m = PAD_FACTOR * n
    f = np.fft.fftfreq(m, dt)
    T = np.fft.fft(t, m)
    R = response(f)
    ok = np.abs(R) >= floor * np.max(np.abs(R))
    lost = float(np.sum(np.abs(T[~ok]) ** 2) / np.sum(np.abs(T) ** 2)) if np.any(T) else 0.0
    if strict and lost > energy_tol:
        raise WaveformError(f"target has {lost:.2e} of its energy where the response is below the floor")
    X = np.zeros(m, complex)
    X[ok] = T[ok] / R[ok]
    x = np.fft.ifft(X)[:n]
    x = x.real if np.isrealobj(t) else x
    y = apply_response(x, dt, response)
    nrm = np.linalg.norm(t)
    residual = float(np.linalg.norm(y - t) / nrm) if nrm > 0 else 0.0
    return Predistortion(x, residual, lost)


def normalize_energies(
    modes: Sequence[TemporalEnvelope],
    reference_index: int = 0,
    chain: Callable[[TemporalEnvelope], TemporalEnvelope] | None = None,
    rtol: float = 1e-6,
) -> list[TemporalEnvelope]:
    """Rescale drive envelopes so the optical energies match the reference.

    Without ``chain`` the optical energy is the envelope's own; with a
    (possibly nonlinear) chain each scale factor is found by root finding.
    """
    chain = chain or (lambda e: e)
    energies = [chain(m).norm_sq for m in modes]
    if any(e == 0 for e in energies):
        raise WaveformError("zero-energy waveform cannot be normalized")
    ref = energies[reference_index]
    out = []
    for k, m in enumerate(modes):
        if k == reference_index or abs(energies[k] / ref - 1.0) < 1e-15:
            out.append(m)
            continue
        s = math.sqrt(ref / energies[k])
        for _ in range(50):
            e = chain(m.scaled(s)).norm_sq
            if abs(e / ref - 1.0) < rtol:
                break
            h = 1e-6 * s
            de = (chain(m.scaled(s + h)).norm_sq - e) / h
            s = s - (e - ref) / de if de != 0 else s * math.sqrt(ref / e)
        out.append(m.scaled(s))
    return out


def eom_chain(model: EomModel, peak: float = 1.0) -> Callable[[TemporalEnvelope], TemporalEnvelope]:
    """Map a target envelope (|a| <= 1 after scaling by ``peak``) through the modulator."""
    def run(env: TemporalEnvelope) -> TemporalEnvelope:
        a = env.amplitude / peak
        mag = np.clip(np.abs(a), 0.0, 1.0)
        drives = drives_from_target(mag, np.angle(a), replace(model, response=None, bias_offset=0.0), env.grid)
        return eom_output(drives, model).scaled(peak)

    return run


def phase_report(env: TemporalEnvelope, threshold: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Continuous phase where |A| > threshold * peak, and raw 2 pi reset indices."""
    amp = env.amplitude
    mask = np.abs(amp) > threshold * np.max(np.abs(amp))
    raw = np.angle(amp)
    phase = np.full(amp.shape, np.nan)
    phase[mask] = np.unwrap(raw[mask])
    idx = np.flatnonzero(mask)
    jumps = idx[1:][np.abs(np.diff(raw[mask])) > np.pi]
    return phase, jumps
