"""Mode and bandwidth conversion: store with one control, read with another.

The write and read windows live on separate time grids; the read grid starts
``delay`` after the write grid ends. The model has no spin-wave decay, so the
delay only fixes the time axis of the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import erf, wofz

from .grid import FWHM_TO_SIGMA, ModeSpec, TemporalEnvelope, TimeGrid, hg_mode, make_mode
from .memory import CouplingSpec, MemoryParams, SpinWave, retrieve, store

DEFAULT_DELAY = 218e-9
RABI_CAP_FACTOR = 50.0


class ConversionError(ValueError):
    pass


class InfeasibleTarget(ConversionError):
    pass


@dataclass
class ConversionResult:
    eta_stor: float
    eta_tot: float
    output: TemporalEnvelope
    target_overlap: float
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "eta_stor": self.eta_stor,
            "eta_tot": self.eta_tot,
            "target_overlap": self.target_overlap,
            **self.meta,
        }


def squared_overlap(a: TemporalEnvelope, b: TemporalEnvelope) -> float:
    """|<a|b>|^2 / (|a|^2 |b|^2); 0 when either is zero. Grids may be offset."""
    if a.grid.dt != b.grid.dt or a.grid.n_samples != b.grid.n_samples:
        raise ValueError("envelopes need matching sampling")
    na, nb = a.norm_sq, b.norm_sq
    if na == 0 or nb == 0:
        return 0.0
    ov = np.vdot(a.amplitude, b.amplitude) * a.grid.dt
    return float(min(1.0, abs(ov) ** 2 / (na * nb)))


def default_rabi_cap(params: MemoryParams) -> float:
    """50x the peak Rabi frequency of the C = 0.60 HG_0 control."""
    return RABI_CAP_FACTOR * float(np.max(np.abs(CouplingSpec(0.60, hg_mode(0)).rabi(params))))


def _place_read(read: CouplingSpec, write_grid: TimeGrid, delay: float) -> CouplingSpec:
    if delay < 0:
        raise ConversionError("write and read windows overlap (negative delay)")
    start = write_grid.t_end + delay
    return read.delayed(start - read.grid.t_start)


def convert_mode(
    input_mode: TemporalEnvelope,
    write_control: CouplingSpec,
    read_control: CouplingSpec,
    params: MemoryParams,
    delay: float = DEFAULT_DELAY,
    target: TemporalEnvelope | None = None,
) -> ConversionResult:
    """Store ``input_mode``, then retrieve with ``read_control``.

    ``target`` (on the read control's own grid, before placement) defaults to
    the read control shape; ``target_overlap`` compares the output with it.
    """
    stored = store(input_mode, write_control, params)
    read = _place_read(read_control, write_control.grid, delay)
    out, rep = retrieve(stored.spinwave, read, params)
    n_in = input_mode.norm_sq
    eta_tot = out.norm_sq / n_in if n_in > 0 else 0.0
    target = target if target is not None else read_control.control_shape
    overlap = squared_overlap(target, out)
    return ConversionResult(
        stored.report.eta_stor,
        eta_tot,
        out,
        overlap,
        {"eta_ret": rep.eta_ret, "delay": delay, "read_start": read.grid.t_start},
    )


def flux_matching_shape(target: TemporalEnvelope, retrieved_fraction: float) -> np.ndarray:
    """|Om|^2 profile proportional to |target|^2 / (1 - r F(tau)).

    F is the cumulative normalized target flux and r the fraction of the
    spin-wave that the pulse will retrieve, so the denominator is the
    remaining retrievable excitation.
    """
    if not 0 <= retrieved_fraction < 1:
        raise ValueError("retrieved fraction must lie in [0, 1)")
    flux = np.abs(target.amplitude) ** 2
    flux = flux / (np.sum(flux) * target.grid.dt)
    cum = np.cumsum(flux) * target.grid.dt - 0.5 * flux * target.grid.dt
    return flux / (1.0 - retrieved_fraction * np.clip(cum, 0.0, 1.0))


def compensate_depletion(
    target_output: TemporalEnvelope,
    spinwave: SpinWave,
    params: MemoryParams,
    energy_budget: float,
    max_iters: int = 20,
    rabi_cap: float | None = None,
    tol: float = 1e-6,
) -> CouplingSpec:
    """Read control whose output follows ``target_output``.

    Starts from the analytic flux-matching rule with r taken from a plain read
    at the same energy, then applies up to ``max_iters`` fixed-point
    corrections Om <- Om * (target / output) through the full solver,
    renormalizing to ``energy_budget`` each time.
    """
    if not energy_budget > 0:
        raise ValueError("energy_budget must be positive")
    cap = default_rabi_cap(params) if rabi_cap is None else rabi_cap
    grid = target_output.grid
    tgt = target_output.normalized().amplitude
    phase = np.exp(1j * np.angle(tgt))

    def read(om):
        spec = CouplingSpec(params.coupling_for_energy(energy_budget), TemporalEnvelope(grid, om).normalized())
        return spec, retrieve(spinwave, spec, params)

    plain = tgt * math.sqrt(energy_budget)
    _, first = read(plain)
    r = min(first.report.eta_ret, 0.999)
    om = np.sqrt(flux_matching_shape(target_output, r)) * phase
    om *= math.sqrt(energy_budget / (np.sum(np.abs(om) ** 2) * grid.dt))
    best, best_ov = om, -1.0
    for _ in range(max_iters):
        spec, res = read(om)
        out = res.output.amplitude
        ov = squared_overlap(target_output, res.output)
        if ov > best_ov:
            best, best_ov = om, ov
        if 1.0 - ov < tol:
            break
        onorm = out / math.sqrt(np.sum(np.abs(out) ** 2) * grid.dt)
        mask = np.abs(tgt) > 1e-4 * np.max(np.abs(tgt))
        ratio = np.ones_like(om)
        ratio[mask] = tgt[mask] / np.where(np.abs(onorm[mask]) > 0, onorm[mask], 1.0)
        mag = np.clip(np.abs(ratio), 0.2, 5.0)
        om = om * mag * np.exp(1j * np.angle(ratio))
        om *= math.sqrt(energy_budget / (np.sum(np.abs(om) ** 2) * grid.dt))
    if np.max(np.abs(best)) > cap:
        raise InfeasibleTarget("required Rabi frequency exceeds the configured cap")
    return CouplingSpec(params.coupling_for_energy(energy_budget), TemporalEnvelope(grid, best).normalized())


def gaussian_grid(fwhm: float, dt: float | None = None, span: float = 12.0) -> TimeGrid:
    """Centred grid covering +-span/2 field FWHM with >= 40 samples per FWHM."""
    dt = dt or fwhm / 40.0
    n = int(math.ceil(span * fwhm / dt)) + 1
    return TimeGrid.centered(dt, n)


def gaussian(fwhm: float, grid: TimeGrid) -> TemporalEnvelope:
    return make_mode(ModeSpec("gaussian", scale=fwhm), grid)


def bandwidth_convert(
    t_in: float,
    t_out: float,
    regime: str,
    params: MemoryParams,
    coupling_C: float = 0.60,
    dt: float | None = None,
    rabi_cap: float | None = None,
) -> ConversionResult:
    """Store a Gaussian of field FWHM ``t_in`` and read into FWHM ``t_out``.

    ``constant_energy`` reads with the write energy; ``constant_peak`` reads
    with the write control's peak Rabi frequency, so the read energy grows
    with f = t_out / t_in.
    """
    if t_in <= 0 or t_out <= 0:
        raise ValueError("durations must be positive")
    if regime not in ("constant_peak", "constant_energy"):
        raise ValueError(f"unknown regime {regime!r}")
    dt = dt or min(t_in, t_out) / 40.0
    g_in = gaussian_grid(t_in, dt)
    g_out = gaussian_grid(t_out, dt)
    sig = gaussian(t_in, g_in)
    write = CouplingSpec(coupling_C, sig)
    f = t_out / t_in
    c_read = coupling_C * (math.sqrt(f) if regime == "constant_peak" else 1.0)
    read = CouplingSpec(c_read, gaussian(t_out, g_out))
    cap = default_rabi_cap(params) if rabi_cap is None else rabi_cap
    peak = max(np.max(np.abs(write.rabi(params))), np.max(np.abs(read.rabi(params))))
    if peak > cap:
        raise InfeasibleTarget("control exceeds the Rabi-frequency cap")
    res = convert_mode(sig, write, read, params, delay=0.0)
    res.meta.update({"f": f, "regime": regime, "t_in": t_in, "t_out": t_out})
    return res


@dataclass
class PassiveBaseline:
    efficiency: float
    expansion_impossible: bool
    bandwidth: float | None = None


def _filtered_gaussian(t, sigma, band):
    """Field of exp(-t^2 / 2 sigma^2) after an ideal band-pass of full width ``band`` (Hz)."""
    x = math.pi * math.sqrt(2.0) * sigma * band / 2.0
    y = np.asarray(t) / (math.sqrt(2.0) * sigma)
    # exp(-y^2) Re erf(x + i y), written with the Faddeeva function to avoid overflow
    return np.exp(-(y**2)) - np.real(np.exp(-(x**2) - 2j * x * y) * wofz(-y + 1j * x))


def _field_fwhm(sigma, band):
    peak = _filtered_gaussian(0.0, sigma, band)
    t = np.linspace(0.0, 20.0 * sigma + 4.0 / band, 20001)
    v = np.abs(_filtered_gaussian(t, sigma, band)) - 0.5 * peak
    k = int(np.argmax(v < 0))
    t_half = brentq(lambda s: abs(_filtered_gaussian(s, sigma, band)) - 0.5 * peak, t[k - 1], t[k])
    return 2.0 * t_half


def passive_filter_baseline(t_in: float, f: float) -> PassiveBaseline:
    """Ideal top-hat spectral filter sized to stretch a Gaussian by ``f``.

    Efficiency = transmitted energy times the squared overlap of the filtered
    field with the unit-normalized Gaussian of field FWHM f * t_in. Passive
    filtering cannot shorten a pulse, so f < 1 gives 0 with the flag set.
    """
    if f < 1:
        return PassiveBaseline(0.0, True)
    s_in = t_in * FWHM_TO_SIGMA
    s_out = f * s_in
    if f == 1:
        return PassiveBaseline(1.0, False, math.inf)
    target = f * t_in
    lo, hi = 1e-3 / t_in, 1.0 / t_in
    while _field_fwhm(s_in, hi) > target:
        hi *= 2.0
    band = brentq(lambda b: _field_fwhm(s_in, b) - target, lo, hi, xtol=1e-12 / t_in, rtol=1e-13)
    # <P e, g>^2 / (|e|^2 |g|^2) with Gaussian spectra, done in closed form
    s2 = s_in**2 + s_out**2
    amp = math.sqrt(2.0 * s_in * s_out / s2) * erf(math.pi * math.sqrt(s2 / 2.0) * band)
    return PassiveBaseline(float(amp**2), False, band)


def gaussian_exponential_scenarios(
    params: MemoryParams,
    C_write: float = 0.60,
    C_read: float = 0.60,
    decay: float = 50e-9,
    fwhm: float = 50e-9,
    dt: float = 1e-9,
    delay: float = DEFAULT_DELAY,
) -> dict[str, ConversionResult]:
    """Conversions between a one-sided exponential decay and a Gaussian.

    Each input is stored with a control of its own shape and read with a
    control of the target shape. Returns results keyed ``exp_to_gauss``,
    ``gauss_to_exp`` and the shape-preserving references ``exp_to_exp`` and
    ``gauss_to_gauss``.
    """
    if decay <= 0 or fwhm <= 0:
        raise ValueError("decay and fwhm must be positive")
    lead = 3.0 * fwhm
    span = lead + 14.0 * decay
    grid = TimeGrid(-lead, dt, int(math.ceil(span / dt)) + 1)
    shapes = {
        "exp": make_mode(ModeSpec("exp_decay", scale=decay), grid),
        "gauss": make_mode(ModeSpec("gaussian", scale=fwhm, center=2.0 * decay), grid),
    }
    out = {}
    for src, s_env in shapes.items():
        for dst, d_env in shapes.items():
            res = convert_mode(
                s_env, CouplingSpec(C_write, s_env), CouplingSpec(C_read, d_env), params, delay
            )
            res.meta.update({"input": src, "output": dst, "C_write": C_write, "C_read": C_read})
            out[f"{src}_to_{dst}"] = res
    return out
