"""Command-line scenario runner.

Scenarios are JSON files validated against ``SCENARIO_SCHEMA`` before any
computation. ``run`` writes its results into a temporary directory and only
moves it into place when every step succeeded, so a failed run leaves no
partial output. Result files are deterministic for a given config and seed;
only ``manifest.json`` carries the wall time.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Callable

import jsonschema
import numpy as np

from . import __version__
from .grid import SpaceGrid, TimeGrid, default_time_grid, hg_basis, superpose
from .io import write_envelope, write_json, write_matrix, write_table
from .memory import CouplingSpec, MemoryParams

OUTPUT_ENV = "RAMANTM_OUTPUT_DIR"
DEFAULT_OUTPUT = "results"
KINDS = ("crosstalk", "filter_ratios", "tomography", "optimize", "convert_mode", "bandwidth", "waveform", "calibrate")

_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int = {"type": "integer", "minimum": 0}


def _obj(props: dict, required: tuple = ()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


OPTION_SCHEMAS = {
    "crosstalk": _obj({}),
    "filter_ratios": _obj(
        {
            "components": {"type": "array", "items": _int, "minItems": 2},
            "weights": {"type": "array", "items": {"type": "number"}, "minItems": 2},
        },
        ("components", "weights"),
    ),
    "tomography": _obj(
        {
            "dim": {"type": "integer", "enum": [2, 3, 5, 7]},
            "n_controls": {"type": "integer", "minimum": 1},
            "noise": _nonneg,
            "counts": {"type": "integer", "minimum": 1},
            "optimized": {"type": "boolean"},
            "optimizer_iters": {"type": "integer", "minimum": 1},
            "synthetic_trials": {"type": "integer", "minimum": 1},
        }
    ),
    "optimize": _obj(
        {
            "max_iters": {"type": "integer", "minimum": 1},
            "tol": _pos,
            "step_scale": _pos,
        }
    ),
    "convert_mode": _obj(
        {
            "n_max": {"type": "integer", "minimum": 1, "maximum": 30},
            "delay": _nonneg,
            "compensate": _obj({"input": _int, "output": _int}, ("input", "output")),
            "gaussian_exponential": {"type": "boolean"},
        }
    ),
    "bandwidth": _obj(
        {
            "t_in": _pos,
            "factors": {"type": "array", "items": _pos, "minItems": 1},
            "regimes": {
                "type": "array",
                "items": {"enum": ["constant_peak", "constant_energy"]},
                "minItems": 1,
            },
            "passive_factors": {"type": "array", "items": _pos},
        }
    ),
    "waveform": _obj(
        {
            "v_pi": _pos,
            "crosstalk_eps": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 1},
            "bias_offset": {"type": "number"},
            "rc_tau": _pos,
            "floor": _pos,
            "perturbation": _nonneg,
        }
    ),
    "calibrate": _obj({"target_eta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}}),
}

SCENARIO_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "ramantm scenario",
    "type": "object",
    "required": ["kind"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "description": {"type": "string"},
        "criterion": {"type": "integer", "minimum": 1, "maximum": 10},
        "kind": {"enum": list(KINDS)},
        "params": _obj(
            {
                "optical_depth_d": _pos,
                "gamma": _pos,
                "delta": {"type": "number"},
                "kappa_cal": _pos,
                "n_z": {"type": "integer", "minimum": 8},
            }
        ),
        "time_grid": _obj({"dt": _pos, "n_samples": {"type": "integer", "minimum": 16}}, ("dt", "n_samples")),
        "coupling": {
            "oneOf": [_nonneg, {"type": "array", "items": _nonneg, "minItems": 1}],
        },
        "basis": _obj(
            {
                "family": {"enum": ["hermite_gaussian"]},
                "n_modes": {"type": "integer", "minimum": 1, "maximum": 30},
                "fwhm": _pos,
            }
        ),
        "seed": _int,
        "output_dir": {"type": "string"},
        "options": {"type": "object"},
    },
    "allOf": [
        {
            "if": {"properties": {"kind": {"const": k}}},
            "then": {"properties": {"options": s}, "required": ["options"] if s["required"] else []},
        }
        for k, s in OPTION_SCHEMAS.items()
    ],
}


class ScenarioError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def validate(config: dict) -> None:
    try:
        jsonschema.validate(config, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError("schema.invalid", f"{where}: {exc.message}") from None
    opts = config.get("options", {})
    if config["kind"] == "filter_ratios" and len(opts["components"]) != len(opts["weights"]):
        raise ScenarioError("schema.invalid", "options: components and weights differ in length")


# ---------------------------------------------------------------- context


@dataclass
class Context:
    config: dict
    params: MemoryParams
    grid: TimeGrid
    couplings: list
    n_modes: int
    fwhm: float
    seed: int
    jobs: int
    out: Path

    @property
    def options(self) -> dict:
        return self.config.get("options", {})

    def basis(self, n: int | None = None):
        return hg_basis(n or self.n_modes, self.grid, self.fwhm)

    def map(self, fn: Callable, items: list) -> list:
        """Ordered map; results do not depend on the worker count."""
        if self.jobs <= 1 or len(items) <= 1:
            return [fn(i) for i in items]
        with ProcessPoolExecutor(max_workers=min(self.jobs, len(items))) as ex:
            return list(ex.map(fn, items))


def _params(cfg: dict) -> MemoryParams:
    over = dict(cfg.get("params", {}))
    n_z = over.pop("n_z", None)
    p = MemoryParams(**over)
    if n_z is not None:
        p = replace(p, space_grid=SpaceGrid(p.length_L, n_z))
    return p


def _context(cfg: dict, jobs: int, out: Path) -> Context:
    tg = cfg.get("time_grid")
    grid = TimeGrid.centered(tg["dt"], tg["n_samples"]) if tg else default_time_grid()
    c = cfg.get("coupling", 0.60)
    basis = cfg.get("basis", {})
    return Context(
        cfg,
        _params(cfg),
        grid,
        list(c) if isinstance(c, list) else [c],
        basis.get("n_modes", 5),
        basis.get("fwhm", 50e-9),
        cfg.get("seed", 0),
        jobs,
        out,
    )


def _ctag(c: float) -> str:
    return f"C{c:.4g}"


# ------------------------------------------------------------ kind runners


def _crosstalk_job(args):
    c, modes, params = args
    from .kernel import crosstalk_matrix

    return crosstalk_matrix(modes, modes, c, params)


def _matrix_summary(m: np.ndarray) -> dict:
    d = np.diag(m)
    off = m[~np.eye(len(m), dtype=bool)] if len(m) > 1 else np.zeros(1)
    return {
        "diag_mean": float(d.mean()),
        "diag_min": float(d.min()),
        "diag_max": float(d.max()),
        "nearest_neighbour": float(m[1, 0]) if len(m) > 1 else 0.0,
        "max_offdiag": float(off.max()),
    }


def run_crosstalk(ctx: Context) -> dict:
    modes = ctx.basis()
    mats = ctx.map(_crosstalk_job, [(c, modes, ctx.params) for c in ctx.couplings])
    rows, summary = [], {}
    for c, m in zip(ctx.couplings, mats):
        write_matrix(ctx.out / f"crosstalk_{_ctag(c)}.csv", m)
        s = _matrix_summary(m)
        summary[_ctag(c)] = s
        rows.append((c, s["diag_mean"], s["diag_min"], s["diag_max"], s["nearest_neighbour"], s["max_offdiag"]))
    write_table(ctx.out / "summary.csv", ("C", "diag_mean", "diag_min", "diag_max", "nearest_neighbour", "max_offdiag"), rows)
    return summary


def run_filter_ratios(ctx: Context) -> dict:
    from .kernel import component_filter_ratios

    o = ctx.options
    comps, weights = o["components"], np.asarray(o["weights"], float)
    weights = weights / np.linalg.norm(weights)
    modes = ctx.basis(max(comps) + 1)
    sup = superpose([(w, modes[k]) for w, k in zip(weights, comps)])
    ideal = weights**2 / weights[0] ** 2
    rows, out = [], {}
    for c in ctx.couplings:
        eff = component_filter_ratios(sup, [modes[k] for k in comps], ctx.params, c)
        ratio = eff / eff[0]
        for k, e, r, r0 in zip(comps, eff, ratio, ideal):
            rows.append((c, k, e, r, r0))
        out[_ctag(c)] = {"efficiencies": eff, "ratios": ratio, "ideal_ratios": ideal}
    write_table(ctx.out / "ratios.csv", ("C", "component", "eta_stor", "ratio", "ideal_ratio"), rows)
    return out


def _optimize_job(args):
    mode, c, params, cfg = args
    from .control import OptimizationConfig, optimize_write_control

    ctrl, trace = optimize_write_control(mode, c, params, OptimizationConfig(**cfg))
    return ctrl.control_shape, trace


def _optimized_controls(ctx: Context, c: float, max_iters: int, extra: dict | None = None, n: int | None = None):
    cfg = {"max_iters": max_iters, **(extra or {})}
    modes = ctx.basis(n)
    res = ctx.map(_optimize_job, [(m, c, ctx.params, cfg) for m in modes])
    return [r[0] for r in res], [r[1] for r in res]


def _synthetic_trials(ctx: Context, dim: int, trials: int) -> dict:
    from .tomography import fidelity, generate_mubs, reconstruct, synthetic_dataset

    rng = np.random.default_rng(ctx.seed)
    mubs = generate_mubs(dim)
    rows, fids = [], []
    for k in range(trials):
        n = dim * dim
        g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        p = g @ g.conj().T
        p *= rng.uniform(0.2, 1.0) * dim / np.linalg.eigvalsh(p)[-1]
        rec = reconstruct(synthetic_dataset(p, mubs), dim)
        f = fidelity(rec.process, p)
        fids.append(f)
        rows.append((k, f, rec.iterations, rec.converged))
    write_table(ctx.out / f"synthetic_dim{dim}.csv", ("trial", "fidelity", "iterations", "converged"), rows)
    return {"dim": dim, "trials": trials, "min_fidelity": float(min(fids)), "mean_fidelity": float(np.mean(fids))}


def run_tomography(ctx: Context) -> dict:
    from .tomography import (
        fidelity,
        generate_mubs,
        ideal_filter,
        kappa_statistics,
        parameter_count,
        reconstruct,
        simulate_mub_dataset,
    )

    o = ctx.options
    dim = o.get("dim", 5)
    if "synthetic_trials" in o:
        res = _synthetic_trials(ctx, dim, o["synthetic_trials"])
        res["parameter_count"] = parameter_count(dim)
        res["expected_parameter_count"] = dim**4 - dim**2
        write_json(ctx.out / "metrics.json", res)
        return res
    mubs = generate_mubs(dim)
    signal_modes = ctx.basis(dim)
    out, rows = {}, []
    for c in ctx.couplings:
        controls = None
        if o.get("optimized", False):
            controls, _ = _optimized_controls(ctx, c, o.get("optimizer_iters", 300), n=dim)
        data = simulate_mub_dataset(
            c, ctx.params, mubs, o.get("noise", 0.0), o.get("counts"), ctx.seed, controls, signal_modes
        )
        rec = reconstruct(data, dim)
        k_mean, k_std = kappa_statistics(rec.process, dim, o.get("n_controls", 1000), ctx.seed)
        m = {
            "fidelity": fidelity(rec.process, ideal_filter(dim)),
            "eta_stor": rec.process.eta_stor,
            "kappa_mean": k_mean,
            "kappa_std": k_std,
            "n_controls": o.get("n_controls", 1000),
            "seed": ctx.seed,
            "converged": rec.converged,
        }
        data.to_csv(ctx.out / f"dataset_{_ctag(c)}.csv")
        write_json(ctx.out / f"process_{_ctag(c)}.json", rec.process.to_json())
        out[_ctag(c)] = m
        rows.append((c, m["fidelity"], m["eta_stor"], k_mean, k_std))
    write_table(ctx.out / "metrics.csv", ("C", "fidelity", "eta_stor", "kappa_mean", "kappa_std"), rows)
    write_json(ctx.out / "metrics.json", out)
    return out


def run_optimize(ctx: Context) -> dict:
    from .kernel import crosstalk_matrix

    o = ctx.options
    extra = {k: o[k] for k in ("tol", "step_scale") if k in o}
    modes = ctx.basis()
    out = {}
    for c in ctx.couplings:
        controls, traces = _optimized_controls(ctx, c, o.get("max_iters", 300), extra)
        std = crosstalk_matrix(modes, modes, c, ctx.params)
        opt = crosstalk_matrix(modes, controls, c, ctx.params)
        tag = _ctag(c)
        write_matrix(ctx.out / f"standard_{tag}.csv", std)
        write_matrix(ctx.out / f"optimized_{tag}.csv", opt)
        for k, (ctrl, tr) in enumerate(zip(controls, traces)):
            write_table(ctx.out / f"trace_{tag}_HG{k}.csv", ("iter", "eta", "update_norm"), tr.to_rows())
            write_envelope(ctx.out / f"control_{tag}_HG{k}.csv", ctrl, {"C": c, "mode": k, "stop_reason": tr.stop_reason})
        out[tag] = {"standard": _matrix_summary(std), "optimized": _matrix_summary(opt)}
    return out


def _convert_job(args):
    n, m, modes, c, params, delay = args
    from .conversion import convert_mode

    r = convert_mode(modes[n], CouplingSpec(c, modes[n]), CouplingSpec(c, modes[m]), params, delay)
    return r.eta_stor, r.eta_tot, r.target_overlap


def run_convert_mode(ctx: Context) -> dict:
    from .conversion import DEFAULT_DELAY, compensate_depletion, convert_mode, gaussian_exponential_scenarios
    from .memory import store

    o = ctx.options
    n_max = o.get("n_max", 8)
    delay = o.get("delay", DEFAULT_DELAY)
    modes = ctx.basis(n_max)
    out = {}
    for c in ctx.couplings:
        tag = _ctag(c)
        pairs = [(n, m) for n in range(n_max) for m in range(n_max)]
        res = ctx.map(_convert_job, [(n, m, modes, c, ctx.params, delay) for n, m in pairs])
        write_table(
            ctx.out / f"conversion_{tag}.csv",
            ("n", "m", "eta_stor", "eta_tot", "target_overlap"),
            [(n, m, *r) for (n, m), r in zip(pairs, res)],
        )
        tot = np.array([r[1] for r in res])
        summary = {
            "eta_tot_min": float(tot.min()),
            "eta_tot_max": float(tot.max()),
            "relative_spread": float((tot.max() - tot.min()) / tot.mean()),
        }
        if "compensate" in o:
            i, j = o["compensate"]["input"], o["compensate"]["output"]
            need = max(i, j) + 1
            basis = modes if need <= n_max else ctx.basis(need)
            write = CouplingSpec(c, basis[i])
            plain_read = CouplingSpec(c, basis[j])
            plain = convert_mode(basis[i], write, plain_read, ctx.params, delay)
            sw = store(basis[i], write, ctx.params).spinwave
            comp_read = compensate_depletion(basis[j], sw, ctx.params, ctx.params.energy_for_coupling(c))
            comp = convert_mode(basis[i], write, comp_read, ctx.params, delay, target=basis[j])
            write_envelope(ctx.out / f"output_plain_{tag}.csv", plain.output)
            write_envelope(ctx.out / f"output_compensated_{tag}.csv", comp.output)
            write_envelope(ctx.out / f"read_control_compensated_{tag}.csv", comp_read.control_shape)
            summary["compensation"] = {
                "input": i,
                "output": j,
                "plain_overlap": plain.target_overlap,
                "compensated_overlap": comp.target_overlap,
                "plain_eta_tot": plain.eta_tot,
                "compensated_eta_tot": comp.eta_tot,
            }
        if o.get("gaussian_exponential", False):
            ge = gaussian_exponential_scenarios(ctx.params, c, c, delay=delay)
            write_table(
                ctx.out / f"gaussian_exponential_{tag}.csv",
                ("input", "output", "eta_stor", "eta_tot", "target_overlap"),
                [(r.meta["input"], r.meta["output"], r.eta_stor, r.eta_tot, r.target_overlap) for r in ge.values()],
            )
            summary["gaussian_exponential"] = {k: r.eta_tot for k, r in ge.items()}
        out[tag] = summary
    return out


def _bandwidth_job(args):
    t_in, f, regime, params, c = args
    from .conversion import bandwidth_convert

    r = bandwidth_convert(t_in, f * t_in, regime, params, c)
    return r.eta_stor, r.eta_tot, r.target_overlap


def run_bandwidth(ctx: Context) -> dict:
    from .conversion import passive_filter_baseline

    o = ctx.options
    t_in = o.get("t_in", 10e-9)
    factors = o.get("factors", [0.8, 1, 2, 4, 6, 8, 10])
    regimes = o.get("regimes", ["constant_energy", "constant_peak"])
    c = ctx.couplings[0]
    items = [(t_in, f, reg, ctx.params, c) for reg in regimes for f in factors]
    res = ctx.map(_bandwidth_job, items)
    rows = [(it[2], it[1], *r) for it, r in zip(items, res)]
    write_table(ctx.out / "bandwidth.csv", ("regime", "f", "eta_stor", "eta_tot", "target_overlap"), rows)
    passive = []
    for f in o.get("passive_factors", factors):
        b = passive_filter_baseline(t_in, f)
        passive.append((f, b.efficiency, f * b.efficiency, b.expansion_impossible))
    write_table(ctx.out / "passive.csv", ("f", "efficiency", "f_times_efficiency", "expansion_impossible"), passive)
    out = {reg: {f"{r[1]:g}": r[3] for r in rows if r[0] == reg} for reg in regimes}
    out["passive"] = {f"{p[0]:g}": p[1] for p in passive}
    return out


def run_waveform(ctx: Context) -> dict:
    from .waveform import (
        EomModel,
        FrequencyResponse,
        drives_from_target,
        eom_chain,
        eom_output,
        normalize_energies,
        predistort,
    )

    o = ctx.options
    grid = ctx.grid
    response = FrequencyResponse.rc_low_pass(o.get("rc_tau", 2e-9), 1.0 / grid.dt)
    model = EomModel(o.get("v_pi", 1.0), o.get("crosstalk_eps", 0.0), o.get("bias_offset", 0.0))
    modes = ctx.basis()
    rng = np.random.default_rng(ctx.seed)
    rows, energy_rows = [], []
    peak = max(float(np.max(np.abs(m.amplitude))) for m in modes)
    chain = eom_chain(model, 1.05 * peak)
    pert = o.get("perturbation", 0.05)
    perturbed = [m.scaled(1.0 + pert * rng.uniform(-1, 1)) for m in modes]
    normalized = normalize_energies(perturbed, 0, chain)
    for k, m in enumerate(modes):
        a = m.amplitude / (1.05 * peak)
        drives = drives_from_target(np.abs(a), np.angle(a), model, grid)
        back = eom_output(drives, model).amplitude
        roundtrip = float(np.max(np.abs(back - a)))
        pre = predistort(m.amplitude.real, response, grid.dt, o.get("floor"))
        drives.to_csv(ctx.out / f"drives_HG{k}.csv", model)
        rows.append((k, roundtrip, pre.residual, pre.guarded_fraction))
        energy_rows.append((k, chain(perturbed[k]).norm_sq, chain(normalized[k]).norm_sq))
    write_table(ctx.out / "waveform.csv", ("mode", "eom_roundtrip_error", "predistortion_residual", "guarded_fraction"), rows)
    write_table(ctx.out / "energies.csv", ("mode", "energy_before", "energy_after"), energy_rows)
    after = np.array([r[2] for r in energy_rows])
    return {
        "max_eom_roundtrip_error": max(r[1] for r in rows),
        "max_predistortion_residual": max(r[2] for r in rows),
        "energy_spread_after": float((after.max() - after.min()) / after.mean()),
        "model": model.meta(),
        "rc_tau": o.get("rc_tau", 2e-9),
    }


def run_calibrate(ctx: Context) -> dict:
    from .grid import hg_mode
    from .memory import calibrate_coupling, storage_efficiency

    target = ctx.options.get("target_eta", 0.300)
    c = ctx.couplings[0]
    sig = hg_mode(0, ctx.grid, ctx.fwhm)
    kappa = calibrate_coupling(sig, ctx.params, c, target, tol=1e-12)
    p = replace(ctx.params, kappa_cal=kappa)
    check = {f"{cc:g}": storage_efficiency(sig, CouplingSpec(cc, sig), p) for cc in (0.60, 1.16, 1.62)}
    res = {"kappa_cal": kappa, "coupling_C": c, "target_eta": target, "matched_eta": check}
    write_json(ctx.out / "calibration.json", res)
    return res


RUNNERS = {
    "crosstalk": run_crosstalk,
    "filter_ratios": run_filter_ratios,
    "tomography": run_tomography,
    "optimize": run_optimize,
    "convert_mode": run_convert_mode,
    "bandwidth": run_bandwidth,
    "waveform": run_waveform,
    "calibrate": run_calibrate,
}


# ------------------------------------------------------------- front end


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def output_root(cli_value: str | None, config: dict) -> Path:
    return Path(cli_value or config.get("output_dir") or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def run_scenario(config: dict, out_root: Path, jobs: int = 1, seed: int | None = None) -> Path:
    """Validate and run one scenario; returns its result directory."""
    config = dict(config)
    if seed is not None:
        config["seed"] = seed
    validate(config)
    name = config.get("name", config["kind"])
    out_root.mkdir(parents=True, exist_ok=True)
    final = out_root / name
    tmp = Path(tempfile.mkdtemp(prefix=f".{name}-", dir=out_root))
    t0 = time.perf_counter()
    try:
        ctx = _context(config, max(1, jobs), tmp)
        result = RUNNERS[config["kind"]](ctx)
        write_json(tmp / "results.json", {"kind": config["kind"], "name": name, "results": result})
        write_json(tmp / "config.json", config)
        files = sorted(p.name for p in tmp.iterdir())
        write_json(
            tmp / "manifest.json",
            {
                "tool": "ramantm",
                "version": __version__,
                "config_sha256": config_hash(config),
                "seed": config.get("seed", 0),
                "wall_time_s": time.perf_counter() - t0,
                "files": {f: hashlib.sha256((tmp / f).read_bytes()).hexdigest() for f in files},
            },
        )
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    tmp.rename(final)
    return final


def _bundled_dir():
    return resources.files("ramantm") / "scenarios"


def list_scenarios() -> list[dict]:
    out = []
    for entry in sorted(_bundled_dir().iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".json"):
            cfg = json.loads(entry.read_text())
            out.append(
                {
                    "name": cfg.get("name", entry.name[:-5]),
                    "criterion": cfg.get("criterion"),
                    "kind": cfg["kind"],
                    "description": cfg.get("description", ""),
                    "file": entry.name,
                }
            )
    return out


def load_config(ref: str) -> dict:
    """A JSON file path, or the name of a bundled scenario."""
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
    else:
        bundled = _bundled_dir() / (ref if ref.endswith(".json") else ref + ".json")
        if not bundled.is_file():
            raise ScenarioError("config.not_found", f"no such config file or bundled scenario: {ref}")
        text = bundled.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("config.malformed_json", str(exc)) from None
    if not isinstance(cfg, dict):
        raise ScenarioError("schema.invalid", "<root>: config must be a JSON object")
    return cfg


def _error(code: str, message: str) -> int:
    print(json.dumps({"status": "error", "code": code, "message": message}, sort_keys=True))
    return 2 if code.startswith(("schema.", "config.")) else 1


def _guard(fn: Callable[[], int]) -> int:
    try:
        return fn()
    except ScenarioError as exc:
        return _error(exc.code, str(exc))
    except Exception as exc:  # surfaced with the raising module's name
        mod = type(exc).__module__.removeprefix("ramantm.")
        return _error(f"{mod}.{type(exc).__name__}", str(exc))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ramantm", description="Raman quantum-memory scenario runner")
    ap.add_argument("--version", action="version", version=f"ramantm {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario (file path or bundled name)")
    r.add_argument("config")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help=f"output root (default: ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    ls = sub.add_parser("list", help="list bundled scenarios")
    ls.add_argument("--json", action="store_true")
    v = sub.add_parser("validate", help="check a scenario against the schema")
    v.add_argument("config")
    sub.add_parser("schema", help="print the scenario JSON schema")
    c = sub.add_parser("calibrate", help="fit kappa_cal so that matched HG_0 storage hits a target")
    c.add_argument("--coupling", type=float, default=0.60)
    c.add_argument("--target", type=float, default=0.300)
    c.add_argument("--n-z", type=int)
    c.add_argument("--out")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "list":
        cat = list_scenarios()
        if args.json:
            print(json.dumps(cat, indent=2))
        else:
            for e in cat:
                print(f"{e['name']:<28} criterion {e['criterion']!s:<3} {e['kind']:<14} {e['description']}")
        return 0

    if args.command == "schema":
        print(json.dumps(SCENARIO_SCHEMA, indent=2))
        return 0

    if args.command == "validate":
        def _validate():
            cfg = load_config(args.config)
            validate(cfg)
            print(json.dumps({"status": "ok", "kind": cfg["kind"]}))
            return 0

        return _guard(_validate)

    if args.command == "calibrate":
        cfg = {"name": "calibrate", "kind": "calibrate", "coupling": args.coupling, "options": {"target_eta": args.target}}
        if args.n_z:
            cfg["params"] = {"n_z": args.n_z}

        def _cal():
            final = run_scenario(cfg, output_root(args.out, cfg))
            res = json.loads((final / "calibration.json").read_text())
            print(json.dumps({"status": "ok", "output": str(final), "kappa_cal": res["kappa_cal"]}))
            return 0

        return _guard(_cal)

    def _run():
        cfg = load_config(args.config)
        final = run_scenario(cfg, output_root(args.out, cfg), args.jobs, args.seed)
        print(json.dumps({"status": "ok", "output": str(final)}))
        return 0

    return _guard(_run)


if __name__ == "__main__":
    sys.exit(main())
