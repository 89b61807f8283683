"""Process tomography of the storage map in a dim-dimensional mode subspace.

The storage efficiency of signal state s under control state c is modelled
as the quadratic form ``eta = v^H P v`` with ``v = s (x) conj(c)``. Probes
are all pairs of mutually unbiased basis states; P is recovered by
constrained least squares (the Gaussian maximum-likelihood estimate).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grid import TemporalEnvelope, hg_basis
from .memory import CouplingSpec, MemoryParams, _propagate

HERMITIAN_TOL = 1e-10
PSD_TOL = 1e-8


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    return all(n % k for k in range(2, int(math.isqrt(n)) + 1))


@dataclass(frozen=True, eq=False)
class MubSet:
    """``bases[k, j]`` is state j of basis k, as coefficients over the HG basis.

    Basis 0 is the computational basis.
    """

    dim: int
    bases: np.ndarray

    @property
    def states(self) -> np.ndarray:
        return self.bases.reshape(-1, self.dim)

    @property
    def labels(self) -> list[tuple[int, int]]:
        return [(k, j) for k in range(self.dim + 1) for j in range(self.dim)]

    def max_unbiasedness_error(self) -> float:
        g = np.abs(self.states.conj() @ self.states.T) ** 2
        nb = self.dim + 1
        target = np.full((nb, nb), 1.0 / self.dim)
        err = 0.0
        for a in range(nb):
            for b in range(nb):
                blk = g[a * self.dim : (a + 1) * self.dim, b * self.dim : (b + 1) * self.dim]
                ref = np.eye(self.dim) if a == b else target[a, b]
                err = max(err, float(np.max(np.abs(blk - ref))))
        return err


def generate_mubs(dim: int = 5) -> MubSet:
    """Complete set of dim + 1 mutually unbiased bases for prime ``dim``.

    For odd primes, basis k >= 1 holds the vectors
    ``|k, j>_l = omega^(k' l^2 + j l) / sqrt(dim)`` with k' = k - 1 and
    omega = exp(2 pi i / dim). For dim = 2 the eigenbases of X and Y are used.
    """
    if not is_prime(dim):
        raise ValueError(f"MUB construction needs a prime dimension, got {dim}")
    bases = [np.eye(dim, dtype=complex)]
    if dim == 2:
        s = 1 / math.sqrt(2)
        bases.append(np.array([[s, s], [s, -s]], dtype=complex))
        bases.append(np.array([[s, 1j * s], [s, -1j * s]], dtype=complex))
    else:
        omega = np.exp(2j * np.pi / dim)
        l = np.arange(dim)
        for k in range(dim):
            b = np.array([omega ** ((k * l * l + j * l) % dim) for j in range(dim)])
            bases.append(b / math.sqrt(dim))
    return MubSet(dim, np.array(bases))


@dataclass(frozen=True, eq=False)
class ProcessMatrix:
    """Hermitian PSD matrix on signal (x) conj(control), index i * dim + a.

    The eigenvalue bound is ``dim``: the lossless ideal filter has a single
    eigenvalue equal to dim.
    """

    dim: int
    matrix: np.ndarray
    eta_stor: float | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        n = self.dim * self.dim
        if m.shape != (n, n):
            raise ValueError(f"process matrix must be {n} x {n}")
        scale = max(1.0, float(np.max(np.abs(m))))
        if np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL * scale:
            raise ValueError("process matrix is not Hermitian")
        m = 0.5 * (m + m.conj().T)
        ev = np.linalg.eigvalsh(m)
        if ev[0] < -PSD_TOL * scale:
            raise ValueError(f"process matrix is not PSD (min eigenvalue {ev[0]:.3e})")
        if ev[-1] > self.dim + 1e-6:
            raise ValueError("process matrix eigenvalue exceeds dim")
        object.__setattr__(self, "matrix", m)

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def normalized(self) -> np.ndarray:
        """Q = P / eta_stor."""
        if not self.eta_stor:
            raise ValueError("eta_stor is not set")
        return self.matrix / self.eta_stor

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "re": self.matrix.real.ravel().tolist(),
            "im": self.matrix.imag.ravel().tolist(),
            "eta_stor": self.eta_stor,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ProcessMatrix":
        n = obj["dim"] ** 2
        m = (np.array(obj["re"]) + 1j * np.array(obj["im"])).reshape(n, n)
        return cls(obj["dim"], m, obj.get("eta_stor"))


def ideal_filter(dim: int, eta: float = 1.0) -> np.ndarray:
    """eta * dim * |w><w| with w = sum_k |k>|k> / sqrt(dim)."""
    w = np.eye(dim).reshape(-1) / math.sqrt(dim)
    return eta * dim * np.outer(w, w).astype(complex)


def probe_vector(signal: np.ndarray, control: np.ndarray) -> np.ndarray:
    return np.kron(np.asarray(signal, complex), np.conj(np.asarray(control, complex)))


def forward_efficiency(P: ProcessMatrix | np.ndarray, signal, control) -> float:
    m = P.matrix if isinstance(P, ProcessMatrix) else np.asarray(P)
    v = probe_vector(signal, control)
    if v.size != m.shape[0]:
        raise ValueError("state dimension does not match the process matrix")
    return float(np.vdot(v, m @ v).real)


@dataclass
class EfficiencyDataset:
    dim: int
    signal_states: np.ndarray
    control_states: np.ndarray
    eta: np.ndarray
    sigma: np.ndarray
    labels: list = field(default_factory=list)  # (signal_basis, signal_index, control_basis, control_index)

    def __post_init__(self):
        self.eta = np.asarray(self.eta, float)
        self.sigma = np.asarray(self.sigma, float)
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be non-negative")

    def __len__(self) -> int:
        return len(self.eta)

    def design(self) -> np.ndarray:
        """Rows are probe vectors v."""
        return np.array([probe_vector(s, c) for s, c in zip(self.signal_states, self.control_states)])

    def matched_efficiency(self) -> float:
        """Mean eta over matched computational-basis pairs."""
        vals = [e for e, (sb, si, cb, ci) in zip(self.eta, self.labels) if sb == cb == 0 and si == ci]
        return float(np.mean(vals)) if vals else float("nan")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["signal_basis", "signal_index", "control_basis", "control_index", "eta", "sigma"])
            for lab, e, s in zip(self.labels, self.eta, self.sigma):
                w.writerow([*lab, repr(float(e)), repr(float(s))])

    @classmethod
    def from_csv(cls, path, dim: int) -> "EfficiencyDataset":
        mubs = generate_mubs(dim)
        labels, eta, sigma = [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                labels.append(
                    (int(row["signal_basis"]), int(row["signal_index"]), int(row["control_basis"]), int(row["control_index"]))
                )
                eta.append(float(row["eta"]))
                sigma.append(float(row["sigma"]))
        sig = np.array([mubs.bases[a, b] for a, b, _, _ in labels])
        ctl = np.array([mubs.bases[c, d] for _, _, c, d in labels])
        return cls(dim, sig, ctl, eta, sigma, labels)


def _pairs(mubs: MubSet):
    states, labels = mubs.states, mubs.labels
    for ci, c in enumerate(states):
        for si, s in enumerate(states):
            yield s, c, (*labels[si], *labels[ci])


def synthetic_dataset(P: ProcessMatrix | np.ndarray, mubs: MubSet, sigma: float = 1e-3) -> EfficiencyDataset:
    """Noiseless MUB dataset generated from a known process matrix."""
    sig, ctl, eta, labels = [], [], [], []
    for s, c, lab in _pairs(mubs):
        sig.append(s)
        ctl.append(c)
        eta.append(forward_efficiency(P, s, c))
        labels.append(lab)
    return EfficiencyDataset(mubs.dim, np.array(sig), np.array(ctl), eta, np.full(len(eta), sigma), labels)


def simulate_mub_dataset(
    coupling_C: float,
    params: MemoryParams,
    mubs: MubSet | None = None,
    noise: float = 0.0,
    counts: int | None = None,
    seed: int = 0,
    control_modes: Sequence[TemporalEnvelope] | None = None,
    signal_modes: Sequence[TemporalEnvelope] | None = None,
) -> EfficiencyDataset:
    """Run the storage solver on every signal/control MUB pair.

    Signals are MUB superpositions of ``signal_modes`` (HG_0.. by default);
    controls are the same superpositions of ``control_modes`` (the signal
    modes by default, or e.g. per-mode optimized controls), renormalized to
    unit energy so that every probe uses the same coupling strength.
    ``noise`` is a relative Gaussian error; ``counts`` adds Poisson counting
    noise with that many expected reference counts.
    """
    mubs = mubs or generate_mubs(5)
    d = mubs.dim
    signal_modes = list(signal_modes) if signal_modes is not None else hg_basis(d)
    control_modes = list(control_modes) if control_modes is not None else signal_modes
    grid = signal_modes[0].grid
    sig_amp = np.array([m.amplitude for m in signal_modes])
    ctl_amp = np.array([m.amplitude for m in control_modes])
    states = mubs.states
    signals = states @ sig_amp
    n_in = np.sum(np.abs(signals) ** 2, axis=1) * grid.dt
    w = params.space_grid.weights
    eta = np.zeros((len(states), len(states)))  # [control, signal]
    for ci, c in enumerate(states):
        shape = TemporalEnvelope(grid, c @ ctl_amp)
        if coupling_C == 0:
            continue
        traj = _propagate(signals, CouplingSpec(coupling_C, shape.normalized()).rabi(params), grid.dt, params)
        eta[ci] = (np.abs(traj.b_final) ** 2 @ w) / n_in
    eta = eta.reshape(-1)
    rng = np.random.default_rng(seed)
    sigma = np.full(eta.shape, 1e-3)
    if noise > 0:
        eta = eta * (1.0 + noise * rng.standard_normal(eta.shape))
        sigma = np.maximum(noise * np.abs(eta), 1e-6)
    if counts is not None:
        from .detection import count_noise

        eta, sigma = count_noise(eta, counts, rng)
    eta = np.clip(eta, 0.0, 1.0)
    sig, ctl, labels = [], [], []
    for s, c, lab in _pairs(mubs):
        sig.append(s)
        ctl.append(c)
        labels.append(lab)
    return EfficiencyDataset(d, np.array(sig), np.array(ctl), eta, sigma, labels)


def _project_eigs(ev: np.ndarray, trace: float | None, cap: float) -> np.ndarray:
    """Euclidean projection of eigenvalues onto {0 <= x <= cap, sum x = trace}."""
    if trace is None:
        return np.clip(ev, 0.0, cap)
    trace = min(trace, cap * ev.size)
    lo, hi = ev.min() - cap, ev.max()
    for _ in range(200):
        mu = 0.5 * (lo + hi)
        if np.clip(ev - mu, 0.0, cap).sum() > trace:
            lo = mu
        else:
            hi = mu
    return np.clip(ev - 0.5 * (lo + hi), 0.0, cap)


def _partial_trace_signal(m: np.ndarray, d: int) -> np.ndarray:
    return np.einsum("iaib->ab", m.reshape(d, d, d, d))


def _project_tp(m: np.ndarray, d: int, trace: float) -> np.ndarray:
    """Orthogonal projection onto {Tr_signal P = (trace / d) I}."""
    x = _partial_trace_signal(m, d) - (trace / d) * np.eye(d)
    return m - np.kron(np.eye(d) / d, x)


def parameter_count(dim: int, trace_preserving: bool = True) -> int:
    """Real degrees of freedom of the constrained process-matrix set.

    Counted numerically as dim^4 minus the rank of the linear constraints
    acting on Hermitian matrices (fixed trace and, when
    ``trace_preserving``, Tr_signal P proportional to the identity).
    """
    d = dim
    n = d * d
    basis = []
    for i in range(n):
        for j in range(i, n):
            e = np.zeros((n, n), complex)
            e[i, j] = e[j, i] = 1.0
            basis.append(e)
            if i != j:
                f = np.zeros((n, n), complex)
                f[i, j], f[j, i] = 1j, -1j
                basis.append(f)
    rows = []
    for h in basis:
        c = [np.trace(h).real]
        if trace_preserving:
            x = _partial_trace_signal(h, d)
            c.extend(x.real.ravel())
            c.extend(x.imag.ravel())
        rows.append(c)
    rank = np.linalg.matrix_rank(np.array(rows), tol=1e-9)
    return len(basis) - rank


@dataclass
class Reconstruction:
    process: ProcessMatrix
    objective: float
    iterations: int
    converged: bool


def reconstruct(
    dataset: EfficiencyDataset,
    dim: int | None = None,
    trace: float | str | None = "data",
    trace_preserving: bool = False,
    eig_cap: float | None = None,
    max_iters: int = 10_000,
    rtol: float = 1e-10,
) -> Reconstruction:
    """Constrained least-squares (Gaussian ML) estimate of P.

    Minimizes sum(((v^H P v - eta) / sigma)^2) over Hermitian P with
    0 <= eigenvalues <= ``eig_cap`` (default dim) and, unless ``trace`` is
    None, Tr P fixed. ``trace="data"`` takes it from the measured
    efficiencies: within each pair of bases the dim^2 probe vectors form an
    orthonormal basis, so the summed efficiencies of a block equal Tr P.
    ``trace_preserving`` also imposes Tr_signal P = (Tr P / dim) I. The
    problem is convex; it is solved by accelerated projected gradient with
    adaptive restart. Non-convergence is reported in the result.
    """
    d = dim or dataset.dim
    n = d * d
    V = dataset.design()
    if V.shape[1] != n:
        raise ValueError("dataset dimension does not match dim")
    if np.linalg.matrix_rank(np.einsum("ki,kj->kij", V.conj(), V).reshape(len(V), -1)) < n * n:
        raise ValueError("dataset is not informationally complete")
    sigma = np.where(dataset.sigma > 0, dataset.sigma, 1.0)
    wts = 1.0 / sigma**2
    y = dataset.eta
    cap = float(d if eig_cap is None else eig_cap)
    if trace == "data":
        trace = _trace_from_data(dataset)
    if trace_preserving and trace is None:
        raise ValueError("trace_preserving needs a fixed trace")

    def predict(m):
        return np.einsum("ki,ij,kj->k", V.conj(), m, V).real

    def objective(m):
        return float(np.sum(wts * (predict(m) - y) ** 2))

    def grad(m):
        r = 2.0 * wts * (predict(m) - y)
        return (V.T * r) @ V.conj()

    def project_spectral(m):
        ev, u = np.linalg.eigh(m)
        return (u * _project_eigs(ev, trace, cap)) @ u.conj().T

    def project(m):
        m = 0.5 * (m + m.conj().T)
        if not trace_preserving:
            return project_spectral(m)
        # Dykstra's algorithm: exact projection onto the intersection
        x, p_inc, q_inc = m, np.zeros_like(m), np.zeros_like(m)
        for _ in range(2000):
            y = project_spectral(x + p_inc)
            p_inc = x + p_inc - y
            x_new = _project_tp(y + q_inc, d, trace)
            q_inc = y + q_inc - x_new
            done = np.max(np.abs(x_new - y)) < 1e-12 and np.max(np.abs(x_new - x)) < 1e-12
            x = x_new
            if done:
                break
        return 0.5 * (x + x.conj().T)

    # Lipschitz constant of the gradient
    A = V.conj()[:, :, None] * V[:, None, :]
    A = A.reshape(len(V), -1) * np.sqrt(wts)[:, None]
    lip = 2.0 * np.linalg.norm(A, 2) ** 2
    p0 = np.eye(n, dtype=complex) * ((trace if trace is not None else max(y.mean(), 1e-12) * d) / n)
    p = project(p0)
    z, t_k = p.copy(), 1.0
    f = objective(p)
    scale0 = max(f, np.sum(wts * y**2), 1e-300)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        p_new = project(z - grad(z) / lip)
        f_new = objective(p_new)
        if f_new > f:
            # adaptive restart
            z, t_k = p.copy(), 1.0
            continue
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k))
        z = p_new + ((t_k - 1.0) / t_next) * (p_new - p)
        improvement = f - f_new
        p, f, t_k = p_new, f_new, t_next
        if improvement <= rtol * max(f, 1e-300) or f <= 1e-28 * scale0:
            converged = True
            break
    p = 0.5 * (p + p.conj().T)
    return Reconstruction(ProcessMatrix(d, p, dataset.matched_efficiency()), f, it, converged)


def _trace_from_data(dataset: EfficiencyDataset) -> float:
    blocks: dict = {}
    for e, (sb, _, cb, _) in zip(dataset.eta, dataset.labels):
        blocks.setdefault((sb, cb), []).append(e)
    full = [sum(v) for v in blocks.values() if len(v) == dataset.dim**2]
    if not full:
        raise ValueError("no complete basis-pair block to fix the trace")
    return float(np.mean(full))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    ev, u = np.linalg.eigh(0.5 * (m + m.conj().T))
    scale = max(1.0, float(np.max(np.abs(ev))))
    if ev[0] < -PSD_TOL * scale:
        raise ValueError("fidelity needs PSD arguments")
    return (u * np.sqrt(np.clip(ev, 0.0, None))) @ u.conj().T


def fidelity(a: np.ndarray | ProcessMatrix, b: np.ndarray | ProcessMatrix) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(A) B sqrt(A)))^2 of trace-normalized A, B."""
    a = a.matrix if isinstance(a, ProcessMatrix) else np.asarray(a, complex)
    b = b.matrix if isinstance(b, ProcessMatrix) else np.asarray(b, complex)
    a = a / np.trace(a).real
    b = b / np.trace(b).real
    sa = _psd_sqrt(a)
    m = sa @ b @ sa
    ev = np.clip(np.linalg.eigvalsh(0.5 * (m + m.conj().T)), 0.0, None)
    return float(min(1.0, np.sum(np.sqrt(ev)) ** 2))


def reduced_process(P: ProcessMatrix | np.ndarray, control) -> np.ndarray:
    """P_Om = (I (x) conj(c))^H P (I (x) conj(c)) on the signal space."""
    m = P.matrix if isinstance(P, ProcessMatrix) else np.asarray(P)
    c = np.asarray(control, complex)
    d = c.size
    return np.einsum("iajb,a,b->ij", m.reshape(d, d, d, d), c, np.conj(c))


def single_modeness(P: ProcessMatrix | np.ndarray, control) -> float | None:
    """Largest eigenvalue of P_Om over its trace; None when the trace is zero."""
    ev = np.linalg.eigvalsh(reduced_process(P, control))
    tr = ev.sum()
    if tr <= 1e-15:
        return None
    return float(ev[-1] / tr)


def random_control_ensemble(dim: int, count: int, seed: int = 0) -> np.ndarray:
    """Unit vectors drawn uniformly from the complex sphere in C^dim."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((count, dim)) + 1j * rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1)[:, None]


def kappa_statistics(P, dim: int, n_controls: int = 1000, seed: int = 0) -> tuple[float, float]:
    ks = [single_modeness(P, c) for c in random_control_ensemble(dim, n_controls, seed)]
    ks = np.array([k for k in ks if k is not None])
    return float(ks.mean()), float(ks.std())


def tomography_report(
    coupling_C: float,
    params: MemoryParams,
    dim: int = 5,
    control_modes: Sequence[TemporalEnvelope] | None = None,
    n_controls: int = 1000,
    seed: int = 0,
    noise: float = 0.0,
) -> dict:
    """Simulate, reconstruct and score against the ideal filter."""
    mubs = generate_mubs(dim)
    data = simulate_mub_dataset(coupling_C, params, mubs, noise=noise, seed=seed, control_modes=control_modes)
    rec = reconstruct(data, dim)
    k_mean, k_std = kappa_statistics(rec.process, dim, n_controls, seed)
    return {
        "fidelity": fidelity(rec.process, ideal_filter(dim)),
        "eta_stor": rec.process.eta_stor,
        "kappa_mean": k_mean,
        "kappa_std": k_std,
        "n_controls": n_controls,
        "seed": seed,
        "objective": rec.objective,
        "converged": rec.converged,
    }


def linearized_process_matrix(
    coupling_C: float,
    params: MemoryParams,
    dim: int = 5,
    control_modes: Sequence[TemporalEnvelope] | None = None,
) -> ProcessMatrix:
    """P = L^H L from the spin-waves of all (signal k, control m) basis pairs.

    This is the process the memory would have if the stored spin-wave were
    bilinear in signal and control amplitudes. The true map is not (the
    control shape also warps the interaction time), so this differs from the
    tomographic estimate; it is a diagnostic, not a reconstruction.
    """
    modes = hg_basis(dim)
    controls = list(control_modes) if control_modes is not None else modes
    grid = modes[0].grid
    amps = np.array([m.amplitude for m in modes])
    w = np.sqrt(params.space_grid.weights)
    cols = np.zeros((dim, dim, params.space_grid.n_samples), complex)
    for a, c in enumerate(controls):
        traj = _propagate(amps, CouplingSpec(coupling_C, c.normalized()).rabi(params), grid.dt, params)
        cols[:, a, :] = traj.b_final * w
    lam = cols.reshape(dim * dim, -1).T
    p = lam.conj().T @ lam
    return ProcessMatrix(dim, 0.5 * (p + p.conj().T), float(np.mean(np.real(np.diag(p))[:: dim + 1])))


def save_metrics(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
