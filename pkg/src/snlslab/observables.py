"""Mass, kinetic, potential and total energy, the energy-rate expression of the rescaled
system, and the coercivity/Gronwall diagnostics evaluated along trajectories.

Conventions: ``M = ‖u‖² + 2‖v‖²``, ``K = ‖∇u‖² + ½‖∇v‖²``, ``P = Re ∫ v conj(u²)`` and
``E = K - 2P``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import UsageError
from .noise import NoiseModel
from .spectral import ComplexField, _check_same_grid, gradient, gradient_norm_sq, h1_norm, l2_norm, laplacian

__all__ = [
    "mass",
    "kinetic",
    "potential",
    "energy",
    "energy_rate_rhs",
    "energy_rate_terms",
    "raw_energy_rate_terms",
    "ObservableRecord",
    "ObservableSeries",
    "BoundsReport",
    "check_bounds",
    "fit_gronwall_constant",
    "measure",
]


def mass(u: ComplexField, v: ComplexField) -> float:
    _check_same_grid(u, v)
    return l2_norm(u) ** 2 + 2.0 * l2_norm(v) ** 2


def kinetic(u: ComplexField, v: ComplexField) -> float:
    _check_same_grid(u, v)
    return gradient_norm_sq(u) + 0.5 * gradient_norm_sq(v)


def potential(u: ComplexField, v: ComplexField) -> float:
    g = _check_same_grid(u, v)
    return float(np.real(np.sum(v.values * np.conj(u.values**2)))) * g.weight


def energy(u: ComplexField, v: ComplexField) -> float:
    return kinetic(u, v) - 2.0 * potential(u, v)


def _im_int(grid, a, b) -> float:
    """``Im ∫ conj(a) b``."""
    return float(np.imag(np.vdot(a, b))) * grid.weight


def energy_rate_terms(y: ComplexField, z: ComplexField, model: NoiseModel, B) -> np.ndarray:
    """The seven groups (i)-(vii) of the reduced energy-rate expression."""
    grid = _check_same_grid(y, z)
    if model.grid != grid:
        raise UsageError("noise model and fields live on different grids")
    B = np.asarray(B, dtype=float)
    out = np.zeros(7)
    if model.N == 0 or not np.any(B):
        return out
    w = grid.weight
    yv, zv = y.values, z.values
    A = model.combine(B, model.bilap)
    out[0] = float(np.sum(A * np.abs(yv) ** 2)) * w
    out[1] = 0.5 * float(np.sum(A * np.abs(zv) ** 2)) * w
    H = model.combine(B, model.hess)
    G = model.drift_gradient(B)
    dy = [f.values for f in gradient(y)]
    dz = [f.values for f in gradient(z)]
    hy = hz = 0.0
    vy = vz = 0.0
    for i in range(grid.d):
        for j in range(grid.d):
            hy += np.sum(H[i, j] * dy[i] * np.conj(dy[j])).real
            hz += np.sum(H[i, j] * dz[i] * np.conj(dz[j])).real
    for j in range(grid.d):
        # ∇(G_j²) = 2 G_j (H[:, j])
        grad_dot_y = sum(H[i, j] * dy[i] for i in range(grid.d))
        grad_dot_z = sum(H[i, j] * dz[i] for i in range(grid.d))
        vy += np.imag(np.sum(2.0 * G[j] * grad_dot_y * np.conj(yv)))
        vz += np.imag(np.sum(2.0 * G[j] * grad_dot_z * np.conj(zv)))
    out[2] = -4.0 * hy * w
    out[3] = -2.0 * hz * w
    out[4] = -2.0 * vy * w
    out[5] = -2.0 * vz * w
    lapB = model.combine(B, model.lap)
    out[6] = 2.0 * float(np.real(np.sum(lapB * zv * np.conj(yv) ** 2))) * w
    return out


def energy_rate_rhs(y: ComplexField, z: ComplexField, model: NoiseModel, B) -> float:
    """``dE(y,z)/dt`` along the rescaled flow, in the reduced (integrated-by-parts) form."""
    return float(np.sum(energy_rate_terms(y, z, model, B)))


def raw_energy_rate_terms(y: ComplexField, z: ComplexField, model: NoiseModel, B) -> np.ndarray:
    """``I_1..I_8``: the energy rate before any cancellation, by direct quadrature.

    With ``L₁y = Δy + b·∇y + c₁y`` and ``L₂z = ½Δz + b·∇z + c₂z`` the rate is
    ``-2 Im ∫ conj(perturbation) · (deterministic vector field)`` split term by term.
    """
    grid = _check_same_grid(y, z)
    B = np.asarray(B, dtype=float)
    if model.N == 0 or not np.any(B):
        return np.zeros(8)
    b, c1, c2 = model.coefficient_arrays(B)
    yv, zv = y.values, z.values
    dy = [f.values for f in gradient(y)]
    dz = [f.values for f in gradient(z)]
    bdy = sum(b[j] * dy[j] for j in range(grid.d))
    bdz = sum(b[j] * dz[j] for j in range(grid.d))
    lap_y = laplacian(y).values
    half_lap_z = laplacian(z, 0.5).values
    cub_y = 2.0 * zv * np.conj(yv)
    sq_y = yv * yv
    pairs = [
        (bdy, lap_y), (bdy, cub_y), (c1 * yv, lap_y), (c1 * yv, cub_y),
        (bdz, half_lap_z), (bdz, sq_y), (c2 * zv, half_lap_z), (c2 * zv, sq_y),
    ]
    return np.array([-2.0 * _im_int(grid, a, f) for a, f in pairs])


@dataclass
class ObservableRecord:
    t: float
    M: float
    K: float
    P: float
    E: float
    dE_rhs: float = float("nan")
    H1_sum: float = float("nan")
    flag_E2: bool = False
    flag_gronwall: bool = False


def measure(t: float, u: ComplexField, v: ComplexField, model: NoiseModel | None = None,
            B=None) -> ObservableRecord:
    K = kinetic(u, v)
    P = potential(u, v)
    rate = float("nan")
    if model is not None and B is not None:
        rate = energy_rate_rhs(u, v, model, B)
    return ObservableRecord(float(t), mass(u, v), K, P, K - 2.0 * P, rate, h1_norm(u) + h1_norm(v))


CSV_HEADER = "# snlslab observables v1"
COLUMNS = [f.name for f in fields(ObservableRecord)]


@dataclass
class ObservableSeries:
    records: list[ObservableRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, rec: ObservableRecord) -> None:
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            extra = " ".join(f"{k}={v}" for k, v in self.meta.items())
            fh.write(f"{CSV_HEADER} {extra}".rstrip() + "\n")
            w = csv.writer(fh)
            w.writerow(COLUMNS)
            for r in self.records:
                w.writerow([int(getattr(r, c)) if c.startswith("flag") else repr(float(getattr(r, c)))
                            for c in COLUMNS])

    @classmethod
    def from_csv(cls, path) -> "ObservableSeries":
        with Path(path).open() as fh:
            head = fh.readline()
            if not head.startswith(CSV_HEADER):
                raise UsageError(f"{path} is not an observables file")
            meta = dict(kv.split("=", 1) for kv in head[len(CSV_HEADER):].split())
            rows = list(csv.DictReader(fh))
        recs = [ObservableRecord(*(bool(int(row[c])) if c.startswith("flag") else float(row[c])
                                   for c in COLUMNS)) for row in rows]
        return cls(recs, meta)


@dataclass
class BoundsReport:
    threshold_applicable: bool
    coercivity_violation: int | None
    envelope_violation: int | None
    notice: str = ""

    @property
    def passed(self) -> bool:
        return self.coercivity_violation is None and self.envelope_violation is None


def _cumulative_kinetic(series: ObservableSeries) -> np.ndarray:
    t, K = series.t, series.column("K")
    out = np.zeros_like(t)
    if t.size > 1:
        out[1:] = np.cumsum(0.5 * (K[1:] + K[:-1]) * np.diff(t))
    return out


def check_bounds(series: ObservableSeries, gs_mass: float, fitC: float, *, rtol: float = 1e-3,
                 atol: float = 1e-8, annotate: bool = True) -> BoundsReport:
    """Audit the coercivity bound and the Gronwall envelope along a series.

    ``gs_mass`` is ``M(φ,ψ)`` (a :class:`GroundState` is accepted too).  Coercivity
    ``E ≥ (1 - sqrt(M₀/M_gs)) K`` is checked with tolerance ``rtol*K + atol``; the
    envelope ``E(t) ≤ E(0) + fitC (1 + ∫₀ᵗ K)`` with tolerance ``atol(1 + |E(0)|)``.
    """
    gs_mass = float(getattr(gs_mass, "mass", gs_mass))
    if not series.records:
        raise UsageError("empty observable series")
    E, K = series.column("E"), series.column("K")
    M0 = series.records[0].M
    applicable = M0 < gs_mass
    coer = None
    notice = ""
    if applicable:
        factor = 1.0 - np.sqrt(M0 / gs_mass)
        bad = E < factor * K - (rtol * K + atol)
        if bad.any():
            coer = int(np.argmax(bad))
        if annotate:
            for r, b in zip(series.records, bad):
                r.flag_E2 = bool(b)
    else:
        notice = f"initial mass {M0:.6g} is not below the ground-state mass {gs_mass:.6g}; coercivity check skipped"
    env_bad = E > E[0] + fitC * (1.0 + _cumulative_kinetic(series)) + atol * (1.0 + abs(E[0]))
    env = int(np.argmax(env_bad)) if env_bad.any() else None
    if annotate:
        for r, b in zip(series.records, env_bad):
            r.flag_gronwall = bool(b)
    return BoundsReport(applicable, coer, env, notice)


def fit_gronwall_constant(series: ObservableSeries) -> float:
    """Smallest ``C ≥ 0`` with ``E(t) ≤ E(0) + C (1 + ∫₀ᵗ K)`` at every record."""
    E = series.column("E")
    excess = np.maximum(E - E[0], 0.0)
    return float(np.max(excess / (1.0 + _cumulative_kinetic(series))))
