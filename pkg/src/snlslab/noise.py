"""Noise coefficients, Brownian paths and the coefficient fields of the rescaled system.

The noise is ``W(t, ξ) = i Σ_k φ_k(ξ) B_k(t)`` with real bumps ``φ_k`` and independent
real Brownian motions ``B_k``; ``W̃ = 2W``, ``μ = ½ Σ φ_k²`` and ``μ̃ = 4μ``.  Bumps are
isotropic Gaussians ``a exp(-|ξ-c|²/σ²)`` whose derivatives are evaluated in closed form.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from numpy.polynomial import hermite

from .errors import UsageError
from .spectral import ComplexField, Grid

__all__ = [
    "GaussianBump",
    "ConstantBump",
    "NoiseModel",
    "BrownianPaths",
    "NoiseCoefficients",
    "FlatnessReport",
    "sample_paths",
    "eval_W",
    "eval_Wtilde",
    "eval_coeffs",
    "check_flatness",
]


@dataclass(frozen=True)
class GaussianBump:
    amplitude: float
    center: tuple[float, ...]
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise UsageError(f"bump width must be positive, got {self.width}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def _offsets(self, grid: Grid):
        if len(self.center) != grid.d:
            raise UsageError(f"bump center has {len(self.center)} coordinates, grid has d={grid.d}")
        return [xj - cj for xj, cj in zip(grid.coords(), self.center)]

    def fields(self, grid: Grid):
        """Return ``(φ, [∂_jφ], Δφ, Δ²φ)`` sampled on ``grid``."""
        s = self.width**2
        d = grid.d
        r = self._offsets(grid)
        rho = np.zeros(grid.shape)
        for rj in r:
            rho = rho + rj**2
        phi = self.amplitude * np.exp(-rho / s)
        grad = [-2.0 * rj / s * phi for rj in r]
        q = 4.0 * rho / s**2 - 2.0 * d / s
        lap = q * phi
        a = 4.0 / s**2
        bilap = (4.0 * rho * (q / s**2 - 2.0 * a / s) + 2.0 * d * (a - q / s)) * phi
        return phi, grad, lap, bilap

    def hessian(self, grid: Grid) -> np.ndarray:
        s = self.width**2
        r = self._offsets(grid)
        phi = self.fields(grid)[0]
        out = np.empty((grid.d, grid.d) + grid.shape)
        for i in range(grid.d):
            for j in range(i, grid.d):
                hij = 4.0 * r[i] * r[j] / s**2 * phi
                if i == j:
                    hij = hij - 2.0 / s * phi
                out[i, j] = out[j, i] = np.broadcast_to(hij, grid.shape)
        return out

    def derivative_1d(self, order: int, x: np.ndarray, axis: int) -> np.ndarray:
        """``d^order/dx^order exp(-(x-c)²/σ²)`` along one axis (no amplitude)."""
        t = (x - self.center[axis]) / self.width
        coef = np.zeros(order + 1)
        coef[order] = 1.0
        return (-1.0 / self.width) ** order * hermite.hermval(t, coef) * np.exp(-t * t)


@dataclass(frozen=True)
class ConstantBump:
    """Spatially constant coefficient; not asymptotically flat, so test-only."""

    value: float

    def fields(self, grid: Grid):
        phi = np.full(grid.shape, float(self.value))
        zero = np.zeros(grid.shape)
        return phi, [zero] * grid.d, zero, zero

    def hessian(self, grid: Grid) -> np.ndarray:
        return np.zeros((grid.d, grid.d) + grid.shape)


@dataclass
class NoiseCoefficients:
    """Coefficient fields of the rescaled operators at one time."""

    b1: list[ComplexField]
    b2: list[ComplexField]
    c1: ComplexField
    c2: ComplexField


@dataclass
class FlatnessReport:
    threshold: float
    max_order: int
    scores: list[dict[tuple[int, ...], float]]
    passed: bool

    def worst(self) -> float:
        return max((max(s.values()) for s in self.scores if s), default=0.0)


class NoiseModel:
    """A finite family of real noise bumps on a grid plus their static derivative fields.

    Construction certifies asymptotic flatness of every bump (see :func:`check_flatness`)
    unless ``test_only`` is set.
    """

    def __init__(self, grid: Grid, bumps=(), *, flatness_threshold: float = 1e-8,
                 flatness_order: int = 2, test_only: bool = False):
        self.grid = grid
        self.bumps = tuple(bumps)
        self.test_only = test_only
        if any(isinstance(b, ConstantBump) for b in self.bumps) and not test_only:
            raise UsageError("constant bumps are only allowed in test-only models")
        self.flatness = None
        if not test_only:
            self.flatness = check_flatness(self, flatness_order, threshold=flatness_threshold)
            if not self.flatness.passed:
                raise UsageError(
                    f"noise bumps are not flat at the box edge (worst score "
                    f"{self.flatness.worst():.3g} > {flatness_threshold:g}); "
                    "narrow the bumps or enlarge the box")
        shape = (len(self.bumps),) + grid.shape
        self.phi = np.zeros(shape)
        self.grad = np.zeros((len(self.bumps), grid.d) + grid.shape)
        self.lap = np.zeros(shape)
        self.bilap = np.zeros(shape)
        for k, bump in enumerate(self.bumps):
            phi, grad, lap, bilap = bump.fields(grid)
            self.phi[k] = phi
            for j in range(grid.d):
                self.grad[k, j] = grad[j]
            self.lap[k] = lap
            self.bilap[k] = bilap
        self.mu = 0.5 * np.sum(self.phi**2, axis=0)
        self.mu_tilde = 4.0 * self.mu

    @property
    def N(self) -> int:
        return len(self.bumps)

    @cached_property
    def hess(self) -> np.ndarray:
        out = np.zeros((self.N, self.grid.d, self.grid.d) + self.grid.shape)
        for k, bump in enumerate(self.bumps):
            out[k] = bump.hessian(self.grid)
        return out

    def _check_B(self, B) -> np.ndarray:
        B = np.asarray(B, dtype=float).reshape(-1)
        if B.size != self.N:
            raise UsageError(f"expected {self.N} Brownian values, got {B.size}")
        return B

    def combine(self, B, stack: np.ndarray) -> np.ndarray:
        """``Σ_k B_k stack[k]`` for a stack of per-bump fields."""
        B = self._check_B(B)
        if self.N == 0:
            return np.zeros(stack.shape[1:])
        return np.tensordot(B, stack, axes=(0, 0))

    def noise_phase(self, B) -> np.ndarray:
        """Real field ``Σ_k φ_k B_k`` so that ``W = i * noise_phase``."""
        return self.combine(B, self.phi)

    def drift_gradient(self, B) -> np.ndarray:
        """Real fields ``G_j = Σ_k ∂_jφ_k B_k`` stacked along axis 0."""
        return self.combine(B, self.grad)

    def coefficient_arrays(self, B):
        """``(b, c1, c2)`` arrays; ``b`` serves both equations (``b₂ = b₁``)."""
        G = self.drift_gradient(B)
        lapB = self.combine(B, self.lap)
        gsq = np.sum(G**2, axis=0)
        b = 2j * G
        c1 = -gsq + 1j * lapB
        c2 = -2.0 * gsq + 1j * lapB
        return b, c1, c2


@dataclass
class BrownianPaths:
    """``N`` real Brownian paths on the lattice ``t_m = m*dt``, ``m = 0..steps``."""

    values: np.ndarray  # shape (steps + 1, N)
    dt: float
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def T(self) -> float:
        return self.steps * self.dt

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)

    def at_index(self, m: int) -> np.ndarray:
        if not 0 <= m <= self.steps:
            raise UsageError(f"step index {m} outside 0..{self.steps}")
        return self.values[m]

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation of the lattice path at time ``t``."""
        s = t / self.dt
        if s < -1e-9 or s > self.steps * (1 + 1e-12) + 1e-9:
            raise UsageError(f"time {t} outside the path horizon [0, {self.T}]")
        m = min(int(np.floor(s + 1e-9)), max(self.steps - 1, 0))
        if self.steps == 0:
            return self.values[0].copy()
        theta = s - m
        # lattice times return the stored values exactly
        if abs(theta) < 1e-9:
            return self.values[m].copy()
        if abs(theta - 1.0) < 1e-9:
            return self.values[m + 1].copy()
        return (1.0 - theta) * self.values[m] + theta * self.values[m + 1]

    def increment(self, m: int) -> np.ndarray:
        return self.at_index(m + 1) - self.at_index(m)

    def coarsen(self, factor: int) -> "BrownianPaths":
        """Subsample every ``factor``-th lattice point (the same path, coarser lattice)."""
        if factor < 1 or self.steps % factor:
            raise UsageError(f"cannot coarsen {self.steps} steps by {factor}")
        return BrownianPaths(self.values[::factor].copy(), self.dt * factor, self.seed, dict(self.meta))

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write(f"# snlslab brownian v1 seed={self.seed} dt={self.dt!r}\n")
            w = csv.writer(fh)
            w.writerow(["t"] + [f"B_{k + 1}" for k in range(self.N)])
            for t, row in zip(self.times(), self.values):
                w.writerow([repr(float(t))] + [repr(float(b)) for b in row])

    @classmethod
    def zeros(cls, N: int, dt: float, steps: int) -> "BrownianPaths":
        return cls(np.zeros((steps + 1, N)), dt, None)


def sample_paths(N: int, dt: float, steps: int, seed: int) -> BrownianPaths:
    """Independent standard Brownian paths with Gaussian increments of variance ``dt``."""
    if not dt > 0:
        raise UsageError(f"dt must be positive, got {dt}")
    if steps < 0 or N < 0:
        raise UsageError("steps and N must be non-negative")
    rng = np.random.default_rng(seed)
    inc = rng.normal(0.0, np.sqrt(dt), size=(steps, N))
    values = np.zeros((steps + 1, N))
    np.cumsum(inc, axis=0, out=values[1:])
    return BrownianPaths(values, float(dt), seed)


def eval_W(model: NoiseModel, paths: BrownianPaths, m: int) -> ComplexField:
    """``W(t_m) = i Σ_k φ_k B_k(t_m)``."""
    B = paths.at_index(m)
    return ComplexField(model.grid, 1j * model.noise_phase(B))


def eval_Wtilde(model: NoiseModel, paths: BrownianPaths, m: int) -> ComplexField:
    return ComplexField(model.grid, 2j * model.noise_phase(paths.at_index(m)))


def eval_coeffs(model: NoiseModel, paths: BrownianPaths, m: int) -> NoiseCoefficients:
    """``b₁ = 2∇W``, ``b₂ = ∇W̃``, ``c₁ = Σ(∂_jW)² + ΔW``, ``c₂ = ½Σ(∂_jW̃)² + ½ΔW̃``."""
    b, c1, c2 = model.coefficient_arrays(paths.at_index(m))
    g = model.grid
    b1 = [ComplexField(g, bj) for bj in b]
    b2 = [ComplexField(g, bj.copy()) for bj in b]
    return NoiseCoefficients(b1, b2, ComplexField(g, c1), ComplexField(g, c2))


def _multi_indices(d: int, max_order: int):
    for nu in itertools.product(range(max_order + 1), repeat=d):
        if sum(nu) <= max_order:
            yield nu


def check_flatness(model: NoiseModel, max_order: int = 2, threshold: float = 1e-8,
                   shell: float = 0.1) -> FlatnessReport:
    """Audit ``<ξ>² |∂^ν φ_k|`` on the outer shell of the box.

    The shell is the set of grid points with ``max_j |ξ_j| >= (1 - shell) L/2``.  Each
    bump passes if every multi-index with ``|ν| <= max_order`` scores below ``threshold``.
    """
    if max_order < 0:
        raise UsageError("max_order must be non-negative")
    grid = model.grid
    coords = grid.coords()
    sup = np.zeros(grid.shape)
    r2 = np.zeros(grid.shape)
    for xj in coords:
        sup = np.maximum(sup, np.abs(xj))
        r2 = r2 + xj**2
    in_shell = sup >= (1.0 - shell) * 0.5 * grid.L
    bracket_sq = (1.0 + r2)[in_shell]
    scores = []
    for bump in model.bumps:
        per = {}
        for nu in _multi_indices(grid.d, max_order):
            if isinstance(bump, ConstantBump):
                vals = np.full(grid.shape, abs(bump.value) if sum(nu) == 0 else 0.0)
            else:
                vals = abs(bump.amplitude) * np.ones(grid.shape)
                for axis, (order, xj) in enumerate(zip(nu, coords)):
                    vals = vals * np.abs(bump.derivative_1d(order, xj, axis))
            per[nu] = float(np.max(bracket_sq * vals[in_shell])) if bracket_sq.size else 0.0
        scores.append(per)
    passed = all(v < threshold for per in scores for v in per.values())
    return FlatnessReport(threshold, max_order, scores, passed)
