"""Ground state of the coupled elliptic system and the sharp Gagliardo-Nirenberg constant.

The ground state is the positive radial solution of::

    -Δφ + φ = 2ψφ,    -½Δψ + 2ψ = φ²

Two independent solvers are provided: a radial shooting method on the ODE in
``r = |ξ|`` (lifted to a grid by cubic interpolation) and a stabilized
imaginary-time flow directly on the grid.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import root
from scipy.integrate import simpson
from scipy.special import gamma, kve

from .errors import ConvergenceError, DegenerateSolutionError, DomainError, UsageError
from .spectral import ComplexField, Grid, gradient_norm_sq, l2_norm, laplacian

__all__ = [
    "GroundState",
    "RadialProfile",
    "shoot_radial",
    "solve_ground_state",
    "elliptic_residual",
    "gn_ratio",
    "action",
    "dilate",
    "dilation_derivative",
    "save_profile",
    "load_profile",
]

# Rough central values used only to seed the shooting root finder.
_SHOOT_GUESS = {1: (1.44, 0.84), 2: (2.22, 1.51), 3: (3.8, 2.95), 4: (7.8, 6.8)}


@dataclass(frozen=True)
class RadialProfile:
    """Radial ground state ``(φ(r), ψ(r))`` on a dense mesh plus its far-field tail."""

    d: int
    r: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    dphi: np.ndarray
    dpsi: np.ndarray
    tail: tuple[float, float]  # amplitudes of the decaying Bessel tails
    r_far: float
    match_residual: float

    @property
    def center(self) -> tuple[float, float]:
        return float(self.phi[0]), float(self.psi[0])

    def _tail(self, r):
        nu = self.d / 2 - 1
        c1, c2 = self.tail
        phi = c1 * np.exp(-r) * r**-nu * kve(nu, r)
        psi = c2 * np.exp(-2 * r) * r**-nu * kve(nu, 2 * r)
        return phi, psi

    def __call__(self, r) -> tuple[np.ndarray, np.ndarray]:
        r = np.asarray(r, dtype=float)
        inside = r <= self.r_far
        phi = np.empty_like(r)
        psi = np.empty_like(r)
        phi[inside] = CubicSpline(self.r, self.phi)(r[inside])
        psi[inside] = CubicSpline(self.r, self.psi)(r[inside])
        if not inside.all():
            tp, tq = self._tail(r[~inside])
            phi[~inside] = tp
            psi[~inside] = tq
        return phi, psi

    def _radial_integral(self, f: np.ndarray) -> float:
        area = 2 * np.pi ** (self.d / 2) / gamma(self.d / 2)
        return float(area * simpson(f * self.r ** (self.d - 1), x=self.r))

    def mass(self) -> float:
        """``M = ‖φ‖² + 2‖ψ‖²`` by radial quadrature (tail beyond ``r_far`` neglected)."""
        return self._radial_integral(self.phi**2 + 2 * self.psi**2)

    def functionals(self) -> tuple[float, float, float]:
        """``(M, K, P)`` of the radial solution by radial quadrature."""
        K = self._radial_integral(self.dphi**2 + 0.5 * self.dpsi**2)
        P = self._radial_integral(self.psi * self.phi**2)
        return self.mass(), K, P


@dataclass
class GroundState:
    phi: ComplexField
    psi: ComplexField
    mass: float
    residual: tuple[float, float]
    method: str = "flow"
    iterations: int = 0
    profile: RadialProfile | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.phi.grid != self.psi.grid:
            raise UsageError("phi and psi live on different grids")
        if not self.mass > 0:
            raise DegenerateSolutionError("ground state has non-positive mass")

    @property
    def grid(self) -> Grid:
        return self.phi.grid

    @property
    def gn_coefficient(self) -> float:
        return 1.0 / (2.0 * np.sqrt(self.mass))


def _radial_rhs(d):
    def rhs(r, y):
        p, dp, q, dq = y
        return [dp, -(d - 1) / r * dp + p - 2 * q * p, dq, -(d - 1) / r * dq + 4 * q - 2 * p * p]
    return rhs


def _series_start(d, a, b, r0):
    p2 = (a - 2 * a * b) / d
    q2 = (4 * b - 2 * a * a) / d
    return [a + 0.5 * p2 * r0**2, p2 * r0, b + 0.5 * q2 * r0**2, q2 * r0]


def _tail_state(d, c1, c2, R):
    nu = d / 2 - 1
    g = R**-nu
    return [c1 * g * kve(nu, R) * np.exp(-R), -c1 * g * kve(nu + 1, R) * np.exp(-R),
            c2 * g * kve(nu, 2 * R) * np.exp(-2 * R), -2 * c2 * g * kve(nu + 1, 2 * R) * np.exp(-2 * R)]


def shoot_radial(d: int = 4, *, r_match: float = 1.5, r_far: float = 15.0, tol: float = 1e-12,
                 guess=None, r0: float = 1e-4, samples: int = 20001) -> RadialProfile:
    """Fitting-point shooting for the positive decaying radial solution.

    Integrates outward from the regular center (unknowns ``φ(0), ψ(0)``) and inward
    from ``r_far`` along the decaying Bessel tails (unknown amplitudes), and solves for
    the four unknowns that make both branches meet at ``r_match``.
    """
    if d not in _SHOOT_GUESS:
        raise UsageError(f"dimension must be in 1..4, got {d}")
    rhs = _radial_rhs(d)
    opts = dict(method="DOP853", rtol=1e-13, atol=1e-30)

    def mismatch(x):
        a, b, c1, c2 = x
        out = solve_ivp(rhs, (r0, r_match), _series_start(d, a, b, r0), **opts).y[:, -1]
        inn = solve_ivp(rhs, (r_far, r_match), _tail_state(d, c1, c2, r_far), **opts).y[:, -1]
        return out - inn

    seeds = [guess] if guess is not None else []
    a0, b0 = _SHOOT_GUESS[d]
    seeds += [(a0, b0, 1.0, 1.0), (a0, b0, 10.0, 10.0), (1.2 * a0, 1.2 * b0, 1.0, 1.0)]
    best = None
    for s in seeds:
        s = tuple(s) + (1.0, 1.0)[: 4 - len(s)]
        sol = root(mismatch, s, method="hybr", tol=1e-14)
        res = float(np.max(np.abs(sol.fun)))
        if best is None or res < best[1]:
            best = (sol.x, res)
        if res < tol and sol.x[0] > 0 and sol.x[1] > 0:
            break
    x, res = best
    if not (res < tol and x[0] > 0 and x[1] > 0):
        raise ConvergenceError(f"radial shooting did not converge (mismatch {res:.3g})", residual=res)
    a, b, c1, c2 = x
    n_in = max(samples // 8, 50)
    r_in = np.linspace(r0, r_match, n_in)
    r_out = np.linspace(r_match, r_far, samples - n_in + 1)[1:]
    y_in = solve_ivp(rhs, (r0, r_match), _series_start(d, a, b, r0), t_eval=r_in, **opts).y
    y_out = solve_ivp(rhs, (r_far, r_match), _tail_state(d, c1, c2, r_far), t_eval=r_out[::-1], **opts).y[:, ::-1]
    r = np.concatenate([[0.0], r_in, r_out])
    phi = np.concatenate([[a], y_in[0], y_out[0]])
    psi = np.concatenate([[b], y_in[2], y_out[2]])
    dphi = np.concatenate([[0.0], y_in[1], y_out[1]])
    dpsi = np.concatenate([[0.0], y_in[3], y_out[3]])
    return RadialProfile(d, r, phi, psi, dphi, dpsi, (float(c1), float(c2)), float(r_far), res)


def elliptic_residual(gs_or_phi, psi: ComplexField | None = None) -> tuple[float, float]:
    """``(‖-Δφ + φ - 2ψφ‖, ‖-½Δψ + 2ψ - φ²‖)`` in L² on the grid."""
    if psi is None:
        phi, psi = gs_or_phi.phi, gs_or_phi.psi
    else:
        phi = gs_or_phi
    r1 = -laplacian(phi) + phi - 2.0 * psi * phi
    r2 = -laplacian(psi, 0.5) + 2.0 * psi - phi * phi
    return l2_norm(r1), l2_norm(r2)


def _mass(phi: ComplexField, psi: ComplexField) -> float:
    return l2_norm(phi) ** 2 + 2.0 * l2_norm(psi) ** 2


def action(phi: ComplexField, psi: ComplexField) -> float:
    """``I = ½M + ½E`` with ``E = K - 2P``."""
    K = gradient_norm_sq(phi) + 0.5 * gradient_norm_sq(psi)
    P = float(np.real(np.sum(psi.values * np.conj(phi.values**2)))) * phi.grid.weight
    return 0.5 * _mass(phi, psi) + 0.5 * (K - 2.0 * P)


def lift(profile: RadialProfile, grid: Grid) -> tuple[ComplexField, ComplexField]:
    if profile.d != grid.d:
        raise UsageError(f"profile has d={profile.d}, grid has d={grid.d}")
    phi, psi = profile(grid.radius())
    return ComplexField(grid, phi), ComplexField(grid, psi)


def _reflect_average(f: np.ndarray) -> np.ndarray:
    """Average over reflections ``ξ_j -> -ξ_j`` (grid index ``i -> -i mod n``)."""
    for ax in range(f.ndim):
        f = 0.5 * (f + np.roll(np.flip(f, ax), 1, ax))
    return f


def _gaussian_init(grid: Grid, amplitude: float = 3.0, width: float = 1.0):
    r2 = grid.radius() ** 2
    g = amplitude * np.exp(-r2 / width**2)
    return g, g.copy()


def _flow(grid: Grid, phi: np.ndarray, psi: np.ndarray, tol: float, max_iter: int, damping: float,
          symmetrize: bool, callback=None):
    """Stabilized preconditioned imaginary-time iteration on real arrays.

    Each step replaces ``w`` by ``(1-τ)w + τ S² L⁻¹N(w)`` with ``L = diag(1-Δ, 2-½Δ)``,
    ``N = (2ψφ, φ²)`` and ``S`` the ratio that puts the iterate on the Nehari manifold.
    Fixed points with ``S = 1`` are exactly the discrete solutions of the elliptic system.
    """
    d, n = grid.d, grid.n
    axes = tuple(range(d))
    kr = 2 * np.pi * np.fft.rfftfreq(n, grid.h)
    ks = np.meshgrid(*([grid.k] * (d - 1) + [kr]), indexing="ij", sparse=True)
    ksq = sum(k**2 for k in ks)
    lp = 1.0 + ksq
    lq = 2.0 + 0.5 * ksq
    F = lambda a: sfft.rfftn(a, axes=axes, workers=-1)
    Fi = lambda c: sfft.irfftn(c, s=(n,) * d, axes=axes, workers=-1)
    w = grid.weight
    res = (np.inf, np.inf)
    for it in range(max_iter + 1):
        n_phi = 2.0 * psi * phi
        n_psi = phi * phi
        cp, cq = F(phi), F(psi)
        r1 = Fi(lp * cp) - n_phi
        r2 = Fi(lq * cq) - n_psi
        res = (float(np.sqrt(np.sum(r1 * r1) * w)), float(np.sqrt(np.sum(r2 * r2) * w)))
        del r1, r2
        if callback is not None:
            callback(it, res)
        if not np.all(np.isfinite(res)):
            raise ConvergenceError("ground-state flow produced non-finite values", residual=res)
        if max(res) < tol:
            return phi, psi, res, it
        if it == max_iter:
            break
        num = float(np.sum(phi * Fi(lp * cp)) + 2.0 * np.sum(psi * Fi(lq * cq)))
        den = float(np.sum(n_phi * phi) + 2.0 * np.sum(n_psi * psi))
        if not (den > 0 and num > 0):
            raise DegenerateSolutionError("flow collapsed onto the trivial solution")
        s2 = (num / den) ** 2
        phi = (1 - damping) * phi + damping * s2 * Fi(F(n_phi) / lp)
        psi = (1 - damping) * psi + damping * s2 * Fi(F(n_psi) / lq)
        if symmetrize:
            phi = _reflect_average(phi)
            psi = _reflect_average(psi)
    raise ConvergenceError(f"ground-state flow did not reach tol={tol:g} in {max_iter} iterations "
                           f"(residual {max(res):.3g})", residual=res)


def solve_ground_state(grid: Grid, method: str = "flow", tol: float = 1e-9, *, init=None,
                       max_iter: int = 400, damping: float = 0.7, symmetrize: bool = True,
                       neg_floor: float = 1e-3, callback=None) -> GroundState:
    """Compute the ground state on ``grid``.

    ``method="flow"`` runs the grid iteration; ``init`` may be ``"shooting"`` (radial
    warm start), ``"gaussian"``, a :class:`GroundState` or a pair of fields.  The default
    is the shooting warm start.  ``method="shooting"`` returns the interpolated radial
    solution; its grid residual is recorded but limited by the grid resolution.
    """
    if not tol > 0:
        raise UsageError("tol must be positive")
    if method == "shooting":
        prof = shoot_radial(grid.d)
        phi, psi = lift(prof, grid)
        return GroundState(phi, psi, _mass(phi, psi), elliptic_residual(phi, psi), "shooting",
                           0, prof, {"profile_mass": prof.mass(), "match_residual": prof.match_residual})
    if method != "flow":
        raise UsageError(f"method must be 'flow' or 'shooting', got {method!r}")
    prof = None
    if init is None or init == "shooting":
        prof = shoot_radial(grid.d)
        phi0, psi0 = (f.real.copy() for f in lift(prof, grid))
    elif init == "gaussian":
        phi0, psi0 = _gaussian_init(grid)
    elif isinstance(init, GroundState):
        phi0, psi0 = init.phi.real.copy(), init.psi.real.copy()
    else:
        f, g = init
        phi0 = np.real(getattr(f, "values", f)).astype(float)
        psi0 = np.real(getattr(g, "values", g)).astype(float)
    if not (np.any(phi0) or np.any(psi0)):
        raise DegenerateSolutionError("zero initialization is a fixed point of the flow")
    phi, psi, _, it = _flow(grid, phi0, psi0, tol, max_iter, damping, symmetrize, callback)
    if min(phi.min(), psi.min()) < -neg_floor * max(phi.max(), 1.0):
        raise DegenerateSolutionError("flow converged to a sign-changing solution")
    phi_f, psi_f = ComplexField(grid, phi), ComplexField(grid, psi)
    return GroundState(phi_f, psi_f, _mass(phi_f, psi_f), elliptic_residual(phi_f, psi_f), "flow", it, prof)


def gn_ratio(f: ComplexField, g: ComplexField, gs: GroundState) -> float:
    """``P(f,g) / (½ sqrt(M(f,g)/M(φ,ψ)) K(f,g))``, at most 1 in dimension four."""
    if f.grid.d != 4:
        raise UsageError("the sharp inequality is stated for d = 4")
    K = gradient_norm_sq(f) + 0.5 * gradient_norm_sq(g)
    M = _mass(f, g)
    if K <= 0 or M <= 0:
        raise DomainError("gn_ratio undefined: kinetic energy or mass is zero")
    P = float(np.real(np.sum(g.values * np.conj(f.values**2)))) * f.grid.weight
    return P / (0.5 * np.sqrt(M / gs.mass) * K)


def _trig_dilation_matrix(grid: Grid, lam: float) -> np.ndarray:
    """Matrix sampling the trigonometric interpolant of grid data at ``x / lam``."""
    n, x = grid.n, grid.x
    m = np.arange(-(n // 2), n // 2 + 1)
    wts = np.ones(m.size)
    wts[0] = wts[-1] = 0.5
    k = 2 * np.pi * m / grid.L
    arg = (x[:, None, None] / lam - x[None, :, None]) * k[None, None, :]
    return (np.cos(arg) * wts).sum(axis=2) / n


def dilate(f: ComplexField, lam: float) -> ComplexField:
    """``f(ξ/λ)`` evaluated through the trigonometric interpolant, axis by axis."""
    T = _trig_dilation_matrix(f.grid, lam)
    vals = f.values
    for ax in range(f.grid.d):
        vals = np.moveaxis(np.tensordot(T, vals, axes=(1, ax)), 0, ax)
    return ComplexField(f.grid, vals)


def dilation_derivative(gs: GroundState, delta: float = 1e-4) -> float:
    """``d/dλ I(φ(·/λ), ψ(·/λ))`` at ``λ = 1`` by central difference."""
    plus = action(dilate(gs.phi, 1 + delta), dilate(gs.psi, 1 + delta))
    minus = action(dilate(gs.phi, 1 - delta), dilate(gs.psi, 1 - delta))
    return (plus - minus) / (2 * delta)


def save_profile(gs: GroundState, path, extra: dict | None = None) -> None:
    """Write the radial profile ``r, φ, ψ`` (along the first axis) with a metadata header."""
    grid = gs.grid
    mid = grid.n // 2
    idx = (mid,) * (grid.d - 1)
    r = grid.x[mid:]
    phi = gs.phi.real[idx + (slice(mid, None),)]
    psi = gs.psi.real[idx + (slice(mid, None),)]
    meta = {"d": grid.d, "n": grid.n, "L": grid.L, "mass": gs.mass,
            "residual": list(gs.residual), "gn_coefficient": gs.gn_coefficient, "method": gs.method}
    meta.update(extra or {})
    with Path(path).open("w", newline="") as fh:
        fh.write("# snlslab ground-state v1 " + json.dumps(meta) + "\n")
        w = csv.writer(fh)
        w.writerow(["r", "phi", "psi"])
        for row in zip(r, phi, psi):
            w.writerow([repr(float(v)) for v in row])


def load_profile(path) -> tuple[dict, np.ndarray]:
    """Return ``(metadata, array)`` where the array has columns ``r, φ, ψ``."""
    with Path(path).open() as fh:
        head = fh.readline()
        if not head.startswith("# snlslab ground-state v1 "):
            raise UsageError(f"{path} is not a ground-state profile file")
        meta = json.loads(head[len("# snlslab ground-state v1 "):])
        data = np.loadtxt(fh, delimiter=",", skiprows=1, ndmin=2)
    return meta, data


def from_profile_file(path, grid: Grid) -> GroundState:
    """Rebuild a grid ground state from a saved profile (cubic interpolation in ``r``)."""
    meta, data = load_profile(path)
    if int(meta["d"]) != grid.d:
        raise UsageError(f"profile has d={meta['d']}, grid has d={grid.d}")
    r, p, q = data.T
    rad = grid.radius()
    cp, cq = CubicSpline(r, p), CubicSpline(r, q)
    inside = rad <= r[-1]
    phi = np.where(inside, cp(np.minimum(rad, r[-1])), 0.0)
    psi = np.where(inside, cq(np.minimum(rad, r[-1])), 0.0)
    phi_f, psi_f = ComplexField(grid, phi), ComplexField(grid, psi)
    return GroundState(phi_f, psi_f, float(meta["mass"]), elliptic_residual(phi_f, psi_f),
                       "file", 0, None, meta)
