"""Time integration of the deterministic, rescaled and direct stochastic systems.

* deterministic: ``u_t = iΔu + 2iv ū``, ``v_t = ½iΔv + iu²`` (Strang splitting),
* rescaled: ``y_t = i(Δ + b·∇ + c₁)y + 2iz ȳ``, ``z_t = i(½Δ + b·∇ + c₂)z + iy²`` (RK4),
* direct: the Itô system with multiplicative noise ``u dW``, ``v dW̃`` (splitting with an
  exact pointwise noise factor).

The rescaled and direct forms are linked by ``u = e^W y``, ``v = e^{W̃} z``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import NumericError, UsageError
from .noise import BrownianPaths, GaussianBump, NoiseModel, sample_paths
from .observables import ObservableSeries, measure
from .spectral import ComplexField, Grid, dealias, h1_norm

__all__ = [
    "SimulationConfig",
    "TrajectoryResult",
    "nonlinear_substep",
    "step_deterministic",
    "step_rescaled",
    "step_direct",
    "to_original",
    "to_rescaled",
    "initial_data",
    "build_model",
    "run_trajectory",
    "save_checkpoint",
    "load_checkpoint",
]

OVERFLOW_GUARD = 1e150
SYSTEMS = ("deterministic", "rescaled", "direct")


def _guard(*arrays, hint=""):
    for a in arrays:
        if not np.isfinite(a).all() or np.abs(a).max(initial=0.0) > OVERFLOW_GUARD:
            bad = np.argwhere(~np.isfinite(a) | (np.abs(a) > OVERFLOW_GUARD))
            where = tuple(int(i) for i in bad[0]) if bad.size else ()
            raise NumericError(f"non-finite or overflowing values at grid index {where}{hint}")


def nonlinear_substep(u: ComplexField, v: ComplexField, h: float):
    """One RK4 step of the pointwise system ``u' = 2iv ū``, ``v' = iu²``."""
    if not h > 0:
        raise UsageError("substep size must be positive")
    a, b = u.values, v.values

    def f(p, q):
        return 2j * q * np.conj(p), 1j * p * p

    k1 = f(a, b)
    k2 = f(a + 0.5 * h * k1[0], b + 0.5 * h * k1[1])
    k3 = f(a + 0.5 * h * k2[0], b + 0.5 * h * k2[1])
    k4 = f(a + h * k3[0], b + h * k3[1])
    na = a + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    nb = b + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    _guard(na, nb)
    return ComplexField(u.grid, na), ComplexField(v.grid, nb)


def _free_half(u: ComplexField, v: ComplexField, dt: float):
    g = u.grid
    pu = np.exp(-0.5j * g.ksq * dt)
    pv = np.exp(-0.25j * g.ksq * dt)
    return ComplexField(g, g.ifft(pu * g.fft(u.values))), ComplexField(g, g.ifft(pv * g.fft(v.values)))


def step_deterministic(u: ComplexField, v: ComplexField, dt: float, *, nonlinear: bool = True):
    """Strang step: half free flow, RK4 nonlinear substep (then 2/3 dealiasing), half free flow."""
    u, v = _free_half(u, v, dt)
    if nonlinear:
        u, v = nonlinear_substep(u, v, dt)
        u, v = dealias(u), dealias(v)
    return _free_half(u, v, dt)


_LAP_FACTOR = np.array([1.0, 0.5])
_PHASE_FACTOR = np.array([1.0, 2.0])


def _expand(a: np.ndarray, d: int) -> np.ndarray:
    return a.reshape(a.shape + (1,) * d)


def _rescaled_rhs(y: np.ndarray, z: np.ndarray, grid: Grid, model: NoiseModel, B, nonlinear: bool):
    # With b = 2iG and c = -mG² + iΣB_kΔφ_k (m = 1 for y, 2 for z) one has
    # i(b·∇ + c)f = -(G·∇f + ∇·(Gf)) - imG²f.  This skew form keeps the discrete
    # operator skew-adjoint, so the scheme conserves mass even on coarse grids.
    d = grid.d
    w = np.stack([y, z])
    wh = grid.fft(w)
    rhs_hat = (-1j * _expand(_LAP_FACTOR, d) * grid.ksq) * wh
    r = None
    if model.N:
        G = model.drift_gradient(B)
        ik = 1j * np.stack(np.broadcast_arrays(*grid.kvec))
        grads = grid.ifft(ik * wh[:, None])
        rhs_hat = rhs_hat - np.sum(ik * grid.fft(G * w[:, None]), axis=1)
        r = -np.sum(G * grads, axis=1) - 1j * _expand(_PHASE_FACTOR, d) * np.sum(G**2, axis=0) * w
    r = grid.ifft(rhs_hat) if r is None else r + grid.ifft(rhs_hat)
    ry, rz = r[0], r[1]
    if nonlinear:
        ry = ry + 2j * z * np.conj(y)
        rz = rz + 1j * y * y
    return ry, rz


def step_rescaled(y: ComplexField, z: ComplexField, model: NoiseModel, B_at, t: float, dt: float,
                  *, nonlinear: bool = True):
    """Classical RK4 step of the rescaled system from ``t`` to ``t + dt``.

    ``B_at`` maps a time to the vector of Brownian values (e.g. ``BrownianPaths.at``);
    stages use ``B`` at ``t``, ``t + dt/2`` and ``t + dt``.
    """
    g = y.grid
    B0, Bh, B1 = B_at(t), B_at(t + 0.5 * dt), B_at(t + dt)
    a, c = y.values, z.values
    k1 = _rescaled_rhs(a, c, g, model, B0, nonlinear)
    k2 = _rescaled_rhs(a + 0.5 * dt * k1[0], c + 0.5 * dt * k1[1], g, model, Bh, nonlinear)
    k3 = _rescaled_rhs(a + 0.5 * dt * k2[0], c + 0.5 * dt * k2[1], g, model, Bh, nonlinear)
    k4 = _rescaled_rhs(a + dt * k3[0], c + dt * k3[1], g, model, B1, nonlinear)
    ny = a + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    nz = c + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    _guard(ny, nz, hint="; the explicit step is likely unstable, reduce dt")
    return ComplexField(g, ny), ComplexField(g, nz)


def step_direct(u: ComplexField, v: ComplexField, model: NoiseModel, dB, dt: float):
    """Deterministic Strang step followed by the exact pointwise noise factor.

    For ``du = -μu dt + u dW`` with ``dW = i Σ φ_k dB_k`` and ``μ = ½Σφ_k²`` the Itô
    correction cancels the damping, so the exact factor is ``exp(i Σ φ_k ΔB_k)`` (and
    ``exp(2i Σ φ_k ΔB_k)`` for ``v``).
    """
    u, v = step_deterministic(u, v, dt)
    if model.N == 0:
        return u, v
    phase = model.noise_phase(dB)
    return u * np.exp(1j * phase), v * np.exp(2j * phase)


def to_original(y: ComplexField, z: ComplexField, model: NoiseModel, B):
    """``(e^W y, e^{W̃} z)``."""
    phase = model.noise_phase(B)
    return y * np.exp(1j * phase), z * np.exp(2j * phase)


def to_rescaled(u: ComplexField, v: ComplexField, model: NoiseModel, B):
    """``(e^{-W} u, e^{-W̃} v)``."""
    phase = model.noise_phase(B)
    return u * np.exp(-1j * phase), v * np.exp(-2j * phase)


@dataclass
class SimulationConfig:
    system: str = "rescaled"
    d: int = 2
    n: int = 64
    L: float = 20.0
    T: float = 1.0
    dt: float = 1e-3
    noise_dt: float | None = None  # Brownian lattice spacing, a multiple of dt
    bumps: list = field(default_factory=list)  # dicts with amplitude, center, width
    initial: dict = field(default_factory=lambda: {"kind": "gaussian", "amplitude": 1.0, "width": 2.0})
    seed: int = 0
    blowup_factor: float = 1e3
    cadence: int = 10
    dt_cap: float = 0.1  # rescaled runs require dt <= dt_cap * h**2
    flatness_threshold: float = 1e-8
    ground_state_file: str | None = None
    ground_state_mass: float | None = None

    def __post_init__(self):
        self.validate()

    @property
    def grid(self) -> Grid:
        return Grid(self.d, self.n, self.L)

    @property
    def steps(self) -> int:
        return _ratio(self.T, self.dt, "T", "dt")

    @property
    def noise_stride(self) -> int:
        if self.noise_dt is None:
            return 1
        return _ratio(self.noise_dt, self.dt, "noise_dt", "dt")

    def validate(self):
        if self.system not in SYSTEMS:
            raise UsageError(f"system must be one of {SYSTEMS}, got {self.system!r}")
        grid = self.grid
        if not self.dt > 0:
            raise UsageError("dt must be positive")
        if self.T < self.dt:
            raise UsageError(f"horizon T={self.T} is shorter than dt={self.dt}")
        if self.steps % self.noise_stride:
            raise UsageError("the horizon must contain a whole number of noise intervals")
        if self.cadence < 1:
            raise UsageError("cadence must be at least 1")
        if not self.blowup_factor > 1:
            raise UsageError("blowup_factor must exceed 1")
        if self.system == "rescaled" and self.bumps and self.dt > self.dt_cap * grid.h**2:
            raise UsageError(f"dt={self.dt} exceeds the explicit stability cap "
                             f"{self.dt_cap}*h^2={self.dt_cap * grid.h**2:.3g}")
        if self.seed < 0 or self.seed >= 2**64:
            raise UsageError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(a: float, b: float, na: str, nb: str) -> int:
    q = a / b
    m = int(round(q))
    if m < 1 or abs(q - m) > 1e-9 * max(q, 1.0):
        raise UsageError(f"{na}={a} must be a positive integer multiple of {nb}={b}")
    return m


def build_model(config: SimulationConfig) -> NoiseModel:
    bumps = [GaussianBump(float(b["amplitude"]), tuple(b["center"]), float(b["width"])) for b in config.bumps]
    return NoiseModel(config.grid, bumps, flatness_threshold=config.flatness_threshold)


def _gaussian_pulse(grid: Grid, init: dict):
    width = float(init.get("width", 2.0))
    center = init.get("center", [0.0] * grid.d)
    r2 = sum((xj - cj) ** 2 for xj, cj in zip(grid.coords(), center))
    g = np.broadcast_to(np.exp(-r2 / width**2), grid.shape)
    ratio = float(init.get("v_ratio", 1.0))
    u, v = ComplexField(grid, g), ComplexField(grid, ratio * g)
    if "mass" in init:
        m = float(np.sum(np.abs(g) ** 2) * grid.weight * (1 + 2 * ratio**2))
        amp = math.sqrt(float(init["mass"]) / m)
    else:
        amp = float(init.get("amplitude", 1.0))
    return u * amp, v * amp


def initial_data(config: SimulationConfig, ground_state=None):
    """Initial fields from ``config.initial``.

    Kinds: ``zero``; ``gaussian`` (keys amplitude or mass, width, center, v_ratio);
    ``ground_state`` (keys scale or mass_fraction, where ``mass_fraction = scale²``);
    ``plane_wave`` (keys mode, amplitude); ``checkpoint`` (key path).
    """
    grid = config.grid
    init = dict(config.initial)
    kind = init.get("kind", "gaussian")
    if kind == "zero":
        return ComplexField.zeros(grid), ComplexField.zeros(grid)
    if kind == "gaussian":
        return _gaussian_pulse(grid, init)
    if kind == "plane_wave":
        mode = init.get("mode", [1] + [0] * (grid.d - 1))
        phase = sum(2 * np.pi * m / grid.L * xj for m, xj in zip(mode, grid.coords()))
        amp = float(init.get("amplitude", 1.0))
        w = np.broadcast_to(amp * np.exp(1j * phase), grid.shape)
        return ComplexField(grid, w), ComplexField(grid, 0.5 * w)
    if kind == "ground_state":
        from .ground_state import from_profile_file, lift, shoot_radial

        if ground_state is None:
            if config.ground_state_file:
                ground_state = from_profile_file(config.ground_state_file, grid)
        if ground_state is not None and ground_state.grid == grid:
            phi, psi = ground_state.phi, ground_state.psi
        else:
            phi, psi = lift(shoot_radial(grid.d), grid)
        if "mass_fraction" in init:
            s = math.sqrt(float(init["mass_fraction"]))
        else:
            s = float(init.get("scale", 1.0))
        return phi * s, psi * s
    if kind == "checkpoint":
        ck = load_checkpoint(init["path"])
        if ck["grid"] != grid:
            raise UsageError("checkpoint grid does not match the configured grid")
        return ck["u"], ck["v"]
    raise UsageError(f"unknown initial data kind {kind!r}")


@dataclass
class TrajectoryResult:
    u: ComplexField
    v: ComplexField
    series: ObservableSeries
    stop_time: float
    stop_reason: str  # horizon | blowup_threshold | numeric_failure
    paths: BrownianPaths | None = None
    message: str = ""
    meta: dict = field(default_factory=dict)


def run_trajectory(config: SimulationConfig, *, model: NoiseModel | None = None,
                   paths: BrownianPaths | None = None, initial=None, ground_state=None) -> TrajectoryResult:
    """Integrate one trajectory to ``T`` or until the H¹ sum exceeds the blow-up threshold.

    For rescaled runs the returned fields are ``(y, z)``; for direct and deterministic
    runs they are ``(u, v)``.  Runs without noise bumps are integrated with the
    deterministic scheme whatever the system, so the three forms coincide exactly.
    """
    config.validate()
    grid = config.grid
    if model is None:
        model = build_model(config)
    steps, stride = config.steps, config.noise_stride
    if paths is None:
        paths = sample_paths(model.N, config.dt * stride, steps // stride, config.seed)
    if paths.N != model.N or paths.T < config.T * (1 - 1e-12):
        raise UsageError("Brownian paths do not match the noise model or horizon")
    if initial is None:
        initial = initial_data(config, ground_state)
    u, v = initial
    system = config.system if model.N else "deterministic"

    series = ObservableSeries(meta={"system": config.system, "seed": config.seed})
    h1_0 = h1_norm(u) + h1_norm(v)
    threshold = config.blowup_factor * max(h1_0, 1e-300)
    want_rate = config.system == "rescaled"

    def record(t):
        B = paths.at(t) if model.N else np.zeros(0)
        rec = measure(t, u, v, model, B if want_rate else None)
        if want_rate and model.N == 0:
            rec.dE_rhs = 0.0
        series.append(rec)
        return rec

    record(0.0)
    reason, msg, t = "horizon", "", 0.0
    for m in range(steps):
        t0 = m * config.dt
        try:
            if system == "deterministic":
                nu, nv = step_deterministic(u, v, config.dt)
            elif system == "rescaled":
                nu, nv = step_rescaled(u, v, model, paths.at, t0, config.dt)
            else:
                dB = paths.at(t0 + config.dt) - paths.at(t0)
                nu, nv = step_direct(u, v, model, dB, config.dt)
            _guard(nu.values, nv.values)
        except NumericError as exc:
            reason, msg = "numeric_failure", str(exc)
            break
        u, v = nu, nv
        t = (m + 1) * config.dt
        if (m + 1) % config.cadence == 0 or m + 1 == steps:
            rec = record(t)
            if rec.H1_sum > threshold:
                reason = "blowup_threshold"
                break
    if reason == "horizon":
        t = config.T
    meta = {"blowup_threshold": threshold, "h1_initial": h1_0, "integrator": system,
            "config": config.to_dict()}
    return TrajectoryResult(u, v, series, t, reason, paths, msg, meta)


CHECKPOINT_MAGIC = b"SNLSCKP1"
_HEADER = struct.Struct("<8sqqdd")


def save_checkpoint(path, u: ComplexField, v: ComplexField, t: float, meta: dict | None = None) -> None:
    """Flat binary: magic, ``d, n`` (int64), ``L, t`` (float64), then ``u`` and ``v`` as
    interleaved re/im doubles in row-major order.  Metadata goes to a ``.json`` sidecar."""
    g = u.grid
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, g.d, g.n, g.L, float(t)))
        fh.write(np.ascontiguousarray(u.values, dtype="<c16").tobytes())
        fh.write(np.ascontiguousarray(v.values, dtype="<c16").tobytes())
    if meta is not None:
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))


def load_checkpoint(path) -> dict:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise UsageError(f"{path} is too short to be a checkpoint")
    magic, d, n, L, t = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise UsageError(f"{path} is not a checkpoint file")
    grid = Grid(int(d), int(n), L)
    data = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    if data.size != 2 * grid.size:
        raise UsageError(f"{path} payload has {data.size} values, expected {2 * grid.size}")
    u = ComplexField(grid, data[: grid.size].reshape(grid.shape).copy())
    v = ComplexField(grid, data[grid.size:].reshape(grid.shape).copy())
    return {"grid": grid, "t": t, "u": u, "v": v}
