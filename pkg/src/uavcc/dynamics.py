"""Discrete-time UAV motion model, disturbances, and covariance propagation.

The plant is a 3D double integrator under exact zero-order-hold
discretization, so the state and input matrices are closed-form in dt and
bit-comparable across platforms. Wind gusts are a deterministic
acceleration bias over a slot interval layered on Gaussian process noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Aabb, CovMatrix, Rng, UavState, ValidationError, Vec3, mat_psd_project

__all__ = [
    "PlantModel",
    "Disturbance",
    "MovingObstacle",
    "StepResult",
    "step",
    "propagate_covariance",
    "collision_check",
]


def _noise_factor(q: CovMatrix) -> np.ndarray:
    """Square root factor L with L L^T = Q, via eigendecomposition (Q may be singular)."""
    w, v = np.linalg.eigh(q.m)
    return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class PlantModel:
    """Double-integrator plant: A = [[I, dt I], [0, I]], B = [[dt^2/2 I], [dt I]]."""

    dt: float
    q: CovMatrix
    u_max: float
    v_max: float
    a: np.ndarray = field(init=False, repr=False)
    b: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValidationError(f"dt must be > 0, got {self.dt}")
        if self.u_max <= 0 or self.v_max <= 0:
            raise ValidationError("u_max and v_max must be > 0")
        dt = float(self.dt)
        a = np.eye(6)
        a[0:3, 3:6] = dt * np.eye(3)
        b = np.zeros((6, 3))
        b[0:3, :] = 0.5 * dt * dt * np.eye(3)
        b[3:6, :] = dt * np.eye(3)
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_accel_noise(cls, dt: float, accel_noise_std: float, u_max: float, v_max: float) -> "PlantModel":
        """Process noise induced by white acceleration: Q = B diag(s^2) B^T."""
        tmp = cls(dt=dt, q=CovMatrix.zeros(), u_max=u_max, v_max=v_max)
        q = tmp.b @ (accel_noise_std**2 * np.eye(3)) @ tmp.b.T
        return cls(dt=dt, q=mat_psd_project(q), u_max=u_max, v_max=v_max)

    def with_q(self, q: CovMatrix) -> "PlantModel":
        return PlantModel(dt=self.dt, q=q, u_max=self.u_max, v_max=self.v_max)


@dataclass(frozen=True)
class Disturbance:
    """Process noise plus an optional wind-gust bias over [gust_start, gust_end) slots."""

    q: CovMatrix
    gust_start: int | None = None
    gust_end: int | None = None
    gust_bias: Vec3 = field(default_factory=Vec3.zero)
    _factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        has_window = self.gust_start is not None or self.gust_end is not None
        if has_window:
            if self.gust_start is None or self.gust_end is None:
                raise ValidationError("gust interval needs both start and end slots")
            if self.gust_end < self.gust_start:
                raise ValidationError("gust_end must be >= gust_start")
        object.__setattr__(self, "_factor", _noise_factor(self.q))

    @classmethod
    def gaussian(cls, q: CovMatrix) -> "Disturbance":
        return cls(q=q)

    @classmethod
    def gust(cls, q: CovMatrix, start: int, end: int, bias: Vec3) -> "Disturbance":
        return cls(q=q, gust_start=start, gust_end=end, gust_bias=bias)

    def gust_active(self, slot: int) -> bool:
        if self.gust_start is None:
            return False
        return self.gust_start <= slot < self.gust_end

    def bias_at(self, slot: int) -> Vec3:
        return self.gust_bias if self.gust_active(slot) else Vec3.zero()


@dataclass(frozen=True)
class MovingObstacle:
    """Box obstacle whose corners move piecewise-linearly between slot keyframes."""

    keyframes: tuple[tuple[int, Aabb], ...]
    inflation_m: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "keyframes", tuple((int(t), box) for t, box in self.keyframes))
        if not self.keyframes:
            raise ValidationError("moving obstacle needs at least one keyframe")
        times = [t for t, _ in self.keyframes]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("keyframes must be strictly time-ordered")
        if self.inflation_m < 0:
            raise ValidationError("inflation must be >= 0")

    def box_at(self, slot: float) -> Aabb:
        """Interpolated box at the given slot; clamped to the first/last keyframe."""
        frames = self.keyframes
        if slot <= frames[0][0]:
            box = frames[0][1]
        elif slot >= frames[-1][0]:
            box = frames[-1][1]
        else:
            box = None
            for (t0, b0), (t1, b1) in zip(frames[:-1], frames[1:]):
                if t0 <= slot <= t1:
                    w = (slot - t0) / (t1 - t0)
                    lo = b0.min.as_array() * (1 - w) + b1.min.as_array() * w
                    hi = b0.max.as_array() * (1 - w) + b1.max.as_array() * w
                    box = Aabb(Vec3.from_array(lo), Vec3.from_array(hi))
                    break
            assert box is not None
        if self.inflation_m > 0:
            box = box.inflated(self.inflation_m)
        return box


@dataclass(frozen=True)
class StepResult:
    """One plant step plus the saturation flags the caller should log."""

    state: UavState
    input_saturated: bool
    velocity_saturated: bool


def _clamp_vec(v: np.ndarray, limit: float) -> tuple[np.ndarray, bool]:
    clipped = np.clip(v, -limit, limit)
    return clipped, bool(np.any(clipped != v))


def step(model: PlantModel, x: UavState, u: Vec3, d: Disturbance, rng: Rng) -> StepResult:
    """Advance one slot: x+ = A x + B (u + gust bias) + w with w ~ N(0, d.q).

    Inputs beyond u_max are clamped componentwise and flagged; speed beyond
    v_max is rescaled and flagged. Six standard normals are consumed from
    the stream on every call so draw alignment is independent of Q.
    """
    u_arr, input_sat = _clamp_vec(u.as_array(), model.u_max)
    u_arr = u_arr + d.bias_at(x.time_index).as_array()
    w = d._factor @ rng.normals(6)
    xv = model.a @ x.as_vector() + model.b @ u_arr + w
    vel = xv[3:6]
    speed = float(np.linalg.norm(vel))
    vel_sat = False
    if speed > model.v_max:
        xv[3:6] = vel * (model.v_max / speed)
        vel_sat = True
    return StepResult(
        state=UavState.from_vector(xv, x.time_index + 1),
        input_saturated=input_sat,
        velocity_saturated=vel_sat,
    )


def predict_state(model: PlantModel, x: UavState, u: Vec3) -> UavState:
    """Noiseless one-step prediction with the nominal model (no gust, no clamp flags)."""
    u_arr, _ = _clamp_vec(u.as_array(), model.u_max)
    xv = model.a @ x.as_vector() + model.b @ u_arr
    return UavState.from_vector(xv, x.time_index + 1)


def propagate_covariance(model: PlantModel, sigma0: CovMatrix, steps: int) -> CovMatrix:
    """Open-loop covariance recursion S <- A S A^T + Q, PSD-projected each step."""
    if steps < 0:
        raise ValidationError(f"steps must be >= 0, got {steps}")
    sigma = sigma0
    for _ in range(int(steps)):
        sigma = mat_psd_project(model.a @ sigma.m @ model.a.T + model.q.m)
    return sigma


def collision_check(
    p: Vec3,
    radius: float,
    statics: list[Aabb],
    movers: list[MovingObstacle],
    t: float,
) -> float:
    """Clearance of a ball of given radius at p against all obstacles at slot t.

    Returns the signed distance to the nearest (inflated) obstacle surface
    minus the radius; negative means collision. With no obstacles the
    clearance is +inf.
    """
    if radius < 0:
        raise ValidationError(f"radius must be >= 0, got {radius}")
    clearance = math.inf
    for box in statics:
        clearance = min(clearance, box.signed_distance(p))
    for mover in movers:
        clearance = min(clearance, mover.box_at(t).signed_distance(p))
    return clearance - radius
