"""Shared geometric and linear-algebra value types.

Everything in this module is an immutable value that validates its own
invariants on construction. Simulation logic lives elsewhere; this is the
vocabulary the rest of the package speaks: 3D vectors, UAV kinematic
states, 6x6 error covariances, axis-aligned boxes, and the deterministic
random stream every stochastic component draws from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ValidationError",
    "Vec3",
    "UavState",
    "CovMatrix",
    "Aabb",
    "Rng",
    "mat_psd_project",
    "confidence_radius",
    "mix64",
    "stream_id",
]

_MASK64 = (1 << 64) - 1


class ValidationError(ValueError):
    """A value violated one of its documented invariants."""


@dataclass(frozen=True)
class Vec3:
    """Point or vector in 3D space. Units are metric and set by context."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "z", float(self.z))
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)):
            raise ValidationError(f"Vec3 components must be finite, got ({self.x}, {self.y}, {self.z})")

    def __add__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other: "Vec3") -> "Vec3":
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def scaled(self, s: float) -> "Vec3":
        return Vec3(self.x * s, self.y * s, self.z * s)

    def dot(self, other: "Vec3") -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def norm(self) -> float:
        return math.sqrt(self.dot(self))

    def distance_to(self, other: "Vec3") -> float:
        return (self - other).norm()

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Vec3":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    @classmethod
    def zero(cls) -> "Vec3":
        return cls(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class UavState:
    """Kinematic state of one UAV: position (m), velocity (m/s), slot index."""

    position: Vec3
    velocity: Vec3
    time_index: int = 0

    def __post_init__(self):
        if int(self.time_index) != self.time_index or self.time_index < 0:
            raise ValidationError(f"time_index must be a slot count >= 0, got {self.time_index}")
        object.__setattr__(self, "time_index", int(self.time_index))

    def speed(self) -> float:
        return self.velocity.norm()

    def as_vector(self) -> np.ndarray:
        """State as a length-6 array ordered (position, velocity)."""
        return np.concatenate([self.position.as_array(), self.velocity.as_array()])

    @classmethod
    def from_vector(cls, v, time_index: int) -> "UavState":
        return cls(Vec3.from_array(v[0:3]), Vec3.from_array(v[3:6]), time_index)


class CovMatrix:
    """6x6 symmetric positive-semidefinite matrix over (position, velocity).

    Construction validates symmetry to a relative tolerance of 1e-9 and
    rejects eigenvalues below -1e-9 * trace. Small negative eigenvalues
    inside that band are tolerated here and cleaned up by
    :func:`mat_psd_project`, which repeated propagation relies on.
    """

    DIM = 6
    _SYM_RTOL = 1e-9
    _EIG_TOL = 1e-9

    __slots__ = ("_m",)

    def __init__(self, m, _validated: bool = False):
        a = np.array(m, dtype=float)
        if a.shape != (self.DIM, self.DIM):
            raise ValidationError(f"covariance must be {self.DIM}x{self.DIM}, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValidationError("covariance entries must be finite")
        if not _validated:
            scale = max(1.0, float(np.abs(a).max()))
            asym = float(np.abs(a - a.T).max())
            if asym > self._SYM_RTOL * scale:
                raise ValidationError(f"covariance asymmetry {asym:.3e} exceeds tolerance")
            a = 0.5 * (a + a.T)
            w = np.linalg.eigvalsh(a)
            floor = -self._EIG_TOL * max(float(np.trace(a)), 0.0)
            if w[0] < floor:
                raise ValidationError(f"covariance eigenvalue {w[0]:.3e} below PSD floor {floor:.3e}")
        a.setflags(write=False)
        self._m = a

    @property
    def m(self) -> np.ndarray:
        """The matrix as a read-only (6, 6) array."""
        return self._m

    @classmethod
    def zeros(cls) -> "CovMatrix":
        return cls(np.zeros((cls.DIM, cls.DIM)), _validated=True)

    @classmethod
    def diagonal(cls, values) -> "CovMatrix":
        v = np.asarray(values, dtype=float)
        if v.shape != (cls.DIM,):
            raise ValidationError(f"diagonal needs {cls.DIM} values, got shape {v.shape}")
        return cls(np.diag(v))

    @classmethod
    def isotropic(cls, pos_var: float, vel_var: float) -> "CovMatrix":
        """Diagonal covariance with one variance per position axis, one per velocity axis."""
        return cls.diagonal([pos_var] * 3 + [vel_var] * 3)

    def position_block(self) -> np.ndarray:
        return np.array(self._m[0:3, 0:3])

    def trace(self) -> float:
        return float(np.trace(self._m))

    def position_trace(self) -> float:
        return float(np.trace(self._m[0:3, 0:3]))

    def __repr__(self) -> str:
        return f"CovMatrix(trace={self.trace():.6g})"


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned box given by its min and max corners."""

    min: Vec3
    max: Vec3

    def __post_init__(self):
        if self.min.x > self.max.x or self.min.y > self.max.y or self.min.z > self.max.z:
            raise ValidationError(f"Aabb min must be <= max componentwise: {self.min} vs {self.max}")

    def center(self) -> Vec3:
        return Vec3(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
            0.5 * (self.min.z + self.max.z),
        )

    def size(self) -> Vec3:
        return self.max - self.min

    def contains(self, p: Vec3, tol: float = 0.0) -> bool:
        return (
            self.min.x - tol <= p.x <= self.max.x + tol
            and self.min.y - tol <= p.y <= self.max.y + tol
            and self.min.z - tol <= p.z <= self.max.z + tol
        )

    def contains_box(self, other: "Aabb") -> bool:
        return self.contains(other.min) and self.contains(other.max)

    def inflated(self, r: float) -> "Aabb":
        """Box grown by r on every face. Negative r shrinks but never inverts."""
        if r < 0:
            half = self.size().scaled(0.5)
            r = max(r, -min(half.x, half.y, half.z))
        d = Vec3(r, r, r)
        return Aabb(self.min - d, self.max + d)

    def signed_distance(self, p: Vec3) -> float:
        """Distance from p to the box surface, negative when p is inside."""
        dx = max(self.min.x - p.x, 0.0, p.x - self.max.x)
        dy = max(self.min.y - p.y, 0.0, p.y - self.max.y)
        dz = max(self.min.z - p.z, 0.0, p.z - self.max.z)
        if dx > 0.0 or dy > 0.0 or dz > 0.0:
            return math.sqrt(dx * dx + dy * dy + dz * dz)
        return -min(
            p.x - self.min.x, self.max.x - p.x,
            p.y - self.min.y, self.max.y - p.y,
            p.z - self.min.z, self.max.z - p.z,
        )

    def segment_intersects(self, a: Vec3, b: Vec3) -> bool:
        """True when the open segment a-b passes through the box interior.

        Grazing contact with a face, edge or corner does not count; this is
        the blocking test for line-of-sight rays.
        """
        t0, t1 = 0.0, 1.0
        for lo, hi, av, bv in (
            (self.min.x, self.max.x, a.x, b.x),
            (self.min.y, self.max.y, a.y, b.y),
            (self.min.z, self.max.z, a.z, b.z),
        ):
            dv = bv - av
            if dv == 0.0:
                if not (lo < av < hi):
                    return False
                continue
            ta = (lo - av) / dv
            tb = (hi - av) / dv
            if ta > tb:
                ta, tb = tb, ta
            t0 = max(t0, ta)
            t1 = min(t1, tb)
            if t0 >= t1:
                return False
        return t1 > 0.0 and t0 < 1.0


class Rng:
    """Deterministic random stream: Philox 4x64 (10 rounds) keyed by (seed, stream).

    Philox is counter-based, so the same (seed, stream) pair yields a
    bit-identical draw sequence on every platform. Components never share a
    stream; they derive their own with :func:`stream_id` and keep it for the
    whole run.
    """

    ALGORITHM = "philox4x64-10"

    __slots__ = ("seed", "stream", "_gen")

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def substream(self, stream: int) -> "Rng":
        """Fresh stream under the same seed; draws are independent of this one's."""
        return Rng(self.seed, stream)

    def uniform(self) -> float:
        """One draw from U[0, 1)."""
        return float(self._gen.random())

    def uniforms(self, n: int) -> np.ndarray:
        return self._gen.random(int(n))

    def normals(self, n: int) -> np.ndarray:
        return self._gen.standard_normal(int(n))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream}, algorithm={self.ALGORITHM})"


def mix64(*values: int) -> int:
    """Stable splitmix64 chain over integers.

    Used to derive run seeds for sweep cells (seed, N, M, replicate) so
    workers can run in any order yet produce identical streams.
    """
    acc = 0x9E3779B97F4A7C15
    for v in values:
        acc = (acc + (int(v) & _MASK64)) & _MASK64
        z = acc
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        acc = z ^ (z >> 31)
    return acc


def stream_id(purpose: int, index: int = 0) -> int:
    """Stream key for one (purpose, entity) pair, e.g. process noise of UAV 3."""
    return ((int(purpose) & 0xFFFFFFFF) << 32) | (int(index) & 0xFFFFFFFF)


def mat_psd_project(m) -> CovMatrix:
    """Nearest positive-semidefinite matrix by eigenvalue clipping.

    Symmetrizes as (M + M^T)/2, then clips negative eigenvalues at zero and
    reconstructs, repeating until the spectrum is clean so that projecting a
    projected matrix returns it bit-for-bit (idempotence). Input asymmetry
    beyond the 1e-9 relative tolerance is a validation error.
    """
    a = np.array(m, dtype=float)
    if a.shape != (CovMatrix.DIM, CovMatrix.DIM):
        raise ValidationError(f"expected a {CovMatrix.DIM}x{CovMatrix.DIM} matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix entries must be finite")
    scale = max(1.0, float(np.abs(a).max()))
    asym = float(np.abs(a - a.T).max())
    if asym > CovMatrix._SYM_RTOL * scale:
        raise ValidationError(f"matrix asymmetry {asym:.3e} exceeds tolerance, not treatable as symmetric")

    s = 0.5 * (a + a.T)
    for _ in range(64):
        w, v = np.linalg.eigh(s)
        if w[0] >= 0.0:
            return CovMatrix(s, _validated=True)
        s = (v * np.clip(w, 0.0, None)) @ v.T
        s = 0.5 * (s + s.T)
    # Rounding kept reintroducing a negative eigenvalue; shift it out.
    s = s + (-w[0]) * np.eye(CovMatrix.DIM)
    return CovMatrix(0.5 * (s + s.T), _validated=True)


def confidence_radius(sigma: CovMatrix, kappa: float) -> float:
    """Position-uncertainty radius kappa * sqrt(lambda_max) of the position block.

    Linear in kappa by construction; zero when position uncertainty is zero.
    """
    if kappa < 0.0:
        raise ValidationError(f"kappa must be >= 0, got {kappa}")
    w = np.linalg.eigvalsh(sigma.position_block())
    lam = max(float(w[-1]), 0.0)
    return float(kappa) * math.sqrt(lam)
