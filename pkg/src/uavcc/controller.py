"""In-flight adaptive control: MPC packets, trigger policies, onboard buffer.

The controller side of the loop produces packetized input sequences
(one unconstrained batch MPC solve per transmission, inputs clamped to the
actuator limit), decides when the next transmission is needed (periodic,
event-triggered, or self-triggered from predicted uncertainty growth), and
consumes buffered inputs on the UAV when packets are lost.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CovMatrix, Rng, UavState, ValidationError, Vec3, confidence_radius
from .dynamics import MovingObstacle, PlantModel, collision_check, propagate_covariance
from .planner import RefSegment

__all__ = [
    "ControlPacket",
    "PpcBuffer",
    "ExecRecord",
    "MpcWeights",
    "PeriodicTrigger",
    "EtcTrigger",
    "StmpcTrigger",
    "TriggerPolicy",
    "solve_mpc",
    "etc_should_trigger",
    "stmpc_length",
    "buffer_execute",
]


@dataclass(frozen=True)
class ControlPacket:
    """One transmitted input sequence u_k .. u_{k+L-1}, stamped with its issue slot."""

    issue_slot: int
    inputs: tuple[Vec3, ...]

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if len(self.inputs) < 1:
            raise ValidationError("control packet must carry at least one input")

    @property
    def length(self) -> int:
        return len(self.inputs)


@dataclass(frozen=True)
class MpcWeights:
    """Quadratic tracking cost: position, velocity, and input effort weights."""

    q_pos: float = 1.0
    q_vel: float = 0.1
    r_u: float = 0.05
    horizon_max: int = 12

    def __post_init__(self):
        if self.q_pos <= 0 or self.q_vel <= 0 or self.r_u <= 0:
            raise ValidationError("MPC weights must all be > 0")
        if self.horizon_max < 1:
            raise ValidationError("horizon_max must be >= 1")


@dataclass(frozen=True)
class PeriodicTrigger:
    period: int = 1

    def __post_init__(self):
        if self.period < 1:
            raise ValidationError("periodic trigger period must be >= 1")


@dataclass(frozen=True)
class EtcTrigger:
    """Transmit when |actual - predicted| position error exceeds the threshold."""

    threshold_m: float = 0.5

    def __post_init__(self):
        if self.threshold_m <= 0:
            raise ValidationError("ETC threshold must be > 0")


@dataclass(frozen=True)
class StmpcTrigger:
    """Self-triggered: packet length follows predicted uncertainty vs clearance."""

    risk_kappa: float = 3.0
    safety_margin_m: float = 0.5
    horizon_max: int = 12

    def __post_init__(self):
        if self.risk_kappa <= 0:
            raise ValidationError("risk_kappa must be > 0")
        if self.safety_margin_m < 0:
            raise ValidationError("safety_margin_m must be >= 0")
        if self.horizon_max < 1:
            raise ValidationError("horizon_max must be >= 1")


TriggerPolicy = PeriodicTrigger | EtcTrigger | StmpcTrigger


def _prediction_matrices(model: PlantModel, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Batch prediction X = F x0 + G U for X stacking x_1 .. x_L."""
    a, b = model.a, model.b
    f = np.zeros((6 * horizon, 6))
    g = np.zeros((6 * horizon, 3 * horizon))
    a_pow = np.eye(6)
    for l in range(horizon):
        a_pow = a_pow @ a
        f[6 * l : 6 * l + 6, :] = a_pow
    for l in range(horizon):
        block = b
        for j in range(l, horizon):
            g[6 * j : 6 * j + 6, 3 * l : 3 * l + 3] = block
            block = a @ block
    return f, g


def solve_mpc(
    model: PlantModel,
    x0: UavState,
    ref: RefSegment,
    weights: MpcWeights,
    horizon: int,
) -> ControlPacket:
    """Finite-horizon tracking solve, returned as one packetized input sequence.

    Minimizes sum_l q_pos |p_l - p_ref|^2 + q_vel |v_l - v_ref|^2 plus
    r_u sum |u_l|^2 over the noiseless model via the condensed unconstrained
    closed form, then clamps each input componentwise to u_max. The
    reference window must cover every predicted slot.
    """
    if horizon < 1 or horizon > weights.horizon_max:
        raise ValidationError(f"horizon {horizon} outside [1, {weights.horizon_max}]")
    if len(ref) < horizon:
        raise ValidationError(f"reference window of {len(ref)} slots is shorter than horizon {horizon}")

    f, g = _prediction_matrices(model, horizon)
    w_diag = np.tile(np.concatenate([np.full(3, weights.q_pos), np.full(3, weights.q_vel)]), horizon)
    ref_stack = np.concatenate(
        [np.concatenate([ref.positions[l], ref.velocities[l]]) for l in range(horizon)]
    )
    gw = g.T * w_diag
    h = gw @ g + weights.r_u * np.eye(3 * horizon)
    rhs = gw @ (ref_stack - f @ x0.as_vector())
    u = np.linalg.solve(h, rhs)
    u = np.clip(u, -model.u_max, model.u_max)
    inputs = tuple(Vec3.from_array(u[3 * l : 3 * l + 3]) for l in range(horizon))
    return ControlPacket(issue_slot=x0.time_index, inputs=inputs)


def mpc_cost(
    model: PlantModel,
    x0: UavState,
    ref: RefSegment,
    weights: MpcWeights,
    u_seq: np.ndarray,
) -> float:
    """Cost of an explicit input sequence under the same objective as solve_mpc."""
    horizon = u_seq.shape[0]
    x = x0.as_vector()
    total = 0.0
    for l in range(horizon):
        x = model.a @ x + model.b @ u_seq[l]
        dp = x[0:3] - ref.positions[l]
        dv = x[3:6] - ref.velocities[l]
        total += weights.q_pos * float(dp @ dp) + weights.q_vel * float(dv @ dv)
        total += weights.r_u * float(u_seq[l] @ u_seq[l])
    return total


def etc_should_trigger(actual: UavState, predicted: UavState, threshold_m: float) -> bool:
    """Strictly exceeding the position discrepancy threshold requests a transmission."""
    if actual.time_index != predicted.time_index:
        raise ValidationError(
            f"ETC compares states at one slot, got {actual.time_index} vs {predicted.time_index}"
        )
    return actual.position.distance_to(predicted.position) > threshold_m


def stmpc_length(
    model: PlantModel,
    sigma0: CovMatrix,
    path_preview: list[Vec3],
    statics: list,
    movers: list[MovingObstacle],
    policy: StmpcTrigger,
    start_slot: int = 0,
) -> int:
    """Self-triggered packet length from uncertainty growth along the preview.

    Walks the open-loop covariance forward and returns the largest l (at
    most the policy horizon) such that every previewed position j <= l keeps
    clearance(position_j, kappa-radius of Sigma_j) at or above the safety
    margin. The floor is 1: re-triggering next slot is always allowed.
    path_preview[j-1] is the reference position at slot start_slot + j.
    """
    n_max = policy.horizon_max
    if len(path_preview) < n_max:
        raise ValidationError(f"path preview needs >= {n_max} entries, got {len(path_preview)}")
    if not statics and not movers:
        return n_max
    length = 0
    sigma = sigma0
    for j in range(1, n_max + 1):
        sigma = propagate_covariance(model, sigma, 1)
        radius = confidence_radius(sigma, policy.risk_kappa)
        clearance = collision_check(path_preview[j - 1], radius, statics, movers, start_slot + j)
        if clearance < policy.safety_margin_m:
            break
        length = j
    return max(length, 1)


@dataclass(frozen=True)
class ExecRecord:
    """What the buffer did this slot: the input applied and how it was sourced."""

    accel: Vec3
    underrun: bool
    from_packet: bool
    cursor: int  # position after this slot, relative to the active packet


@dataclass
class PpcBuffer:
    """Onboard packet buffer with a velocity-damping hover fallback.

    Executes the freshest packet from its first input; while packets are
    lost it advances through the remaining buffered inputs, and once they
    run out it applies -fallback_gain * v clamped to the actuator limit.
    """

    u_max: float
    fallback_gain: float = 0.5
    packet: ControlPacket | None = None
    cursor: int = 0
    _last_slot: int = field(default=-1, repr=False)

    def remaining(self) -> int:
        if self.packet is None:
            return 0
        return max(self.packet.length - self.cursor, 0)


def buffer_execute(
    buf: PpcBuffer,
    slot: int,
    delivered_packet: ControlPacket | None,
    velocity: Vec3,
) -> ExecRecord:
    """Consume one slot from the buffer, preferring a packet delivered this slot.

    A delivery replaces the buffer and executes the new first input. With no
    delivery the cursor advances through the stored sequence; exhaustion
    applies the hover fallback and reports a buffer underrun event.
    """
    if slot <= buf._last_slot:
        raise ValidationError(f"buffer slots must be strictly increasing, got {slot} after {buf._last_slot}")
    buf._last_slot = slot

    if delivered_packet is not None:
        buf.packet = delivered_packet
        buf.cursor = 0

    if buf.packet is not None and buf.cursor < buf.packet.length:
        u = buf.packet.inputs[buf.cursor]
        buf.cursor += 1
        return ExecRecord(accel=u, underrun=False, from_packet=True, cursor=buf.cursor)

    damped = np.clip(-buf.fallback_gain * velocity.as_array(), -buf.u_max, buf.u_max)
    return ExecRecord(
        accel=Vec3.from_array(damped),
        underrun=True,
        from_packet=False,
        cursor=buf.cursor,
    )
