"""Control-aware slot scheduling and base-station-side belief tracking.

Each slot at most M of N UAVs get the bundled uplink-state plus
downlink-packet exchange. Priority is a weighted sum of position-estimate
uncertainty, information age, and an environmental risk flag; unscheduled
(or erased) UAVs have their estimates propagated open loop through the
plant model.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import CovMatrix, UavState, ValidationError, Vec3, mat_psd_project
from .controller import ControlPacket
from .dynamics import PlantModel

__all__ = [
    "PriorityWeights",
    "UavContext",
    "SlotSchedule",
    "UplinkOutcome",
    "priority_score",
    "schedule_slot",
    "update_beliefs",
    "run_swarm",
]


@dataclass(frozen=True)
class PriorityWeights:
    """Weights for covariance (1/m^2), age (1/slot), and risk-flag terms."""

    w_cov: float = 1.0
    w_aoi: float = 0.5
    w_risk: float = 2.0

    def __post_init__(self):
        if self.w_cov < 0 or self.w_aoi < 0 or self.w_risk < 0:
            raise ValidationError("priority weights must be >= 0")
        if self.w_cov == 0 and self.w_aoi == 0 and self.w_risk == 0:
            raise ValidationError("at least one priority weight must be > 0")


@dataclass(frozen=True)
class PacketMeta:
    """What the base station knows about the last packet it issued to a UAV."""

    issue_slot: int
    length: int


@dataclass(frozen=True)
class UavContext:
    """Base-station belief about one UAV: estimate, freshness, and risk context."""

    uav_id: int
    estimate: UavState
    cov: CovMatrix
    aoi: int = 0
    risk_flag: bool = False
    last_packet: PacketMeta | None = None

    def __post_init__(self):
        if self.aoi < 0:
            raise ValidationError("aoi must be >= 0")


@dataclass(frozen=True)
class SlotSchedule:
    """Slot grants: ordered ids of the UAVs given the exchange this slot."""

    slot: int
    granted: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "granted", tuple(self.granted))
        if len(set(self.granted)) != len(self.granted):
            raise ValidationError("granted ids must be unique")


@dataclass(frozen=True)
class UplinkOutcome:
    """Result of one granted uplink: delivered flag and the state as reported."""

    delivered: bool
    reported: UavState | None = None


def priority_score(ctx: UavContext, w: PriorityWeights) -> float:
    """w_cov * trace of the position covariance + w_aoi * aoi + w_risk * risk."""
    return (
        w.w_cov * ctx.cov.position_trace()
        + w.w_aoi * ctx.aoi
        + w.w_risk * (1.0 if ctx.risk_flag else 0.0)
    )


def schedule_slot(
    contexts: list[UavContext],
    m_slots: int,
    w: PriorityWeights,
    slot: int = 0,
) -> SlotSchedule:
    """Grant the M highest-priority UAVs; ties prefer older data, then lower id."""
    if m_slots < 1:
        raise ValidationError("m_slots must be >= 1")
    ranked = sorted(
        contexts,
        key=lambda c: (-priority_score(c, w), -c.aoi, c.uav_id),
    )
    return SlotSchedule(slot=slot, granted=tuple(c.uav_id for c in ranked[:m_slots]))


def update_beliefs(
    contexts: list[UavContext],
    schedule: SlotSchedule,
    outcomes: dict[int, UplinkOutcome],
    model: PlantModel,
    r_meas: CovMatrix,
    believed_inputs: dict[int, Vec3] | None = None,
) -> list[UavContext]:
    """Advance the base-station beliefs by one slot.

    Granted UAVs whose uplink arrived are pinned to the reported state with
    the measurement covariance and age zero. Every other UAV is propagated
    open loop through the model with the input the station believes it is
    executing (zero acceleration when unknown), inflating the covariance by
    the process noise and aging the estimate by one slot.
    """
    if set(outcomes) != set(schedule.granted):
        raise ValidationError("uplink outcomes must cover exactly the granted set")
    believed_inputs = believed_inputs or {}

    out: list[UavContext] = []
    for ctx in contexts:
        res = outcomes.get(ctx.uav_id)
        if res is not None and res.delivered:
            if res.reported is None:
                raise ValidationError(f"delivered uplink for uav {ctx.uav_id} carries no state")
            out.append(replace(ctx, estimate=res.reported, cov=r_meas, aoi=0))
            continue
        u = believed_inputs.get(ctx.uav_id, Vec3.zero())
        u_arr = np.clip(u.as_array(), -model.u_max, model.u_max)
        xv = model.a @ ctx.estimate.as_vector() + model.b @ u_arr
        cov = mat_psd_project(model.a @ ctx.cov.m @ model.a.T + model.q.m)
        out.append(
            replace(
                ctx,
                estimate=UavState.from_vector(xv, ctx.estimate.time_index + 1),
                cov=cov,
                aoi=ctx.aoi + 1,
            )
        )
    return out


@dataclass(frozen=True)
class SwarmMetrics:
    """Per-UAV and swarm-level outcomes of one closed-loop run."""

    n_uavs: int
    horizon: int
    seed: int
    rms_error_m: tuple[float, ...]
    mean_error_m: tuple[float, ...]
    mean_aoi: tuple[float, ...]
    max_aoi: int
    underruns: tuple[int, ...]
    grants: tuple[int, ...]
    avg_ctrl_error_m: float
    energy_j: float
    run: "object" = field(repr=False, default=None)  # full RunMetrics time series


def run_swarm(scenario, **overrides) -> SwarmMetrics:
    """Run the full closed loop for one scenario and summarize it.

    Delegates to the harness engine, which owns the slot loop; see
    uavcc.engine for the per-slot stage ordering.
    """
    from . import engine  # local import: engine builds on this module

    run = engine.run_closed_loop(scenario, **overrides)
    return engine.summarize(run)
