"""Service profiles and compliance checking against simulated run metrics.

Profiles ship as a versioned JSON document, one record per service class
(rates, latencies, reliability, control accuracy, altitude and speed
envelopes). Range-valued cells are stored as (min, max) and checked against
the stricter bound by default, with a flag for the lenient bound. Data-rate
rows are informational unless the scenario declares an offered load, since
the simulator has no PHY rate model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .core import ValidationError

__all__ = [
    "Bound",
    "ServiceProfile",
    "RunComplianceMetrics",
    "FieldCheck",
    "ComplianceReport",
    "load_profiles",
    "builtin_profiles",
    "profile_by_name",
    "check_compliance",
]

MPS_TO_KMH = 3.6


@dataclass(frozen=True)
class Bound:
    """Closed numeric range; open ends are None."""

    min: float | None
    max: float | None

    def __post_init__(self):
        if self.min is not None and self.max is not None and self.min > self.max:
            raise ValidationError(f"bound min {self.min} exceeds max {self.max}")

    def pick(self, strict_end: str, strict: bool) -> float | None:
        """The bound actually enforced: strict_end names the stricter side."""
        lenient_end = "max" if strict_end == "min" else "min"
        end = strict_end if strict else lenient_end
        value = getattr(self, end)
        if value is None:
            value = getattr(self, lenient_end if strict else strict_end)
        return value

    def as_dict(self) -> dict:
        return {"min": self.min, "max": self.max}

    def describe(self) -> str:
        if self.min is not None and self.max is not None and self.min == self.max:
            return f"{self.min:g}"
        lo = "" if self.min is None else f"{self.min:g}"
        hi = "" if self.max is None else f"{self.max:g}"
        return f"{lo}-{hi}"


@dataclass(frozen=True)
class ServiceProfile:
    """One Table-row service class with its communication and control envelope."""

    name: str
    ul_rate_mbps: Bound
    dl_rate_mbps: Bound
    e2e_latency_ms: Bound
    reliability: Bound
    h_accuracy_m: Bound
    v_accuracy_m: Bound
    cmd_latency_ms: Bound
    altitude_m: Bound
    speed_kmh: Bound
    dl_rate_informational: bool = False
    notes: str = ""

    def __post_init__(self):
        for end in (self.reliability.min, self.reliability.max):
            if end is not None and not 0.0 < end < 1.0:
                raise ValidationError(f"{self.name}: reliability bound {end} outside (0, 1)")
        for acc in (self.h_accuracy_m, self.v_accuracy_m):
            for end in (acc.min, acc.max):
                if end is not None and end <= 0:
                    raise ValidationError(f"{self.name}: accuracy bounds must be > 0")

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "ul_rate_mbps": self.ul_rate_mbps.as_dict(),
            "dl_rate_mbps": self.dl_rate_mbps.as_dict(),
            "e2e_latency_ms": self.e2e_latency_ms.as_dict(),
            "reliability": self.reliability.as_dict(),
            "h_accuracy_m": self.h_accuracy_m.as_dict(),
            "v_accuracy_m": self.v_accuracy_m.as_dict(),
            "cmd_latency_ms": self.cmd_latency_ms.as_dict(),
            "altitude_m": self.altitude_m.as_dict(),
            "speed_kmh": self.speed_kmh.as_dict(),
            "dl_rate_informational": self.dl_rate_informational,
            "notes": self.notes,
        }


def _bound(raw: dict, key: str) -> Bound:
    cell = raw[key]
    return Bound(min=cell.get("min"), max=cell.get("max"))


def parse_profiles(doc: dict) -> list[ServiceProfile]:
    if doc.get("version") != 1:
        raise ValidationError(f"unsupported profile document version {doc.get('version')}")
    out = []
    for raw in doc["profiles"]:
        out.append(
            ServiceProfile(
                name=raw["name"],
                ul_rate_mbps=_bound(raw, "ul_rate_mbps"),
                dl_rate_mbps=_bound(raw, "dl_rate_mbps"),
                e2e_latency_ms=_bound(raw, "e2e_latency_ms"),
                reliability=_bound(raw, "reliability"),
                h_accuracy_m=_bound(raw, "h_accuracy_m"),
                v_accuracy_m=_bound(raw, "v_accuracy_m"),
                cmd_latency_ms=_bound(raw, "cmd_latency_ms"),
                altitude_m=_bound(raw, "altitude_m"),
                speed_kmh=_bound(raw, "speed_kmh"),
                dl_rate_informational=bool(raw.get("dl_rate_informational", False)),
                notes=raw.get("notes", ""),
            )
        )
    return out


def serialize_profiles(profiles: list[ServiceProfile]) -> str:
    doc = {"version": 1, "profiles": [p.as_dict() for p in profiles]}
    return json.dumps(doc, indent=2) + "\n"


def load_profiles(path: str) -> list[ServiceProfile]:
    with open(path) as f:
        return parse_profiles(json.load(f))


def builtin_profiles() -> list[ServiceProfile]:
    """The service profiles shipped with the package."""
    text = resources.files("uavcc.data").joinpath("profiles.json").read_text()
    return parse_profiles(json.loads(text))


def profile_by_name(name: str, profiles: list[ServiceProfile] | None = None) -> ServiceProfile:
    profiles = profiles if profiles is not None else builtin_profiles()
    for p in profiles:
        if p.name == name:
            return p
    known = ", ".join(repr(p.name) for p in profiles)
    raise ValidationError(f"unknown profile {name!r}; available profiles: {known}")


@dataclass(frozen=True)
class RunComplianceMetrics:
    """Measurements a compliance check consumes, extracted from a run."""

    delivery_rate: float
    cmd_latency_ms: tuple[float, ...]  # per executed input: (exec - trigger slot) * slot ms
    h_error_p95_m: float
    v_error_p95_m: float
    max_speed_mps: float
    max_altitude_m: float
    link_latency_ms: float = 0.0  # transport granularity of one slot
    offered_ul_mbps: float | None = None
    offered_dl_mbps: float | None = None

    def cmd_latency_p95_ms(self) -> float:
        if not self.cmd_latency_ms:
            return 0.0
        return float(np.percentile(np.asarray(self.cmd_latency_ms), 95))


@dataclass(frozen=True)
class FieldCheck:
    field: str
    required: str
    measured: str
    passed: bool
    informational: bool = False


@dataclass(frozen=True)
class ComplianceReport:
    profile: str
    strict: bool
    fields: tuple[FieldCheck, ...]

    @property
    def passed(self) -> bool:
        return all(f.passed for f in self.fields if not f.informational)

    def failed_fields(self) -> list[str]:
        return [f.field for f in self.fields if not f.passed and not f.informational]

    def render(self) -> str:
        lines = [f"compliance report: profile={self.profile!r} mode={'strict' if self.strict else 'lenient'}"]
        for f in self.fields:
            status = "INFO" if f.informational else ("PASS" if f.passed else "FAIL")
            lines.append(f"  [{status}] {f.field}: required {f.required}, measured {f.measured}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)

    def as_dict(self) -> dict:
        return {
            "profile": self.profile,
            "strict": self.strict,
            "passed": self.passed,
            "fields": [
                {
                    "field": f.field,
                    "required": f.required,
                    "measured": f.measured,
                    "passed": f.passed,
                    "informational": f.informational,
                }
                for f in self.fields
            ],
        }


def check_compliance(
    metrics: RunComplianceMetrics,
    profile: ServiceProfile,
    strict: bool = True,
) -> ComplianceReport:
    """Field-by-field pass/fail of one run against one service profile.

    Reliability and rate rows enforce their higher bound in strict mode;
    latency and accuracy rows their lower bound. Altitude and speed are
    envelope caps. Strictly worse measurements can only keep or add
    failures, never remove one.
    """
    checks: list[FieldCheck] = []

    rel_req = profile.reliability.pick("max", strict)
    checks.append(
        FieldCheck(
            field="reliability",
            required=f">= {rel_req:g}",
            measured=f"{metrics.delivery_rate:.6f}",
            passed=metrics.delivery_rate >= rel_req,
        )
    )

    e2e_req = profile.e2e_latency_ms.pick("min", strict)
    checks.append(
        FieldCheck(
            field="e2e_latency",
            required=f"<= {e2e_req:g} ms",
            measured=f"{metrics.link_latency_ms:g} ms",
            passed=metrics.link_latency_ms <= e2e_req,
        )
    )

    cmd_req = profile.cmd_latency_ms.pick("min", strict)
    cmd_p95 = metrics.cmd_latency_p95_ms()
    checks.append(
        FieldCheck(
            field="cmd_latency",
            required=f"p95 <= {cmd_req:g} ms",
            measured=f"{cmd_p95:g} ms",
            passed=cmd_p95 <= cmd_req,
        )
    )

    h_req = profile.h_accuracy_m.pick("min", strict)
    checks.append(
        FieldCheck(
            field="h_accuracy",
            required=f"p95 <= {h_req:g} m",
            measured=f"{metrics.h_error_p95_m:g} m",
            passed=metrics.h_error_p95_m <= h_req,
        )
    )

    v_req = profile.v_accuracy_m.pick("min", strict)
    checks.append(
        FieldCheck(
            field="v_accuracy",
            required=f"p95 <= {v_req:g} m",
            measured=f"{metrics.v_error_p95_m:g} m",
            passed=metrics.v_error_p95_m <= v_req,
        )
    )

    ul_req = profile.ul_rate_mbps.pick("max", strict)
    if metrics.offered_ul_mbps is None:
        checks.append(
            FieldCheck("ul_rate", f">= {ul_req:g} Mbps", "no offered load declared", True, informational=True)
        )
    else:
        checks.append(
            FieldCheck(
                field="ul_rate",
                required=f">= {ul_req:g} Mbps",
                measured=f"{metrics.offered_ul_mbps:g} Mbps",
                passed=metrics.offered_ul_mbps >= ul_req,
            )
        )

    dl_req = profile.dl_rate_mbps.pick("max", strict)
    if metrics.offered_dl_mbps is None or profile.dl_rate_informational:
        measured = (
            "no offered load declared"
            if metrics.offered_dl_mbps is None
            else f"{metrics.offered_dl_mbps:g} Mbps (informational row)"
        )
        checks.append(FieldCheck("dl_rate", f">= {dl_req:g} Mbps", measured, True, informational=True))
    else:
        checks.append(
            FieldCheck(
                field="dl_rate",
                required=f">= {dl_req:g} Mbps",
                measured=f"{metrics.offered_dl_mbps:g} Mbps",
                passed=metrics.offered_dl_mbps >= dl_req,
            )
        )

    alt_cap = profile.altitude_m.max
    checks.append(
        FieldCheck(
            field="altitude",
            required=f"<= {alt_cap:g} m" if alt_cap is not None else "unbounded",
            measured=f"{metrics.max_altitude_m:g} m",
            passed=alt_cap is None or metrics.max_altitude_m <= alt_cap,
        )
    )

    speed_cap = profile.speed_kmh.max
    speed_kmh = metrics.max_speed_mps * MPS_TO_KMH
    checks.append(
        FieldCheck(
            field="speed",
            required=f"<= {speed_cap:g} km/h" if speed_cap is not None else "unbounded",
            measured=f"{speed_kmh:g} km/h",
            passed=speed_cap is None or speed_kmh <= speed_cap,
        )
    )

    return ComplianceReport(profile=profile.name, strict=strict, fields=tuple(checks))
