"""Closest-point-of-approach screening between vessel pairs."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geo import EARTH_RADIUS_M, destination_arr, from_local_plane, haversine_arr, to_local_plane

TRAJECTORY_SCAN = "trajectory-scan"
CONSTANT_VELOCITY = "constant-velocity"
W_STILL = 1e-6  # m/s


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class CpaResult:
    mmsi_a: int
    mmsi_b: int
    dcpa_m: float
    tcpa_s: float
    method: str
    flagged: bool

    def to_json(self) -> dict:
        return {"mmsi": [self.mmsi_a, self.mmsi_b], "dcpa_m": self.dcpa_m, "tcpa_s": self.tcpa_s,
                "method": self.method, "flagged": self.flagged}


@dataclass(frozen=True)
class RiskConfig:
    d_safe_m: float = 500.0
    method: str = TRAJECTORY_SCAN
    refine: bool = True

    def __post_init__(self):
        if not self.d_safe_m > 0:
            raise ValueError("d_safe_m must be positive")
        if self.method not in (TRAJECTORY_SCAN, CONSTANT_VELOCITY):
            raise ValueError(f"unknown CPA method {self.method!r}")


@dataclass(frozen=True)
class VesselState:
    lon: float
    lat: float
    sog_ms: float
    cog_deg: float


def _wrap_dlon(d):
    return (d + 180.0) % 360.0 - 180.0


def _refine_segment(ta, tb, a0, a1, b0, b1, radius_m):
    """Closest approach along straight chords a0->a1, b0->b1 travelled over [ta, tb].

    Chords are straight on the azimuthal-equidistant plane about the
    four-point centroid, so converging meridians are seen. Returns (distance_m, time).
    """
    pts = np.array([a0, a1, b0, b1])
    # sorted sums keep the centre, hence the result, exactly symmetric in (a, b)
    lat0 = float(sum(sorted(pts[:, 1])) / 4.0)
    ref = float(min(pts[:, 0]))
    lon0 = ref + float(sum(sorted(_wrap_dlon(pts[:, 0] - ref)))) / 4.0
    e, n = to_local_plane(pts[:, 0], pts[:, 1], lon0, lat0, radius_m)
    xy = np.column_stack([e, n])
    r0, r1 = xy[2] - xy[0], xy[3] - xy[1]
    dr = r1 - r0
    dd = float(dr @ dr)
    s = 0.0 if dd == 0.0 else min(1.0, max(0.0, -float(r0 @ dr) / dd))
    pa = xy[0] + s * (xy[1] - xy[0])
    pb = xy[2] + s * (xy[3] - xy[2])
    (lon_a, lon_b), (lat_a, lat_b) = from_local_plane(np.array([pa[0], pb[0]]), np.array([pa[1], pb[1]]),
                                                      lon0, lat0, radius_m)
    d = float(haversine_arr(lon_a, lat_a, lon_b, lat_b, radius_m))
    return d, ta + s * (tb - ta)


def cpa_trajectory_scan(times, traj_a, traj_b, *, times_b=None, anchor_t: float | None = None,
                        mmsi_a: int = 0, mmsi_b: int = 0, d_safe_m: float = 500.0, refine: bool = True,
                        radius_m: float = EARTH_RADIUS_M) -> CpaResult:
    """Minimum separation over two time-aligned (lon, lat) tracks.

    The sampled minimum is refined on the two chords bracketing it. TCPA is
    measured from ``anchor_t`` (default: the first timestamp).
    """
    times = np.asarray(times, dtype=np.float64)
    a = np.asarray(traj_a, dtype=np.float64)
    b = np.asarray(traj_b, dtype=np.float64)
    if a.shape != b.shape or a.shape != (len(times), 2):
        raise AlignmentError(f"track shapes differ: {a.shape} vs {b.shape} for {len(times)} timestamps")
    if times_b is not None and not np.array_equal(times, np.asarray(times_b, dtype=np.float64)):
        raise AlignmentError("tracks are sampled at different timestamps")
    if len(times) == 0:
        raise AlignmentError("empty tracks")
    d = haversine_arr(a[:, 0], a[:, 1], b[:, 0], b[:, 1], radius_m)
    i = int(np.argmin(d))
    best_d, best_t = float(d[i]), float(times[i])
    if refine:
        for j in (i - 1, i):
            if 0 <= j < len(times) - 1:
                dj, tj = _refine_segment(times[j], times[j + 1], a[j], a[j + 1], b[j], b[j + 1], radius_m)
                if dj < best_d:
                    best_d, best_t = dj, tj
    anchor = float(times[0]) if anchor_t is None else float(anchor_t)
    return CpaResult(mmsi_a, mmsi_b, best_d, best_t - anchor, TRAJECTORY_SCAN, best_d <= d_safe_m)


def _plane_velocity(state: VesselState, lon0, lat0, radius_m, tau=60.0):
    p = np.array(to_local_plane(state.lon, state.lat, lon0, lat0, radius_m))
    lon1, lat1 = destination_arr(state.lon, state.lat, state.cog_deg, state.sog_ms * tau, radius_m)
    q = np.array(to_local_plane(lon1, lat1, lon0, lat0, radius_m))
    return p, (q - p) / tau


def cpa_constant_velocity(a: VesselState, b: VesselState, *, horizon_s: float | None = None,
                          mmsi_a: int = 0, mmsi_b: int = 0, d_safe_m: float = 500.0,
                          radius_m: float = EARTH_RADIUS_M) -> CpaResult:
    """Closed-form CPA assuming both vessels hold course and speed.

    Positions and velocities are taken onto an azimuthal-equidistant plane
    centred between the vessels. The CPA positions are mapped back and
    measured with haversine. Diverging pairs give TCPA 0 and the current
    separation. TCPA is clamped to ``horizon_s`` when given.
    """
    lon0 = (a.lon + b.lon) / 2.0
    lat0 = (a.lat + b.lat) / 2.0
    pa, va = _plane_velocity(a, lon0, lat0, radius_m)
    pb, vb = _plane_velocity(b, lon0, lat0, radius_m)
    r = pb - pa
    w = vb - va
    ww = float(w @ w)
    # equal course and speed leave |w| ~ 1e-8 m/s of projection curvature; below
    # W_STILL the separation moves < 0.1 m per day, so apply the |w| = 0 rule
    tcpa = 0.0 if ww <= W_STILL ** 2 else max(0.0, -float(r @ w) / ww)
    if horizon_s is not None:
        tcpa = min(tcpa, horizon_s)
    # back onto the sphere: the plane distance drifts from the true one far from the centre
    ca, cb = pa + va * tcpa, pb + vb * tcpa
    lon_c, lat_c = from_local_plane(np.array([ca[0], cb[0]]), np.array([ca[1], cb[1]]), lon0, lat0, radius_m)
    dcpa = float(haversine_arr(lon_c[0], lat_c[0], lon_c[1], lat_c[1], radius_m))
    return CpaResult(mmsi_a, mmsi_b, dcpa, tcpa, CONSTANT_VELOCITY, dcpa <= d_safe_m)


@dataclass
class RiskReport:
    anchor_t: float
    target: int
    d_safe_m: float
    method: str
    horizon_s: float
    pairs: list[CpaResult] = field(default_factory=list)
    errors: dict[int, str] = field(default_factory=dict)

    @property
    def flagged(self) -> list[CpaResult]:
        return [p for p in self.pairs if p.flagged]

    def to_json(self) -> dict:
        return {
            "anchor_t": self.anchor_t,
            "target": self.target,
            "d_safe_m": self.d_safe_m,
            "method": self.method,
            "horizon_s": self.horizon_s,
            "pairs": [{"mmsi": p.mmsi_b, "dcpa_m": p.dcpa_m, "tcpa_s": p.tcpa_s, "flagged": p.flagged}
                      for p in self.pairs],
            "errors": {str(k): v for k, v in sorted(self.errors.items())},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["anchor_t", "target", "mmsi", "dcpa_m", "tcpa_s", "flagged", "method", "d_safe_m"])
        for p in self.pairs:
            w.writerow([self.anchor_t, self.target, p.mmsi_b, p.dcpa_m, p.tcpa_s, int(p.flagged), p.method,
                        self.d_safe_m])
        return buf.getvalue()


def assess_scene_risk(scene, config: RiskConfig = RiskConfig()) -> RiskReport:
    """CPA for every target-neighbour pair of a predicted scene, sorted by DCPA then MMSI."""
    horizon_s = 0.0
    target = scene.target
    report = RiskReport(scene.anchor_t, target, config.d_safe_m, config.method, horizon_s)
    tgt_pred = scene.predictions.get(target)
    if tgt_pred is not None:
        report.horizon_s = float(tgt_pred.times[-1] - scene.anchor_t)
    pairs = []
    for nb in scene.neighbors:
        nb_pred = scene.predictions.get(nb)
        if tgt_pred is None or nb_pred is None:
            missing = target if tgt_pred is None else nb
            report.errors[nb] = f"missing prediction for {missing}"
            continue
        if config.method == TRAJECTORY_SCAN:
            if not np.array_equal(tgt_pred.times, nb_pred.times):
                report.errors[nb] = "prediction timestamps misaligned"
                continue
            # prepend the observed fix at the anchor so TCPA can be 0
            times = np.concatenate([[scene.anchor_t], tgt_pred.times])
            ta = np.vstack([scene.windows[target][-1, 1:3], tgt_pred.lonlat])
            tb = np.vstack([scene.windows[nb][-1, 1:3], nb_pred.lonlat])
            res = cpa_trajectory_scan(times, ta, tb, anchor_t=scene.anchor_t, mmsi_a=target, mmsi_b=nb,
                                      d_safe_m=config.d_safe_m, refine=config.refine)
        else:
            sa, sb = (scene.windows[m][-1] for m in (target, nb))
            res = cpa_constant_velocity(VesselState(sa[1], sa[2], sa[3], sa[4]),
                                        VesselState(sb[1], sb[2], sb[3], sb[4]), horizon_s=report.horizon_s,
                                        mmsi_a=target, mmsi_b=nb, d_safe_m=config.d_safe_m)
        pairs.append(res)
    report.pairs = sorted(pairs, key=lambda p: (p.dcpa_m, p.mmsi_a, p.mmsi_b))
    return report
