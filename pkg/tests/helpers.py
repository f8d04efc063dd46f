"""Builders shared across test modules."""
import numpy as np

from vesselcast.geo import GeoPoint, bearing_arr, destination_arr
from vesselcast.pipeline import FIELDS, AisRecord, TrajectorySegment, Voyage, derive_physics

T0 = 1_700_000_000.0


def straight_segment(mmsi=316000001, n=200, lon0=-65.0, lat0=48.0, course=45.0, speed=6.0, t0=T0, interval=120.0):
    """Fixed-interval great-circle track with physics columns derived."""
    t = t0 + interval * np.arange(n)
    lon, lat = destination_arr(np.full(n, lon0), np.full(n, lat0), course, speed * (t - t0))
    # COG is the local tangent azimuth, which drifts along a great circle
    ahead = destination_arr(np.full(n, lon0), np.full(n, lat0), course, speed * (t - t0) + 1.0)
    cog = np.where(speed > 0, bearing_arr(lon, lat, *ahead), course) % 360.0
    data = np.zeros((n, len(FIELDS)))
    data[:, 0], data[:, 1], data[:, 2], data[:, 3], data[:, 4] = t, lon, lat, speed, cog
    return derive_physics(TrajectorySegment(mmsi, data, (t[0], t[-1]), interval))


def make_voyage(mmsi, times, lon=-65.0, lat=48.0, sog=10.0, cog=90.0):
    recs = []
    for k, t in enumerate(times):
        lo = lon + 0.001 * k if np.isscalar(lon) else lon[k]
        la = lat if np.isscalar(lat) else lat[k]
        recs.append(AisRecord(mmsi, float(t), _gp(lo, la), sog, cog, "80"))
    return Voyage(mmsi, tuple(recs))


def _gp(lon, lat):
    return GeoPoint(float(lon), float(lat))


def fd_max_rel_error(fn, tensors, eps=1e-5, floor=1e-6, max_elems=None, seed=0):
    """Max relative error between autograd and central differences of scalar ``fn()``.

    Relative error per element is |g_a - g_n| / max(|g_a|, |g_n|, floor).
    ``max_elems`` limits how many entries of each tensor are probed.
    """
    import torch

    tensors = list(tensors)
    out = fn()
    grads = torch.autograd.grad(out, tensors, allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, g in zip(tensors, grads):
        g = torch.zeros_like(t) if g is None else g.reshape(-1)
        flat = t.data.view(-1)
        idx = np.arange(flat.numel())
        if max_elems is not None and len(idx) > max_elems:
            idx = rng.choice(idx, max_elems, replace=False)
        for i in idx:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
                up = fn().item()
                flat[i] = orig - eps
                down = fn().item()
                flat[i] = orig
            num = (up - down) / (2 * eps)
            ana = g.reshape(-1)[i].item()
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), floor))
    return worst
