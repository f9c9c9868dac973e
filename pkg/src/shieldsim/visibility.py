"""Line-of-sight computation against building footprints.

Buildings are the only occluders, so everything here is a function of the
static map plus an observer position. The per-frame encoder path computes
exact masks for the agent; background drivers use tables precomputed per
approach lane (SightTables) with conservative rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SAMPLE_STEP = 0.5  # m, lane sampling resolution for masks


def segments_clear(origin: tuple[float, float], targets: np.ndarray,
                   rects: np.ndarray) -> np.ndarray:
    """Vectorized slab test: for each target point, True if the segment from
    origin to it intersects none of the axis-aligned rects (B, 4)."""
    n = len(targets)
    if n == 0:
        return np.zeros(0, dtype=bool)
    if len(rects) == 0:
        return np.ones(n, dtype=bool)
    ox, oy = origin
    dx = targets[:, 0] - ox  # (N,)
    dy = targets[:, 1] - oy
    with np.errstate(divide="ignore", invalid="ignore"):
        tx0 = (rects[None, :, 0] - ox) / dx[:, None]  # (N, B)
        tx1 = (rects[None, :, 2] - ox) / dx[:, None]
        ty0 = (rects[None, :, 1] - oy) / dy[:, None]
        ty1 = (rects[None, :, 3] - oy) / dy[:, None]
    txmin = np.minimum(tx0, tx1)
    txmax = np.maximum(tx0, tx1)
    tymin = np.minimum(ty0, ty1)
    tymax = np.maximum(ty0, ty1)
    # zero direction components: inside the slab iff origin coordinate is
    zx = dx == 0.0
    if zx.any():
        inside = (rects[None, :, 0] <= ox) & (ox <= rects[None, :, 2])
        txmin = np.where(zx[:, None], np.where(inside, -np.inf, np.inf), txmin)
        txmax = np.where(zx[:, None], np.where(inside, np.inf, -np.inf), txmax)
    zy = dy == 0.0
    if zy.any():
        inside = (rects[None, :, 1] <= oy) & (oy <= rects[None, :, 3])
        tymin = np.where(zy[:, None], np.where(inside, -np.inf, np.inf), tymin)
        tymax = np.where(zy[:, None], np.where(inside, np.inf, -np.inf), tymax)
    t0 = np.maximum(np.maximum(txmin, tymin), 0.0)
    t1 = np.minimum(np.minimum(txmax, tymax), 1.0)
    hit = (t0 <= t1).any(axis=1)
    return ~hit


def segments_clear_multi(origins: np.ndarray, targets: np.ndarray,
                         rects: np.ndarray) -> np.ndarray:
    """(O, T) boolean matrix: segment from origin o to target t hits no rect."""
    O, T = len(origins), len(targets)
    if O == 0 or T == 0:
        return np.ones((O, T), dtype=bool)
    if len(rects) == 0:
        return np.ones((O, T), dtype=bool)
    ox = origins[:, 0][:, None, None]  # (O,1,1)
    oy = origins[:, 1][:, None, None]
    dx = targets[None, :, 0][:, :, None] - ox  # (O,T,1)
    dy = targets[None, :, 1][:, :, None] - oy
    with np.errstate(divide="ignore", invalid="ignore"):
        tx0 = (rects[None, None, :, 0] - ox) / dx
        tx1 = (rects[None, None, :, 2] - ox) / dx
        ty0 = (rects[None, None, :, 1] - oy) / dy
        ty1 = (rects[None, None, :, 3] - oy) / dy
    txmin = np.minimum(tx0, tx1)
    txmax = np.maximum(tx0, tx1)
    tymin = np.minimum(ty0, ty1)
    tymax = np.maximum(ty0, ty1)
    zx = dx == 0.0
    if zx.any():
        inside = (rects[None, None, :, 0] <= ox) & (ox <= rects[None, None, :, 2])
        txmin = np.where(zx, np.where(inside, -np.inf, np.inf), txmin)
        txmax = np.where(zx, np.where(inside, np.inf, -np.inf), txmax)
    zy = dy == 0.0
    if zy.any():
        inside = (rects[None, None, :, 1] <= oy) & (oy <= rects[None, None, :, 3])
        tymin = np.where(zy, np.where(inside, -np.inf, np.inf), tymin)
        tymax = np.where(zy, np.where(inside, np.inf, -np.inf), tymax)
    t0 = np.maximum(np.maximum(txmin, tymin), 0.0)
    t1 = np.minimum(np.minimum(txmax, tymax), 1.0)
    return ~((t0 <= t1).any(axis=2))


def point_visible(origin: tuple[float, float], target: tuple[float, float],
                  buildings) -> bool:
    if not buildings:
        return True
    rects = np.asarray(buildings, dtype=float)
    return bool(segments_clear(origin, np.array([target], dtype=float), rects)[0])


@dataclass
class VisibilityMask:
    """Visible sub-intervals (lane arclength) per lane within the lookahead.

    `domain` is the in-range stretch of each lane; points outside it are
    neither visible nor concealed (they are beyond the sensor horizon)."""
    origin: tuple[float, float]
    lookahead: float
    step: float
    visible: dict[str, list[tuple[float, float]]]
    domain: dict[str, tuple[float, float]]
    world: object = None  # back-reference for downstream queries

    def concealed(self, lane_id: str, length: float) -> list[tuple[float, float]]:
        """Complement of the visible intervals over the in-range domain."""
        dom = self.domain.get(lane_id)
        if dom is None:
            return []
        lo, hi = max(0.0, dom[0]), min(length, dom[1])
        out = []
        cur = lo
        for a, b in self.visible.get(lane_id, []):
            if a > cur:
                out.append((cur, a))
            cur = max(cur, b)
        if cur < hi:
            out.append((cur, hi))
        return out


def visible_region(world, ego, lanes: list[str] | None = None,
                   step: float = SAMPLE_STEP, lookahead: float | None = None) -> VisibilityMask:
    """Sample lane centerlines and classify each point by line of sight from
    the ego sensor origin (vehicle front). A point is visible iff the segment
    to it crosses no building rectangle."""
    net = world.network
    d_la = lookahead if lookahead is not None else world.config.encoder.d_la
    x, y, _, _ = ego.route.pos_at(ego.s)
    origin = (x, y)
    rects_all = net.buildings
    lane_ids = lanes if lanes is not None else sorted(net.lanes)
    visible: dict[str, list[tuple[float, float]]] = {}
    rects = np.asarray(rects_all, dtype=float) if rects_all else np.zeros((0, 4))
    domain: dict[str, tuple[float, float]] = {}
    for lid in lane_ids:
        lane = net.lanes[lid]
        # lane bbox prefilter against the lookahead disc
        (x0, y0), (x1, y1) = lane.poly.pts[0], lane.poly.pts[-1]
        if (min(x0, x1) > x + d_la or max(x0, x1) < x - d_la or
                min(y0, y1) > y + d_la or max(y0, y1) < y - d_la):
            continue
        n = max(2, int(lane.length / step) + 1)
        ss = np.minimum(np.arange(n, dtype=float) * step, lane.length)
        pts = np.empty((n, 2))
        for i, s in enumerate(ss):
            px, py, _, _ = lane.poly.point_at(float(s))
            pts[i, 0] = px
            pts[i, 1] = py
        in_range = ((pts[:, 0] - x) ** 2 + (pts[:, 1] - y) ** 2) <= d_la * d_la
        if not in_range.any():
            continue
        idx = np.nonzero(in_range)[0]
        domain[lid] = (float(ss[idx[0]]), float(ss[idx[-1]]))
        clear = segments_clear(origin, pts, rects) & in_range
        intervals = []
        start = None
        for i, ok in enumerate(clear):
            if ok and start is None:
                start = float(ss[i])
            elif not ok and start is not None:
                intervals.append((start, float(ss[i - 1])))
                start = None
        if start is not None:
            intervals.append((start, float(ss[-1])))
        visible[lid] = intervals
    return VisibilityMask(origin=origin, lookahead=d_la, step=step,
                          visible=visible, domain=domain, world=world)


def visible_prefix(origin: tuple[float, float], lane, rects: np.ndarray,
                   max_range: float, step: float = SAMPLE_STEP) -> float:
    """Length of the fully visible stretch of `lane` measured upstream from
    its end (toward the intersection it feeds). Returns max_range if nothing
    within range is concealed."""
    length = lane.length
    span = min(max_range, length)
    n = max(2, int(span / step) + 1)
    ss = length - np.minimum(np.arange(n, dtype=float) * step, span)
    pts = np.empty((n, 2))
    for i, s in enumerate(ss):
        px, py, _, _ = lane.poly.point_at(float(s))
        pts[i, 0] = px
        pts[i, 1] = py
    clear = segments_clear(origin, pts, rects)
    for i, ok in enumerate(clear):
        if not ok:
            return float(i) * step
    return float(max_range)


@dataclass
class SightTables:
    """Per-approach static visibility: for observer positions along each
    incoming lane (2 m grid over the last 60 m), the visible prefix of every
    conflicting incoming lane at the same intersection. Conservative lookup
    (min of the two neighboring samples)."""
    obs_step: float = 2.0
    obs_span: float = 60.0
    target_range: float = 55.0
    tables: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)

    @classmethod
    def build(cls, net, monitor_range: float = 50.0) -> "SightTables":
        st = cls(target_range=monitor_range + 5.0)
        if not net.buildings:
            return st  # nothing occludes; prefix() falls back to target_range
        rects_all = np.asarray(net.buildings, dtype=float)
        t_step = 2.0
        for isec in net.intersections.values():
            incoming = sorted(isec.incoming)
            cx, cy = isec.center
            near = rects_all[
                (rects_all[:, 0] < cx + 130) & (rects_all[:, 2] > cx - 130) &
                (rects_all[:, 1] < cy + 130) & (rects_all[:, 3] > cy - 130)]
            for la in incoming:
                lane_a = net.lanes[la]
                ua = isec._arm_dirs[la]  # type: ignore[attr-defined]
                span = min(st.obs_span, lane_a.length)
                n_obs = int(span / st.obs_step) + 1
                origins = np.empty((n_obs, 2))
                for i in range(n_obs):
                    ox, oy, _, _ = lane_a.poly.point_at(max(0.0, lane_a.length - i * st.obs_step))
                    origins[i] = (ox, oy)
                for lb in incoming:
                    if lb == la:
                        continue
                    ub = isec._arm_dirs[lb]  # type: ignore[attr-defined]
                    if ua[0] * ub[0] + ua[1] * ub[1] < -0.7:
                        continue  # oncoming arm: straight down own road, never building-blocked
                    lane_b = net.lanes[lb]
                    t_span = min(st.target_range, lane_b.length)
                    n_t = int(t_span / t_step) + 1
                    targets = np.empty((n_t, 2))
                    for i in range(n_t):
                        px, py, _, _ = lane_b.poly.point_at(lane_b.length - min(i * t_step, t_span))
                        targets[i] = (px, py)
                    # only buildings inside the pair's bounding box can occlude
                    x0 = min(origins[:, 0].min(), targets[:, 0].min()) - 1.0
                    x1 = max(origins[:, 0].max(), targets[:, 0].max()) + 1.0
                    y0 = min(origins[:, 1].min(), targets[:, 1].min()) - 1.0
                    y1 = max(origins[:, 1].max(), targets[:, 1].max()) + 1.0
                    pair_rects = near[(near[:, 0] < x1) & (near[:, 2] > x0) &
                                      (near[:, 1] < y1) & (near[:, 3] > y0)]
                    clear = segments_clear_multi(origins, targets, pair_rects)  # (O, T)
                    vals = np.where(clear.all(axis=1), st.target_range,
                                    np.argmin(clear, axis=1) * t_step)
                    st.tables[(la, lb)] = vals.astype(float)
        return st

    def prefix(self, lane_a: str, lane_a_len: float, s_obs: float, lane_b: str) -> float:
        """Visible prefix of lane_b for an observer at arclength s_obs on lane_a."""
        vals = self.tables.get((lane_a, lane_b))
        if vals is None:
            return self.target_range
        f = (lane_a_len - s_obs) / self.obs_step
        i0 = int(f)
        if i0 < 0:
            return float(vals[0])
        if i0 + 1 >= len(vals):
            return float(vals[-1])
        return float(min(vals[i0], vals[i0 + 1]))
