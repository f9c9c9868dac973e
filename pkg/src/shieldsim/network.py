"""Road network model and procedural map generation.

Maps are perturbed rectilinear grids: a coarse grid of candidate
intersections with randomly deleted links (connectivity preserving),
two lanes per road (one per direction, right-hand traffic), straight
connectors through each intersection, conflict zones computed as the
overlap of connector corridors, and axis-aligned buildings filling
block interiors at a configurable density.

All generated coordinates snap to a 1/64 m lattice so that the exact
rigid transforms used by the encoder invariance tests stay float-exact.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Polyline,
    ccw,
    clip_convex,
    convex_overlap,
    cross,
    dot,
    polygon_area,
    project_span,
    rect_corners,
    snap,
)

LANE_WIDTH = 3.5
ROAD_HALF = LANE_WIDTH  # two lanes -> road half width equals one lane width
# the junction box is wider than the roads: a body pivoting through a corner
# connector sweeps ~sqrt((l/2)^2+(w/2)^2) from its chord, so adjacent corner
# arcs need this much room to never touch
BOX_HALF = 5.25
SPEED_LIMIT = 50.0 / 3.6
VEHICLE_WIDTH = 2.0
CROSSWALK_SETBACK = 1.25  # crosswalk center this far outside the intersection box
CROSSWALK_HALF = 1.25  # half width of the painted band along the road axis


class MapError(ValueError):
    """Raised for invalid generation parameters or malformed networks."""


@dataclass(frozen=True)
class MapGenParams:
    grid_cols: int = 5
    grid_rows: int = 5
    block_range: tuple[float, float] = (110.0, 180.0)
    edge_removal: float = 0.25
    building_density: float = 0.6
    setback: float = 6.0
    # corner sight triangles: small enough that approaches stay concealed
    # from afar, large enough that sight clears before the stopping window
    corner_clearance: float = 3.0
    stub_len: float = 60.0
    spawn_spacing: float = 9.0

    def validate(self) -> None:
        if self.grid_cols < 1 or self.grid_rows < 1:
            raise MapError("grid cannot host an intersection")
        if self.block_range[0] <= 0 or self.block_range[1] < self.block_range[0]:
            raise MapError("invalid block size range")
        if not 0.0 <= self.building_density <= 1.0:
            raise MapError("building_density must be in [0, 1]")
        if self.stub_len <= BOX_HALF:
            raise MapError("stub_len too short")


@dataclass
class Lane:
    id: str
    poly: Polyline
    width: float = LANE_WIDTH
    speed_limit: float = SPEED_LIMIT
    successors: dict[str, str] = field(default_factory=dict)  # turn -> lane id
    node_from: str = ""  # intersection id or sink label ("sink:...")
    node_to: str = ""
    is_entry_stub: bool = False  # starts at a map-boundary source
    is_exit_stub: bool = False  # ends at a map-boundary sink

    @property
    def length(self) -> float:
        return self.poly.length

    def corridor(self) -> list[tuple[float, float]]:
        (x0, y0), (x1, y1) = self.poly.pts[0], self.poly.pts[-1]
        ux = (x1 - x0) / self.poly.length
        uy = (y1 - y0) / self.poly.length
        return rect_corners((x0 + x1) * 0.5, (y0 + y1) * 0.5, ux, uy,
                            self.poly.length * 0.5, self.width * 0.5)


@dataclass
class Connector:
    key: str  # "@<isec>:<k>"
    in_lane: str
    out_lane: str
    turn: str  # left | straight | right
    poly: Polyline
    u_in: tuple[float, float]  # approach direction entering the intersection
    u_out: tuple[float, float]

    @property
    def length(self) -> float:
        return self.poly.length


@dataclass
class ConflictZone:
    polygons: list[list[tuple[float, float]]]  # margin-widened sweep overlaps
    pair: tuple[str, str]  # connector keys, sorted
    offsets: dict[str, tuple[float, float]]  # connector key -> (entry, exit) along it
    polygons_strict: list[list[tuple[float, float]]] = field(default_factory=list)
    # exact body-width overlaps; empty when the conflict exists only with margin


@dataclass
class Crosswalk:
    id: str
    intersection: str
    center: tuple[float, float]
    axis: tuple[float, float]  # unit vector across the road
    half_span: float
    lane_s: dict[str, float]  # lane id -> arclength where the lane meets the band
    lane_lateral: dict[str, float]  # lane id -> lateral coordinate along axis


@dataclass
class Intersection:
    id: str
    center: tuple[float, float]
    half: float
    incoming: list[str] = field(default_factory=list)
    outgoing: list[str] = field(default_factory=list)
    connectors: dict[str, Connector] = field(default_factory=dict)
    conflicts: dict[tuple[str, str], ConflictZone] = field(default_factory=dict)
    conflicts_by_conn: dict[str, list[tuple[str, ConflictZone]]] = field(default_factory=dict)
    crosswalks: list[str] = field(default_factory=list)

    @property
    def degree(self) -> int:
        # one arm per unique into-node road direction
        dirs = self._arm_dirs  # type: ignore[attr-defined]
        return len({(round(u[0], 6), round(u[1], 6))
                    for lid, u in dirs.items()})

    def box(self) -> list[tuple[float, float]]:
        cx, cy = self.center
        h = self.half
        return [(cx - h, cy - h), (cx + h, cy - h), (cx + h, cy + h), (cx - h, cy + h)]


@dataclass
class RoadNetwork:
    lanes: dict[str, Lane]
    intersections: dict[str, Intersection]
    buildings: list[tuple[float, float, float, float]]
    spawn_points: list[tuple[str, float]]
    bounds: tuple[float, float, float, float]
    crosswalks: dict[str, Crosswalk] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    # ---- derived lookups -------------------------------------------------
    def finalize(self) -> "RoadNetwork":
        """Build connectors, conflict zones and crosswalks from the primitives."""
        for isec in self.intersections.values():
            _build_connectors(self, isec)
            _build_conflicts(isec)
        _build_crosswalks(self)
        return self

    def connector(self, key: str) -> Connector:
        isec_id = key[1:key.index(":")]
        return self.intersections[isec_id].connectors[key]

    def entry_stub_lanes(self) -> list[str]:
        return [l.id for l in self.lanes.values() if l.is_entry_stub]

    def exit_stub_lanes(self) -> list[str]:
        return [l.id for l in self.lanes.values() if l.is_exit_stub]

    # ---- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema": "shieldsim-map/1",
            "bounds": list(self.bounds),
            "lanes": [
                {
                    "id": l.id,
                    "centerline": [[x, y] for x, y in l.poly.pts],
                    "width": l.width,
                    "speed_limit": l.speed_limit,
                    "successors": dict(sorted(l.successors.items())),
                    "node_from": l.node_from,
                    "node_to": l.node_to,
                    "entry_stub": l.is_entry_stub,
                    "exit_stub": l.is_exit_stub,
                }
                for l in sorted(self.lanes.values(), key=lambda l: l.id)
            ],
            "intersections": [
                {
                    "id": i.id,
                    "center": list(i.center),
                    "half": i.half,
                    "incoming": sorted(i.incoming),
                    "outgoing": sorted(i.outgoing),
                }
                for i in sorted(self.intersections.values(), key=lambda i: i.id)
            ],
            "buildings": [list(b) for b in self.buildings],
            "spawn_points": [[lane, off] for lane, off in self.spawn_points],
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RoadNetwork":
        if data.get("schema") != "shieldsim-map/1":
            raise MapError(f"unsupported map schema: {data.get('schema')!r}")
        lanes = {}
        for rec in data["lanes"]:
            lanes[rec["id"]] = Lane(
                id=rec["id"],
                poly=Polyline([(p[0], p[1]) for p in rec["centerline"]]),
                width=rec["width"],
                speed_limit=rec["speed_limit"],
                successors=dict(rec["successors"]),
                node_from=rec["node_from"],
                node_to=rec["node_to"],
                is_entry_stub=rec["entry_stub"],
                is_exit_stub=rec["exit_stub"],
            )
        isecs = {}
        for rec in data["intersections"]:
            isecs[rec["id"]] = Intersection(
                id=rec["id"],
                center=(rec["center"][0], rec["center"][1]),
                half=rec["half"],
                incoming=list(rec["incoming"]),
                outgoing=list(rec["outgoing"]),
            )
        net = cls(
            lanes=lanes,
            intersections=isecs,
            buildings=[tuple(b) for b in data["buildings"]],
            spawn_points=[(sp[0], sp[1]) for sp in data["spawn_points"]],
            bounds=tuple(data["bounds"]),
            meta=dict(data.get("meta", {})),
        )
        return net.finalize()

    @classmethod
    def from_json(cls, text: str) -> "RoadNetwork":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# connectors, conflicts, crosswalks
# --------------------------------------------------------------------------

def _classify_turn(u_in: tuple[float, float], u_out: tuple[float, float]) -> str:
    c = cross(u_in[0], u_in[1], u_out[0], u_out[1])
    d = dot(u_in[0], u_in[1], u_out[0], u_out[1])
    if d < -0.5:
        return "uturn"
    if c > 0.5:
        return "left"
    if c < -0.5:
        return "right"
    return "straight"


def _build_connectors(net: RoadNetwork, isec: Intersection) -> None:
    isec.connectors = {}
    arm_dirs: dict[str, tuple[float, float]] = {}
    k = 0
    for in_id in sorted(isec.incoming):
        lin = net.lanes[in_id]
        (ax, ay), (bx, by) = lin.poly.pts[-2], lin.poly.pts[-1]
        norm = math.hypot(bx - ax, by - ay)
        u_in = ((bx - ax) / norm, (by - ay) / norm)
        arm_dirs[in_id] = u_in
        for out_id in sorted(isec.outgoing):
            lout = net.lanes[out_id]
            (cx, cy), (dx, dy) = lout.poly.pts[0], lout.poly.pts[1]
            norm2 = math.hypot(dx - cx, dy - cy)
            u_out = ((dx - cx) / norm2, (dy - cy) / norm2)
            arm_dirs[out_id] = (-u_out[0], -u_out[1])
            turn = _classify_turn(u_in, u_out)
            if turn == "uturn":
                continue
            # skip the degenerate pair that belongs to the same arm
            if lin.node_from == lout.node_to and turn == "straight":
                continue
            key = f"@{isec.id}:{k}"
            k += 1
            entry_pt = lin.poly.pts[-1]
            exit_pt = lout.poly.pts[0]
            pts = [entry_pt]
            if turn != "straight":
                # corner the path at the crossing of the entry and exit lines
                # so bodies stay lane-aligned at the box edges instead of
                # riding a diagonal chord through them
                denom = cross(u_in[0], u_in[1], u_out[0], u_out[1])
                ex, ey = exit_pt[0] - entry_pt[0], exit_pt[1] - entry_pt[1]
                a = cross(ex, ey, u_out[0], u_out[1]) / denom
                apex = (entry_pt[0] + a * u_in[0], entry_pt[1] + a * u_in[1])
                if (math.hypot(apex[0] - entry_pt[0], apex[1] - entry_pt[1]) > 0.05
                        and math.hypot(exit_pt[0] - apex[0], exit_pt[1] - apex[1]) > 0.05):
                    pts.append(apex)
            pts.append(exit_pt)
            conn = Connector(
                key=key,
                in_lane=in_id,
                out_lane=out_id,
                turn=turn,
                poly=Polyline(pts),
                u_in=u_in,
                u_out=u_out,
            )
            isec.connectors[key] = conn
            lin.successors[turn] = out_id
    isec._arm_dirs = arm_dirs  # type: ignore[attr-defined]


SWEEP_MARGIN = 0.35  # widens conflict corridors beyond the vehicle body so
# shallow-angle adjacent paths (e.g. a stopped crosser at the box edge)
# register as conflicting


def _segment_corridors(conn: Connector, margin: float,
                       origin: tuple[float, float]) -> list[tuple]:
    """Per-segment swept rectangles in node-local coordinates (bit-stable
    under the exact rigid transforms): (corners, start_arclength, ux, uy, p0).
    """
    out = []
    pts = conn.poly.pts
    cum = conn.poly.cum
    ox, oy = origin
    for i in range(len(pts) - 1):
        x0, y0 = pts[i][0] - ox, pts[i][1] - oy
        x1, y1 = pts[i + 1][0] - ox, pts[i + 1][1] - oy
        seg = cum[i + 1] - cum[i]
        ux, uy = (x1 - x0) / seg, (y1 - y0) / seg
        corners = rect_corners((x0 + x1) * 0.5, (y0 + y1) * 0.5, ux, uy,
                               seg * 0.5, VEHICLE_WIDTH * 0.5 + margin)
        out.append((corners, cum[i], ux, uy, (x0, y0)))
    return out


def _build_conflicts(isec: Intersection) -> None:
    isec.conflicts = {}
    isec.conflicts_by_conn = {key: [] for key in isec.connectors}
    keys = sorted(isec.connectors)
    cx, cy = isec.center
    for i, ka in enumerate(keys):
        ca = isec.connectors[ka]
        segs_a = _segment_corridors(ca, SWEEP_MARGIN, isec.center)
        strict_a = _segment_corridors(ca, 0.0, isec.center)
        for kb in keys[i + 1:]:
            cb = isec.connectors[kb]
            # sibling connectors (same approach, diverging turns) keep their
            # overlap near the entry: a follower must not cut inside a slow
            # diverging leader
            segs_b = _segment_corridors(cb, SWEEP_MARGIN, isec.center)
            polys = []
            span_a = [math.inf, -math.inf]
            span_b = [math.inf, -math.inf]
            for rect_a, s_a, uxa, uya, pa in segs_a:
                for rect_b, s_b, uxb, uyb, pb in segs_b:
                    poly = clip_convex(ccw(rect_a), ccw(rect_b))
                    if polygon_area(poly) < 1e-9:
                        continue
                    polys.append([(x + cx, y + cy) for x, y in poly])
                    lo, hi = project_span(poly, pa, uxa, uya)
                    span_a[0] = min(span_a[0], s_a + lo)
                    span_a[1] = max(span_a[1], s_a + hi)
                    lo, hi = project_span(poly, pb, uxb, uyb)
                    span_b[0] = min(span_b[0], s_b + lo)
                    span_b[1] = max(span_b[1], s_b + hi)
            if not polys:
                continue
            strict = []
            segs_b_strict = _segment_corridors(cb, 0.0, isec.center)
            for rect_a, *_ in strict_a:
                for rect_b, *_ in segs_b_strict:
                    p = clip_convex(ccw(rect_a), ccw(rect_b))
                    if polygon_area(p) >= 1e-9:
                        strict.append([(x + cx, y + cy) for x, y in p])
            offs = {
                ca.key: (max(0.0, span_a[0]), min(ca.length, span_a[1])),
                cb.key: (max(0.0, span_b[0]), min(cb.length, span_b[1])),
            }
            zone = ConflictZone(polygons=polys, pair=(ka, kb), offsets=offs,
                                polygons_strict=strict)
            isec.conflicts[(ka, kb)] = zone
            isec.conflicts_by_conn[ka].append((kb, zone))
            isec.conflicts_by_conn[kb].append((ka, zone))


def _build_crosswalks(net: RoadNetwork) -> None:
    net.crosswalks = {}
    for isec in sorted(net.intersections.values(), key=lambda i: i.id):
        isec.crosswalks = []
        arms: dict[tuple[float, float], list[str]] = {}
        for lid in isec.incoming:
            u = isec._arm_dirs[lid]  # type: ignore[attr-defined]
            arms.setdefault((round(u[0], 6), round(u[1], 6)), []).append(lid)
        for lid in isec.outgoing:
            u = isec._arm_dirs[lid]  # type: ignore[attr-defined]
            arms.setdefault((round(u[0], 6), round(u[1], 6)), []).append(lid)
        for n, (u, lane_ids) in enumerate(sorted(arms.items())):
            cx = isec.center[0] - u[0] * (isec.half + CROSSWALK_SETBACK)
            cy = isec.center[1] - u[1] * (isec.half + CROSSWALK_SETBACK)
            axis = (-u[1], u[0])
            cw = Crosswalk(
                id=f"cw:{isec.id}:{n}",
                intersection=isec.id,
                center=(cx, cy),
                axis=axis,
                half_span=ROAD_HALF,
                lane_s={},
                lane_lateral={},
            )
            for lid in lane_ids:
                lane = net.lanes[lid]
                # lanes here are straight; project the band center on the lane
                (x0, y0), (x1, y1) = lane.poly.pts[0], lane.poly.pts[-1]
                ux = (x1 - x0) / lane.length
                uy = (y1 - y0) / lane.length
                s = dot(ux, uy, cx - x0, cy - y0)
                if s < -1.0 or s > lane.length + 1.0:
                    continue
                px, py, _, _ = lane.poly.point_at(min(max(s, 0.0), lane.length))
                cw.lane_s[lid] = min(max(s, 0.0), lane.length)
                cw.lane_lateral[lid] = dot(axis[0], axis[1], px - cx, py - cy)
            net.crosswalks[cw.id] = cw
            isec.crosswalks.append(cw.id)


# --------------------------------------------------------------------------
# generation
# --------------------------------------------------------------------------

def generate_map(seed: int, params: MapGenParams | None = None) -> RoadNetwork:
    """Generate a random urban grid map. Pure function of (seed, params)."""
    params = params or MapGenParams()
    params.validate()
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11,)))

    for attempt in range(16):
        net = _try_generate(rng, params, seed)
        if net is not None:
            net.meta = {"seed": seed, "attempt": attempt, "params": params.__dict__ | {
                "block_range": list(params.block_range)}}
            return net
    raise MapError(f"could not generate a connected map for seed {seed}")


def _try_generate(rng: np.random.Generator, params: MapGenParams, seed: int) -> RoadNetwork | None:
    nc, nr = params.grid_cols, params.grid_rows
    lo, hi = params.block_range
    xs = [0.0]
    for _ in range(nc - 1):
        xs.append(snap(xs[-1] + rng.uniform(lo, hi)))
    ys = [0.0]
    for _ in range(nr - 1):
        ys.append(snap(ys[-1] + rng.uniform(lo, hi)))

    def node(i: int, j: int) -> str:
        return f"n{i}_{j}"

    pos = {node(i, j): (xs[i], ys[j]) for i in range(nc) for j in range(nr)}

    # internal candidate edges
    edges = []
    for i in range(nc):
        for j in range(nr):
            if i + 1 < nc:
                edges.append((node(i, j), node(i + 1, j)))
            if j + 1 < nr:
                edges.append((node(i, j), node(i, j + 1)))
    # boundary stubs on missing grid sides
    stubs = []
    for i in range(nc):
        for j in range(nr):
            n = node(i, j)
            if i == 0:
                stubs.append((n, (-1.0, 0.0)))
            if i == nc - 1:
                stubs.append((n, (1.0, 0.0)))
            if j == 0:
                stubs.append((n, (0.0, -1.0)))
            if j == nr - 1:
                stubs.append((n, (0.0, 1.0)))

    kept = set(edges)
    degree = {n: 0 for n in pos}
    int_degree = {n: 0 for n in pos}
    for a, b in edges:
        degree[a] += 1
        degree[b] += 1
        int_degree[a] += 1
        int_degree[b] += 1
    for n, _ in stubs:
        degree[n] += 1

    def connected(active: set) -> bool:
        if not pos:
            return False
        start = next(iter(pos))
        seen = {start}
        stack = [start]
        adj: dict[str, list[str]] = {n: [] for n in pos}
        for a, b in active:
            adj[a].append(b)
            adj[b].append(a)
        while stack:
            cur = stack.pop()
            for nxt in adj[cur]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen) == len(pos)

    order = list(edges)
    rng.shuffle(order)
    for a, b in order:
        if rng.random() >= params.edge_removal:
            continue
        if degree[a] - 1 < 3 or degree[b] - 1 < 3:
            continue
        # internal degree >= 2 keeps internal lanes strongly connected
        # (stubs are one-way exits, a single internal edge would trap traffic)
        if int_degree[a] - 1 < 2 or int_degree[b] - 1 < 2:
            continue
        trial = kept - {(a, b)}
        if len(pos) > 1 and not connected(trial):
            continue
        kept = trial
        degree[a] -= 1
        degree[b] -= 1
        int_degree[a] -= 1
        int_degree[b] -= 1

    net = _assemble(pos, kept, stubs, params, rng, xs, ys)
    problems = validate_network(net)
    return None if problems else net


def _lane_pair(net: RoadNetwork, a: str, pa: tuple[float, float], b: str,
               pb: tuple[float, float], a_is_node: bool, b_is_node: bool) -> None:
    """Add the two directed lanes of the road segment a->b."""
    dx, dy = pb[0] - pa[0], pb[1] - pa[1]
    length = math.hypot(dx, dy)
    ux, uy = dx / length, dy / length
    rx, ry = uy, -ux  # right-hand offset
    off = LANE_WIDTH / 2.0
    cut_a = BOX_HALF if a_is_node else 0.0
    cut_b = BOX_HALF if b_is_node else 0.0

    fwd = Lane(
        id=f"ln:{a}>{b}",
        poly=Polyline([
            (pa[0] + ux * cut_a + rx * off, pa[1] + uy * cut_a + ry * off),
            (pb[0] - ux * cut_b + rx * off, pb[1] - uy * cut_b + ry * off),
        ]),
        node_from=a,
        node_to=b,
        is_exit_stub=not b_is_node,
    )
    rev = Lane(
        id=f"ln:{b}>{a}",
        poly=Polyline([
            (pb[0] - ux * cut_b - rx * off, pb[1] - uy * cut_b - ry * off),
            (pa[0] + ux * cut_a - rx * off, pa[1] + uy * cut_a - ry * off),
        ]),
        node_from=b,
        node_to=a,
        is_entry_stub=not b_is_node,
    )
    net.lanes[fwd.id] = fwd
    net.lanes[rev.id] = rev
    if a_is_node:
        net.intersections[a].outgoing.append(fwd.id)
        net.intersections[a].incoming.append(rev.id)
    if b_is_node:
        net.intersections[b].incoming.append(fwd.id)
        net.intersections[b].outgoing.append(rev.id)


def _assemble(pos: dict[str, tuple[float, float]], kept: set, stubs: list,
              params: MapGenParams, rng: np.random.Generator,
              xs: list[float], ys: list[float]) -> RoadNetwork:
    net = RoadNetwork(lanes={}, intersections={}, buildings=[], spawn_points=[],
                      bounds=(0, 0, 0, 0))
    for n, p in pos.items():
        net.intersections[n] = Intersection(id=n, center=p, half=BOX_HALF)
    for a, b in sorted(kept):
        _lane_pair(net, a, pos[a], b, pos[b], True, True)
    for n, (dx, dy) in sorted(stubs, key=lambda s: (s[0], s[1])):
        p = pos[n]
        tip = (snap(p[0] + dx * params.stub_len), snap(p[1] + dy * params.stub_len))
        sink = f"sink:{n}:{int(dx)}:{int(dy)}"
        _lane_pair(net, n, p, sink, tip, True, False)

    pad = params.stub_len + 10.0
    net.bounds = (min(xs) - pad, min(ys) - pad, max(xs) + pad, max(ys) + pad)

    net.finalize()
    _gen_buildings(rng, net, xs, ys, params)
    _place_spawn_points(net, params.spawn_spacing)
    return net


def _gen_buildings(rng: np.random.Generator, net: RoadNetwork,
                   xs: list[float], ys: list[float], params: MapGenParams) -> None:
    density = params.building_density
    if density <= 0.0:
        return
    setback = ROAD_HALF + params.setback
    cc = params.corner_clearance
    ext = 40.0  # outer ring depth
    xedges = [xs[0] - ext] + xs + [xs[-1] + ext]
    yedges = [ys[0] - ext] + ys + [ys[-1] + ext]
    road_rects = [_lane_road_rect(net.lanes[lid]) for lid in sorted(net.lanes)]
    for bi in range(len(xedges) - 1):
        for bj in range(len(yedges) - 1):
            x0, x1 = xedges[bi] + setback, xedges[bi + 1] - setback
            y0, y1 = yedges[bj] + setback, yedges[bj + 1] - setback
            if x1 - x0 < 8.0 or y1 - y0 < 8.0:
                continue
            ncx = max(1, int((x1 - x0) // 18.0))
            ncy = max(1, int((y1 - y0) // 18.0))
            cw = (x1 - x0) / ncx
            ch = (y1 - y0) / ncy
            for ci in range(ncx):
                for cj in range(ncy):
                    if rng.random() >= density:
                        continue
                    gx0, gy0 = x0 + ci * cw, y0 + cj * ch
                    w = rng.uniform(0.5, 0.92) * cw
                    h = rng.uniform(0.5, 0.92) * ch
                    bx0 = snap(gx0 + rng.uniform(0.0, cw - w))
                    by0 = snap(gy0 + rng.uniform(0.0, ch - h))
                    bx1 = snap(bx0 + w)
                    by1 = snap(by0 + h)
                    rect = (bx0, by0, bx1, by1)
                    if _corner_blocked(rect, xs, ys, setback, cc):
                        continue
                    if any(_rects_touch(rect, rr) for rr in road_rects):
                        continue
                    net.buildings.append(rect)


def _corner_blocked(rect, xs, ys, setback, cc) -> bool:
    """Reject buildings inside the corner sight-clearance squares."""
    x0, y0, x1, y1 = rect
    for gx in xs:
        for gy in ys:
            cx0, cx1 = gx - setback - cc, gx + setback + cc
            cy0, cy1 = gy - setback - cc, gy + setback + cc
            if x0 < cx1 and x1 > cx0 and y0 < cy1 and y1 > cy0:
                return True
    return False


def _lane_road_rect(lane: Lane) -> tuple[float, float, float, float]:
    (x0, y0), (x1, y1) = lane.poly.pts[0], lane.poly.pts[-1]
    return (min(x0, x1) - ROAD_HALF, min(y0, y1) - ROAD_HALF,
            max(x0, x1) + ROAD_HALF, max(y0, y1) + ROAD_HALF)


def _rects_touch(a, b) -> bool:
    return a[0] < b[2] and a[2] > b[0] and a[1] < b[3] and a[3] > b[1]


def _place_spawn_points(net: RoadNetwork, spacing: float) -> None:
    net.spawn_points = []
    internal = [l for l in sorted(net.lanes.values(), key=lambda l: l.id)
                if not (l.is_entry_stub or l.is_exit_stub)]
    pool = internal if internal else [
        l for l in sorted(net.lanes.values(), key=lambda l: l.id) if l.is_entry_stub]
    for lane in pool:
        off = 8.0
        while off <= lane.length - 8.0:
            net.spawn_points.append((lane.id, off))
            off += spacing


# --------------------------------------------------------------------------
# minimal map
# --------------------------------------------------------------------------

def minimal_map(buildings: tuple[tuple[float, float, float, float], ...] = (),
                approach_len: float = 120.0) -> RoadNetwork:
    """The fixed single-crossing training map: a 4-way intersection with four
    approach roads. `buildings` is the placement hook for concealment studies.
    """
    net = RoadNetwork(lanes={}, intersections={}, buildings=[], spawn_points=[],
                      bounds=(-approach_len - 10, -approach_len - 10,
                              approach_len + 10, approach_len + 10))
    n = "n0_0"
    net.intersections[n] = Intersection(id=n, center=(0.0, 0.0), half=BOX_HALF)
    for dx, dy in ((-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0)):
        tip = (dx * approach_len, dy * approach_len)
        sink = f"sink:{n}:{int(dx)}:{int(dy)}"
        _lane_pair(net, n, (0.0, 0.0), sink, tip, True, False)
    net.finalize()
    net.buildings = [tuple(snap(v) for v in b) for b in buildings]
    _place_spawn_points(net, 9.0)
    net.meta = {"minimal": True, "approach_len": approach_len}
    return net


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

def lane_reachable_sets(net: RoadNetwork) -> dict[str, set[str]]:
    """Directed reachability over the lane successor graph (lane -> lane)."""
    out: dict[str, set[str]] = {}
    for lid in net.lanes:
        seen = {lid}
        stack = [lid]
        while stack:
            cur = stack.pop()
            for nxt in net.lanes[cur].successors.values():
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        out[lid] = seen
    return out


def validate_network(net: RoadNetwork) -> list[str]:
    """Run the structural validators; returns a list of problems (empty = ok)."""
    problems: list[str] = []
    for lane in net.lanes.values():
        if len(lane.poly.pts) < 2:
            problems.append(f"{lane.id}: degenerate centerline")
        if lane.width <= 0 or lane.speed_limit <= 0:
            problems.append(f"{lane.id}: nonpositive width or speed limit")
    for isec in net.intersections.values():
        if isec.degree not in (3, 4):
            problems.append(f"{isec.id}: degree {isec.degree}")
        for (ka, kb), zone in isec.conflicts.items():
            if sum(polygon_area(poly) for poly in zone.polygons) <= 0:
                problems.append(f"{isec.id}: empty conflict zone {ka},{kb}")
            for key, (ent, ext) in zone.offsets.items():
                if not ent < ext:
                    problems.append(f"{isec.id}: bad offsets on {key}")
    # buildings vs lane corridors (bbox prefilter, corridors are near-axis rects)
    lane_boxes = []
    for lane in net.lanes.values():
        c = lane.corridor()
        lane_boxes.append((min(p[0] for p in c), min(p[1] for p in c),
                           max(p[0] for p in c), max(p[1] for p in c), lane))
    for b in net.buildings:
        brect = [(b[0], b[1]), (b[2], b[1]), (b[2], b[3]), (b[0], b[3])]
        for bx0, by0, bx1, by1, lane in lane_boxes:
            if b[0] < bx1 and b[2] > bx0 and b[1] < by1 and b[3] > by0:
                if convex_overlap(brect, lane.corridor()):
                    problems.append(f"building {b} overlaps {lane.id}")
                    break
    # connectivity
    reach = lane_reachable_sets(net)
    spawn_lanes = sorted({lid for lid, _ in net.spawn_points})
    internal_spawn = [lid for lid in spawn_lanes
                      if not (net.lanes[lid].is_entry_stub or net.lanes[lid].is_exit_stub)]
    exits = set(net.exit_stub_lanes())
    for lid in spawn_lanes:
        missing = [o for o in internal_spawn if o not in reach[lid]]
        if missing:
            problems.append(f"{lid}: cannot reach {missing[:3]}")
        if exits:
            # exits on the same arm would need a U-turn; exclude them
            wanted = exits - _same_arm_exits(net, lid)
            unreachable = [o for o in sorted(wanted) if o not in reach[lid]]
            if unreachable:
                problems.append(f"{lid}: cannot reach exits {unreachable[:3]}")
    return problems


def _same_arm_exits(net: RoadNetwork, lane_id: str) -> set[str]:
    lane = net.lanes[lane_id]
    if not lane.is_entry_stub:
        return set()
    # the paired outbound lane of the same arm shares reversed endpoints
    return {o.id for o in net.lanes.values()
            if o.is_exit_stub and o.node_to.split(":", 1)[1] == lane.node_from.split(":", 1)[1]}


# --------------------------------------------------------------------------
# routes
# --------------------------------------------------------------------------

@dataclass
class RoutePiece:
    key: str  # lane id or connector key
    kind: str  # "lane" | "conn"
    start: float  # cumulative route offset of the piece start
    length: float
    poly: Polyline
    isec: str = ""  # intersection id for connector pieces
    speed_limit: float = SPEED_LIMIT
    bbox: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        xs = [p[0] for p in self.poly.pts]
        ys = [p[1] for p in self.poly.pts]
        self.bbox = (min(xs), min(ys), max(xs), max(ys))


@dataclass
class Route:
    lane_ids: list[str]
    pieces: list[RoutePiece]
    length: float
    conn_indices: list[int] = field(default_factory=list)

    def pos_at(self, s: float) -> tuple[float, float, float, float]:
        piece = self.piece_at(s)
        return piece.poly.point_at(s - piece.start)

    def piece_at(self, s: float) -> RoutePiece:
        if s <= 0.0:
            return self.pieces[0]
        for piece in self.pieces:
            if s < piece.start + piece.length:
                return piece
        return self.pieces[-1]

    def piece_index_at(self, s: float, hint: int = 0) -> int:
        i = min(hint, len(self.pieces) - 1)
        while i > 0 and s < self.pieces[i].start:
            i -= 1
        while i + 1 < len(self.pieces) and s >= self.pieces[i].start + self.pieces[i].length:
            i += 1
        return i


def build_route(net: RoadNetwork, lane_ids: list[str]) -> Route:
    pieces: list[RoutePiece] = []
    s = 0.0
    for i, lid in enumerate(lane_ids):
        lane = net.lanes[lid]
        pieces.append(RoutePiece(key=lid, kind="lane", start=s, length=lane.length,
                                 poly=lane.poly, speed_limit=lane.speed_limit))
        s += lane.length
        if i + 1 < len(lane_ids):
            nxt = lane_ids[i + 1]
            if nxt not in lane.successors.values():
                raise MapError(f"{nxt} is not a successor of {lid}")
            isec = net.intersections[lane.node_to]
            conn = next(c for c in isec.connectors.values()
                        if c.in_lane == lid and c.out_lane == nxt)
            pieces.append(RoutePiece(key=conn.key, kind="conn", start=s,
                                     length=conn.length, poly=conn.poly, isec=isec.id,
                                     speed_limit=lane.speed_limit))
            s += conn.length
    conn_indices = [i for i, p in enumerate(pieces) if p.kind == "conn"]
    return Route(lane_ids=list(lane_ids), pieces=pieces, length=s,
                 conn_indices=conn_indices)


def sample_route(net: RoadNetwork, start: tuple[str, float], rng: np.random.Generator,
                 min_length: float = 400.0, avoid_sinks: bool = False) -> Route:
    """Random route from a spawn point: uniform turn choice at every
    intersection, ending at a boundary sink or once min_length is covered.

    With avoid_sinks the walk never exits the map while another choice
    exists (used for the agent so episodes cannot run off the network).
    """
    lane_id, offset = start
    if lane_id not in net.lanes:
        raise MapError(f"unknown spawn lane {lane_id}")
    lane_ids = [lane_id]
    covered = net.lanes[lane_id].length - offset
    cur = lane_id
    while covered < min_length:
        lane = net.lanes[cur]
        choices = sorted(set(lane.successors.values()))
        if not choices:
            break  # boundary sink
        if avoid_sinks:
            keep = [c for c in choices if not net.lanes[c].is_exit_stub]
            choices = keep or choices
        cur = choices[int(rng.integers(0, len(choices)))]
        lane_ids.append(cur)
        covered += net.lanes[cur].length
    return build_route(net, lane_ids)


# --------------------------------------------------------------------------
# exact rigid transform (test support)
# --------------------------------------------------------------------------

def rigid_transform(net: RoadNetwork, quarter_turns: int, tx: float, ty: float) -> RoadNetwork:
    """Rotate by quarter turns about the origin, then translate by a lattice
    vector. Both operations are float-exact on lattice coordinates, so the
    rebuilt network's derived geometry is bit-identical in relative terms.
    """
    tx, ty = snap(tx), snap(ty)
    q = quarter_turns % 4

    def tp(p: tuple[float, float]) -> tuple[float, float]:
        x, y = p
        for _ in range(q):
            x, y = -y, x
        return (x + tx, y + ty)

    data = net.to_dict()
    for lane in data["lanes"]:
        lane["centerline"] = [list(tp((p[0], p[1]))) for p in lane["centerline"]]
    for isec in data["intersections"]:
        isec["center"] = list(tp((isec["center"][0], isec["center"][1])))
    new_buildings = []
    for b in data["buildings"]:
        p0 = tp((b[0], b[1]))
        p1 = tp((b[2], b[3]))
        new_buildings.append([min(p0[0], p1[0]), min(p0[1], p1[1]),
                              max(p0[0], p1[0]), max(p0[1], p1[1])])
    data["buildings"] = new_buildings
    b0 = tp((data["bounds"][0], data["bounds"][1]))
    b1 = tp((data["bounds"][2], data["bounds"][3]))
    data["bounds"] = [min(b0[0], b1[0]), min(b0[1], b1[1]),
                      max(b0[0], b1[0]), max(b0[1], b1[1])]
    return RoadNetwork.from_dict(data)
