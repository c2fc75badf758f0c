"""Surface models, tetrahedral meshes and PINN point sampling.

Surface models come from key-value (JSON) model summaries exported by a 3D
modelling tool: one entry per object with its vertices, triangular faces,
face normals, scale and location. Volume meshes are either parsed from MSH
files (see :mod:`hsml.io`) or generated procedurally here.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

NORMAL_TOLERANCE = 1e-3  # radians


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SurfaceObject:
    name: str
    vertices: np.ndarray  # (n, 3) local coordinates, as stored in the summary
    triangles: np.ndarray  # (m, 3) int
    normals: np.ndarray  # (m, 3)
    scale: np.ndarray = field(default_factory=lambda: np.ones(3))
    location: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def world_vertices(self):
        return self.vertices * self.scale + self.location

    def triangle_corners(self):
        v = self.world_vertices
        return v[self.triangles[:, 0]], v[self.triangles[:, 1]], v[self.triangles[:, 2]]

    def areas(self):
        a, b, c = self.triangle_corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def __eq__(self, other):
        if not isinstance(other, SurfaceObject):
            return NotImplemented
        return (
            self.name == other.name
            and np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.triangles, other.triangles)
            and np.array_equal(self.normals, other.normals)
            and np.array_equal(self.scale, other.scale)
            and np.array_equal(self.location, other.location)
        )


@dataclass(frozen=True)
class SurfaceModel:
    objects: tuple[SurfaceObject, ...]

    @property
    def bounds(self):
        v = np.concatenate([o.world_vertices for o in self.objects])
        return v.min(axis=0), v.max(axis=0)

    def area(self):
        return float(sum(o.areas().sum() for o in self.objects))

    def enclosed_volume(self):
        """Signed volume by the divergence theorem (outward winding positive)."""
        vol = 0.0
        for o in self.objects:
            a, b, c = o.triangle_corners()
            vol += np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0
        return float(vol)


# -- model summaries -------------------------------------------------------


def ingest_model_summary(document):
    """Parse and validate a model summary document (JSON text or dict)."""
    data = json.loads(document) if isinstance(document, (str, bytes)) else document
    if "objects" not in data:
        raise MeshError("model summary lacks the 'objects' key")
    objects = []
    for k, raw in enumerate(data["objects"]):
        name = raw.get("name", f"object{k}")
        for key in ("name", "vertices", "faces", "normals", "scale", "location"):
            if key not in raw:
                raise MeshError(f"object {name!r}: missing required key {key!r}")
        verts = np.asarray(raw["vertices"], dtype=float).reshape(-1, 3)
        faces = raw["faces"]
        for j, f in enumerate(faces):
            if len(f) != 3:
                raise MeshError(f"object {name!r}: face {j} is not a triangle ({len(f)} vertices)")
        tris = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            bad = int(np.nonzero((tris < 0).any(axis=1) | (tris >= len(verts)).any(axis=1))[0][0])
            raise MeshError(f"object {name!r}: face {bad} has a vertex index out of range")
        normals = np.asarray(raw["normals"], dtype=float).reshape(-1, 3)
        if len(normals) != len(tris):
            raise MeshError(f"object {name!r}: {len(normals)} normals for {len(tris)} faces")
        obj = SurfaceObject(
            name=str(name),
            vertices=verts,
            triangles=tris,
            normals=normals,
            scale=np.asarray(raw["scale"], dtype=float).reshape(3),
            location=np.asarray(raw["location"], dtype=float).reshape(3),
        )
        _check_normals(obj)
        objects.append(obj)
    return SurfaceModel(tuple(objects))


def _check_normals(obj):
    a, b, c = obj.triangle_corners()
    computed = np.cross(b - a, c - a)
    clen = np.linalg.norm(computed, axis=1)
    # stored normals live in local coordinates; map with the inverse-transpose of the scale
    stored = obj.normals / obj.scale
    slen = np.linalg.norm(stored, axis=1)
    for j in np.nonzero((clen == 0) | (slen == 0))[0]:
        raise MeshError(f"object {obj.name!r}: face {j} is degenerate or has a zero normal")
    cosang = np.abs(np.einsum("ij,ij->i", computed, stored)) / (clen * slen)
    bad = np.nonzero(cosang < math.cos(NORMAL_TOLERANCE))[0]
    if len(bad):
        j = int(bad[0])
        ang = math.acos(min(1.0, float(cosang[j])))
        raise MeshError(f"object {obj.name!r}: face {j} normal deviates from its winding by {ang:.3g} rad")


def model_summary_dict(model):
    return {
        "objects": [
            {
                "name": o.name,
                "vertices": o.vertices.tolist(),
                "faces": o.triangles.tolist(),
                "normals": o.normals.tolist(),
                "scale": o.scale.tolist(),
                "location": o.location.tolist(),
            }
            for o in model.objects
        ]
    }


def dump_model_summary(model):
    return json.dumps(model_summary_dict(model), indent=1)


def surface_object(name, vertices, triangles, scale=(1, 1, 1), location=(0, 0, 0)):
    """Build a :class:`SurfaceObject` computing the face normals from the winding."""
    v = np.asarray(vertices, dtype=float)
    t = np.asarray(triangles, dtype=np.int64)
    n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    n /= np.linalg.norm(n, axis=1)[:, None]
    return SurfaceObject(name, v, t, n, np.asarray(scale, float), np.asarray(location, float))


def cube_surface(name="cube", lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)):
    """Single-object model of a box with 8 vertices and 12 outward-wound triangles."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    corners = np.array([[i, j, k] for k in (0, 1) for j in (0, 1) for i in (0, 1)], dtype=float)
    v = lo + corners * (hi - lo)
    quads = [(0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return SurfaceModel((surface_object(name, v, tris),))


def icosphere(name="sphere", radius=1.0, center=(0.0, 0.0, 0.0), subdivisions=3):
    """Geodesic sphere by repeated midpoint subdivision of an icosahedron."""
    p = (1 + math.sqrt(5)) / 2
    verts = [(-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0), (0, -1, p), (0, 1, p),
             (0, -1, -p), (0, 1, -p), (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1)]
    verts = [np.asarray(v, float) / np.linalg.norm(v) for v in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.asarray(center, float) + radius * np.array(verts)
    return SurfaceModel((surface_object(name, v, faces),))


def cylinder_surface(name="column", radius=0.5, height=1.0, segments=32, center=(0.5, 0.5)):
    """Closed cylinder along z with triangulated caps."""
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])
    v = np.vstack([
        np.column_stack([ring, np.zeros(segments)]),
        np.column_stack([ring, np.full(segments, height)]),
        [[center[0], center[1], 0.0], [center[0], center[1], height]],
    ])
    bot, top = 2 * segments, 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris += [(i, j, segments + j), (i, segments + j, segments + i)]
        tris += [(bot, j, i), (top, segments + i, segments + j)]
    return SurfaceModel((surface_object(name, v, tris),))


# -- watertightness and point location -------------------------------------


def check_watertight(obj):
    """Raise :class:`MeshError` unless every edge is shared by exactly two faces."""
    t = obj.triangles
    edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    bad = np.nonzero(counts != 2)[0]
    if len(bad):
        e = uniq[bad[0]]
        raise MeshError(
            f"object {obj.name!r} is not watertight: edge ({e[0]}, {e[1]}) is shared by {counts[bad[0]]} faces"
        )


_GRAZE = 1e-9
_MAX_CASTS = 8


def _plane_basis(direction):
    helper = np.eye(3)[np.argmin(np.abs(direction))]
    e1 = np.cross(direction, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(direction, e1)


def _candidate_pairs(points, a, b, c, direction):
    """(point, triangle) pairs whose projections onto the plane normal to
    ``direction`` share a grid cell; a superset of the possible hits."""
    e1, e2 = _plane_basis(direction)
    proj = lambda q: np.stack([q @ e1, q @ e2], axis=-1)
    tri = np.stack([proj(a), proj(b), proj(c)], axis=1)  # (m, 3, 2)
    tlo, thi = tri.min(axis=1) - _GRAZE, tri.max(axis=1) + _GRAZE
    pp = proj(points)
    lo = np.minimum(tlo.min(axis=0), pp.min(axis=0))
    span = np.maximum(np.maximum(thi.max(axis=0), pp.max(axis=0)) - lo, 1e-12)
    g = int(np.clip(np.sqrt(len(a)), 1, 256))
    cell = lambda q: np.clip(((q - lo) / span * g).astype(np.int64), 0, g - 1)
    c0, c1 = cell(tlo), cell(thi)
    # enumerate every grid cell covered by each triangle's projected box
    nx, ny = c1[:, 0] - c0[:, 0] + 1, c1[:, 1] - c0[:, 1] + 1
    reps = nx * ny
    tid = np.repeat(np.arange(len(a)), reps)
    k = np.arange(reps.sum()) - np.repeat(np.cumsum(reps) - reps, reps)
    cx = c0[tid, 0] + k % nx[tid]
    cy = c0[tid, 1] + k // nx[tid]
    key = cx * g + cy
    order = np.argsort(key, kind="stable")
    key, tid = key[order], tid[order]
    pc = cell(pp)
    pkey = pc[:, 0] * g + pc[:, 1]
    first = np.searchsorted(key, pkey, side="left")
    last = np.searchsorted(key, pkey, side="right")
    cnt = last - first
    pid = np.repeat(np.arange(len(points)), cnt)
    off = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    return pid, tid[np.repeat(first, cnt) + off]


def _crossings(points, obj, direction):
    """Ray-triangle crossing counts and a grazing flag per point (Moller-Trumbore)."""
    a, b, c = obj.triangle_corners()
    counts = np.zeros(len(points), dtype=np.int64)
    graze = np.zeros(len(points), dtype=bool)
    if not len(points):
        return counts, graze
    pid, tid = _candidate_pairs(points, a, b, c, direction)
    e1, e2 = (b - a)[tid], (c - a)[tid]
    pvec = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    parallel = np.abs(det) < 1e-14
    inv = np.where(parallel, 0.0, 1.0 / np.where(parallel, 1.0, det))
    tvec = points[pid] - a[tid]
    u = np.einsum("ij,ij->i", tvec, pvec) * inv
    qvec = np.cross(tvec, e1)
    v = (qvec @ direction) * inv
    dist = np.einsum("ij,ij->i", qvec, e2) * inv
    w = 1.0 - u - v
    inside = (u >= -_GRAZE) & (v >= -_GRAZE) & (w >= -_GRAZE) & ~parallel
    hit = inside & (dist > _GRAZE)
    near_edge = inside & (dist > -_GRAZE) & (
        (np.abs(u) <= _GRAZE) | (np.abs(v) <= _GRAZE) | (np.abs(w) <= _GRAZE) | (np.abs(dist) <= _GRAZE)
    )
    np.add.at(counts, pid[hit], 1)
    graze[pid[near_edge]] = True
    return counts, graze


def points_in_model(points, model, rng=None):
    """Vectorized :func:`point_in_model` for an ``(n, 3)`` array."""
    rng = np.random.default_rng(0) if rng is None else rng
    points = np.atleast_2d(np.asarray(points, dtype=float))
    result = np.zeros(len(points), dtype=bool)
    for obj in model.objects:
        check_watertight(obj)
        lo = obj.world_vertices.min(axis=0)
        hi = obj.world_vertices.max(axis=0)
        todo = np.nonzero(~result & np.all(points >= lo, axis=1) & np.all(points <= hi, axis=1))[0]
        for _ in range(_MAX_CASTS):
            if not len(todo):
                break
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            counts, graze = _crossings(points[todo], obj, d)
            ok = ~graze
            result[todo[ok]] |= (counts[ok] % 2) == 1
            todo = todo[graze]
        if len(todo):
            # persistent grazing after all casts: treat as on the surface, i.e. outside
            pass
    return result


def point_in_model(p, model, rng=None):
    """True when ``p`` is enclosed by at least one object of ``model``."""
    return bool(points_in_model(np.asarray(p, float)[None], model, rng)[0])


# -- sampling --------------------------------------------------------------


@dataclass(frozen=True)
class SamplePlan:
    collocation: np.ndarray  # (r_omega, 3 or 4)
    boundary: np.ndarray  # (r_gamma, 3 or 4)
    initial: np.ndarray  # (r_0, 3)
    seed: int
    boundary_faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))
    boundary_barycentric: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    horizon: float = 0.0

    @property
    def counts(self):
        return len(self.collocation), len(self.boundary), len(self.initial)


MAX_REJECTION_TRIALS = 10**7
MIN_ACCEPTANCE = 1e-4


def sample_interior(model, n, rng):
    """Rejection sampling of ``n`` points inside ``model`` from its bounding box."""
    lo, hi = model.bounds
    out = []
    got = trials = 0
    batch = max(64, 2 * n)
    while got < n:
        cand = lo + rng.random((batch, 3)) * (hi - lo)
        keep = cand[points_in_model(cand, model, rng)]
        trials += batch
        out.append(keep)
        got += len(keep)
        if trials >= MAX_REJECTION_TRIALS and got / trials < MIN_ACCEPTANCE:
            raise MeshError(f"rejection sampling acceptance {got / trials:.2e} after {trials} trials")
        if got < n and len(keep):
            batch = min(MAX_REJECTION_TRIALS, int(1.2 * (n - got) * trials / got) + 64)
        elif not len(keep):
            batch = min(MAX_REJECTION_TRIALS, batch * 4)
    return np.concatenate(out)[:n]


def sample_surface(model, n, rng):
    """Area-weighted face choice, then uniform barycentric coordinates.

    Returns ``(points, faces, barycentric)`` where ``faces`` holds
    ``(object index, triangle index)`` rows.
    """
    areas = np.concatenate([o.areas() for o in model.objects])
    owner = np.concatenate([np.full(len(o.triangles), k) for k, o in enumerate(model.objects)])
    local = np.concatenate([np.arange(len(o.triangles)) for o in model.objects])
    pick = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    bary = np.column_stack([1.0 - s, s * (1.0 - r2), s * r2])
    pts = np.empty((n, 3))
    for k, o in enumerate(model.objects):
        sel = owner[pick] == k
        if not sel.any():
            continue
        a, b, c = o.triangle_corners()
        tri = local[pick[sel]]
        w = bary[sel]
        pts[sel] = w[:, :1] * a[tri] + w[:, 1:2] * b[tri] + w[:, 2:] * c[tri]
    return pts, np.column_stack([owner[pick], local[pick]]), bary


def sample_plan(model, r_omega, r_gamma, r_0=0, horizon=0.0, seed=0):
    """Collocation, boundary and initial point sets for PINN training.

    ``horizon = 0`` produces purely spatial points for steady problems.
    """
    if min(r_omega, r_gamma, r_0) < 0 or horizon < 0:
        raise MeshError("counts and horizon must be non-negative")
    rng = np.random.default_rng(seed)
    col = sample_interior(model, r_omega, rng) if r_omega else np.zeros((0, 3))
    bnd, faces, bary = sample_surface(model, r_gamma, rng) if r_gamma else (np.zeros((0, 3)), np.zeros((0, 2), np.int64), np.zeros((0, 3)))
    init = sample_interior(model, r_0, rng) if r_0 else np.zeros((0, 3))
    if horizon > 0:
        col = np.column_stack([col, horizon * rng.random(len(col))])
        bnd = np.column_stack([bnd, horizon * rng.random(len(bnd))])
    return SamplePlan(col, bnd, init, seed, faces, bary, horizon)


# -- volume meshes ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class VolumeMesh:
    nodes: np.ndarray  # (N_h, 3)
    tets: np.ndarray  # (E, 4)
    boundary_faces: np.ndarray  # (F, 3)
    boundary_tags: tuple[str, ...]  # one per boundary face

    def __post_init__(self):
        if len(self.nodes) == 0:
            raise MeshError("mesh has no nodes")
        if len(self.boundary_tags) != len(self.boundary_faces):
            raise MeshError("one boundary tag per boundary face required")

    @property
    def n_nodes(self):
        return len(self.nodes)

    def signed_volumes(self):
        p = self.nodes[self.tets]
        return np.einsum("ij,ij->i", p[:, 1] - p[:, 0], np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 0])) / 6.0

    def volume(self):
        return float(self.signed_volumes().sum())

    def tags(self):
        return sorted(set(self.boundary_tags))

    def boundary_nodes(self, tags=None):
        if tags is None:
            faces = self.boundary_faces
        else:
            tags = [tags] if isinstance(tags, str) else list(tags)
            unknown = set(tags) - set(self.boundary_tags)
            if unknown:
                raise MeshError(f"unknown boundary tag(s) {sorted(unknown)}; mesh has {self.tags()}")
            sel = np.isin(np.asarray(self.boundary_tags), tags)
            faces = self.boundary_faces[sel]
        return np.unique(faces)

    def oriented(self):
        """Copy with every tetrahedron reordered to positive signed volume."""
        tets = self.tets.copy()
        neg = self.signed_volumes() < 0
        tets[neg] = tets[neg][:, [0, 2, 1, 3]]
        return VolumeMesh(self.nodes, tets, self.boundary_faces, self.boundary_tags)

    def surface_model(self, name="boundary"):
        """Boundary triangles wound outward, as a single-object surface model."""
        faces = self.boundary_faces.copy()
        owner = _face_owner(self)
        p = self.nodes
        for i, (f, tet) in enumerate(zip(faces, owner)):
            opposite = [n for n in self.tets[tet] if n not in f][0]
            nrm = np.cross(p[f[1]] - p[f[0]], p[f[2]] - p[f[0]])
            if np.dot(nrm, p[opposite] - p[f[0]]) > 0:
                faces[i] = f[[0, 2, 1]]
        return SurfaceModel((surface_object(name, p, faces),))


def _face_owner(mesh):
    """Index of the unique tetrahedron containing each boundary face."""
    local = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]
    lookup = {}
    for e, tet in enumerate(mesh.tets):
        for l in local:
            lookup.setdefault(tuple(sorted(tet[list(l)])), []).append(e)
    owner = []
    for f in mesh.boundary_faces:
        hits = lookup.get(tuple(sorted(f)), [])
        if len(hits) != 1:
            raise MeshError(f"boundary face {tuple(f)} belongs to {len(hits)} tetrahedra")
        owner.append(hits[0])
    return np.asarray(owner)


# Kuhn decomposition of the unit cube along the 0-7 diagonal; conforming
# between neighbouring cells because all cells share the diagonal direction.
_KUHN = [
    (0, 1, 3, 7), (0, 1, 5, 7), (0, 2, 3, 7), (0, 2, 6, 7), (0, 4, 5, 7), (0, 4, 6, 7),
]


def structured_box_mesh(extent=(1.0, 1.0, 1.0), divisions=(1, 1, 1), origin=(0.0, 0.0, 0.0)):
    """Box split into ``nx*ny*nz`` cells of six positively oriented tets each.

    Boundary faces are tagged ``xmin``, ``xmax``, ``ymin``, ``ymax``,
    ``zmin``, ``zmax``.
    """
    extent = np.asarray(extent, dtype=float)
    if np.any(extent <= 0):
        raise MeshError(f"extent must be positive, got {extent.tolist()}")
    if np.isscalar(divisions):
        divisions = (divisions,) * 3
    nx, ny, nz = (int(d) for d in divisions)
    if min(nx, ny, nz) < 1:
        raise MeshError("divisions must be >= 1")
    xs = np.linspace(0, extent[0], nx + 1) + origin[0]
    ys = np.linspace(0, extent[1], ny + 1) + origin[1]
    zs = np.linspace(0, extent[2], nz + 1) + origin[2]
    Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def nid(i, j, k):
        return (k * (ny + 1) + j) * (nx + 1) + i

    i, j, k = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    corner = np.stack([nid(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)) for c in range(8)], axis=1)
    tets = np.concatenate([corner[:, list(t)] for t in _KUHN])
    mesh = VolumeMesh(nodes, tets, np.zeros((0, 3), np.int64), ())
    mesh = mesh.oriented()

    faces = exterior_faces(mesh.tets)
    names = []
    fpts = nodes[faces]
    for f in fpts:
        for axis, label in enumerate("xyz"):
            if np.all(np.abs(f[:, axis] - (origin[axis])) < 1e-12 * max(1.0, extent[axis])):
                names.append(f"{label}min")
                break
            if np.all(np.abs(f[:, axis] - (origin[axis] + extent[axis])) < 1e-12 * max(1.0, extent[axis])):
                names.append(f"{label}max")
                break
        else:  # pragma: no cover
            names.append("boundary")
    return VolumeMesh(nodes, mesh.tets, faces, tuple(names))


def exterior_faces(tets):
    """Faces appearing in exactly one tetrahedron, in first-seen order."""
    tets = np.asarray(tets)
    local = np.array([(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)])
    all_faces = tets[:, local].reshape(-1, 3)
    key = np.sort(all_faces, axis=1)
    _, first, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    return all_faces[np.sort(first[counts == 1])]


def cylinder_mesh(radius=0.5, height=1.0, divisions=(8, 8, 8), center=(0.5, 0.5)):
    """Column mesh: box mesh whose square cross-section is mapped onto a disc.

    Lateral faces are tagged ``lateral``; caps keep ``zmin`` / ``zmax``.
    """
    box = structured_box_mesh((2.0, 2.0, height), divisions, origin=(-1.0, -1.0, 0.0))
    x, y = box.nodes[:, 0], box.nodes[:, 1]
    u = x * np.sqrt(1 - 0.5 * y * y)
    v = y * np.sqrt(1 - 0.5 * x * x)
    nodes = np.column_stack([center[0] + radius * u, center[1] + radius * v, box.nodes[:, 2]])
    tags = tuple(t if t in ("zmin", "zmax") else "lateral" for t in box.boundary_tags)
    mesh = VolumeMesh(nodes, box.tets, box.boundary_faces, tags).oriented()
    return mesh


def mesh_from_spec(spec):
    """Procedural mesh from a short spec: ``box:N``, ``box:NX,NY,NZ`` or ``cyl:N``."""
    kind, _, arg = spec.partition(":")
    nums = [int(a) for a in arg.split(",")] if arg else [4]
    div = tuple(nums) if len(nums) == 3 else (nums[0],) * 3
    if kind == "box":
        return structured_box_mesh((1.0, 1.0, 1.0), div)
    if kind in ("cyl", "column"):
        return cylinder_mesh(divisions=div)
    raise MeshError(f"unknown procedural mesh {spec!r}")
