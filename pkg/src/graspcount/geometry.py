"""Grasp volume geometry: convex hull, enclosed volume, packing upper bound.

The hull is built incrementally: seed a max-volume tetrahedron from the
input, then for each remaining point delete the faces it can see and
re-triangulate the horizon. Input sets here are tiny (13 hand keypoints,
a few dozen test points) so the O(n^2 f) loop is plenty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, ValidationError
from .kinematics import DEFAULT_GEOMETRY, DEFAULT_LIMITS, HandGeometry, HandPose, JointLimits
from .kinematics import forward_kinematics

# Densest-packing fractions used as defaults for the upper-bound count.
SPHERE_PACKING_DENSITY = math.pi / math.sqrt(18.0)
CUBE_PACKING_DENSITY = 1.0

OBJECT_KINDS = ("sphere", "cube")


@dataclass(frozen=True)
class ObjectSpec:
    """Geometry and mass of one graspable object."""

    kind: str
    characteristic_size: float  # sphere radius or cube edge, meters
    unit_mass: float  # kg
    packing_density: float

    def __post_init__(self) -> None:
        if self.kind not in OBJECT_KINDS:
            raise ValidationError(f"kind must be one of {OBJECT_KINDS}, got {self.kind!r}")
        if self.characteristic_size <= 0 or self.unit_mass <= 0:
            raise ValidationError("object size and mass must be positive")
        if not 0.0 < self.packing_density <= 1.0:
            raise ValidationError("packing_density must lie in (0, 1]")

    @classmethod
    def sphere(cls, radius: float = 0.02, unit_mass: float = 0.0027) -> "ObjectSpec":
        return cls("sphere", radius, unit_mass, SPHERE_PACKING_DENSITY)

    @classmethod
    def cube(cls, edge: float = 0.025, unit_mass: float = 0.0035) -> "ObjectSpec":
        return cls("cube", edge, unit_mass, CUBE_PACKING_DENSITY)

    def volume(self) -> float:
        if self.kind == "sphere":
            return 4.0 / 3.0 * math.pi * self.characteristic_size ** 3
        return self.characteristic_size ** 3


@dataclass(frozen=True)
class ConvexHull:
    """Triangulated hull: vertices plus outward-oriented triangle indices."""

    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) indices into vertices

    def face_planes(self) -> tuple[np.ndarray, np.ndarray]:
        """Outward unit normals and plane offsets d with n.x <= d inside."""
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        n = np.cross(b - a, c - a)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        return n, np.einsum("ij,ij->i", n, a)

    def signed_distance(self, points) -> np.ndarray:
        """Max signed distance of each point to the face planes (<= 0 inside)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        normals, offsets = self.face_planes()
        return (pts @ normals.T - offsets).max(axis=1)


def _seed_tetrahedron(pts: np.ndarray, eps: float) -> list[int]:
    """Pick four far-apart, non-degenerate points to start the hull."""
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
    i0 = int(order[0])
    d = np.linalg.norm(pts - pts[i0], axis=1)
    i1 = int(np.argmax(d))
    if d[i1] <= eps:
        raise DegenerateInput("all points coincide")
    seg = pts[i1] - pts[i0]
    cross = np.cross(pts - pts[i0], seg)
    area = np.linalg.norm(cross, axis=1)
    i2 = int(np.argmax(area))
    if area[i2] <= eps * np.linalg.norm(seg):
        raise DegenerateInput("points are collinear")
    normal = np.cross(pts[i1] - pts[i0], pts[i2] - pts[i0])
    normal /= np.linalg.norm(normal)
    height = np.abs((pts - pts[i0]) @ normal)
    i3 = int(np.argmax(height))
    if height[i3] <= eps:
        raise DegenerateInput("points are coplanar")
    return [i0, i1, i2, i3]


def convex_hull(points) -> ConvexHull:
    """Convex hull of >= 4 non-coplanar 3D points.

    Raises:
        DegenerateInput: fewer than 4 points, or all coplanar/collinear.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise DegenerateInput(f"expected an (n, 3) point array, got shape {pts.shape}")
    if pts.shape[0] < 4:
        raise DegenerateInput("need at least 4 points for a 3D hull")
    if not np.all(np.isfinite(pts)):
        raise DegenerateInput("points must be finite")

    scale = float(np.max(np.ptp(pts, axis=0)))
    eps = 1e-12 * max(scale, 1.0)

    seed = _seed_tetrahedron(pts, eps)
    interior = pts[seed].mean(axis=0)

    def oriented(tri: tuple[int, int, int]) -> tuple[int, int, int]:
        a, b, c = tri
        n = np.cross(pts[b] - pts[a], pts[c] - pts[a])
        if n @ (interior - pts[a]) > 0.0:
            return (a, c, b)
        return (a, b, c)

    i0, i1, i2, i3 = seed
    faces = [oriented(t) for t in ((i0, i1, i2), (i0, i1, i3), (i0, i2, i3), (i1, i2, i3))]

    def above(face: tuple[int, int, int], idx: int) -> bool:
        a, b, c = face
        n = np.cross(pts[b] - pts[a], pts[c] - pts[a])
        return n @ (pts[idx] - pts[a]) > eps * np.linalg.norm(n)

    for idx in range(pts.shape[0]):
        if idx in seed:
            continue
        visible = [f for f in faces if above(f, idx)]
        if not visible:
            continue
        visible_set = set(visible)
        edges: dict[tuple[int, int], int] = {}
        for a, b, c in visible:
            for e in ((a, b), (b, c), (c, a)):
                edges[e] = edges.get(e, 0) + 1
        horizon = [e for e in edges if (e[1], e[0]) not in edges]
        faces = [f for f in faces if f not in visible_set]
        faces.extend(oriented((a, b, idx)) for a, b in horizon)

    used = sorted({i for f in faces for i in f})
    remap = {old: new for new, old in enumerate(used)}
    vertices = pts[used]
    tri = np.array([[remap[i] for i in f] for f in faces], dtype=int)
    return ConvexHull(vertices=vertices, faces=tri)


def hull_volume(hull: ConvexHull) -> float:
    """Enclosed volume via signed tetrahedra against the origin."""
    a = hull.vertices[hull.faces[:, 0]]
    b = hull.vertices[hull.faces[:, 1]]
    c = hull.vertices[hull.faces[:, 2]]
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def upper_bound_count(volume: float, obj: ObjectSpec) -> int:
    """Largest object count that fits `volume` at the object's packing density."""
    if volume < 0:
        raise ValidationError("volume must be non-negative")
    # The 1e-9 slack keeps exact-ratio cases (e.g. cubes tiling a box) from
    # flooring to n-1 over float representation error.
    return int(math.floor(obj.packing_density * volume / obj.volume() + 1e-9))


def grasp_volume_estimate(
    pose: HandPose,
    geom: HandGeometry = DEFAULT_GEOMETRY,
    obj: ObjectSpec | None = None,
    limits: JointLimits = DEFAULT_LIMITS,
) -> int:
    """Upper-bound object count for the grasp formed by `pose`.

    Degenerate keypoint sets (a flat hand encloses nothing) count as 0.
    """
    if obj is None:
        obj = ObjectSpec.sphere()
    keypoints = forward_kinematics(pose, geom, limits)
    try:
        hull = convex_hull(keypoints.all_points())
    except DegenerateInput:
        return 0
    return upper_bound_count(hull_volume(hull), obj)
