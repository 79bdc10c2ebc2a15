"""Triangle meshes: loading (OBJ/STL), poses, bounds and the gravity rule."""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12


class MeshError(ValueError):
    """Raised when a mesh file cannot be read or holds no usable geometry."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64, meters
    triangles: np.ndarray  # (F, 3) int64
    normals: np.ndarray  # (V, 3) unit vertex normals
    dropped_degenerate: int = 0

    @classmethod
    def from_arrays(cls, vertices, triangles, normals=None, *, drop_degenerate=True) -> "TriangleMesh":
        v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("triangle index out of range")
        dropped = 0
        if drop_degenerate and len(f):
            area = 0.5 * np.linalg.norm(_face_cross(v, f), axis=1)
            keep = area > DEGENERATE_AREA
            dropped = int((~keep).sum())
            if dropped:
                log.warning("dropped %d degenerate triangles", dropped)
            f = f[keep]
        if len(f) == 0:
            raise MeshError("empty mesh")
        n = vertex_normals(v, f) if normals is None else _normalize_rows(np.asarray(normals, dtype=np.float64))
        return cls(_frozen(v), _frozen(f), _frozen(n), dropped)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)


def _face_cross(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    return np.cross(b - a, c - a)


def _normalize_rows(n: np.ndarray) -> np.ndarray:
    length = np.linalg.norm(n, axis=1, keepdims=True)
    out = np.where(length > 0, n / np.where(length > 0, length, 1.0), np.array([0.0, 0.0, 1.0]))
    return out


def vertex_normals(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals (the unnormalized face cross product carries the area)."""
    fn = _face_cross(v, f)
    acc = np.zeros_like(v)
    for k in range(3):
        np.add.at(acc, f[:, k], fn)
    return _normalize_rows(acc)


# --------------------------------------------------------------------------- loaders


def load_mesh(path, format: str | None = None, *, weld: bool = False) -> TriangleMesh:
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).upper()
    if not path.is_file():
        raise MeshError(f"{path}: file not found")
    if fmt == "OBJ":
        mesh = _load_obj(path)
    elif fmt == "STL":
        mesh = _load_stl(path)
    else:
        raise MeshError(f"{path}: unsupported mesh format {fmt!r}")
    return weld_vertices(mesh) if weld else mesh


def _load_obj(path: Path) -> TriangleMesh:
    verts: list[tuple[float, float, float]] = []
    norms: list[tuple[float, float, float]] = []
    corners: list[tuple[int, int]] = []  # (vertex index, normal index or -1) per face corner
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError as e:
        raise MeshError(f"{path}: unreadable file ({e})") from e

    def resolve(i: int, count: int, lineno: int) -> int:
        j = i - 1 if i > 0 else count + i
        if not 0 <= j < count:
            raise MeshError(f"{path}:{lineno}: index {i} out of range")
        return j

    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        tag = parts[0]
        try:
            if tag == "v":
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            elif tag == "vn":
                norms.append((float(parts[1]), float(parts[2]), float(parts[3])))
            elif tag == "f":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: face with fewer than 3 vertices")
                face = []
                for tok in parts[1:]:
                    comps = tok.split("/")
                    vi = resolve(int(comps[0]), len(verts), lineno)
                    ni = resolve(int(comps[2]), len(norms), lineno) if len(comps) >= 3 and comps[2] else -1
                    face.append((vi, ni))
                for k in range(1, len(face) - 1):  # fan triangulation
                    corners.extend((face[0], face[k], face[k + 1]))
        except (ValueError, IndexError) as e:
            if isinstance(e, MeshError):
                raise
            raise MeshError(f"{path}:{lineno}: malformed {tag!r} record: {raw.strip()!r}") from e

    if not corners:
        raise MeshError(f"{path}: empty mesh")
    v = np.asarray(verts, dtype=np.float64)
    if all(ni >= 0 for _, ni in corners):
        # split vertices per (position, normal) pair so hard edges keep their normals
        keys: dict[tuple[int, int], int] = {}
        for c in corners:
            keys.setdefault(c, len(keys))
        order = sorted(keys, key=keys.__getitem__)
        pos = v[[k[0] for k in order]]
        nrm = np.asarray(norms, dtype=np.float64)[[k[1] for k in order]]
        tri = np.asarray([keys[c] for c in corners], dtype=np.int64).reshape(-1, 3)
        try:
            return TriangleMesh.from_arrays(pos, tri, nrm)
        except MeshError as e:
            raise MeshError(f"{path}: {e}") from None
    tri = np.asarray([c[0] for c in corners], dtype=np.int64).reshape(-1, 3)
    try:
        return TriangleMesh.from_arrays(v, tri)
    except MeshError as e:
        raise MeshError(f"{path}: {e}") from None


def _load_stl(path: Path) -> TriangleMesh:
    try:
        data = path.read_bytes()
    except OSError as e:
        raise MeshError(f"{path}: unreadable file ({e})") from e
    if len(data) >= 84:
        (count,) = struct.unpack_from("<I", data, 80)
        if 84 + 50 * count == len(data):
            return _stl_binary(path, data, count)
    if data.lstrip()[:5].lower() == b"solid":
        return _stl_ascii(path, data.decode("ascii", errors="replace"))
    raise MeshError(f"{path}: not a valid binary or ASCII STL")


def _stl_binary(path: Path, data: bytes, count: int) -> TriangleMesh:
    if count == 0:
        raise MeshError(f"{path}: empty mesh")
    rec = np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    arr = np.frombuffer(data, dtype=rec, count=count, offset=84)
    v = arr["v"].reshape(-1, 3).astype(np.float64)
    if not np.isfinite(v).all():
        bad = int(np.argmax(~np.isfinite(arr["v"]).reshape(count, -1).all(axis=1)))
        raise MeshError(f"{path}: record {bad}: non-finite vertex")
    tri = np.arange(3 * count, dtype=np.int64).reshape(-1, 3)
    try:
        return TriangleMesh.from_arrays(v, tri)
    except MeshError as e:
        raise MeshError(f"{path}: {e}") from None


def _stl_ascii(path: Path, text: str) -> TriangleMesh:
    verts = []
    pending = 0
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts:
            continue
        if parts[0] == "vertex":
            try:
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except (ValueError, IndexError):
                raise MeshError(f"{path}:{lineno}: malformed vertex record") from None
            pending += 1
        elif parts[0] == "endfacet":
            if pending != 3:
                raise MeshError(f"{path}:{lineno}: facet with {pending} vertices")
            pending = 0
    if not verts:
        raise MeshError(f"{path}: empty mesh")
    v = np.asarray(verts, dtype=np.float64)
    tri = np.arange(len(v), dtype=np.int64).reshape(-1, 3)
    try:
        return TriangleMesh.from_arrays(v, tri)
    except MeshError as e:
        raise MeshError(f"{path}: {e}") from None


def weld_vertices(mesh: TriangleMesh, decimals: int = 9) -> TriangleMesh:
    """Merge vertices with identical (rounded) positions; normals are re-derived."""
    key = np.round(mesh.vertices, decimals)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return TriangleMesh.from_arrays(mesh.vertices[first], inverse.ravel()[mesh.triangles])


def write_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------- poses


def wrap_angle(a: float) -> float:
    w = math.remainder(a, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


def euler_to_matrix(rx: float, ry: float, rz: float) -> np.ndarray:
    """XYZ Euler angles to a rotation matrix, R = Rz @ Ry @ Rx (x applied first)."""
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    cz, sz = math.cos(rz), math.sin(rz)
    rot_x = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    rot_y = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rot_z = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rot_z @ rot_y @ rot_x


def matrix_to_euler(m: np.ndarray) -> tuple[float, float, float]:
    sy = -m[2, 0]
    ry = math.asin(max(-1.0, min(1.0, sy)))
    if abs(sy) < 1.0 - 1e-12:
        rx = math.atan2(m[2, 1], m[2, 2])
        rz = math.atan2(m[1, 0], m[0, 0])
    else:  # gimbal lock: fold everything into z
        rx = 0.0
        rz = math.atan2(-m[0, 1], m[1, 1])
    return rx, ry, rz


@dataclass(frozen=True)
class Pose:
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"pose scale must be positive, got {self.scale}")
        object.__setattr__(self, "translation", tuple(float(t) for t in self.translation))
        object.__setattr__(self, "rotation", tuple(wrap_angle(float(a)) for a in self.rotation))
        object.__setattr__(self, "scale", float(self.scale))

    def matrix(self) -> np.ndarray:
        return euler_to_matrix(*self.rotation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (self.scale * np.asarray(points)) @ self.matrix().T + np.asarray(self.translation)

    def inverse(self) -> "Pose":
        r_inv = self.matrix().T
        t = -(r_inv @ np.asarray(self.translation)) / self.scale
        return Pose(tuple(t), matrix_to_euler(r_inv), 1.0 / self.scale)

    def translated(self, dx: float = 0.0, dy: float = 0.0, dz: float = 0.0) -> "Pose":
        tx, ty, tz = self.translation
        return Pose((tx + dx, ty + dy, tz + dz), self.rotation, self.scale)


def transform_mesh(mesh: TriangleMesh, pose: Pose) -> TriangleMesh:
    rot = pose.matrix()
    v = (pose.scale * mesh.vertices) @ rot.T + np.asarray(pose.translation)
    n = mesh.normals @ rot.T
    return TriangleMesh(_frozen(v), mesh.triangles, _frozen(n), mesh.dropped_degenerate)


def translate_mesh(mesh: TriangleMesh, offset) -> TriangleMesh:
    v = mesh.vertices + np.asarray(offset, dtype=np.float64)
    return TriangleMesh(_frozen(v), mesh.triangles, mesh.normals, mesh.dropped_degenerate)


# --------------------------------------------------------------------------- bounds


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray = field(default_factory=lambda: np.zeros(3))
    max: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64)
        hi = np.asarray(self.max, dtype=np.float64)
        if np.any(lo > hi):
            raise ValueError(f"invalid Aabb: min {lo} > max {hi}")
        object.__setattr__(self, "min", _frozen(lo.copy()))
        object.__setattr__(self, "max", _frozen(hi.copy()))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb(np.minimum(self.min, other.min), np.maximum(self.max, other.max))

    def contains(self, p, tol: float = 0.0) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= self.min - tol) and np.all(p <= self.max + tol))

    def overlaps(self, other: "Aabb") -> bool:
        """Closed-box intersection test in 3D (touching counts as overlap)."""
        return bool(np.all(self.min <= other.max) and np.all(other.min <= self.max))

    def overlaps_xy(self, other: "Aabb") -> bool:
        """Intersection of the ground-plane projections."""
        return bool(np.all(self.min[:2] <= other.max[:2]) and np.all(other.min[:2] <= self.max[:2]))

    def expanded(self, pad: float) -> "Aabb":
        return Aabb(self.min - pad, self.max + pad)


def mesh_aabb(mesh: TriangleMesh) -> Aabb:
    if mesh.n_vertices == 0:
        raise MeshError("empty mesh")
    return Aabb(mesh.vertices.min(axis=0), mesh.vertices.max(axis=0))


def drop_to_ground(mesh: TriangleMesh) -> TriangleMesh:
    """Shift the mesh along z so that its lowest vertex rests on z = 0."""
    if mesh.n_vertices == 0:
        raise MeshError("empty mesh")
    min_z = float(mesh.vertices[:, 2].min())
    if min_z == 0.0:
        return mesh
    v = mesh.vertices.copy()
    v[:, 2] -= min_z
    return TriangleMesh(_frozen(v), mesh.triangles, mesh.normals, mesh.dropped_degenerate)
