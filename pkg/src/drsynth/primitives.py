"""Procedural base meshes used as distractors, all roughly unit-sized and centered at the origin."""

from __future__ import annotations

import math

import numpy as np

from .geometry import TriangleMesh

SHAPES = ("cube", "sphere", "cone", "cylinder", "torus", "icosphere")


def cube(size: float = 1.0) -> TriangleMesh:
    h = size / 2
    v, f = [], []
    # one quad per face, split vertices so each face is flat-shaded
    for axis in range(3):
        for sign in (-1.0, 1.0):
            u, w = [a for a in range(3) if a != axis]
            quad = []
            for a, b in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
                p = [0.0, 0.0, 0.0]
                p[axis], p[u], p[w] = sign * h, a * h, b * h
                quad.append(p)
            base = len(v)
            v.extend(quad)
            tris = [(0, 1, 2), (0, 2, 3)]
            normal = np.zeros(3)
            normal[axis] = sign
            for t in tris:
                a, b, c = (np.array(quad[i]) for i in t)
                if np.dot(np.cross(b - a, c - a), normal) < 0:
                    t = (t[0], t[2], t[1])
                f.append(tuple(base + i for i in t))
    return TriangleMesh.from_arrays(v, f)


def uv_sphere(radius: float = 0.5, rings: int = 12, segments: int = 24) -> TriangleMesh:
    v = [(0.0, 0.0, radius)]
    for i in range(1, rings):
        th = math.pi * i / rings
        for j in range(segments):
            ph = 2 * math.pi * j / segments
            v.append((radius * math.sin(th) * math.cos(ph), radius * math.sin(th) * math.sin(ph), radius * math.cos(th)))
    v.append((0.0, 0.0, -radius))
    south = len(v) - 1
    f = []
    for j in range(segments):
        f.append((0, 1 + j, 1 + (j + 1) % segments))
    for i in range(rings - 2):
        r0, r1 = 1 + i * segments, 1 + (i + 1) * segments
        for j in range(segments):
            jn = (j + 1) % segments
            f.append((r0 + j, r1 + j, r1 + jn))
            f.append((r0 + j, r1 + jn, r0 + jn))
    last = 1 + (rings - 2) * segments
    for j in range(segments):
        f.append((south, last + (j + 1) % segments, last + j))
    return TriangleMesh.from_arrays(v, f)


def _lathe_caps(radius_bottom: float, radius_top: float, height: float, segments: int) -> TriangleMesh:
    h = height / 2
    v, f = [], []
    for j in range(segments):
        ph = 2 * math.pi * j / segments
        v.append((radius_bottom * math.cos(ph), radius_bottom * math.sin(ph), -h))
    top_is_point = radius_top == 0.0
    if top_is_point:
        v.append((0.0, 0.0, h))
        apex = len(v) - 1
        for j in range(segments):
            f.append((j, (j + 1) % segments, apex))
    else:
        for j in range(segments):
            ph = 2 * math.pi * j / segments
            v.append((radius_top * math.cos(ph), radius_top * math.sin(ph), h))
        for j in range(segments):
            jn = (j + 1) % segments
            f.append((j, jn, segments + jn))
            f.append((j, segments + jn, segments + j))
        v.append((0.0, 0.0, h))
        tc = len(v) - 1
        for j in range(segments):
            f.append((segments + j, segments + (j + 1) % segments, tc))
    v.append((0.0, 0.0, -h))
    bc = len(v) - 1
    for j in range(segments):
        f.append(((j + 1) % segments, j, bc))
    return TriangleMesh.from_arrays(v, f)


def cone(radius: float = 0.5, height: float = 1.0, segments: int = 24) -> TriangleMesh:
    return _lathe_caps(radius, 0.0, height, segments)


def cylinder(radius: float = 0.5, height: float = 1.0, segments: int = 24) -> TriangleMesh:
    return _lathe_caps(radius, radius, height, segments)


def torus(major: float = 0.35, minor: float = 0.15, rings: int = 24, sides: int = 12) -> TriangleMesh:
    v, f = [], []
    for i in range(rings):
        u = 2 * math.pi * i / rings
        for j in range(sides):
            w = 2 * math.pi * j / sides
            r = major + minor * math.cos(w)
            v.append((r * math.cos(u), r * math.sin(u), minor * math.sin(w)))
    for i in range(rings):
        for j in range(sides):
            a = i * sides + j
            b = ((i + 1) % rings) * sides + j
            c = ((i + 1) % rings) * sides + (j + 1) % sides
            d = i * sides + (j + 1) % sides
            f.append((a, b, c))
            f.append((a, c, d))
    return TriangleMesh.from_arrays(v, f)


def icosphere(radius: float = 0.5, subdivisions: int = 2) -> TriangleMesh:
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    verts = [tuple(np.array(p, dtype=float) / np.linalg.norm(p)) for p in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                p = (np.array(verts[a]) + np.array(verts[b])) / 2
                verts.append(tuple(p / np.linalg.norm(p)))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangleMesh.from_arrays(np.array(verts) * radius, faces)


def make_shape(name: str) -> TriangleMesh:
    builders = {
        "cube": cube,
        "sphere": uv_sphere,
        "cone": cone,
        "cylinder": cylinder,
        "torus": torus,
        "icosphere": icosphere,
    }
    try:
        return builders[name]()
    except KeyError:
        raise ValueError(f"unknown primitive {name!r}; expected one of {SHAPES}") from None


def quad(corners) -> TriangleMesh:
    """Two-triangle quad; corners in counter-clockwise order seen from the front."""
    return TriangleMesh.from_arrays(corners, [(0, 1, 2), (0, 2, 3)])
