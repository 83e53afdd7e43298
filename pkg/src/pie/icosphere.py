"""Icosphere construction and farthest-point vertex sampling.

Subdividing an icosahedron L times yields 10*4^L + 2 vertices and 20*4^L
triangles, all on the unit sphere with consistent outward winding.
"""

from __future__ import annotations

import numpy as np


def icosahedron() -> tuple[np.ndarray, np.ndarray]:
    p = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
            [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
            [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return verts, faces


def icosphere(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere after ``level`` midpoint subdivisions."""
    verts, faces = icosahedron()
    verts = list(verts)
    for _ in range(level):
        midpoint_cache: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            idx = midpoint_cache.get(key)
            if idx is None:
                m = verts[i] + verts[j]
                m /= np.linalg.norm(m)
                verts.append(m)
                idx = len(verts) - 1
                midpoint_cache[key] = idx
            return idx

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = np.asarray(new_faces, dtype=np.int64)
    V = np.asarray(verts, dtype=np.float64)

    # Enforce outward winding: triangle normal must point away from origin.
    tri = V[faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    centroid = tri.mean(axis=1)
    flip = np.einsum("ij,ij->i", n, centroid) < 0
    faces[flip] = faces[flip][:, ::-1]
    return V, faces


def farthest_point_sample(points: np.ndarray, count: int, candidates: np.ndarray) -> np.ndarray:
    """Greedy farthest-point sampling over ``candidates`` (indices into points).

    Starts from the candidate nearest the centroid of the candidate set so the
    selection is deterministic without a seed.
    """
    cand = np.asarray(candidates, dtype=np.int64)
    if count > cand.size:
        raise ValueError(f"cannot sample {count} from {cand.size} candidates")
    pts = points[cand]
    center = pts.mean(axis=0)
    first = int(np.argmin(np.linalg.norm(pts - center, axis=1)))
    chosen = [first]
    dist = np.linalg.norm(pts - pts[first], axis=1)
    for _ in range(count - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return cand[np.asarray(chosen, dtype=np.int64)]
