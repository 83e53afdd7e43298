"""Z-buffer triangle rasterization with differentiable attribute interpolation.

Triangle assignment (which triangle owns which pixel) is computed in numpy on
detached screen coordinates and is treated as locally constant; barycentric
weights and attributes are then recomputed in torch from the differentiable
vertex data, so gradients flow through geometry and shading while visibility
stays frozen for the evaluation.  Pixel (row i, col j) samples the projected
plane at (x=j, y=i).
"""

from __future__ import annotations

import numpy as np
import torch

DEGENERATE_AREA = 1e-12


def assign_triangles(
    xy: np.ndarray,
    depth: np.ndarray,
    faces: np.ndarray,
    height: int,
    width: int,
    front: np.ndarray,
) -> np.ndarray:
    """Per-pixel owning-triangle map, -1 where no triangle covers the pixel.

    ``front`` marks the candidate triangles (back faces already culled).
    Depth ties resolve to the lowest triangle index, so the map is a pure
    function of its inputs.
    """
    assignment = np.full(height * width, -1, dtype=np.int64)
    cand = np.nonzero(front)[0]
    if cand.size == 0:
        return assignment.reshape(height, width)
    tri = faces[cand]
    a, b, c = xy[tri[:, 0]], xy[tri[:, 1]], xy[tri[:, 2]]
    e1, e2 = b - a, c - a
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    ok = np.abs(det) > DEGENERATE_AREA

    # Integer pixel-center bounding box per triangle, clipped to the image.
    xs = np.stack([a[:, 0], b[:, 0], c[:, 0]], axis=1)
    ys = np.stack([a[:, 1], b[:, 1], c[:, 1]], axis=1)
    x0 = np.maximum(np.ceil(xs.min(axis=1)), 0).astype(np.int64)
    x1 = np.minimum(np.floor(xs.max(axis=1)), width - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(ys.min(axis=1)), 0).astype(np.int64)
    y1 = np.minimum(np.floor(ys.max(axis=1)), height - 1).astype(np.int64)
    ok &= (x0 <= x1) & (y0 <= y1)
    if not ok.any():
        return assignment.reshape(height, width)
    cand, tri, a = cand[ok], tri[ok], a[ok]
    e1, e2, det = e1[ok], e2[ok], det[ok]
    x0, x1, y0, y1 = x0[ok], x1[ok], y0[ok], y1[ok]

    # Barycentric weights are affine in pixel coordinates:
    #   l1 = a1*x + b1*y + c1,  l2 = a2*x + b2*y + c2,  l0 = 1 - l1 - l2
    a1, b1 = e2[:, 1] / det, -e2[:, 0] / det
    a2, b2 = -e1[:, 1] / det, e1[:, 0] / det
    c1 = -(a1 * a[:, 0] + b1 * a[:, 1])
    c2 = -(a2 * a[:, 0] + b2 * a[:, 1])

    # Evaluate every triangle over a shared k*k window anchored at its
    # bounding box; window cells outside the own bbox are discarded.
    k = int(max((x1 - x0).max(), (y1 - y0).max())) + 1
    off = np.arange(k, dtype=np.int64)
    ox = np.tile(off, k)[None, :]
    oy = np.repeat(off, k)[None, :]
    px = x0[:, None] + ox
    py = y0[:, None] + oy
    valid = (px <= x1[:, None]) & (py <= y1[:, None])

    fx = px.astype(np.float64)
    fy = py.astype(np.float64)
    l1 = a1[:, None] * fx + b1[:, None] * fy + c1[:, None]
    l2 = a2[:, None] * fx + b2[:, None] * fy + c2[:, None]
    l0 = 1.0 - l1 - l2
    inside = valid & (l0 >= 0.0) & (l1 >= 0.0) & (l2 >= 0.0)

    td = depth[tri]
    pix_depth = l0 * td[:, 0, None] + l1 * td[:, 1, None] + l2 * td[:, 2, None]

    sel = inside.reshape(-1)
    flat = (py * width + px).reshape(-1)[sel]
    dsel = pix_depth.reshape(-1)[sel]
    tsel = np.repeat(cand, k * k)[sel]
    if flat.size == 0:
        return assignment.reshape(height, width)

    zbuf = np.full(height * width, np.inf)
    np.minimum.at(zbuf, flat, dsel)
    hit = dsel == zbuf[flat]
    # Exact depth ties resolve to the lowest triangle index.
    winner = np.full(height * width, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(winner, flat[hit], tsel[hit])
    covered = winner < np.iinfo(np.int64).max
    assignment[covered] = winner[covered]
    return assignment.reshape(height, width)


def interpolate(
    xy: torch.Tensor,
    attrs: torch.Tensor,
    faces: np.ndarray,
    assignment: np.ndarray,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Barycentric-interpolate per-vertex ``attrs`` over the assignment map.

    Returns (image HxWxC with zeros off-mask, mask HxW bool).  Differentiable
    in ``xy`` and ``attrs``; the assignment map is a constant.
    """
    height, width = assignment.shape
    channels = attrs.shape[1]
    mask_np = assignment >= 0
    flat_idx = np.nonzero(mask_np.reshape(-1))[0]
    out = torch.zeros(height * width, channels, dtype=attrs.dtype)
    if flat_idx.size == 0:
        return out.reshape(height, width, channels), torch.from_numpy(mask_np)

    tri = faces[assignment.reshape(-1)[flat_idx]]
    ia = torch.from_numpy(tri[:, 0])
    ib = torch.from_numpy(tri[:, 1])
    ic = torch.from_numpy(tri[:, 2])
    a, b, c = xy[ia], xy[ib], xy[ic]

    p = torch.stack(
        [
            torch.from_numpy((flat_idx % width).astype(np.float64)),
            torch.from_numpy((flat_idx // width).astype(np.float64)),
        ],
        dim=1,
    )
    e1, e2, q = b - a, c - a, p - a
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    l1 = (q[:, 0] * e2[:, 1] - q[:, 1] * e2[:, 0]) / det
    l2 = (e1[:, 0] * q[:, 1] - e1[:, 1] * q[:, 0]) / det
    l0 = 1.0 - l1 - l2

    vals = (
        l0.unsqueeze(1) * attrs[ia]
        + l1.unsqueeze(1) * attrs[ib]
        + l2.unsqueeze(1) * attrs[ic]
    )
    out = out.index_put((torch.from_numpy(flat_idx),), vals)
    return out.reshape(height, width, channels), torch.from_numpy(mask_np)
