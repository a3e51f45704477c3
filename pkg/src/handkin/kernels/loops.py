"""Per-pixel loop kernels, compiled with numba when available."""
import math

import numpy as np

from .._accel import njit


@njit
def _sphere_hit(dx, dy, dz, cx, cy, cz, rad):
    b = -(dx * cx + dy * cy + dz * cz)
    c = cx * cx + cy * cy + cz * cz - rad * rad
    h = b * b - c
    if h < 0.0:
        return math.inf
    t = -b - math.sqrt(h)
    return t if t > 0.0 else math.inf


@njit
def render_capsules(height, width, fx, fy, cx, cy, seg_a, seg_b, radius, boxes):
    depth = np.zeros((height, width))
    for k in range(seg_a.shape[0]):
        ax, ay, az = seg_a[k, 0], seg_a[k, 1], seg_a[k, 2]
        bx, by, bz = seg_b[k, 0] - ax, seg_b[k, 1] - ay, seg_b[k, 2] - az
        rad = radius[k]
        baba = bx * bx + by * by + bz * bz
        baoa = -(bx * ax + by * ay + bz * az)
        oaoa = ax * ax + ay * ay + az * az
        for v in range(boxes[k, 2], boxes[k, 3] + 1):
            for u in range(boxes[k, 0], boxes[k, 1] + 1):
                rx = (u - cx) / fx
                ry = (v - cy) / fy
                norm = math.sqrt(rx * rx + ry * ry + 1.0)
                dx, dy, dz = rx / norm, ry / norm, 1.0 / norm
                t = _sphere_hit(dx, dy, dz, ax, ay, az, rad)
                t2 = _sphere_hit(dx, dy, dz, ax + bx, ay + by, az + bz, rad)
                if t2 < t:
                    t = t2
                if baba > 0.0:
                    bard = bx * dx + by * dy + bz * dz
                    rdoa = -(dx * ax + dy * ay + dz * az)
                    qa = baba - bard * bard
                    if qa > 1e-12 * baba:
                        qb = baba * rdoa - baoa * bard
                        qc = baba * oaoa - baoa * baoa - rad * rad * baba
                        h = qb * qb - qa * qc
                        if h >= 0.0:
                            t1 = (-qb - math.sqrt(h)) / qa
                            y = baoa + t1 * bard
                            if t1 > 0.0 and y > 0.0 and y < baba and t1 < t:
                                t = t1
                if t < math.inf:
                    z = t * dz
                    if depth[v, u] == 0.0 or z < depth[v, u]:
                        depth[v, u] = z
    return depth


@njit
def splat_min(points, out_size, cube_size):
    """Orthographic z-buffer of COM-relative points; empty pixels are +inf."""
    img = np.full((out_size, out_size), np.inf)
    half = 0.5 * cube_size
    scale = out_size / cube_size
    for i in range(points.shape[0]):
        col = int(math.floor((points[i, 0] + half) * scale))
        row = int(math.floor((points[i, 1] + half) * scale))
        if 0 <= col < out_size and 0 <= row < out_size:
            z = points[i, 2]
            if z < img[row, col]:
                img[row, col] = z
    return img


@njit
def masked_median3x3(img, valid):
    """3x3 median over valid neighbours, evaluated at valid pixels only."""
    h, w = img.shape
    out = img.copy()
    buf = np.empty(9)
    for r in range(h):
        for c in range(w):
            if not valid[r, c]:
                continue
            n = 0
            for dr in range(-1, 2):
                rr = r + dr
                if rr < 0 or rr >= h:
                    continue
                for dc in range(-1, 2):
                    cc = c + dc
                    if cc < 0 or cc >= w or not valid[rr, cc]:
                        continue
                    buf[n] = img[rr, cc]
                    n += 1
            vals = np.sort(buf[:n])
            if n % 2 == 1:
                out[r, c] = vals[n // 2]
            else:
                out[r, c] = 0.5 * (vals[n // 2 - 1] + vals[n // 2])
    return out


@njit
def warp_bilinear(img, valid, inv_affine, out_h, out_w, min_weight):
    """Inverse-map resampling; invalid source pixels never blend into valid ones."""
    h, w = img.shape
    out = np.zeros((out_h, out_w))
    out_valid = np.zeros((out_h, out_w), dtype=np.bool_)
    for r in range(out_h):
        for c in range(out_w):
            sx = inv_affine[0, 0] * c + inv_affine[0, 1] * r + inv_affine[0, 2]
            sy = inv_affine[1, 0] * c + inv_affine[1, 1] * r + inv_affine[1, 2]
            x0 = int(math.floor(sx))
            y0 = int(math.floor(sy))
            fx = sx - x0
            fy = sy - y0
            acc = 0.0
            wsum = 0.0
            for dy in range(2):
                yy = y0 + dy
                if yy < 0 or yy >= h:
                    continue
                wy = fy if dy == 1 else 1.0 - fy
                for dx in range(2):
                    xx = x0 + dx
                    if xx < 0 or xx >= w or not valid[yy, xx]:
                        continue
                    wgt = wy * (fx if dx == 1 else 1.0 - fx)
                    if wgt > 0.0:
                        acc += wgt * img[yy, xx]
                        wsum += wgt
            if wsum >= min_weight and wsum > 0.0:
                out[r, c] = acc / wsum
                out_valid[r, c] = True
    return out, out_valid
