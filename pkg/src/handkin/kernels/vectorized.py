"""Pure-numpy counterparts of :mod:`handkin.kernels.loops`."""
import numpy as np


def _sphere_hit(d, c, rad):
    b = -(d @ c)
    h = b * b - (c @ c - rad * rad)
    with np.errstate(invalid="ignore"):
        t = -b - np.sqrt(h)
    return np.where((h >= 0.0) & (t > 0.0), t, np.inf)


def render_capsules(height, width, fx, fy, cx, cy, seg_a, seg_b, radius, boxes):
    depth = np.zeros((height, width))
    for k in range(seg_a.shape[0]):
        u0, u1, v0, v1 = (int(x) for x in boxes[k])
        if u1 < u0 or v1 < v0:
            continue
        vv, uu = np.mgrid[v0 : v1 + 1, u0 : u1 + 1]
        rx = (uu - cx) / fx
        ry = (vv - cy) / fy
        norm = np.sqrt(rx * rx + ry * ry + 1.0)
        d = np.stack([rx / norm, ry / norm, 1.0 / norm], axis=-1)
        a = seg_a[k]
        ba = seg_b[k] - a
        rad = radius[k]
        t = np.minimum(_sphere_hit(d, a, rad), _sphere_hit(d, a + ba, rad))
        baba = ba @ ba
        if baba > 0.0:
            bard = d @ ba
            baoa = -(ba @ a)
            rdoa = -(d @ a)
            qa = baba - bard * bard
            qb = baba * rdoa - baoa * bard
            qc = baba * (a @ a) - baoa * baoa - rad * rad * baba
            h = qb * qb - qa * qc
            ok = (qa > 1e-12 * baba) & (h >= 0.0)
            with np.errstate(invalid="ignore", divide="ignore"):
                t1 = (-qb - np.sqrt(np.where(ok, h, 0.0))) / np.where(ok, qa, 1.0)
            y = baoa + t1 * bard
            body = ok & (t1 > 0.0) & (y > 0.0) & (y < baba)
            t = np.where(body & (t1 < t), t1, t)
        z = t * d[..., 2]
        hit = np.isfinite(t)
        view = depth[v0 : v1 + 1, u0 : u1 + 1]
        take = hit & ((view == 0.0) | (z < view))
        view[take] = z[take]
    return depth


def splat_min(points, out_size, cube_size):
    img = np.full(out_size * out_size, np.inf)
    if len(points):
        half = 0.5 * cube_size
        scale = out_size / cube_size
        col = np.floor((points[:, 0] + half) * scale).astype(np.int64)
        row = np.floor((points[:, 1] + half) * scale).astype(np.int64)
        inside = (col >= 0) & (col < out_size) & (row >= 0) & (row < out_size)
        np.minimum.at(img, row[inside] * out_size + col[inside], points[inside, 2])
    return img.reshape(out_size, out_size)


def masked_median3x3(img, valid):
    h, w = img.shape
    padded = np.full((h + 2, w + 2), np.nan)
    padded[1:-1, 1:-1] = np.where(valid, img, np.nan)
    stack = np.stack([padded[r : r + h, c : c + w] for r in range(3) for c in range(3)])
    out = img.copy()
    if valid.any():
        out[valid] = np.nanmedian(stack[:, valid], axis=0)
    return out


def warp_bilinear(img, valid, inv_affine, out_h, out_w, min_weight):
    h, w = img.shape
    rr, cc = np.mgrid[0:out_h, 0:out_w].astype(float)
    sx = inv_affine[0, 0] * cc + inv_affine[0, 1] * rr + inv_affine[0, 2]
    sy = inv_affine[1, 0] * cc + inv_affine[1, 1] * rr + inv_affine[1, 2]
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    acc = np.zeros((out_h, out_w))
    wsum = np.zeros((out_h, out_w))
    for dy in (0, 1):
        for dx in (0, 1):
            yy, xx = y0 + dy, x0 + dx
            wgt = (fy if dy else 1.0 - fy) * (fx if dx else 1.0 - fx)
            inb = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            yc, xc = np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)
            use = inb & valid[yc, xc] & (wgt > 0.0)
            acc += np.where(use, wgt * img[yc, xc], 0.0)
            wsum += np.where(use, wgt, 0.0)
    out_valid = (wsum >= min_weight) & (wsum > 0.0)
    out = np.zeros((out_h, out_w))
    out[out_valid] = acc[out_valid] / wsum[out_valid]
    return out, out_valid
