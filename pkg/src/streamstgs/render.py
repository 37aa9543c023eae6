"""Software splat renderer: EWA projection, alpha compositing, analytic backward.

The rasterizer evaluates every splat exactly over a 3-sigma footprint: the
Mahalanobis cutoff q <= 9 (the ellipse inscribed in the 3-sigma bounding
box), with a linear alpha fade over q in [8, 9] so compositing is a
continuous function of the splat parameters (alpha there is below 2% of
alpha_base; the fade is what lets finite differences certify the analytic
backward pass). The direct per-pixel oracle shares these semantics
bit-for-bit. Compositing follows front-to-back alpha blending with the
standard constants: per-splat alpha clamped to 0.99, accumulation frozen
once transmittance drops below 1e-4, and a 0.3-pixel isotropic floor added
to every 2D covariance before inversion. Pixel (row i, col j) samples the
continuous image at (j + 0.5, i + 0.5).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import autodiff as ad
from .core import CameraModel, GaussianSet, covariance_matrices

try:  # JIT kernels for the per-splat loops; numpy fallback keeps parity
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is normally present
    HAVE_NUMBA = False

    def njit(*a, **k):
        def wrap(f):
            return f

        return wrap


NEAR_PLANE = 0.01
COV_FLOOR = 0.3
ALPHA_MAX = 0.99
TRANSMITTANCE_MIN = 1e-4
CUTOFF_QMAX = 9.0  # 3 sigma
FADE_START = 8.0  # alpha fades linearly to zero over q in [FADE_START, CUTOFF_QMAX]
LUMA = np.array([0.299, 0.587, 0.114])


def _fade(q: np.ndarray) -> np.ndarray:
    return np.clip((CUTOFF_QMAX - q) / (CUTOFF_QMAX - FADE_START), 0.0, 1.0)


@dataclass
class ScreenGaussian:
    mean2d: np.ndarray  # (2,) pixels
    cov2d: np.ndarray  # (2, 2) symmetric PSD, pixels^2
    depth: float  # camera z, scene units
    color: np.ndarray  # (3,) in [0, inf)
    alpha_base: float  # in [0, 1]


class Splats:
    """Vectorized batch of screen Gaussians; iterates as ScreenGaussian."""

    def __init__(self, mean2d, cov2d_packed, color, alpha_base, depth):
        self.mean2d = mean2d  # (M, 2)
        self.cov2d_packed = cov2d_packed  # (M, 3) = (sxx, sxy, syy)
        self.color = color  # (M, 3)
        self.alpha_base = alpha_base  # (M,)
        self.depth = np.asarray(ad.detach(depth), dtype=np.float64)  # (M,)

    def __len__(self):
        return self.depth.shape[0]

    def __getitem__(self, m: int) -> ScreenGaussian:
        a, b, c = ad.val(self.cov2d_packed)[m]
        return ScreenGaussian(
            mean2d=ad.val(self.mean2d)[m],
            cov2d=np.array([[a, b], [b, c]]),
            depth=float(self.depth[m]),
            color=ad.val(self.color)[m],
            alpha_base=float(ad.val(self.alpha_base)[m]),
        )

    @classmethod
    def from_gaussians(cls, gaussians) -> "Splats":
        gaussians = list(gaussians)
        if gaussians:
            mean = np.array([g.mean2d for g in gaussians], dtype=np.float64)
            cov = np.array([[g.cov2d[0, 0], g.cov2d[0, 1], g.cov2d[1, 1]] for g in gaussians])
            color = np.array([g.color for g in gaussians], dtype=np.float64)
            alpha = np.array([g.alpha_base for g in gaussians], dtype=np.float64)
            depth = np.array([g.depth for g in gaussians], dtype=np.float64)
        else:
            mean = np.zeros((0, 2))
            cov = np.zeros((0, 3))
            color = np.zeros((0, 3))
            alpha = np.zeros(0)
            depth = np.zeros(0)
        return cls(mean, cov, color, alpha, depth)


@dataclass
class RenderStats:
    culled_near: int = 0
    skipped_singular: int = 0
    splat_pixel_pairs: int = 0
    pixels: int = 0

    @property
    def mean_splats_per_pixel(self) -> float:
        return self.splat_pixel_pairs / self.pixels if self.pixels else 0.0


@dataclass
class RenderedImage:
    width: int
    height: int
    rgb: object  # (H, W, 3) in [0, 1]; ndarray or Var
    transmittance: object = None  # (H, W) or None
    stats: RenderStats = field(default_factory=RenderStats)

    def to_uint8(self) -> np.ndarray:
        arr = np.clip(ad.val(self.rgb), 0.0, 1.0)
        return np.round(arr * 255.0).astype(np.uint8)


@dataclass
class DynamicMask:
    width: int
    height: int
    mask: np.ndarray  # (H, W) bool


@dataclass
class SplatGradients:
    mean2d: np.ndarray  # (M, 2)
    cov2d_packed: np.ndarray  # (M, 3)
    color: np.ndarray  # (M, 3)
    alpha_base: np.ndarray  # (M,)


class RasterState:
    """Forward-pass state retained for the analytic backward pass.

    Per-splat footprints live in flat buffers (``alpha_buf``/``tb_buf``)
    addressed by ``offsets``; both the numba and the numpy backend fill the
    same layout.
    """

    def __init__(self, width, height, order, valid, mean2d, color, alpha_base,
                 conic, cov_terms, bbox, offsets, alpha_buf, tb_buf):
        self.width = width
        self.height = height
        self.order = order  # depth-ascending splat indices
        self.valid = valid
        self.mean2d = mean2d
        self.color = color
        self.alpha_base = alpha_base
        self.conic = conic  # (ca, cb, cc)
        self.cov_terms = cov_terms  # (a_eff, b, c_eff, det)
        self.bbox = bbox  # (x0, x1, y0, y1) int arrays
        self.offsets = offsets
        self.alpha_buf = alpha_buf
        self.tb_buf = tb_buf


def project(gaussians: GaussianSet, cam: CameraModel):
    """EWA projection of per-frame Gaussians -> Splats (near-plane culled).

    Differentiable in positions/scales/rotations/opacities/base_colors when
    those fields are autodiff Vars; depth and the cull set are detached.
    """
    k = cam.intrinsics
    w2c = cam.world_to_camera
    rot, tr = w2c[:3, :3], w2c[:3, 3]

    t = gaussians.positions @ rot.T + tr  # (N, 3) camera coords
    tz = ad.getitem(t, (slice(None), 2))
    keep = np.where(ad.val(tz) > NEAR_PLANE)[0]
    culled = gaussians.count - keep.size

    t = ad.take0(t, keep)
    tx = ad.getitem(t, (slice(None), 0))
    ty = ad.getitem(t, (slice(None), 1))
    tz = ad.getitem(t, (slice(None), 2))
    inv_z = 1.0 / tz

    fx, sk, cx = k[0, 0], k[0, 1], k[0, 2]
    fy, cy = k[1, 1], k[1, 2]
    u = (fx * tx + sk * ty) * inv_z + cx
    v = fy * ty * inv_z + cy
    mean2d = ad.stack([u, v], axis=1)

    n = keep.size
    zeros = np.zeros(n)
    inv_z2 = inv_z * inv_z
    j_rows = [
        fx * inv_z, sk * inv_z, -(fx * tx + sk * ty) * inv_z2,
        zeros, fy * inv_z, -fy * ty * inv_z2,
    ]
    jac = ad.reshape(ad.stack(j_rows, axis=1), (n, 2, 3))
    m = jac @ rot  # (N, 2, 3)

    sigma = covariance_matrices(ad.take0(gaussians.scales, keep), ad.take0(gaussians.rotations, keep))
    cov2d = m @ sigma @ ad.swapaxes(m, 1, 2)  # (N, 2, 2)
    packed = ad.stack(
        [ad.getitem(cov2d, (slice(None), 0, 0)),
         ad.getitem(cov2d, (slice(None), 0, 1)),
         ad.getitem(cov2d, (slice(None), 1, 1))],
        axis=1,
    )

    color = ad.relu(ad.take0(gaussians.base_colors, keep))
    alpha = ad.reshape(ad.sigmoid(ad.take0(gaussians.opacities, keep)), (n,))
    splats = Splats(mean2d, packed, color, alpha, ad.detach(tz))
    splats.culled_near = culled
    return splats


def _as_splats(splats) -> Splats:
    if isinstance(splats, Splats):
        return splats
    return Splats.from_gaussians(splats)


@njit(cache=True)
def _forward_kernel(order, valid, mean2d, conic, color, alpha_base, bbox, offsets,
                    keep_state, img, trans, alpha_buf, tb_buf):
    pairs = 0
    x0, x1, y0, y1 = bbox
    for oi in range(order.shape[0]):
        m = order[oi]
        if not valid[m]:
            continue
        mx, my = mean2d[m, 0], mean2d[m, 1]
        qa, qb, qc = conic[0][m], conic[1][m], conic[2][m]
        ab = alpha_base[m]
        c0, c1, c2 = color[m, 0], color[m, 1], color[m, 2]
        base = offsets[m]
        wpatch = x1[m] - x0[m]
        for yy in range(y0[m], y1[m]):
            dy = yy + 0.5 - my
            for xx in range(x0[m], x1[m]):
                dx = xx + 0.5 - mx
                q = qa * dx * dx + 2.0 * qb * dx * dy + qc * dy * dy
                fade = (CUTOFF_QMAX - q) / (CUTOFF_QMAX - FADE_START)
                if fade > 1.0:
                    fade = 1.0
                t_here = trans[yy, xx]
                idx = base + (yy - y0[m]) * wpatch + (xx - x0[m])
                if keep_state:
                    tb_buf[idx] = t_here
                    alpha_buf[idx] = 0.0
                if fade <= 0.0:
                    continue
                alpha = ab * np.exp(-0.5 * q) * fade
                if alpha > ALPHA_MAX:
                    alpha = ALPHA_MAX
                if keep_state:
                    alpha_buf[idx] = alpha
                if t_here >= TRANSMITTANCE_MIN:
                    wgt = alpha * t_here
                    img[yy, xx, 0] += wgt * c0
                    img[yy, xx, 1] += wgt * c1
                    img[yy, xx, 2] += wgt * c2
                    trans[yy, xx] = t_here * (1.0 - alpha)
                    pairs += 1
    return pairs


@njit(cache=True)
def _backward_kernel(order, valid, mean2d, conic, cov, color, alpha_base, bbox, offsets,
                     alpha_buf, tb_buf, grad_image, suffix, g_mean, g_cov, g_color, g_alpha):
    x0, x1, y0, y1 = bbox
    a, b, c, det = cov
    for oi in range(order.shape[0] - 1, -1, -1):
        m = order[oi]
        if not valid[m]:
            continue
        mx, my = mean2d[m, 0], mean2d[m, 1]
        qa, qb, qc = conic[0][m], conic[1][m], conic[2][m]
        ab = alpha_base[m]
        c0, c1, c2 = color[m, 0], color[m, 1], color[m, 2]
        base = offsets[m]
        wpatch = x1[m] - x0[m]
        d_ca = 0.0
        d_cb = 0.0
        d_cc = 0.0
        for yy in range(y0[m], y1[m]):
            dy = yy + 0.5 - my
            for xx in range(x0[m], x1[m]):
                dx = xx + 0.5 - mx
                idx = base + (yy - y0[m]) * wpatch + (xx - x0[m])
                alpha = alpha_buf[idx]
                tb = tb_buf[idx]
                g0 = grad_image[yy, xx, 0]
                g1 = grad_image[yy, xx, 1]
                g2 = grad_image[yy, xx, 2]
                d_alpha = 0.0
                if tb >= TRANSMITTANCE_MIN and alpha > 0.0:
                    wgt = alpha * tb
                    g_color[m, 0] += wgt * g0
                    g_color[m, 1] += wgt * g1
                    g_color[m, 2] += wgt * g2
                    gdotc = g0 * c0 + g1 * c1 + g2 * c2
                    sdot = (g0 * suffix[yy, xx, 0] + g1 * suffix[yy, xx, 1]
                            + g2 * suffix[yy, xx, 2])
                    d_alpha = tb * gdotc - sdot / (1.0 - alpha)
                    suffix[yy, xx, 0] += wgt * c0
                    suffix[yy, xx, 1] += wgt * c1
                    suffix[yy, xx, 2] += wgt * c2
                if d_alpha == 0.0:
                    continue
                q = qa * dx * dx + 2.0 * qb * dx * dy + qc * dy * dy
                fade = (CUTOFF_QMAX - q) / (CUTOFF_QMAX - FADE_START)
                if fade > 1.0:
                    fade = 1.0
                if fade <= 0.0:
                    continue
                expq = np.exp(-0.5 * q)
                alpha_pre = ab * expq
                if alpha_pre * fade >= ALPHA_MAX:
                    continue  # clamp plateau: zero gradient
                g_alpha[m] += d_alpha * expq * fade
                dfade_dq = 1.0 / (CUTOFF_QMAX - FADE_START) if q > FADE_START else 0.0
                dq = -d_alpha * alpha_pre * (0.5 * fade + dfade_dq)
                g_mean[m, 0] -= dq * (2.0 * qa * dx + 2.0 * qb * dy)
                g_mean[m, 1] -= dq * (2.0 * qb * dx + 2.0 * qc * dy)
                d_ca += dq * dx * dx
                d_cb += dq * 2.0 * dx * dy
                d_cc += dq * dy * dy
        inv_det2 = 1.0 / (det[m] * det[m])
        am, bm, cm = a[m], b[m], c[m]
        g_cov[m, 0] = inv_det2 * (-d_ca * cm * cm + d_cb * bm * cm - d_cc * bm * bm)
        g_cov[m, 1] = inv_det2 * (d_ca * 2 * bm * cm - d_cb * (det[m] + 2 * bm * bm)
                                  + d_cc * 2 * am * bm)
        g_cov[m, 2] = inv_det2 * (-d_ca * bm * bm + d_cb * am * bm - d_cc * am * am)


def _forward_numpy(order, valid, mean2d, conic, color, alpha_base, bbox, offsets,
                   keep_state, img, trans, alpha_buf, tb_buf) -> int:
    """Vectorized-per-splat fallback; fills the same buffers as the kernel."""
    x0s, x1s, y0s, y1s = bbox
    ca_all, cb_all, cc_all = conic
    pairs = 0
    for m in order:
        if not valid[m]:
            continue
        x0, x1, y0, y1 = x0s[m], x1s[m], y0s[m], y1s[m]
        dx = (np.arange(x0, x1) + 0.5) - mean2d[m, 0]
        dy = (np.arange(y0, y1) + 0.5) - mean2d[m, 1]
        q = ca_all[m] * dx[None, :] ** 2 + 2.0 * cb_all[m] * dy[:, None] * dx[None, :] \
            + cc_all[m] * dy[:, None] ** 2
        fade = _fade(q)
        inside = fade > 0.0
        alpha = np.where(inside, np.minimum(alpha_base[m] * np.exp(-0.5 * q) * fade, ALPHA_MAX), 0.0)
        t_before = trans[y0:y1, x0:x1].copy()  # copy: the slice below writes through
        if keep_state:
            n = alpha.size
            alpha_buf[offsets[m] : offsets[m] + n] = alpha.reshape(-1)
            tb_buf[offsets[m] : offsets[m] + n] = t_before.reshape(-1)
        active = t_before >= TRANSMITTANCE_MIN
        weight = alpha * t_before * active
        img[y0:y1, x0:x1] += weight[:, :, None] * color[m]
        trans[y0:y1, x0:x1] = np.where(active, t_before * (1.0 - alpha), t_before)
        pairs += int(np.count_nonzero(inside & active))
    return pairs


def _backward_numpy(order, valid, mean2d, conic, cov, color, alpha_base, bbox, offsets,
                    alpha_buf, tb_buf, grad_image, suffix, g_mean, g_cov, g_color, g_alpha):
    x0s, x1s, y0s, y1s = bbox
    ca_all, cb_all, cc_all = conic
    a, b, c, det = cov
    for m in order[::-1]:
        if not valid[m]:
            continue
        x0, x1, y0, y1 = x0s[m], x1s[m], y0s[m], y1s[m]
        shape = (y1 - y0, x1 - x0)
        n = shape[0] * shape[1]
        alpha = alpha_buf[offsets[m] : offsets[m] + n].reshape(shape)
        t_before = tb_buf[offsets[m] : offsets[m] + n].reshape(shape)
        g = grad_image[y0:y1, x0:x1]
        active = t_before >= TRANSMITTANCE_MIN
        weight = alpha * t_before * active
        g_color[m] = np.tensordot(weight, g, axes=([0, 1], [0, 1]))

        s_patch = suffix[y0:y1, x0:x1]
        # d(pixel)/d(alpha_m) = T_before * c_m - suffix / (1 - alpha_m)
        d_alpha = active * (alpha > 0) * (
            t_before * (g @ color[m]) - (g * s_patch).sum(axis=2) / (1.0 - alpha)
        )
        suffix[y0:y1, x0:x1] = s_patch + weight[:, :, None] * color[m]

        dx = (np.arange(x0, x1) + 0.5) - mean2d[m, 0]
        dy = (np.arange(y0, y1) + 0.5) - mean2d[m, 1]
        q = ca_all[m] * dx[None, :] ** 2 + 2.0 * cb_all[m] * dy[:, None] * dx[None, :] \
            + cc_all[m] * dy[:, None] ** 2
        fade = _fade(q)
        expq = np.exp(-0.5 * q)
        alpha_pre = alpha_base[m] * expq
        live = (fade > 0.0) & (alpha_pre * fade < ALPHA_MAX)  # clamped/outside: zero grad
        d_alpha = np.where(live, d_alpha, 0.0)
        if not d_alpha.any():
            continue
        g_alpha[m] = np.sum(d_alpha * expq * fade)
        in_fade = (q > FADE_START) & (q < CUTOFF_QMAX)
        dfade_dq = in_fade / (CUTOFF_QMAX - FADE_START)
        dq = -d_alpha * alpha_pre * (0.5 * fade + dfade_dq)

        dxg = dx[None, :]
        dyg = dy[:, None]
        g_mean[m, 0] = -np.sum(dq * (2.0 * ca_all[m] * dxg + 2.0 * cb_all[m] * dyg))
        g_mean[m, 1] = -np.sum(dq * (2.0 * cb_all[m] * dxg + 2.0 * cc_all[m] * dyg))
        d_ca = np.sum(dq * dxg * dxg)
        d_cb = np.sum(dq * 2.0 * dxg * dyg)
        d_cc = np.sum(dq * dyg * dyg)
        inv_det2 = 1.0 / (det[m] * det[m])
        am, bm, cm = a[m], b[m], c[m]
        g_cov[m, 0] = inv_det2 * (-d_ca * cm * cm + d_cb * bm * cm - d_cc * bm * bm)
        g_cov[m, 1] = inv_det2 * (d_ca * 2 * bm * cm - d_cb * (det[m] + 2 * bm * bm) + d_cc * 2 * am * bm)
        g_cov[m, 2] = inv_det2 * (-d_ca * bm * bm + d_cb * am * bm - d_cc * am * am)


def rasterize_forward(mean2d, cov2d_packed, color, alpha_base, depth, width, height,
                      keep_state=False, backend=None):
    """Front-to-back scanline compositing over per-splat footprints."""
    m_count = depth.shape[0]
    order = np.argsort(depth, kind="stable")
    a = cov2d_packed[:, 0] + COV_FLOOR
    b = cov2d_packed[:, 1]
    c = cov2d_packed[:, 2] + COV_FLOOR
    det = a * c - b * b
    singular = det <= 1e-12
    safe_det = np.where(singular, 1.0, det)
    conic = (c / safe_det, -b / safe_det, a / safe_det)

    x0 = np.zeros(m_count, dtype=np.int64)
    x1 = np.zeros(m_count, dtype=np.int64)
    y0 = np.zeros(m_count, dtype=np.int64)
    y1 = np.zeros(m_count, dtype=np.int64)
    if m_count:
        rx = 3.0 * np.sqrt(np.maximum(a, 0.0))
        ry = 3.0 * np.sqrt(np.maximum(c, 0.0))
        x0 = np.clip(np.floor(mean2d[:, 0] - rx - 0.5), 0, width).astype(np.int64)
        x1 = np.clip(np.floor(mean2d[:, 0] + rx - 0.5) + 1, 0, width).astype(np.int64)
        y0 = np.clip(np.floor(mean2d[:, 1] - ry - 0.5), 0, height).astype(np.int64)
        y1 = np.clip(np.floor(mean2d[:, 1] + ry - 0.5) + 1, 0, height).astype(np.int64)
    areas = np.maximum(x1 - x0, 0) * np.maximum(y1 - y0, 0)
    valid = ~singular & (areas > 0)
    offsets = np.zeros(m_count, dtype=np.int64)
    if m_count:
        offsets[1:] = np.cumsum(areas * valid)[:-1]
    total = int(np.sum(areas * valid))
    alpha_buf = np.zeros(total if keep_state else 0)
    tb_buf = np.ones(total if keep_state else 0)

    img = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    stats = RenderStats(pixels=width * height, skipped_singular=int(singular.sum()))
    bbox = (x0, x1, y0, y1)
    use_numba = HAVE_NUMBA if backend is None else backend == "numba"
    runner = _forward_kernel if use_numba else _forward_numpy
    stats.splat_pixel_pairs = int(runner(order, valid, np.ascontiguousarray(mean2d), conic,
                                         np.ascontiguousarray(color),
                                         np.ascontiguousarray(alpha_base), bbox, offsets,
                                         keep_state, img, trans, alpha_buf, tb_buf))
    state = None
    if keep_state:
        state = RasterState(width, height, order, valid, mean2d.copy(), color.copy(),
                            alpha_base.copy(), conic, (a, b, c, det), bbox, offsets,
                            alpha_buf, tb_buf)
    return img, trans, stats, state


def rasterize_backward(state: RasterState, grad_image: np.ndarray,
                       backend=None) -> SplatGradients:
    """Analytic gradients of sum(grad_image * image) w.r.t. splat parameters."""
    if not isinstance(state, RasterState):
        raise ValueError("rasterize_backward needs the state from a keep_state forward pass")
    grad_image = np.asarray(grad_image, dtype=np.float64)
    if grad_image.shape != (state.height, state.width, 3):
        raise ValueError(f"grad_image shape {grad_image.shape} != {(state.height, state.width, 3)}")
    m_count = state.mean2d.shape[0]
    g_mean = np.zeros((m_count, 2))
    g_cov = np.zeros((m_count, 3))
    g_color = np.zeros((m_count, 3))
    g_alpha = np.zeros(m_count)
    suffix = np.zeros((state.height, state.width, 3))  # later splats' contributions
    use_numba = HAVE_NUMBA if backend is None else backend == "numba"
    runner = _backward_kernel if use_numba else _backward_numpy
    runner(state.order, state.valid, state.mean2d, state.conic, state.cov_terms,
           state.color, state.alpha_base, state.bbox, state.offsets,
           state.alpha_buf, state.tb_buf, np.ascontiguousarray(grad_image), suffix,
           g_mean, g_cov, g_color, g_alpha)
    return SplatGradients(g_mean, g_cov, g_color, g_alpha)


def rasterize(splats, width: int, height: int) -> RenderedImage:
    """Composite splats into an image (Eq.-style front-to-back blending).

    Accepts a Splats batch or any iterable of ScreenGaussian. If the batch
    carries autodiff Vars the returned rgb is a Var wired to the analytic
    backward pass.
    """
    sp = _as_splats(splats)
    inputs = (sp.mean2d, sp.cov2d_packed, sp.color, sp.alpha_base)
    differentiable = any(ad.is_var(x) for x in inputs)
    vals = [ad.val(x) for x in inputs]
    img, trans, stats, state = rasterize_forward(
        *vals, sp.depth, width, height, keep_state=differentiable)
    if differentiable:
        def backward(g):
            grads = rasterize_backward(state, g)
            return [grads.mean2d, grads.cov2d_packed, grads.color, grads.alpha_base]

        rgb = ad.clip(ad.custom_op(list(inputs), img, backward), 0.0, 1.0)
    else:
        rgb = np.clip(img, 0.0, 1.0)
    return RenderedImage(width, height, rgb, trans, stats)


def rasterize_reference(splats, width: int, height: int) -> np.ndarray:
    """Direct per-pixel evaluation of the compositing sum (test oracle).

    Shares the documented semantics (q <= 9 cutoff, 0.99 alpha clamp, 1e-4
    transmittance stop, 0.3I floor) but evaluates pixel by pixel with an
    explicit loop over depth-sorted splats.
    """
    sp = _as_splats(splats)
    mean2d = ad.val(sp.mean2d)
    cov = ad.val(sp.cov2d_packed)
    color = ad.val(sp.color)
    alpha_base = ad.val(sp.alpha_base)
    order = np.argsort(sp.depth, kind="stable")
    img = np.zeros((height, width, 3))
    for i in range(height):
        for j in range(width):
            px = np.array([j + 0.5, i + 0.5])
            t = 1.0
            acc = np.zeros(3)
            for m in order:
                if t < TRANSMITTANCE_MIN:
                    break
                a, b, c = cov[m, 0] + COV_FLOOR, cov[m, 1], cov[m, 2] + COV_FLOOR
                det = a * c - b * b
                if det <= 1e-12:
                    continue
                d = px - mean2d[m]
                q = (c * d[0] ** 2 - 2 * b * d[0] * d[1] + a * d[1] ** 2) / det
                if q >= CUTOFF_QMAX:
                    continue
                fade = min((CUTOFF_QMAX - q) / (CUTOFF_QMAX - FADE_START), 1.0)
                alpha = min(alpha_base[m] * np.exp(-0.5 * q) * fade, ALPHA_MAX)
                acc += color[m] * alpha * t
                t *= 1.0 - alpha
            img[i, j] = acc
    return np.clip(img, 0.0, 1.0)


def render_image(gaussians: GaussianSet, cam: CameraModel) -> RenderedImage:
    """project + rasterize with render stats carried through."""
    splats = project(gaussians, cam)
    out = rasterize(splats, cam.width, cam.height)
    out.stats.culled_near = getattr(splats, "culled_near", 0)
    return out


def render_model_frame(model, frame_index: int, cam: CameraModel) -> RenderedImage:
    """Reconstruct one frame of a GOP model and rasterize it.

    This is the whole inference path: canonical Gaussians + temporal
    features + deformation field. It has no transformer dependency.
    """
    from .core import deform_frame

    gs = deform_frame(model.gaussians, model.bank, model.field, frame_index, cam.view_dir)
    return render_image(gs, cam)


def compute_dynamic_mask(frames, threshold: float = 0.02) -> DynamicMask:
    """Temporal grayscale stddev over the first 30 frames, thresholded."""
    frames = list(frames)
    if len(frames) == 0:
        raise ValueError("need at least one frame")
    if len(frames) < 2:
        raise ValueError("need >= 2 frames to measure temporal variation")
    stack = np.stack([np.asarray(ad.val(f)) for f in frames[:30]])
    if stack.ndim == 4:
        gray = stack @ LUMA
    else:
        gray = stack
    std = gray.std(axis=0)
    h, w = std.shape
    return DynamicMask(width=w, height=h, mask=std > threshold)


def psnr(a, b, peak: float = 1.0) -> float:
    a, b = np.asarray(ad.val(a)), np.asarray(ad.val(b))
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def write_png(path, image) -> None:
    rgb = image.to_uint8() if isinstance(image, RenderedImage) else np.asarray(image)
    if rgb.dtype != np.uint8:
        rgb = np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(rgb).save(path)


def read_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_raw(path, arr) -> None:
    """Planar (C, H, W) little-endian float32, no header; shape travels with tests."""
    arr = np.asarray(ad.val(arr), dtype=np.float64)
    if arr.ndim == 3:
        arr = np.moveaxis(arr, -1, 0)
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_raw(path, height: int, width: int, channels: int = 3) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    arr = data.reshape(channels, height, width).astype(np.float64)
    return np.moveaxis(arr, 0, -1) if channels > 1 else arr[0]
