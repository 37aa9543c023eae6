"""Training objectives: masked reconstruction, smoothness, distillation.

Every loss is differentiable through the autodiff tape, nonnegative on valid
inputs, and exactly zero at its fixed point. SSIM follows the classic
windowed form (11x11 Aussian window sigma 1.5, K1=0.01, K2=0.03, unit
dynamic range) evaluated on the valid region only; structural terms enter
training as 1 - SSIM.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
AUX_WEIGHT = 0.2  # fixed coefficient of the auxiliary-pass SSIM term


@dataclass
class LossWeights:
    beta: float = 0.2  # SSIM mix inside the reconstruction loss
    alpha_temp: float = 1.0
    alpha_o: float = 0.01
    alpha_sd: float = 0.005
    huber_delta: float = 0.05
    spatial_sigma: float = 1.0

    def __post_init__(self):
        for name in ("beta", "alpha_temp", "alpha_o", "alpha_sd", "huber_delta", "spatial_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class LossComponents:
    l_c: object = 0.0
    l_t: object = 0.0
    l_spatial: object = 0.0
    l_temp: object = 0.0
    l_o: object = 0.0
    l_sd: object = 0.0


def gaussian_kernel1d(sigma: float, radius: int | None = None) -> np.ndarray:
    if radius is None:
        radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_kernel2d(sigma: float, radius: int | None = None) -> np.ndarray:
    k = gaussian_kernel1d(sigma, radius)
    return np.outer(k, k)


def _channels(img):
    v = ad.val(img)
    if v.ndim == 2:
        return [img]
    return [ad.getitem(img, (slice(None), slice(None), c)) for c in range(v.shape[2])]


def ssim(a, b) -> object:
    """Mean SSIM over valid 11x11 windows, per channel then averaged."""
    av, bv = ad.val(a), ad.val(b)
    if av.shape != bv.shape:
        raise ValueError(f"image shapes differ: {av.shape} vs {bv.shape}")
    if av.shape[0] < SSIM_WINDOW or av.shape[1] < SSIM_WINDOW:
        raise ValueError(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    kernel = gaussian_kernel2d(SSIM_SIGMA, radius=SSIM_WINDOW // 2)
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    total = 0.0
    chans_a, chans_b = _channels(a), _channels(b)
    for ca, cb in zip(chans_a, chans_b):
        mu_a = ad.conv2d_valid(ca, kernel)
        mu_b = ad.conv2d_valid(cb, kernel)
        var_a = ad.conv2d_valid(ca * ca, kernel) - mu_a * mu_a
        var_b = ad.conv2d_valid(cb * cb, kernel) - mu_b * mu_b
        cov = ad.conv2d_valid(ca * cb, kernel) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        total = total + ad.mean(num / den)
    return total * (1.0 / len(chans_a))


def dssim(a, b) -> object:
    """1 - SSIM, the structural term used by every training objective."""
    return 1.0 - ssim(a, b)


def reconstruction_loss(img, gt, mask=None, beta: float = 0.2) -> object:
    """(1-beta) * L1 over all pixels + beta * (1 - SSIM) over masked pixels."""
    iv, gv = ad.val(img), ad.val(gt)
    if iv.shape != gv.shape:
        raise ValueError(f"image shapes differ: {iv.shape} vs {gv.shape}")
    l1 = ad.mean(ad.absolute(img - gt))
    if beta == 0.0:
        return l1
    if mask is None:
        m = np.ones(iv.shape[:2])
    else:
        m = np.asarray(getattr(mask, "mask", mask), dtype=np.float64)
    if iv.ndim == 3:
        m = m[:, :, None]
    return (1.0 - beta) * l1 + beta * dssim(img * m, gt * m)


def huber(x, delta: float) -> object:
    """0.5 x^2 inside |x| <= delta, delta(|x| - delta/2) outside."""
    absx = ad.absolute(x)
    quad = 0.5 * ad.square(x)
    lin = delta * (absx - 0.5 * delta)
    return ad.where(ad.val(absx) <= delta, quad, lin)


def temporal_consistency(e_prev, e_cur, e_next, delta: float = 0.05) -> object:
    for name, arr in (("e_prev", e_prev), ("e_next", e_next)):
        if ad.val(arr).shape != ad.val(e_cur).shape:
            raise ValueError(f"{name} shape {ad.val(arr).shape} != {ad.val(e_cur).shape}")
    l_a = ad.mean(huber(e_prev - e_cur, delta))
    l_b = ad.mean(huber(e_cur - e_next, delta))
    return 0.5 * (l_a + l_b)


def spatial_smoothness(grids, sigma: float = 1.0, valid_mask=None) -> object:
    """Sum over grids of mean squared (grid - gaussian_filtered(grid)).

    ``grids``: iterable of (H, W) or (H, W, C) arrays laid out by the grid
    sort. ``valid_mask``: optional (H, W) bool excluding padded cells from
    the mean (the filter itself still sees them).
    """
    kernel = gaussian_kernel2d(sigma)
    r = kernel.shape[0] // 2
    total = 0.0
    for grid in grids:
        gv = ad.val(grid)
        chans = _channels(grid)
        acc = 0.0
        for ch in chans:
            filtered = ad.conv2d_valid(ad.pad_reflect2d(ch, r), kernel)
            diff2 = ad.square(ch - filtered)
            if valid_mask is not None:
                w = np.asarray(valid_mask, dtype=np.float64)
                acc = acc + ad.sum(diff2 * w) / (w.sum() or 1.0)
            else:
                acc = acc + ad.mean(diff2)
        total = total + acc * (1.0 / len(chans))
    return total


def opacity_reg(opacities) -> object:
    """Mean |post-activation opacity| over the frame's Gaussians."""
    return ad.mean(ad.absolute(opacities))


def self_distill(f, f_prime) -> object:
    if ad.val(f).shape != ad.val(f_prime).shape:
        raise ValueError(f"feature shapes differ: {ad.val(f).shape} vs {ad.val(f_prime).shape}")
    return ad.mean(ad.absolute(f - f_prime))


def total_loss(components: LossComponents, weights: LossWeights) -> object:
    return (
        components.l_c
        + AUX_WEIGHT * components.l_t
        + components.l_spatial
        + weights.alpha_temp * components.l_temp
        + weights.alpha_o * components.l_o
        + weights.alpha_sd * components.l_sd
    )
