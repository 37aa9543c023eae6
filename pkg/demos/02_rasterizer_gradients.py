"""The software rasterizer against its two oracles.

1. A direct per-pixel evaluation of the compositing sum must agree with
   the scanline rasterizer to float precision.
2. Central finite differences must certify the analytic backward pass.
"""
import numpy as np

from streamstgs.render import rasterize, rasterize_backward, rasterize_forward, rasterize_reference

rng = np.random.default_rng(1)
m, w, h = 24, 32, 24
theta = rng.uniform(0, np.pi, m)
l1, l2 = rng.uniform(1, 8, m), rng.uniform(1, 8, m)
cov = np.stack([l1 * np.cos(theta) ** 2 + l2 * np.sin(theta) ** 2,
                (l1 - l2) * np.sin(theta) * np.cos(theta),
                l1 * np.sin(theta) ** 2 + l2 * np.cos(theta) ** 2], axis=1)
from streamstgs.render import Splats

splats = Splats(rng.uniform([4, 4], [w - 4, h - 4], (m, 2)), cov,
                rng.uniform(0.1, 1.0, (m, 3)), rng.uniform(0.2, 0.9, m),
                rng.uniform(1, 5, m))

img = rasterize(splats, w, h)
ref = rasterize_reference(splats, w, h)
print("forward vs per-pixel oracle, max abs diff:", np.max(np.abs(img.rgb - ref)))

gimg = rng.standard_normal((h, w, 3))
fwd, _, _, state = rasterize_forward(splats.mean2d, splats.cov2d_packed, splats.color,
                                     splats.alpha_base, splats.depth, w, h, keep_state=True)
grads = rasterize_backward(state, gimg)

step = 1e-4
i = 7
for dim, name in ((0, "x"), (1, "y")):
    before = splats.mean2d[i, dim]
    splats.mean2d[i, dim] = before + step
    fp, _, _, _ = rasterize_forward(splats.mean2d, splats.cov2d_packed, splats.color,
                                    splats.alpha_base, splats.depth, w, h)
    splats.mean2d[i, dim] = before - step
    fm, _, _, _ = rasterize_forward(splats.mean2d, splats.cov2d_packed, splats.color,
                                    splats.alpha_base, splats.depth, w, h)
    splats.mean2d[i, dim] = before
    fd = (np.sum(fp * gimg) - np.sum(fm * gimg)) / (2 * step)
    print(f"splat {i} mean2d.{name}: analytic {grads.mean2d[i, dim]:+.6f}  "
          f"finite-diff {fd:+.6f}")
