"""Calibration run for the desk-scale fit criterion (not part of the suite)."""
import sys
import time

import numpy as np

from streamstgs.codec import encode_gop
from streamstgs.scenes import SceneSpec, generate
from streamstgs.trainer import GopTrainer, TrainConfig, evaluate_psnr

scene = generate(SceneSpec(n_static=200, n_dynamic=100, motion="oscillation",
                           gop_length=20, cameras=8, resolution=64, seed=0))
cfg = TrainConfig(iterations=2000, coarse_iterations=400, heldout_cameras=(0,),
                  seed=0, max_gaussians=2000)
tr = GopTrainer(scene, cfg)
t0 = time.time()
tr.coarse_prefit()
print("coarse done", round(time.time() - t0, 1), "s", flush=True)
for i in range(cfg.iterations):
    rec = tr.step(i)
    if i % 250 == 0:
        hp = evaluate_psnr(tr.snapshot_model(), scene, camera_indices=[0], frames=[0, 10])
        print(i, "l_c", round(rec["l_c"], 4), "trainpsnr", round(rec["psnr"], 2),
              "heldout~", round(hp, 2), "N", rec["count"],
              "t", round((time.time() - t0) / 60, 1), flush=True)
    due = (cfg.densify_start <= i < cfg.densify_stop()
           and (i - cfg.densify_start) % cfg.densify_interval == 0
           and tr.grad_count.max(initial=0) > 0)
    if due:
        tr.run_density_step(i)
hp = evaluate_psnr(tr.snapshot_model(), scene, camera_indices=[0])
print("FINAL heldout:", round(hp, 3), "N:", tr.count,
      "elapsed", round((time.time() - t0) / 60, 1), "min", flush=True)
with open(sys.argv[1] if len(sys.argv) > 1 else "/tmp/fit2000.stgs", "wb") as fh:
    fh.write(encode_gop(tr.snapshot_model(), qp=0))
