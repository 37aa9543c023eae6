"""Train a small GOP end to end and watch the two-pass losses fall.

Deliberately tiny (a couple of minutes on a laptop); the acceptance suite
runs the full desk-scale version.
"""
from streamstgs.scenes import SceneSpec, generate
from streamstgs.trainer import TrainConfig, evaluate_psnr, train_gop

scene = generate(SceneSpec(n_static=80, n_dynamic=40, motion="multi",
                           gop_length=8, cameras=8, resolution=48, seed=5))
cfg = TrainConfig(iterations=300, coarse_iterations=150, heldout_cameras=(0,),
                  log_interval=50, seed=0)
model, trainer, metrics = train_gop(scene, cfg)

print(f"{'iter':>6} {'loss':>9} {'L_c':>8} {'L_t':>8} {'L_sd':>8} {'psnr':>7}")
for rec in metrics:
    if "loss" in rec:
        print(f"{rec['iteration']:>6} {rec['loss']:>9.4f} {rec['l_c']:>8.4f} "
              f"{rec['l_t']:>8.4f} {rec['l_sd']:>8.4f} {rec['psnr']:>7.2f}")

print("train-view PSNR:", round(evaluate_psnr(model, scene, camera_indices=trainer.train_cameras,
                                              frames=range(0, 8, 2)), 2))
print("held-out PSNR:  ", round(evaluate_psnr(model, scene, camera_indices=[0],
                                              frames=range(0, 8, 2)), 2))
