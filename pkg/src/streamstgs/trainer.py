"""Per-GOP optimization: two-pass training with a transformer teacher.

Every iteration runs the Gaussian pass (window -> temporal MLP -> decoders
-> deform -> render) against a sampled (frame, camera), and the auxiliary
pass, which re-encodes all frames' temporal features for a sampled batch of
Gaussians, refines them with the transformer, renders the same frame, and
distills back into the shared deformation field. One combined backward pass
feeds per-group Adam steps with exponentially decayed learning rates.
Densify/prune runs on a schedule; once the Gaussian budget is saturated it
switches to count-preserving relocation.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .codec import GridLayout, build_attribute_grids, sort_to_grid
from .core import (
    DeformationField,
    GaussianSet,
    TemporalFeatureBank,
    decode_deformation,
    deform,
    frame_timestamp,
    temporal_forward,
    temporal_forward_sequence,
    window_features,
    window_features_all,
)
from .losses import (
    LossComponents,
    LossWeights,
    dssim,
    opacity_reg,
    reconstruction_loss,
    self_distill,
    spatial_smoothness,
    temporal_consistency,
    total_loss,
)
from .render import compute_dynamic_mask, project, psnr, rasterize, render_model_frame
from .transformer import TransformerAux, transformer_forward

CANONICAL_FIELDS = ("positions", "scales", "rotations", "opacities", "base_colors")


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    gop_length: int = 60
    window: int = 3
    iterations: int = 2000
    coarse_iterations: int = 200
    batch_size: int = 1  # (frame, camera) samples averaged per iteration
    noise_lambda: float = 0.001
    noise_gaussian: bool = False
    feature_dim: int = 16
    batch_attention: int = 1024
    mask_threshold: float = 0.02
    densify_start: int = 500
    densify_interval: int = 100
    densify_stop_frac: float = 0.8
    densify_grad_threshold: float = 2e-4
    percent_dense: float = 0.01
    prune_threshold: float = 0.005
    max_gaussians: int = 150_000
    dynamic_density_start: int | None = None  # default: 5/12 of iterations
    aux_enabled: bool = True
    temporal_enabled: bool = True
    spatial_enabled: bool = True
    relocation_enabled: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    heldout_cameras: tuple = ()
    init_noise: float = 0.02
    init_dynamic_fraction: float = 1.0
    init_floaters: int = 0
    log_interval: int = 25
    seed: int = 0

    def dynamic_start(self) -> int:
        if self.dynamic_density_start is not None:
            return self.dynamic_density_start
        return round(self.iterations * 5 / 12)

    def densify_stop(self) -> int:
        return int(self.iterations * self.densify_stop_frac)


def default_learning_rates(extent: float) -> dict:
    """Per-group (start, end) pairs; None end means a constant rate."""
    return {
        "positions": (1.6e-4 * extent, 1.6e-6 * extent),
        "scales": (5e-3, None),
        "rotations": (1e-3, None),
        "opacities": (5e-2, None),
        "base_colors": (2.5e-3, None),
        "features": (2.5e-3, None),
        "d_t": (2.5e-3, 2.5e-5),
        # 4e-2 (the reference rate) lets the covariance head blow up at desk
        # scale: scale/rotation offsets reach e^8 and the optimizer responds
        # by killing opacity instead of recovering. 10x lower is stable.
        "d_cov": (4e-3, None),
        "d_v": (5e-3, 5e-5),
        "d_o": (2e-3, 2e-5),
        "d_c": (8e-3, 5e-5),
        "transformer": (2e-3, 1e-5),
    }


def param_group(name: str) -> str:
    if name.startswith("aux."):
        return "transformer"
    return name.split(".")[0]


def add_window_noise(windowed, lam: float, rng: np.random.Generator, gaussian: bool = False):
    """Perturb windowed features by lambda-scaled noise (training only)."""
    if lam < 0:
        raise ValueError("noise scale must be nonnegative")
    if lam == 0.0:
        return windowed
    shape = ad.val(windowed).shape
    if gaussian:
        eps = lam * rng.normal(0.0, 0.5, shape)
    else:
        eps = lam * rng.uniform(-0.5, 0.5, shape)
    return windowed + eps


@dataclass
class OpacityStats:
    total: np.ndarray
    count: int = 0

    @classmethod
    def zeros(cls, n: int) -> "OpacityStats":
        return cls(np.zeros(n), 0)

    def update(self, opacity_values: np.ndarray) -> None:
        self.total += opacity_values.reshape(-1)
        self.count += 1

    def mean(self) -> np.ndarray:
        if self.count <= 0:
            raise ValueError("no opacity samples collected since the last prune")
        return self.total / self.count


class Adam:
    """Per-parameter adaptive moments with external per-step learning rates."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v.value) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.value) for k, v in params.items()}
        self.t = 0

    def step(self, lr_by_group: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            mhat = self.m[name] / (1 - b1**self.t)
            vhat = self.v[name] / (1 - b2**self.t)
            p.value = p.value - lr_by_group[param_group(name)] * mhat / (np.sqrt(vhat) + self.eps)

    def rebuild_rows(self, name: str, keep: np.ndarray, appended: int, axis: int = 0) -> None:
        """Keep survivors' moments, zero the appended rows."""
        for store in (self.m, self.v):
            old = store[name]
            kept = np.take(old, keep, axis=axis)
            if appended:
                shape = list(kept.shape)
                shape[axis] = appended
                kept = np.concatenate([kept, np.zeros(shape)], axis=axis)
            store[name] = kept

    def reset_rows(self, name: str, idx: np.ndarray, axis: int = 0) -> None:
        for store in (self.m, self.v):
            sl = [slice(None)] * store[name].ndim
            sl[axis] = idx
            store[name][tuple(sl)] = 0.0


def _initial_scales(positions: np.ndarray) -> np.ndarray:
    """Log of a fraction of the mean 3-NN distance.

    Desk point clouds are sparse, so the raw neighbor distance overshoots
    the true object size badly and the fit settles into translucent fog;
    a third of it recovers cleanly.
    """
    n = positions.shape[0]
    if n < 4:
        return np.log(np.full((n, 3), 0.05))
    tree = cKDTree(positions)
    dists, _ = tree.query(positions, k=4)
    mean_d = np.clip(dists[:, 1:].mean(axis=1) / 3.0, 1e-4, None)
    return np.log(np.tile(mean_d[:, None], (1, 3)))


def inverse_sigmoid(x: float) -> float:
    return float(np.log(x / (1.0 - x)))


class GopTrainer:
    """Owns all mutable state of one GOP's optimization."""

    def __init__(self, scene, cfg: TrainConfig, lrs: dict | None = None):
        self.scene = scene
        self.cfg = replace(cfg, gop_length=scene.spec.gop_length)
        self.rng = np.random.default_rng(cfg.seed)
        self.g = scene.spec.gop_length
        self.train_cameras = [c for c in range(scene.spec.cameras) if c not in cfg.heldout_cameras]

        pos, col = scene.initial_points(noise=cfg.init_noise, seed=cfg.seed,
                                        dynamic_fraction=cfg.init_dynamic_fraction,
                                        floaters=cfg.init_floaters)
        n = pos.shape[0]
        self.params = {
            "positions": ad.Var(pos),
            "scales": ad.Var(_initial_scales(pos)),
            "rotations": ad.Var(np.tile([1.0, 0, 0, 0], (n, 1))),
            "opacities": ad.Var(np.full((n, 1), inverse_sigmoid(0.5))),
            "base_colors": ad.Var(col),
        }
        e = self.g + cfg.window - 1
        self.params["features"] = ad.Var(np.zeros((e, n, cfg.feature_dim)))
        self.field_template = DeformationField.create(cfg.window, cfg.feature_dim, rng=self.rng)
        for name in DeformationField.LAYER_ORDER:
            self.params[name] = ad.Var(self.field_template.params[name])
        lo, hi = pos.min(axis=0), pos.max(axis=0)
        self.aux_template = TransformerAux.create(lo, hi, rng=self.rng)
        for name in self.aux_template.param_names():
            self.params[f"aux.{name}"] = ad.Var(self.aux_template.params[name])

        self.extent = float(np.linalg.norm(hi - lo) / 2.0) or 1.0
        self.lrs = lrs or default_learning_rates(self.extent)
        self.optimizer = Adam(self.params)
        self.masks = [compute_dynamic_mask(list(scene.images[:, c]), cfg.mask_threshold).mask
                      for c in range(scene.spec.cameras)]
        self.layout = sort_to_grid(self.snapshot_gaussians(), seed=cfg.seed)
        self.opacity_stats = OpacityStats.zeros(n)
        self.grad_accum = np.zeros(n)
        self.grad_count = np.zeros(n)
        self.metrics: list = []

    # -- views over the parameter dict --------------------------------------
    def gaussian_view(self, params: dict) -> GaussianSet:
        return GaussianSet(*(params[f] for f in CANONICAL_FIELDS))

    def bank_view(self, params: dict) -> TemporalFeatureBank:
        return TemporalFeatureBank(self.g, self.cfg.window, params["features"], self.cfg.feature_dim)

    def field_view(self, params: dict) -> DeformationField:
        return DeformationField(self.cfg.window, self.cfg.feature_dim,
                                self.field_template.time_bands,
                                {k: params[k] for k in DeformationField.LAYER_ORDER})

    def aux_view(self, params: dict) -> TransformerAux:
        return replace(self.aux_template,
                       params={k: params[f"aux.{k}"] for k in self.aux_template.param_names()})

    def snapshot_gaussians(self) -> GaussianSet:
        return GaussianSet(*(np.array(self.params[f].value) for f in CANONICAL_FIELDS))

    def snapshot_model(self):
        from .codec import GopModel

        bank = TemporalFeatureBank(self.g, self.cfg.window, np.array(self.params["features"].value),
                                   self.cfg.feature_dim)
        fld = DeformationField(self.cfg.window, self.cfg.feature_dim, self.field_template.time_bands,
                               {k: np.array(self.params[k].value) for k in DeformationField.LAYER_ORDER})
        return GopModel(self.snapshot_gaussians(), bank, fld, self.layout)

    @property
    def count(self) -> int:
        return self.params["positions"].value.shape[0]

    # -- forward/losses ------------------------------------------------------
    def compute_losses(self, params: dict, frame: int, cam_index: int,
                       noises: dict | None = None, aux_batch: np.ndarray | None = None,
                       use_mask: bool = False):
        """Both passes' loss components; pure in ``params`` (Vars or ndarrays)."""
        cfg = self.cfg
        cam = self.scene.cameras[cam_index]
        gt = self.scene.images[frame, cam_index]
        gaussians = self.gaussian_view(params)
        bank = self.bank_view(params)
        fld = self.field_view(params)
        noises = noises or {}

        fe = window_features(bank, frame)
        if "gauss" in noises:
            fe = fe + noises["gauss"]
        t = frame_timestamp(frame, self.g)
        f_i = temporal_forward(fld, fe, t)
        d = decode_deformation(fld, f_i, cam.view_dir)
        per_frame = deform(gaussians, d)
        image = rasterize(project(per_frame, cam), cam.width, cam.height)

        mask = self.masks[cam_index] if use_mask else None
        comps = LossComponents()
        comps.l_c = reconstruction_loss(image.rgb, gt, mask, cfg.weights.beta)

        opraw = ad.sigmoid(gaussians.opacities + d.dopacity)
        comps.l_o = opacity_reg(opraw)

        if cfg.spatial_enabled:
            grids = build_attribute_grids(gaussians, self.layout)
            comps.l_spatial = spatial_smoothness(grids.values(), cfg.weights.spatial_sigma,
                                                 self.layout.valid_mask)
        if cfg.temporal_enabled and cfg.window >= 3:
            triples = []
            for k in range(cfg.window - 2):
                s0 = ad.getitem(bank.features, frame + k)
                s1 = ad.getitem(bank.features, frame + k + 1)
                s2 = ad.getitem(bank.features, frame + k + 2)
                triples.append(temporal_consistency(s0, s1, s2, cfg.weights.huber_delta))
            acc = triples[0]
            for extra in triples[1:]:
                acc = acc + extra
            comps.l_temp = acc * (1.0 / len(triples))

        extras = {"opacity_values": ad.detach(opraw), "image": image, "psnr": psnr(image.rgb, gt)}

        if cfg.aux_enabled and aux_batch is not None:
            aux = self.aux_view(params)
            feats_b = ad.getitem(bank.features, (slice(None), aux_batch))  # (E, B, F)
            bank_b = TemporalFeatureBank(self.g, cfg.window, feats_b, cfg.feature_dim)
            ts = np.array([frame_timestamp(fi, self.g) for fi in range(self.g)])
            fe_all = window_features_all(bank_b)  # (G, B, W*F)
            if "aux" in noises:
                fe_all = fe_all + noises["aux"]
            f_seq = ad.swapaxes(temporal_forward_sequence(fld, fe_all, ts), 0, 1)  # (B, G, 64)
            pos_b = ad.take0(params["positions"], aux_batch)
            f_prime_seq = transformer_forward(aux, f_seq, ts, pos_b)
            comps.l_sd = self_distill(f_seq, f_prime_seq)

            f_prime_i = ad.getitem(f_prime_seq, (slice(None), frame))  # (B, 64)
            f_i_b = ad.getitem(f_i, aux_batch)
            f_mix = f_i + ad.scatter0(f_prime_i - f_i_b, aux_batch, self.count)
            d_aux = decode_deformation(fld, f_mix, cam.view_dir)
            aux_img = rasterize(project(deform(gaussians, d_aux), cam), cam.width, cam.height)
            comps.l_t = dssim(aux_img.rgb, gt)
        return comps, extras

    def draw_noises(self) -> dict:
        cfg = self.cfg
        if cfg.noise_lambda == 0.0:
            return {}
        n = self.count
        shape = (n, cfg.window * cfg.feature_dim)
        draw = (lambda s: cfg.noise_lambda * self.rng.normal(0.0, 0.5, s)) if cfg.noise_gaussian \
            else (lambda s: cfg.noise_lambda * self.rng.uniform(-0.5, 0.5, s))
        noises = {"gauss": draw(shape)}
        if cfg.aux_enabled:
            b = min(cfg.batch_attention, n)
            noises["aux"] = draw((self.g, b, cfg.window * cfg.feature_dim))
        return noises

    def lr_at(self, i: int) -> dict:
        out = {}
        span = max(self.cfg.iterations, 1)
        for group, (start, end) in self.lrs.items():
            out[group] = start if end is None else start * (end / start) ** (i / span)
        return out

    # -- the training loop ---------------------------------------------------
    def coarse_prefit(self) -> None:
        """Static pre-fit of the canonical Gaussians, deformation disabled.

        Fits the first frame's multi-view images only: at desk scale the
        dynamic objects travel many times their own radius within a GOP, so
        a static fit across all frames converges to a translucent motion
        blur that the deformation field then has to unlearn.
        """
        cfg = self.cfg
        static_params = {k: self.params[k] for k in CANONICAL_FIELDS}
        opt = Adam(static_params)
        for i in range(cfg.coarse_iterations):
            cam_index = int(self.train_cameras[self.rng.integers(len(self.train_cameras))])
            cam = self.scene.cameras[cam_index]
            for p in static_params.values():
                p.zero_grad()
            img = rasterize(project(self.gaussian_view(self.params), cam), cam.width, cam.height)
            loss = reconstruction_loss(img.rgb, self.scene.images[0, cam_index],
                                       None, cfg.weights.beta)
            loss.backward()
            opt.step(self.lr_at(0))

    def step(self, i: int) -> dict:
        cfg = self.cfg
        for p in self.params.values():
            p.zero_grad()
        inv_b = 1.0 / cfg.batch_size
        for _ in range(cfg.batch_size):
            frame = int(self.rng.integers(self.g))
            cam_index = int(self.train_cameras[self.rng.integers(len(self.train_cameras))])
            aux_batch = None
            if cfg.aux_enabled:
                b = min(cfg.batch_attention, self.count)
                aux_batch = np.sort(self.rng.choice(self.count, size=b, replace=False))
            noises = self.draw_noises()
            comps, extras = self.compute_losses(self.params, frame, cam_index, noises, aux_batch,
                                                use_mask=i >= cfg.dynamic_start())
            total = total_loss(comps, cfg.weights) * inv_b
            loss_val = float(ad.val(total)) * cfg.batch_size
            if not np.isfinite(loss_val):
                self._dump_divergence(i, comps)
                raise TrainingDiverged(f"non-finite loss at iteration {i}")
            total.backward()
            self.opacity_stats.update(extras["opacity_values"])

        pg = self.params["positions"].grad
        if pg is not None:
            self.grad_accum += np.linalg.norm(pg, axis=1)
            self.grad_count += 1
        self.optimizer.step(self.lr_at(i))

        record = {
            "iteration": i,
            "loss": loss_val,
            "l_c": float(ad.val(comps.l_c)),
            "l_t": float(ad.val(comps.l_t)),
            "l_spatial": float(ad.val(comps.l_spatial)),
            "l_temp": float(ad.val(comps.l_temp)),
            "l_o": float(ad.val(comps.l_o)),
            "l_sd": float(ad.val(comps.l_sd)),
            "psnr": extras["psnr"],
            "count": self.count,
            "lr": {k: v for k, v in self.lr_at(i).items()},
        }
        return record

    def train(self) -> list:
        cfg = self.cfg
        if cfg.coarse_iterations:
            self.coarse_prefit()
        for i in range(cfg.iterations):
            record = self.step(i)
            if i % cfg.log_interval == 0 or i == cfg.iterations - 1:
                self.metrics.append(record)
            due = (cfg.densify_start <= i < cfg.densify_stop()
                   and (i - cfg.densify_start) % cfg.densify_interval == 0
                   and self.grad_count.max(initial=0) > 0)
            if due:
                self.run_density_step(i)
        return self.metrics

    def _dump_divergence(self, i: int, comps) -> None:
        path = Path("diverged_state.npz")
        np.savez(path, **{k: ad.val(v) for k, v in self.params.items()},
                 iteration=np.array(i))
        summary = {k: float(ad.val(getattr(comps, k))) for k in
                   ("l_c", "l_t", "l_spatial", "l_temp", "l_o", "l_sd")}
        Path("diverged_state.json").write_text(json.dumps({"iteration": i, "losses": summary}))

    # -- density control -------------------------------------------------------
    def run_density_step(self, i: int) -> dict:
        grad_norms = self.grad_accum / np.maximum(self.grad_count, 1)
        arrays = {k: np.array(self.params[k].value) for k in (*CANONICAL_FIELDS, "features")}
        arrays, info = densify_and_prune(arrays, grad_norms, self.opacity_stats, self.cfg,
                                         self.extent, self.rng,
                                         relocation_enabled=self.cfg.relocation_enabled)
        for k in CANONICAL_FIELDS:
            self.params[k].value = arrays[k]
            self.params[k].zero_grad()
            self.optimizer.rebuild_rows(k, info["keep"], info["appended"])
        self.params["features"].value = arrays["features"]
        self.params["features"].zero_grad()
        self.optimizer.rebuild_rows("features", info["keep"], info["appended"], axis=1)
        if info["relocated"].size:
            for k in (*CANONICAL_FIELDS,):
                self.optimizer.reset_rows(k, info["relocated"])
            self.optimizer.reset_rows("features", info["relocated"], axis=1)

        n = self.count
        self.opacity_stats = OpacityStats.zeros(n)
        self.grad_accum = np.zeros(n)
        self.grad_count = np.zeros(n)
        self.layout = sort_to_grid(self.snapshot_gaussians(), seed=self.cfg.seed)
        self.metrics.append({"iteration": i, "density_event": {
            "pruned": info["pruned"], "cloned": info["cloned"], "split": info["split"],
            "relocated": int(info["relocated"].size), "count": n}})
        return info


def densify_and_prune(arrays: dict, grad_norms: np.ndarray, opacity_stats: OpacityStats,
                      cfg: TrainConfig, extent: float, rng: np.random.Generator,
                      relocation_enabled: bool = True) -> tuple:
    """Prune dim Gaussians, clone/split high-gradient ones, relocate at the cap.

    Returns (new arrays, info) where info carries ``keep`` (surviving old row
    indices, order preserved), ``appended`` (new row count), ``relocated``
    (row indices re-initialized in place), and per-action counts.
    """
    n = arrays["positions"].shape[0]
    mean_op = opacity_stats.mean()
    prune_mask = mean_op < cfg.prune_threshold
    if prune_mask.all():
        prune_mask[np.argmax(mean_op)] = False  # never empties the model

    info = {"pruned": 0, "cloned": 0, "split": 0, "relocated": np.array([], dtype=int)}

    if n >= cfg.max_gaussians:
        keep = np.arange(n)
        candidates = np.where(prune_mask)[0]
        if relocation_enabled and candidates.size:
            survivors = np.where(~prune_mask)[0]
            order = survivors[np.argsort(grad_norms[survivors])[::-1]]
            targets = order[: candidates.size]
            candidates = candidates[: targets.size]
            for k in ("positions", "rotations", "base_colors"):
                arrays[k][candidates] = arrays[k][targets]
            arrays["scales"][candidates] = arrays["scales"][targets] - np.log(1.6)
            arrays["opacities"][candidates] = inverse_sigmoid(0.1)
            arrays["features"][:, candidates] = arrays["features"][:, targets]
            info["relocated"] = candidates
        info["keep"] = keep
        info["appended"] = 0
        return arrays, info

    keep = np.where(~prune_mask)[0]
    info["pruned"] = int(prune_mask.sum())
    grad_hot = grad_norms > cfg.densify_grad_threshold
    big = np.exp(arrays["scales"]).max(axis=1) > cfg.percent_dense * extent
    clone_idx = np.where(~prune_mask & grad_hot & ~big)[0]
    split_idx = np.where(~prune_mask & grad_hot & big)[0]

    budget = cfg.max_gaussians - keep.size
    if clone_idx.size + 2 * split_idx.size > budget:
        clone_idx = clone_idx[: max(budget, 0)]
        budget -= clone_idx.size
        split_idx = split_idx[: max(budget // 2, 0)]

    new_rows = {k: [arrays[k][keep]] for k in CANONICAL_FIELDS}
    new_feats = [arrays["features"][:, keep]]
    if clone_idx.size:
        for k in CANONICAL_FIELDS:
            new_rows[k].append(arrays[k][clone_idx])
        new_feats.append(arrays["features"][:, clone_idx])
        info["cloned"] = int(clone_idx.size)
    if split_idx.size:
        from .core import quaternions_to_rotations, normalized_quaternions

        rot = ad.val(quaternions_to_rotations(normalized_quaternions(arrays["rotations"][split_idx])))
        sc = np.exp(arrays["scales"][split_idx])
        for _ in range(2):
            offs = np.einsum("nij,nj->ni", rot, sc * rng.standard_normal(sc.shape))
            new_rows["positions"].append(arrays["positions"][split_idx] + offs)
            new_rows["scales"].append(arrays["scales"][split_idx] - np.log(1.6))
            for k in ("rotations", "opacities", "base_colors"):
                new_rows[k].append(arrays[k][split_idx])
            new_feats.append(arrays["features"][:, split_idx])
        info["split"] = int(split_idx.size)
        # originals of split Gaussians are dropped from the kept block
        drop = np.isin(keep, split_idx)
        for k in CANONICAL_FIELDS:
            new_rows[k][0] = new_rows[k][0][~drop]
        new_feats[0] = new_feats[0][:, ~drop]
        keep = keep[~drop]

    out = {k: np.concatenate(new_rows[k], axis=0) for k in CANONICAL_FIELDS}
    out["features"] = np.concatenate(new_feats, axis=1)
    info["keep"] = keep
    info["appended"] = out["positions"].shape[0] - keep.size
    return out, info


# -- evaluation ---------------------------------------------------------------

def evaluate_psnr(model, scene, camera_indices=None, frames=None) -> float:
    cams = camera_indices if camera_indices is not None else range(scene.spec.cameras)
    frames = frames if frames is not None else range(scene.spec.gop_length)
    vals = []
    for c in cams:
        for f in frames:
            img = render_model_frame(model, f, scene.cameras[c])
            vals.append(psnr(img.rgb, scene.images[f, c]))
    return float(np.mean(vals))


def train_gop(scene, cfg: TrainConfig, lrs: dict | None = None):
    """Train one GOP; returns (GopModel, trainer, metrics)."""
    trainer = GopTrainer(scene, cfg, lrs)
    metrics = trainer.train()
    return trainer.snapshot_model(), trainer, metrics


# -- gradient oracle ------------------------------------------------------------

@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict
    sampled: dict

    @property
    def passed(self) -> bool:
        return all(v <= self.tolerance for v in self.max_rel_error.values())

    def __str__(self):
        lines = [f"gradient check (tolerance {self.tolerance:g})"]
        for k in sorted(self.max_rel_error):
            flag = "ok " if self.max_rel_error[k] <= self.tolerance else "FAIL"
            lines.append(f"  [{flag}] {k:<14} max rel err {self.max_rel_error[k]:.3e} ({self.sampled[k]} entries)")
        return "\n".join(lines)


def grad_check(scene=None, cfg: TrainConfig | None = None, tolerance: float = 1e-3,
               max_entries: int = 64, h: float = 1e-4, seed: int = 0,
               gradient_hook=None) -> GradCheckReport:
    """Reverse-mode gradients of the full two-pass loss vs central differences.

    Per parameter group the relative error is max |g_ad - g_fd| over a seeded
    subsample of at most ``max_entries`` entries, normalized by the largest
    |g_fd| in the sample. ``gradient_hook`` (tests only) may corrupt the
    analytic gradients before comparison.
    """
    from .scenes import SceneSpec, generate

    if scene is None:
        scene = generate(SceneSpec(n_static=20, n_dynamic=12, motion="oscillation",
                                   gop_length=4, cameras=8, resolution=16, seed=seed))
    cfg = cfg or TrainConfig(window=3, iterations=10, coarse_iterations=0,
                             noise_lambda=0.0, batch_attention=16, seed=seed)
    trainer = GopTrainer(scene, cfg)
    rng = np.random.default_rng(seed)
    frame = int(rng.integers(scene.spec.gop_length))
    cam_index = int(rng.integers(scene.spec.cameras))
    n = trainer.count
    batch = np.sort(rng.choice(n, size=min(cfg.batch_attention, n), replace=False))
    # nonzero features so the temporal loss and its gradients are exercised
    trainer.params["features"].value = rng.normal(0, 0.05, trainer.params["features"].value.shape)

    def loss_value(values: dict) -> float:
        comps, _ = trainer.compute_losses(values, frame, cam_index, None, batch, use_mask=True)
        return float(ad.val(total_loss(comps, cfg.weights)))

    for p in trainer.params.values():
        p.zero_grad()
    comps, _ = trainer.compute_losses(trainer.params, frame, cam_index, None, batch, use_mask=True)
    total_loss(comps, cfg.weights).backward()
    analytic = {}
    for name, p in trainer.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        analytic.setdefault(param_group(name), {})[name] = g.copy()
    if gradient_hook is not None:
        analytic = gradient_hook(analytic)

    base_values = {k: np.array(v.value) for k, v in trainer.params.items()}
    max_err: dict = {}
    sampled: dict = {}
    for group in sorted({param_group(k) for k in trainer.params}):
        names = [k for k in trainer.params if param_group(k) == group]
        worst = 0.0
        count = 0
        fd_scale = 0.0
        errs = []
        for name in names:
            flat = base_values[name].reshape(-1)
            take = min(max_entries // len(names) + 1, flat.size)
            idx = rng.choice(flat.size, size=take, replace=False)
            for j in idx:
                orig = flat[j]
                flat[j] = orig + h
                fp = loss_value(base_values)
                flat[j] = orig - h
                fm = loss_value(base_values)
                flat[j] = orig
                fd = (fp - fm) / (2 * h)
                ga = analytic[group][name].reshape(-1)[j]
                errs.append(abs(ga - fd))
                fd_scale = max(fd_scale, abs(fd))
                count += 1
        worst = max(errs) / (fd_scale + 1e-12) if errs else 0.0
        max_err[group] = worst
        sampled[group] = count
    return GradCheckReport(tolerance, max_err, sampled)
