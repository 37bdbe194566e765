"""Training loop: silhouette supervision at the ground-truth viewpoint plus
mesh regularizers, with an optional multi-view shape discriminator updated in
alternation with the generator."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..checkpoint import load_checkpoint, save_checkpoint
from ..losses import (LossReport, LossWeights, gan_losses,
                      multiscale_silhouette_loss, regularizer_loss, total_loss)
from ..mesh import apply_offsets
from ..networks import Discriminator, DiscriminatorConfig, Generator, GeneratorConfig
from ..render import RenderConfig, rasterize_hard, sample_poses, soft_rasterize
from .dataset import DatasetManifest

__all__ = ["TrainConfig", "TrainingDivergence", "train", "load_generator",
           "load_discriminator", "toy_train_config"]


class TrainingDivergence(RuntimeError):
    def __init__(self, report: LossReport):
        super().__init__(f"non-finite loss at step {report.step}: {report.to_json()}")
        self.report = report


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-4
    lr_decay: float = 0.3
    decay_interval: int | None = None      # default: 40% of steps (800 of 2000)
    betas: tuple = (0.9, 0.999)
    n_views: int = 2
    use_sd: bool = True
    use_sem: bool = True
    seed: int = 0
    precision: str = "float32"
    sigma: float = 1e-4
    multiscale_resolutions: tuple = (64, 128, 256)
    weights: LossWeights = field(default_factory=LossWeights)
    disc_lr: float | None = None
    azimuth_range: tuple = (0.0, 360.0)
    elevation_range: tuple = (-10.0, 40.0)
    camera_distance: float = 2.0
    log_every: int = 10
    checkpoint_every: int | None = None
    # network sizing
    input_size: int = 128
    dz: int = 512
    enc_channels: tuple = (16, 32, 64, 128)
    dec_grid: tuple = (128, 2, 2)
    dec_channels: tuple = (64, 32, 16)
    template_subdivisions: int = 3
    template_scale: float = 0.5
    max_offset: float = 0.5
    sem_stage: int = 1
    disc_resolution: int = 64
    disc_channels: tuple = (16, 32, 64, 128)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.n_views < 1:
            raise ValueError("n_views must be >= 1")
        if len(self.weights.lambda_scales) != len(self.multiscale_resolutions):
            object.__setattr__(self, "weights", LossWeights(
                lambda_scales=tuple([1.0 / len(self.multiscale_resolutions)]
                                    * len(self.multiscale_resolutions)),
                lambda_sd=self.weights.lambda_sd,
                lambda_flatten=self.weights.lambda_flatten,
                lambda_laplacian=self.weights.lambda_laplacian,
            ))

    @property
    def effective_decay_interval(self) -> int:
        return self.decay_interval if self.decay_interval else max(1, int(0.4 * self.steps))

    def generator_config(self, seed: int) -> GeneratorConfig:
        return GeneratorConfig(
            input_size=self.input_size, dz=self.dz, enc_channels=self.enc_channels,
            dec_grid=self.dec_grid, dec_channels=self.dec_channels,
            template_subdivisions=self.template_subdivisions,
            template_scale=self.template_scale, max_offset=self.max_offset,
            use_sem=self.use_sem, sem_stage=self.sem_stage, seed=seed,
            dtype=self.precision)

    def discriminator_config(self, seed: int) -> DiscriminatorConfig:
        return DiscriminatorConfig(
            resolution=self.disc_resolution, n_views=self.n_views,
            channels=self.disc_channels, seed=seed, dtype=self.precision)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        return d

    @staticmethod
    def from_dict(d) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights.from_dict(d["weights"])
        for k in ("betas", "multiscale_resolutions", "azimuth_range", "elevation_range",
                  "enc_channels", "dec_grid", "dec_channels", "disc_channels"):
            if k in d:
                d[k] = tuple(d[k])
        return TrainConfig(**d)


def toy_train_config(**overrides) -> TrainConfig:
    """Small-everything preset for CPU experiments and the acceptance suite."""
    base = dict(
        steps=500, batch_size=2, input_size=64, dz=128,
        enc_channels=(8, 16, 32, 64), dec_grid=(64, 2, 2), dec_channels=(32, 16, 8),
        template_subdivisions=2, multiscale_resolutions=(32, 64),
        disc_resolution=64, disc_channels=(8, 16, 32, 64), log_every=10,
    )
    base.update(overrides)
    return TrainConfig(**base)


class Adam:
    """Adam with the standard bias correction; one state pair per parameter."""

    def __init__(self, params: dict, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float):
        self.t += 1
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * (g * g)
            mhat = self.m[k] / (1 - self.b1 ** self.t)
            vhat = self.v[k] / (1 - self.b2 ** self.t)
            p.data -= (lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


def _child_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0])


def _stack_views(per_sample_views: list) -> Tensor:
    """[[Tensor(R,R) per view] per sample] -> (B, n_views, R, R)."""
    return ad.stack([ad.stack(views, axis=0) for views in per_sample_views], axis=0)


def train(config: TrainConfig, manifest: DatasetManifest, out_dir) -> Path:
    """Run the loop and return the final checkpoint path.

    Writes ``train_log.jsonl`` (one LossReport per logged step) and
    ``summary.json`` (checkpoint snapshots with running-best L_sp) next to
    the checkpoint.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_entries = manifest.split_entries("train")
    if not train_entries:
        raise ValueError("training split is empty")

    ss = np.random.SeedSequence(config.seed)
    s_gen, s_disc, s_batch, s_pose, s_real = ss.spawn(5)
    gen = Generator(config.generator_config(_child_seed(s_gen)))
    disc = Discriminator(config.discriminator_config(_child_seed(s_disc)))
    opt_g = Adam(gen.params, config.betas)
    opt_d = Adam(disc.params, config.betas)
    batch_rng = np.random.default_rng(s_batch)
    pose_rng = np.random.default_rng(s_pose)
    real_rng = np.random.default_rng(s_real)

    dtype = np.dtype(config.precision)
    scales = list(config.multiscale_resolutions)
    disc_render = RenderConfig(resolution=config.disc_resolution, sigma=config.sigma)

    # precompute sketches and per-scale ground-truth silhouettes
    sketches, gt_sils, gt_meshes, poses_gt = [], [], [], []
    for e in train_entries:
        sketches.append(manifest.load_sketch(e).astype(dtype))
        m = manifest.load_mesh(e)
        p = manifest.pose(e)
        gt_meshes.append(m)
        poses_gt.append(p)
        gt_sils.append([rasterize_hard(m, p, r).array().astype(dtype) for r in scales])

    log_path = out / "train_log.jsonl"
    snapshots = []
    best_lsp = np.inf
    lam_sd = config.weights.lambda_sd if config.use_sd else 0.0
    t_start = time.time()

    def checkpoint_payload():
        tensors = {f"gen/{k}": v.data for k, v in gen.params.items()}
        tensors.update({f"disc/{k}": v.data for k, v in disc.params.items()})
        return tensors

    def meta(step):
        return {
            "kind": "sketch3d-train",
            "step": step,
            "generator": gen.config.to_dict(),
            "discriminator": disc.config.to_dict(),
            "train": config.to_dict(),
        }

    with open(log_path, "w") as log_fh:
        for step in range(1, config.steps + 1):
            lr = config.learning_rate * (config.lr_decay
                                         ** ((step - 1) // config.effective_decay_interval))
            idx = batch_rng.integers(0, len(train_entries), size=config.batch_size)

            batch = np.stack([sketches[i] for i in idx])[:, None]
            z = gen.encode_batch(Tensor(batch))
            offsets = gen.decode_batch(z)
            meshes = [apply_offsets(gen.template, offsets[int(b)])
                      for b in range(config.batch_size)]

            # (2) multiscale silhouette loss at the ground-truth viewpoint
            l_sp_terms = []
            for b, i in enumerate(idx):
                rendered = [soft_rasterize(meshes[b], poses_gt[i],
                                           RenderConfig(resolution=r, sigma=config.sigma))
                            for r in scales]
                targets = [Tensor(s) for s in gt_sils[i]]
                l_sp_terms.append(multiscale_silhouette_loss(rendered, targets,
                                                             config.weights))
            l_sp = ad.reduce_mean(ad.stack(l_sp_terms))

            l_flat_terms = [regularizer_loss(m, (config.weights.lambda_flatten, 0.0))
                            for m in meshes]
            l_lap_terms = [regularizer_loss(m, (0.0, config.weights.lambda_laplacian))
                           for m in meshes]
            l_flat = ad.reduce_mean(ad.stack(l_flat_terms))
            l_lap = ad.reduce_mean(ad.stack(l_lap_terms))
            l_r = ad.add(l_flat, l_lap)

            l_sd_gen_val = 0.0
            l_sd_disc_val = 0.0
            gen_gan_term = None
            if config.use_sd and config.weights.lambda_sd > 0:
                # (3) render fake and real silhouettes at shared random poses
                poses = sample_poses(config.n_views, pose_rng,
                                     config.azimuth_range, config.elevation_range,
                                     config.camera_distance)
                fake_views = [[soft_rasterize(meshes[b], p, disc_render).values
                               for p in poses] for b in range(config.batch_size)]
                real_ids = real_rng.integers(0, len(train_entries),
                                             size=config.batch_size)
                real_views = [[soft_rasterize(gt_meshes[i], p, disc_render).values
                               for p in poses] for i in real_ids]
                fake_stack = _stack_views(fake_views)
                real_stack = _stack_views(real_views)

                # (4) discriminator update on detached fakes
                opt_d.zero_grad()
                d_fake_det = disc(fake_stack.detach())
                d_real = disc(real_stack)
                _, disc_loss = gan_losses(d_fake_det, d_real)
                ad.backward(disc_loss)
                disc_lr = (config.disc_lr or config.learning_rate) * (
                    config.lr_decay ** ((step - 1) // config.effective_decay_interval))
                opt_d.step(disc_lr)
                l_sd_disc_val = disc_loss.item()

                # (5) generator GAN term against the updated discriminator
                d_fake = disc(fake_stack)
                gen_gan_term, _ = gan_losses(d_fake, d_real.detach())
                l_sd_gen_val = gen_gan_term.item()

            loss = total_loss(l_sp, l_r, gen_gan_term if gen_gan_term is not None else 0.0,
                              config.weights if config.use_sd else
                              LossWeights(lambda_scales=config.weights.lambda_scales,
                                          lambda_sd=0.0,
                                          lambda_flatten=config.weights.lambda_flatten,
                                          lambda_laplacian=config.weights.lambda_laplacian))

            report = LossReport(
                step=step, total=loss.item(), l_sp=l_sp.item(),
                l_flatten=l_flat.item(), l_laplacian=l_lap.item(),
                l_sd_generator=l_sd_gen_val, l_sd_discriminator=l_sd_disc_val,
                lambda_sd=lam_sd, learning_rate=lr,
                wall_time=time.time() - t_start)
            if not np.isfinite(report.total):
                raise TrainingDivergence(report)

            opt_g.zero_grad()
            ad.backward(loss)
            opt_g.step(lr)

            if step % config.log_every == 0 or step == 1 or step == config.steps:
                log_fh.write(report.to_json() + "\n")
                log_fh.flush()

            snap_now = (config.checkpoint_every
                        and step % config.checkpoint_every == 0)
            if snap_now or step == config.steps:
                best_lsp = min(best_lsp, report.l_sp)
                snapshots.append({"step": step, "l_sp": report.l_sp,
                                  "best_l_sp": best_lsp})
                if snap_now and step != config.steps:
                    save_checkpoint(out / f"ckpt_{step:06d}.sk3d", meta(step),
                                    checkpoint_payload())

    ckpt_path = out / "checkpoint.sk3d"
    save_checkpoint(ckpt_path, meta(config.steps), checkpoint_payload())
    (out / "summary.json").write_text(json.dumps({
        "steps": config.steps,
        "snapshots": snapshots,
        "discriminator_calls": disc.forward_calls,
        "final": snapshots[-1] if snapshots else None,
    }, indent=2, sort_keys=True))
    return ckpt_path


def load_generator(ckpt_path):
    """Rebuild a Generator from an archive; returns (generator, id, meta)."""
    meta, tensors, ckpt_id = load_checkpoint(ckpt_path)
    cfg = GeneratorConfig.from_dict(meta["generator"])
    params = {k[len("gen/"):]: Tensor(v, requires_grad=True)
              for k, v in tensors.items() if k.startswith("gen/")}
    return Generator(cfg, params=params), ckpt_id, meta


def load_discriminator(ckpt_path):
    meta, tensors, ckpt_id = load_checkpoint(ckpt_path)
    cfg = DiscriminatorConfig.from_dict(meta["discriminator"])
    params = {k[len("disc/"):]: Tensor(v, requires_grad=True)
              for k, v in tensors.items() if k.startswith("disc/")}
    return Discriminator(cfg, params=params), ckpt_id, meta
