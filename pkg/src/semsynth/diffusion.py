"""Forward noising, training objective, reverse sampling, and mask-guided
inpainting for the class-conditional noise-prediction model.

Parameterization: the network predicts the injected noise; reverse-step
variance is fixed to the schedule's posterior variance. Sampling iterates

    x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * pred) / sqrt(alpha_t)
              + sqrt(posterior_variance_t) * z

with z = 0 at t = 1, and the final output clipped to [-1, 1].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import PreconditionError, SemsynthError
from .labels import ClassLabel
from .model import Denoiser
from .patchset import PatchDataset
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)


def forward_sample(x0, t: int, eps, s: NoiseSchedule):
    """Noised image at level t: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    Works on numpy arrays and torch tensors alike. t = 0 returns x0.
    """
    if not 0 <= t <= s.T:
        raise PreconditionError(f"timestep {t} outside [0, {s.T}]")
    if getattr(x0, "shape", None) != getattr(eps, "shape", None):
        raise PreconditionError(f"shape mismatch: {x0.shape} vs {eps.shape}")
    if t == 0:
        return x0 * 1.0
    ab = s.alpha_bar[t]
    return float(np.sqrt(ab)) * x0 + float(np.sqrt(1.0 - ab)) * eps


def _batch_tensors(batch, image_size: int, num_classes: int, dtype):
    xs, cs = [], []
    for x0, label in batch:
        if x0.shape != (image_size, image_size):
            raise PreconditionError(
                f"patch shape {x0.shape} != model size {image_size}"
            )
        if label.id >= num_classes:
            raise PreconditionError(
                f"class id {label.id} >= num_classes {num_classes}"
            )
        xs.append(torch.as_tensor(np.asarray(x0), dtype=dtype))
        cs.append(label.id)
    x = torch.stack(xs)[:, None, :, :]
    c = torch.tensor(cs, dtype=torch.long)
    return x, c


def loss_tensor(
    model: Denoiser,
    batch: list[tuple[np.ndarray, ClassLabel]],
    s: NoiseSchedule,
    rng_seed: int,
) -> torch.Tensor:
    """Differentiable mean-squared noise-prediction error; the timestep and
    noise draws are fixed by rng_seed, so the value is deterministic given
    (parameters, batch, seed)."""
    if not batch:
        raise PreconditionError("empty batch")
    dtype = next(model.net.parameters()).dtype
    x0, c = _batch_tensors(batch, model.config.image_size, model.config.num_classes, dtype)
    rng = np.random.default_rng(rng_seed)
    t = torch.as_tensor(rng.integers(1, s.T + 1, size=len(batch)))
    eps = torch.as_tensor(rng.standard_normal(tuple(x0.shape)), dtype=dtype)
    sqrt_ab = torch.as_tensor(np.sqrt(s.alpha_bar[t.numpy()]), dtype=dtype)
    sqrt_1mab = torch.as_tensor(np.sqrt(1.0 - s.alpha_bar[t.numpy()]), dtype=dtype)
    xt = sqrt_ab[:, None, None, None] * x0 + sqrt_1mab[:, None, None, None] * eps
    pred = model.net(xt, t.to(dtype), c)
    return torch.mean((eps - pred) ** 2)


def training_loss(
    model: Denoiser,
    batch: list[tuple[np.ndarray, ClassLabel]],
    s: NoiseSchedule,
    rng_seed: int,
) -> float:
    with torch.no_grad():
        return float(loss_tensor(model, batch, s, rng_seed))


@dataclass(frozen=True)
class TrainOptions:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_steps: int = 1000
    checkpoint_every: int = 0       # 0 disables periodic checkpoints
    class_balance: bool = False     # batch classes uniformly, not by patch count
    rng_seed: int = 0
    grad_clip: float = 1.0
    checkpoint_dir: str | None = None


def train(
    model: Denoiser,
    dataset: PatchDataset,
    s: NoiseSchedule,
    opts: TrainOptions,
) -> tuple[Denoiser, list[tuple[int, float]]]:
    """Adam optimization of the noise-prediction objective.

    Single-worker and fully seeded: identical (dataset, opts, seed) runs
    give identical loss histories. Returns the model and per-step history.
    """
    if len(dataset) == 0:
        raise PreconditionError("empty dataset")
    for r in dataset.records:
        if r.image.shape != (model.config.image_size, model.config.image_size):
            raise PreconditionError(
                f"patch shape {r.image.shape} != model size {model.config.image_size}"
            )
    if opts.max_steps == 0:
        return model, []

    torch.manual_seed(opts.rng_seed)
    optimizer = torch.optim.Adam(model.net.parameters(), lr=opts.learning_rate)
    rng = np.random.default_rng(opts.rng_seed)
    history: list[tuple[int, float]] = []
    ckpt_dir = Path(opts.checkpoint_dir) if opts.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    by_class: dict[int, np.ndarray] = {}
    if opts.class_balance:
        groups: dict[int, list[int]] = {}
        for i, r in enumerate(dataset.records):
            groups.setdefault(r.label.id, []).append(i)
        by_class = {cid: np.array(ix) for cid, ix in sorted(groups.items())}
        class_ids = list(by_class)

    for step in range(1, opts.max_steps + 1):
        if opts.class_balance:
            picks = rng.integers(0, len(class_ids), size=opts.batch_size)
            idx = np.array([
                by_class[class_ids[p]][rng.integers(0, len(by_class[class_ids[p]]))]
                for p in picks
            ])
        else:
            idx = rng.integers(0, len(dataset), size=opts.batch_size)
        batch = [(dataset.records[i].image, dataset.records[i].label) for i in idx]
        batch_seed = int(rng.integers(0, 2**63 - 1))
        optimizer.zero_grad()
        loss = loss_tensor(model, batch, s, batch_seed)
        value = float(loss.detach())
        if not np.isfinite(value):
            if ckpt_dir:
                model.save(ckpt_dir / "diverged.ckpt")
            raise SemsynthError(
                f"non-finite loss {value} at step {step}; state dumped"
                + (f" to {ckpt_dir}/diverged.ckpt" if ckpt_dir else "")
            )
        loss.backward()
        if opts.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.net.parameters(), opts.grad_clip)
        optimizer.step()
        model.ema_update()
        model.step += 1
        history.append((model.step, value))
        if opts.checkpoint_every and step % opts.checkpoint_every == 0 and ckpt_dir:
            model.save(ckpt_dir / f"step-{model.step:07d}.ckpt")
        if step % 200 == 0:
            recent = np.mean([v for _, v in history[-100:]])
            log.info("step %d loss %.4f (mean of last 100: %.4f)", step, value, recent)
    return model, history


def save_loss_history(path: str | Path, history: list[tuple[int, float]]) -> None:
    lines = [f"{step},{value:.6f}" for step, value in history]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def _check_label(model: Denoiser, c: ClassLabel) -> None:
    if c.id >= model.config.num_classes:
        raise PreconditionError(f"class id {c.id} >= num_classes {model.config.num_classes}")


def _reverse_step(model, x, t: int, c_ids, s: NoiseSchedule, z, use_ema: bool):
    co = s.coefficients_at(t)
    dtype = x.dtype
    tt = torch.full((x.shape[0],), float(t), dtype=dtype)
    pred = model.predict(x, tt, c_ids, use_ema=use_ema)
    mean = (x - co.beta_t / co.sqrt_one_minus_alpha_bar_t * pred) / np.sqrt(co.alpha_t)
    if z is None:
        return mean
    return mean + np.sqrt(co.posterior_variance_t) * z


def sample_batch(
    model: Denoiser,
    labels: list[ClassLabel],
    s: NoiseSchedule,
    rng_seed: int,
    use_ema: bool = True,
) -> np.ndarray:
    """Reverse-process sampling for a batch of class labels; per-batch
    seeded noise stream, final images clipped to [-1, 1]."""
    for c in labels:
        _check_label(model, c)
    size = model.config.image_size
    gen = torch.Generator().manual_seed(rng_seed)
    dtype = next(model.net.parameters()).dtype
    c_ids = torch.tensor([c.id for c in labels], dtype=torch.long)
    x = torch.randn((len(labels), 1, size, size), generator=gen, dtype=dtype)
    for t in range(s.T, 0, -1):
        z = torch.randn(x.shape, generator=gen, dtype=dtype) if t > 1 else None
        x = _reverse_step(model, x, t, c_ids, s, z, use_ema)
    return np.clip(x[:, 0].numpy(), -1.0, 1.0)


def sample(
    model: Denoiser,
    c: ClassLabel,
    s: NoiseSchedule,
    rng_seed: int,
    use_ema: bool = True,
) -> np.ndarray:
    return sample_batch(model, [c], s, rng_seed, use_ema=use_ema)[0]


KNOWN_NOISE_STREAM_OFFSET = 0x9E3779B9  # decorrelates the known-region stream


def inpaint(
    model: Denoiser,
    known: np.ndarray,
    mask: np.ndarray,
    c: ClassLabel,
    s: NoiseSchedule,
    rng_seed: int,
    use_ema: bool = True,
) -> np.ndarray:
    """Mask-guided sampling: mask 1 = keep `known`, 0 = generate.

    After each reverse step the known region is overwritten with a
    forward-noised copy of `known` at the step's level, using a noise
    stream independent of the trajectory stream (so an all-zero mask
    reproduces plain sampling with the same seed). No resampling loops.
    The final composite equals `known` bit-exactly under the mask.
    """
    if known.shape != mask.shape:
        raise PreconditionError(f"shape mismatch: {known.shape} vs {mask.shape}")
    mask_vals = np.unique(mask)
    if not np.all(np.isin(mask_vals, (0.0, 1.0))):
        raise PreconditionError("mask must be binary (values 0 and 1)")
    size = model.config.image_size
    if known.shape != (size, size):
        raise PreconditionError(f"image shape {known.shape} != model size {size}")
    _check_label(model, c)

    dtype = next(model.net.parameters()).dtype
    traj_gen = torch.Generator().manual_seed(rng_seed)
    known_gen = torch.Generator().manual_seed(rng_seed ^ KNOWN_NOISE_STREAM_OFFSET)
    m = torch.as_tensor(mask, dtype=dtype)[None, None]
    known_t = torch.as_tensor(known, dtype=dtype)[None, None]
    c_ids = torch.tensor([c.id], dtype=torch.long)

    x = torch.randn((1, 1, size, size), generator=traj_gen, dtype=dtype)
    for t in range(s.T, 0, -1):
        z = torch.randn(x.shape, generator=traj_gen, dtype=dtype) if t > 1 else None
        x = _reverse_step(model, x, t, c_ids, s, z, use_ema)
        eps = torch.randn(x.shape, generator=known_gen, dtype=dtype)
        known_level = forward_sample(known_t, t - 1, eps, s)
        x = m * known_level + (1.0 - m) * x

    out = np.clip(x[0, 0].numpy(), -1.0, 1.0)
    return np.where(mask == 1.0, known, out)


def inpaint_batch(
    model: Denoiser,
    jobs: list[tuple[np.ndarray, np.ndarray, ClassLabel, int]],
    s: NoiseSchedule,
    use_ema: bool = True,
) -> list[np.ndarray]:
    """Run several (known, mask, class, seed) inpainting jobs through the
    network together. Per-job noise streams are kept separate, so results
    may differ from single-job runs only by batched-kernel rounding."""
    if not jobs:
        return []
    size = model.config.image_size
    dtype = next(model.net.parameters()).dtype
    traj_gens, known_gens, masks, knowns, c_ids = [], [], [], [], []
    for known, mask, c, seed in jobs:
        if known.shape != (size, size) or mask.shape != (size, size):
            raise PreconditionError("job shape mismatch with model size")
        _check_label(model, c)
        traj_gens.append(torch.Generator().manual_seed(seed))
        known_gens.append(torch.Generator().manual_seed(seed ^ KNOWN_NOISE_STREAM_OFFSET))
        masks.append(torch.as_tensor(mask, dtype=dtype))
        knowns.append(torch.as_tensor(known, dtype=dtype))
        c_ids.append(c.id)
    m = torch.stack(masks)[:, None]
    known_t = torch.stack(knowns)[:, None]
    cs = torch.tensor(c_ids, dtype=torch.long)

    def draw(gens):
        return torch.stack(
            [torch.randn((1, size, size), generator=g, dtype=dtype) for g in gens]
        )

    x = draw(traj_gens)
    for t in range(s.T, 0, -1):
        z = draw(traj_gens) if t > 1 else None
        x = _reverse_step(model, x, t, cs, s, z, use_ema)
        known_level = forward_sample(known_t, t - 1, draw(known_gens), s)
        x = m * known_level + (1.0 - m) * x

    outs = []
    for i, (known, mask, _, _) in enumerate(jobs):
        out = np.clip(x[i, 0].numpy(), -1.0, 1.0)
        outs.append(np.where(mask == 1.0, known, out))
    return outs
