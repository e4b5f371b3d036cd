"""Class-conditional noise-prediction UNet and its checkpoint format.

Conditioning: a learned per-class embedding is added to the sinusoidal
timestep embedding before injection into every residual block.
Self-attention sits at the 16x16 feature resolution by default.
"""

from __future__ import annotations

import copy
import math
import pickle
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch import nn

from .errors import PreconditionError

CHECKPOINT_VERSION = 1

# image-size presets for the production models; the desk-scale 32px entry
# backs the fast fixture pipeline
DEFAULT_CONFIGS: dict[int, dict] = {
    32: dict(base_channels=24, channel_multipliers=(1, 2, 2), res_blocks_per_level=1),
    128: dict(base_channels=64, channel_multipliers=(1, 1, 2, 2, 4), res_blocks_per_level=3),
    256: dict(base_channels=64, channel_multipliers=(1, 1, 2, 2, 4, 4), res_blocks_per_level=3),
    512: dict(base_channels=128, channel_multipliers=(1, 1, 2, 2, 4, 4), res_blocks_per_level=2),
}


@dataclass(frozen=True)
class DenoiserConfig:
    image_size: int
    num_classes: int
    base_channels: int = 64
    channel_multipliers: tuple[int, ...] = (1, 1, 2, 2, 4)
    res_blocks_per_level: int = 3
    time_embedding_dim: int = 128
    attention_resolutions: tuple[int, ...] = (16,)
    ema_decay: float = 0.999

    def __post_init__(self):
        depth = len(self.channel_multipliers) - 1
        if self.image_size % (2 ** depth) != 0:
            raise PreconditionError(
                f"image_size {self.image_size} not divisible by 2^{depth}"
            )
        if self.num_classes < 2:
            raise PreconditionError("need at least one defect class plus background")

    @classmethod
    def for_size(cls, image_size: int, num_classes: int, **overrides) -> "DenoiserConfig":
        if image_size not in DEFAULT_CONFIGS:
            raise PreconditionError(f"no preset for image size {image_size}")
        kwargs = dict(DEFAULT_CONFIGS[image_size])
        kwargs.update(overrides)
        return cls(image_size=image_size, num_classes=num_classes, **kwargs)


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard transformer-style timestep embedding."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64, device=t.device) / half
    ).to(t.dtype)
    args = t[:, None].to(freqs.dtype) * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, emb_dim: int):
        super().__init__()
        groups = min(8, in_ch)
        self.norm1 = nn.GroupNorm(groups, in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, out_ch)
        self.norm2 = nn.GroupNorm(min(8, out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(nn.functional.silu(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class SelfAttention2d(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.norm = nn.GroupNorm(min(8, ch), ch)
        self.qkv = nn.Conv2d(ch, ch * 3, 1)
        self.proj = nn.Conv2d(ch, ch, 1)

    def forward(self, x):
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(b, 3, c, h * w).unbind(1)
        attn = torch.softmax(q.transpose(1, 2) @ k / math.sqrt(c), dim=-1)
        out = (v @ attn.transpose(1, 2)).reshape(b, c, h, w)
        return x + self.proj(out)


class ConditionalUNet(nn.Module):
    """Predicts the noise component of a noised image given (t, class)."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        ch = config.base_channels
        emb_dim = config.time_embedding_dim
        self.time_mlp = nn.Sequential(
            nn.Linear(emb_dim, emb_dim * 2), nn.SiLU(), nn.Linear(emb_dim * 2, emb_dim)
        )
        self.class_embedding = nn.Embedding(config.num_classes, emb_dim)
        self.stem = nn.Conv2d(1, ch, 3, padding=1)

        chans = [ch * m for m in config.channel_multipliers]
        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        res = config.image_size
        skip_chans = [ch]
        cur = ch
        for level, out_ch in enumerate(chans):
            blocks = nn.ModuleList()
            for _ in range(config.res_blocks_per_level):
                blocks.append(ResBlock(cur, out_ch, emb_dim))
                if res in config.attention_resolutions:
                    blocks.append(SelfAttention2d(out_ch))
                cur = out_ch
                skip_chans.append(cur)
            self.down_blocks.append(blocks)
            if level < len(chans) - 1:
                self.downsamples.append(nn.Conv2d(cur, cur, 3, stride=2, padding=1))
                skip_chans.append(cur)
                res //= 2

        self.mid1 = ResBlock(cur, cur, emb_dim)
        self.mid_attn = SelfAttention2d(cur) if res in config.attention_resolutions else None
        self.mid2 = ResBlock(cur, cur, emb_dim)

        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for level, out_ch in reversed(list(enumerate(chans))):
            blocks = nn.ModuleList()
            for _ in range(config.res_blocks_per_level + 1):
                blocks.append(ResBlock(cur + skip_chans.pop(), out_ch, emb_dim))
                if res in config.attention_resolutions:
                    blocks.append(SelfAttention2d(out_ch))
                cur = out_ch
            self.up_blocks.append(blocks)
            if level > 0:
                self.upsamples.append(
                    nn.ConvTranspose2d(cur, cur, 4, stride=2, padding=1)
                )
                res *= 2

        self.out_norm = nn.GroupNorm(min(8, cur), cur)
        self.out_conv = nn.Conv2d(cur, 1, 3, padding=1)

    def forward(self, x: torch.Tensor, t: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        emb = self.time_mlp(sinusoidal_embedding(t, self.config.time_embedding_dim))
        emb = emb + self.class_embedding(c)
        h = self.stem(x)
        skips = [h]
        for level, blocks in enumerate(self.down_blocks):
            for block in blocks:
                h = block(h, emb) if isinstance(block, ResBlock) else block(h)
                if isinstance(block, ResBlock):
                    skips.append(h)
            if level < len(self.downsamples):
                h = self.downsamples[level](h)
                skips.append(h)
        h = self.mid1(h, emb)
        if self.mid_attn is not None:
            h = self.mid_attn(h)
        h = self.mid2(h, emb)
        for level, blocks in enumerate(self.up_blocks):
            for block in blocks:
                if isinstance(block, ResBlock):
                    h = block(torch.cat([h, skips.pop()], dim=1), emb)
                else:
                    h = block(h)
            if level < len(self.upsamples):
                h = self.upsamples[level](h)
        return self.out_conv(nn.functional.silu(self.out_norm(h)))


@dataclass
class Denoiser:
    """A noise-prediction network plus its EMA shadow and training step."""

    config: DenoiserConfig
    net: nn.Module
    ema_net: nn.Module | None = None
    step: int = 0
    version: int = CHECKPOINT_VERSION
    schedule_params: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config: DenoiserConfig, rng_seed: int = 0) -> "Denoiser":
        torch.manual_seed(rng_seed)
        net = ConditionalUNet(config)
        ema = copy.deepcopy(net)
        for p in ema.parameters():
            p.requires_grad_(False)
        return cls(config=config, net=net, ema_net=ema)

    def predict(
        self, x: torch.Tensor, t: torch.Tensor, c: torch.Tensor, use_ema: bool = True
    ) -> torch.Tensor:
        net = self.ema_net if (use_ema and self.ema_net is not None) else self.net
        with torch.no_grad():
            return net(x, t, c)

    def ema_update(self) -> None:
        if self.ema_net is None:
            return
        decay = self.config.ema_decay
        with torch.no_grad():
            for pe, p in zip(self.ema_net.parameters(), self.net.parameters()):
                pe.mul_(decay).add_(p, alpha=1.0 - decay)
            for be, b in zip(self.ema_net.buffers(), self.net.buffers()):
                be.copy_(b)

    def save(self, path: str | Path) -> None:
        # pickled numpy container rather than torch.save: identical models
        # must produce byte-identical checkpoint files
        def as_arrays(state):
            return {k: v.detach().cpu().numpy() for k, v in state.items()}

        payload = {
            "version": self.version,
            "config": asdict(self.config),
            "schedule": dict(self.schedule_params),
            "state": as_arrays(self.net.state_dict()),
            "ema_state": (
                as_arrays(self.ema_net.state_dict()) if self.ema_net is not None else None
            ),
            "step": self.step,
        }
        Path(path).write_bytes(pickle.dumps(payload, protocol=4))

    @classmethod
    def load(cls, path: str | Path) -> "Denoiser":
        payload = pickle.loads(Path(path).read_bytes())
        if payload.get("version") != CHECKPOINT_VERSION:
            raise PreconditionError(
                f"unsupported checkpoint version {payload.get('version')}"
            )
        cfg_dict = dict(payload["config"])
        cfg_dict["channel_multipliers"] = tuple(cfg_dict["channel_multipliers"])
        cfg_dict["attention_resolutions"] = tuple(cfg_dict["attention_resolutions"])
        config = DenoiserConfig(**cfg_dict)

        def as_tensors(state):
            return {k: torch.as_tensor(v) for k, v in state.items()}

        net = ConditionalUNet(config)
        net.load_state_dict(as_tensors(payload["state"]))
        ema = None
        if payload["ema_state"] is not None:
            ema = ConditionalUNet(config)
            ema.load_state_dict(as_tensors(payload["ema_state"]))
            for p in ema.parameters():
                p.requires_grad_(False)
        return cls(
            config=config,
            net=net,
            ema_net=ema,
            step=payload["step"],
            schedule_params=payload["schedule"],
        )

    def checkpoint_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, p in sorted(self.net.state_dict().items()):
            h.update(name.encode())
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()[:16]
