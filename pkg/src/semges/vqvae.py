"""Stage 1: per-part VQ-VAE motion priors."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .core import Adam, Conv1d, FrozenModelError, Module, NonFiniteError, ShapeError, Tensor, assign, no_grad
from .core import functional as F
from .core.tape import decide
from .data import CLIP_FRAMES, Dataset, MotionClip, Part, temporal_derivatives

log = logging.getLogger(__name__)


class PartMismatchError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"loss became non-finite at step {step}" + (f": {detail}" if detail else ""))
        self.step = step


@dataclass(frozen=True)
class PriorConfig:
    part: str
    frames: int = CLIP_FRAMES
    hidden: int = 128
    latent_dim: int = 32
    codebook_size: int = 64
    downsample: int = 2

    def __post_init__(self):
        object.__setattr__(self, "part", Part(self.part).value)
        if self.codebook_size < 2:
            raise ValueError("codebook needs at least 2 entries")
        if self.downsample < 1:
            raise ValueError("downsample factor must be positive")

    @property
    def latent_frames(self) -> int:
        return math.ceil(self.frames / self.downsample)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class Codebook(Module):
    def __init__(self, size: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.param("entries", rng.normal(0.0, 1.0, size=(size, dim)))
        self.usage = np.zeros(size, dtype=np.int64)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def reset_usage(self) -> None:
        self.usage = np.zeros(self.size, dtype=np.int64)


class Quantized(NamedTuple):
    codes: Tensor
    """Code vectors; gradient passes straight through to the latents."""
    selected: Tensor
    """The same vectors gathered from the codebook; gradient reaches the entries."""
    indices: np.ndarray


def nearest_indices(entries: np.ndarray, latents: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean argmin over codebook entries; ties resolve to the lowest index."""
    d = ((latents[:, None, :] - entries[None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(d, axis=1)


def quantize(codebook: Codebook, latents: Tensor) -> Quantized:
    if codebook.size == 0:
        raise ValueError("empty codebook")
    if latents.ndim != 2 or latents.shape[1] != codebook.dim:
        raise ShapeError(f"latents {latents.shape} do not match codebook width {codebook.dim}")
    idx = decide(nearest_indices(codebook.entries.data, latents.data))
    if not codebook.frozen:
        codebook.usage += np.bincount(idx, minlength=codebook.size)
    selected = F.gather_rows(codebook.entries, idx)
    codes = F.straight_through(latents, selected.data)
    return Quantized(codes, selected, idx)


class MotionEncoder(Module):
    def __init__(self, channels: int, cfg: PriorConfig, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv1d(channels, cfg.hidden, rng, stride=cfg.downsample)
        self.conv2 = Conv1d(cfg.hidden, cfg.latent_dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv2(F.silu(self.conv1(x)))


class MotionDecoder(Module):
    def __init__(self, channels: int, cfg: PriorConfig, rng: np.random.Generator):
        super().__init__()
        self.upsample = cfg.downsample
        self.conv1 = Conv1d(cfg.latent_dim, cfg.hidden, rng)
        self.conv2 = Conv1d(cfg.hidden, channels, rng)

    def __call__(self, z: Tensor, frames: int) -> Tensor:
        up = F.repeat_rows(z, self.upsample)
        if up.shape[0] != frames:
            up = up[:frames]
        return self.conv2(F.silu(self.conv1(up)))


class MotionPrior(Module):
    """Encoder, codebook and decoder for one body part."""

    def __init__(self, cfg: PriorConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.part = Part(cfg.part)
        rng = np.random.default_rng(seed)
        self.encoder = MotionEncoder(self.part.channels, cfg, rng)
        self.decoder = MotionDecoder(self.part.channels, cfg, rng)
        self.codebook = Codebook(cfg.codebook_size, cfg.latent_dim, rng)
        self.set_normalization(np.zeros(self.part.channels), np.ones(self.part.channels))

    def set_normalization(self, mean: np.ndarray, std: np.ndarray) -> None:
        """Per-channel statistics applied before encoding and undone after decoding."""
        if self.frozen:
            raise FrozenModelError("cannot change normalization of a frozen prior")
        mean = np.array(mean, dtype=np.float64)
        std = np.array(std, dtype=np.float64)
        if mean.shape != (self.part.channels,) or std.shape != (self.part.channels,):
            raise ShapeError("normalization statistics must have one value per channel")
        if np.any(std <= 0):
            raise ValueError("normalization std must be positive")
        mean.flags.writeable = False
        std.flags.writeable = False
        self.norm_mean, self.norm_std = mean, std

    def buffers(self) -> dict[str, np.ndarray]:
        return {"norm_mean": self.norm_mean, "norm_std": self.norm_std}

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.cfg.to_json().encode()).hexdigest()

    def fingerprint(self) -> str:
        """Hash of configuration and every parameter byte."""
        h = hashlib.sha256(self.cfg.to_json().encode())
        items = [(n, p.data) for n, p in self.named_parameters()] + list(self.buffers().items())
        for name, arr in items:
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def latent_frames(self, frames: int) -> int:
        return math.ceil(frames / self.cfg.downsample)

    def _motion(self, clip) -> Tensor:
        if isinstance(clip, MotionClip):
            if clip.part is not self.part:
                raise PartMismatchError(f"{self.part.value} prior given a {clip.part.value} clip")
            return Tensor(clip.rotations)
        x = clip if isinstance(clip, Tensor) else Tensor(clip)
        if x.ndim != 2 or x.shape[1] != self.part.channels:
            raise ShapeError(f"{self.part.value} prior expects [T, {self.part.channels}], got {x.shape}")
        return x

    def encode(self, clip) -> Tensor:
        x = self._motion(clip)
        return self.encoder((x - self.norm_mean) * (1.0 / self.norm_std))

    def quantize(self, latents: Tensor) -> Quantized:
        return quantize(self.codebook, latents)

    def decode(self, codes: Tensor, frames: int | None = None) -> Tensor:
        frames = self.cfg.frames if frames is None else frames
        if codes.ndim != 2 or codes.shape[1] != self.cfg.latent_dim:
            raise ShapeError(f"codes must be [T', {self.cfg.latent_dim}], got {codes.shape}")
        if codes.shape[0] != self.latent_frames(frames):
            raise ShapeError(
                f"{codes.shape[0]} latent frames cannot decode to {frames} frames "
                f"(expected {self.latent_frames(frames)})"
            )
        return self.decoder(codes, frames) * self.norm_std + self.norm_mean

    def reconstruct(self, clip) -> Tensor:
        x = self._motion(clip)
        return self.decode(self.quantize(self.encode(x)).codes, x.shape[0])


class VQLoss(NamedTuple):
    total: Tensor
    components: dict[str, float]


VQ_COMPONENTS = ("reconstruction", "velocity", "acceleration", "codebook", "commitment")


def vqvae_loss(g, g_hat: Tensor, latents: Tensor, codes: Tensor) -> VQLoss:
    """Unweighted sum of the five mean-reduced VQ-VAE terms.

    ``codes`` are the selected codebook vectors (differentiable w.r.t. the
    codebook). Stop-gradients decide which side each of the last two terms
    trains: the codebook term moves the entries, the commitment term the encoder.
    """
    g = g if isinstance(g, Tensor) else Tensor(g)
    if g.shape != g_hat.shape:
        raise ShapeError(f"target {g.shape} and reconstruction {g_hat.shape} differ")
    if latents.shape != codes.shape:
        raise ShapeError(f"latents {latents.shape} and codes {codes.shape} differ")
    v, a = temporal_derivatives(g)
    v_hat, a_hat = temporal_derivatives(g_hat)
    terms = {
        "reconstruction": F.mean(F.square(g - g_hat)),
        "velocity": F.mean(F.square(v - v_hat)),
        "acceleration": F.mean(F.square(a - a_hat)),
        "codebook": F.mean(F.square(F.stop_gradient(latents) - codes)),
        "commitment": F.mean(F.square(latents - F.stop_gradient(codes))),
    }
    total = terms["reconstruction"]
    for name in VQ_COMPONENTS[1:]:
        total = total + terms[name]
    return VQLoss(total, {k: t.item() for k, t in terms.items()})


def clip_loss(prior: MotionPrior, x) -> VQLoss:
    x = prior._motion(x)
    z = prior.encode(x)
    q = prior.quantize(z)
    g_hat = prior.decode(q.codes, x.shape[0])
    return vqvae_loss(x, g_hat, z, q.selected)


@dataclass
class Stage1Config:
    steps: int = 200
    batch_size: int = 4
    lr: float = 1e-3
    init_codebook_from_data: bool = True
    prior: dict = field(default_factory=dict)


@dataclass
class Stage1Result:
    prior: MotionPrior
    log: list[dict[str, float]]


def init_codebook_from_latents(
    prior: MotionPrior, motions: Sequence[np.ndarray], rng: np.random.Generator
) -> None:
    """Seed codebook entries with distinct initial encoder latents.

    Entries drawn from a unit Gaussian sit far from the encoder's output
    scale and most of them are never selected; starting from real latents
    keeps every entry reachable from the first step.
    """
    with no_grad():
        pool = np.concatenate([prior.encode(m).data for m in motions], axis=0)
    k = prior.codebook.size
    pick = rng.choice(len(pool), size=k, replace=len(pool) < k)
    jitter = rng.normal(0.0, 1e-3 * (pool.std() + 1e-12), size=(k, pool.shape[1]))
    assign(prior.codebook.entries, pool[pick] + jitter)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        order = rng.permutation(n)
        for i in range(0, n - batch_size + 1 if n >= batch_size else 1, batch_size):
            yield order[i : i + batch_size]


def train_stage1(
    dataset: Dataset,
    part: Part | str,
    hyperparams: Stage1Config | None = None,
    seed: int = 0,
) -> Stage1Result:
    """Train a prior on the train split and return it frozen with its loss log."""
    hp = hyperparams or Stage1Config()
    part = Part(part)
    train = dataset.split("train")
    if not train:
        raise ValueError("train split is empty")
    motions = [s.clip(part).rotations for s in train]
    frames = motions[0].shape[0]
    if any(m.shape[0] != frames for m in motions):
        raise ShapeError("stage-1 training needs equal-length clips")

    cfg = PriorConfig(part=part.value, frames=frames, **hp.prior)
    prior = MotionPrior(cfg, seed=seed)
    stacked = np.concatenate(motions, axis=0)
    prior.set_normalization(stacked.mean(axis=0), np.maximum(stacked.std(axis=0), 1e-3))
    if hp.init_codebook_from_data:
        init_codebook_from_latents(prior, motions, np.random.default_rng(seed + 2))
    opt = Adam(prior.parameters(), lr=hp.lr)
    rng = np.random.default_rng(seed + 1)
    batches = _batches(len(motions), min(hp.batch_size, len(motions)), rng)
    history = []
    for step in range(hp.steps):
        idx = next(batches)
        opt.zero_grad()
        comps = dict.fromkeys(VQ_COMPONENTS, 0.0)
        try:
            total = None
            for i in idx:
                out = clip_loss(prior, motions[i])
                total = out.total if total is None else total + out.total
                for k, v in out.components.items():
                    comps[k] += v / len(idx)
            total = total * (1.0 / len(idx))
            total.backward()
            opt.step()
        except NonFiniteError as exc:
            raise TrainingDivergedError(step, str(exc)) from None
        record = {"step": step, "total": total.item(), **comps}
        history.append(record)
        if step % 50 == 0 or step == hp.steps - 1:
            log.info("stage1 %s step %d loss %.5f", part.value, step, record["total"])
    prior.freeze()
    return Stage1Result(prior, history)


def reconstruction_mse(prior: MotionPrior, clips: Sequence[np.ndarray]) -> float:
    with no_grad():
        errs = [np.mean((prior.reconstruct(c).data - c) ** 2) for c in clips]
    return float(np.mean(errs))


def ensure_frozen(prior: MotionPrior) -> None:
    if not prior.frozen:
        raise FrozenModelError(f"{prior.part.value} prior must be frozen")
