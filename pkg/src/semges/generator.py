"""Stage 2: cross-modal fusion of audio, speaker identity and text semantics."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .core import Adam, AttentionBlock, Conv1d, Linear, Module, NonFiniteError, ShapeError, Tensor, no_grad
from .core import functional as F
from .data import AUDIO_DIM, TEXT_DIM, Dataset, FeatureBundle, Part, Sample
from .semantic import DEFAULT_ALPHA, SemanticEncoder, coherence_loss, relevance_loss
from .vqvae import MotionPrior, TrainingDivergedError, _batches, ensure_frozen, nearest_indices

log = logging.getLogger(__name__)

LOSS_COMPONENTS = ("coherence", "relevance", "quantization")


class UnknownSpeakerError(KeyError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    n_speakers: int
    audio_dim: int = AUDIO_DIM
    text_dim: int = TEXT_DIM
    speaker_dim: int = 16
    model_dim: int = 64
    semantic_hidden: int = 64
    heads: int = 1
    alpha: float = DEFAULT_ALPHA
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    contrastive: bool = False

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.contrastive:
            raise NotImplementedError("contrastive coherence variant is reserved, not implemented")
        if self.n_speakers < 1:
            raise ValueError("n_speakers must be positive")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class SpeakerTable(Module):
    def __init__(self, n_speakers: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.param("embeddings", rng.normal(0.0, 1.0, size=(n_speakers, dim)))

    @property
    def n_speakers(self) -> int:
        return self.embeddings.shape[0]

    def __call__(self, speaker_id: int) -> Tensor:
        if not 0 <= speaker_id < self.n_speakers:
            raise UnknownSpeakerError(f"speaker_id {speaker_id} outside [0, {self.n_speakers})")
        return self.embeddings[speaker_id : speaker_id + 1]


class Fused(NamedTuple):
    z_fused: Tensor
    z_sem: Tensor


@dataclass
class ClipOutput:
    """Decoded motion for one clip with the code indices that produced it."""

    motion: Tensor
    hands: Tensor
    body: Tensor
    indices: dict[str, np.ndarray]


class GeneratorModel(Module):
    """Fuses conditioning streams into a latent code decoded by two frozen priors."""

    def __init__(self, cfg: GeneratorConfig, hands: MotionPrior, body: MotionPrior, seed: int = 0):
        super().__init__()
        for prior, part in ((hands, Part.HANDS), (body, Part.BODY)):
            ensure_frozen(prior)
            if prior.part is not part:
                raise ValueError(f"expected a {part.value} prior, got {prior.part.value}")
        if hands.cfg.latent_dim != body.cfg.latent_dim or hands.cfg.downsample != body.cfg.downsample:
            raise ValueError("hand and body priors must share latent width and downsampling")
        self.cfg = cfg
        self.priors = {Part.HANDS: hands, Part.BODY: body}
        d_z, r, d_m = hands.cfg.latent_dim, hands.cfg.downsample, cfg.model_dim
        rng = np.random.default_rng(seed)
        self.speakers = SpeakerTable(cfg.n_speakers, cfg.speaker_dim, rng)
        self.audio_proj = Conv1d(cfg.audio_dim, d_m, rng, stride=r)
        self.speaker_proj = Linear(cfg.speaker_dim, d_m, rng)
        self.merge = Linear(2 * d_m, d_m, rng)
        self.self_attn = AttentionBlock(d_m, rng, heads=cfg.heads)
        self.sem_proj = Linear(d_z, d_m, rng)
        self.cross_attn = AttentionBlock(d_m, rng, heads=cfg.heads)
        self.out_proj = Linear(d_m, d_z, rng)
        self.semantic = SemanticEncoder(cfg.text_dim, d_z, cfg.semantic_hidden, r, seed=seed + 1)

    @property
    def hands(self) -> MotionPrior:
        return self.priors[Part.HANDS]

    @property
    def body(self) -> MotionPrior:
        return self.priors[Part.BODY]

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.cfg.to_json().encode())
        h.update(self.hands.fingerprint().encode())
        h.update(self.body.fingerprint().encode())
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    def _check(self, bundle: FeatureBundle) -> None:
        if bundle.audio.shape[1] != self.cfg.audio_dim or bundle.text.shape[1] != self.cfg.text_dim:
            raise ShapeError(
                f"bundle dims ({bundle.audio.shape[1]}, {bundle.text.shape[1]}) != "
                f"({self.cfg.audio_dim}, {self.cfg.text_dim})"
            )

    def encode_semantics(self, bundle: FeatureBundle) -> Tensor:
        self._check(bundle)
        return self.semantic(bundle.text)

    def fuse(self, bundle: FeatureBundle, z_sem: Tensor | None = None) -> Fused:
        self._check(bundle)
        spk = self.speakers(bundle.speaker_id)
        z_sem = self.semantic(bundle.text) if z_sem is None else z_sem
        audio = self.audio_proj(Tensor(bundle.audio))
        ident = F.repeat_rows(self.speaker_proj(spk), audio.shape[0])
        z_r = self.self_attn(self.merge(F.concat([audio, ident], axis=1)))
        z_f = self.out_proj(self.cross_attn(z_r, context=self.sem_proj(z_sem)))
        return Fused(z_f, z_sem)

    def decode(self, z_fused: Tensor, frames: int) -> ClipOutput:
        qh = quantize_frozen(self.hands, z_fused)
        qb = quantize_frozen(self.body, z_fused)
        g_h = self.hands.decode(qh[0], frames)
        g_b = self.body.decode(qb[0], frames)
        return ClipOutput(F.concat([g_h, g_b], axis=1), g_h, g_b, {"hands": qh[1], "body": qb[1]})


def quantize_frozen(prior: MotionPrior, latents: Tensor) -> tuple[Tensor, np.ndarray]:
    """Quantize against a frozen codebook; gradient passes straight through to ``latents``."""
    ensure_frozen(prior)
    q = prior.quantize(latents)
    return q.codes, q.indices


def fuse(model: GeneratorModel, bundle: FeatureBundle) -> Tensor:
    return model.fuse(bundle).z_fused


def quantization_consistency_loss(
    z_fused: Tensor, z_hands, z_body, priors: dict[Part, MotionPrior] | Sequence[MotionPrior]
) -> Tensor:
    """Mean squared distance between the fused code's and the ground truth's quantizations.

    The ground-truth side is a constant target; gradient reaches ``z_fused``
    via the straight-through estimator only.
    """
    if not isinstance(priors, dict):
        priors = {Part.HANDS: priors[0], Part.BODY: priors[1]}
    total = None
    for part, target in ((Part.HANDS, z_hands), (Part.BODY, z_body)):
        prior = priors[part]
        target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
        if z_fused.shape != target.shape or z_fused.shape[1] != prior.codebook.dim:
            raise ShapeError(
                f"{part.value}: fused {z_fused.shape}, target {target.shape}, "
                f"codebook width {prior.codebook.dim}"
            )
        codes, _ = quantize_frozen(prior, z_fused)
        entries = prior.codebook.entries.data
        target_codes = entries[nearest_indices(entries, target)]
        term = F.mean(F.square(codes - target_codes))
        total = term if total is None else total + term
    return total


def generate_clip(model: GeneratorModel, bundle: FeatureBundle) -> ClipOutput:
    """``D_h(Quant_h(Z_f)) (+) D_b(Quant_b(Z_f))`` as ``[T, 282]``."""
    return model.decode(model.fuse(bundle).z_fused, bundle.frames)


class Stage2Loss(NamedTuple):
    total: Tensor
    components: dict[str, float]


def combined_loss(
    model: GeneratorModel,
    batch: Sequence[Sample],
    use_coherence: bool = True,
    use_relevance: bool = True,
) -> Stage2Loss:
    """Weighted sum of the enabled terms, averaged over the batch.

    All three components are always reported; disabled ones do not enter
    ``total``.
    """
    if not batch:
        raise ValueError("empty batch")
    w_coh, w_rel, w_q = model.cfg.weights
    total = None
    comps = dict.fromkeys(LOSS_COMPONENTS, 0.0)
    for s in batch:
        f = s.features
        if use_relevance and f.relevance is None:
            raise ValueError(f"clip {s.clip_id} has no relevance annotations")
        with no_grad():
            z_h = model.hands.encode(s.hands)
            z_b = model.body.encode(s.body)
        fused = model.fuse(f)
        out = model.decode(fused.z_fused, s.frames)
        terms = {
            "coherence": coherence_loss(z_h, z_b, fused.z_sem),
            "quantization": quantization_consistency_loss(fused.z_fused, z_h, z_b, model.priors),
        }
        if f.relevance is not None:
            terms["relevance"] = relevance_loss(s.motion(), out.motion, f.relevance, model.cfg.alpha)
        clip_total = None
        for name, weight, enabled in (
            ("coherence", w_coh, use_coherence),
            ("relevance", w_rel, use_relevance),
            ("quantization", w_q, True),
        ):
            if name in terms:
                comps[name] += terms[name].item() / len(batch)
            if enabled:
                t = terms[name] * weight
                clip_total = t if clip_total is None else clip_total + t
        total = clip_total if total is None else total + clip_total
    return Stage2Loss(total * (1.0 / len(batch)), comps)


@dataclass
class Stage2Config:
    steps: int = 300
    batch_size: int = 4
    lr: float = 1e-3
    use_coherence: bool = True
    use_relevance: bool = True
    model: dict = field(default_factory=dict)


@dataclass
class Stage2Result:
    model: GeneratorModel
    log: list[dict[str, float]]


def train_stage2(
    dataset: Dataset,
    hands: MotionPrior,
    body: MotionPrior,
    hyperparams: Stage2Config | None = None,
    seed: int = 0,
) -> Stage2Result:
    hp = hyperparams or Stage2Config()
    train = dataset.split("train")
    if not train:
        raise ValueError("train split is empty")
    m = dataset.manifest
    if hp.use_relevance and not m.has_relevance:
        raise ValueError("relevance loss requested but the dataset has no relevance annotations")
    cfg = GeneratorConfig(
        n_speakers=m.n_speakers, audio_dim=m.audio_dim, text_dim=m.text_dim, **hp.model
    )
    model = GeneratorModel(cfg, hands, body, seed=seed)
    opt = Adam(model.parameters(), lr=hp.lr)
    rng = np.random.default_rng(seed + 1)
    batches = _batches(len(train), min(hp.batch_size, len(train)), rng)
    history = []
    for step in range(hp.steps):
        batch = [train[i] for i in next(batches)]
        opt.zero_grad()
        try:
            loss = combined_loss(model, batch, hp.use_coherence, hp.use_relevance)
            loss.total.backward()
            opt.step()
        except NonFiniteError as exc:
            raise TrainingDivergedError(step, str(exc)) from None
        record = {"step": step, "total": loss.total.item(), **loss.components}
        history.append(record)
        if step % 50 == 0 or step == hp.steps - 1:
            log.info("stage2 step %d loss %.5f", step, record["total"])
    return Stage2Result(model, history)
