"""Prior and generator checkpoints in the SGDS container layout, stored at float64."""

from __future__ import annotations

import os
from dataclasses import asdict

import numpy as np

from .data import ContainerError, read_container, write_container
from .generator import GeneratorConfig, GeneratorModel
from .vqvae import MotionPrior, PriorConfig, ensure_frozen

CHECKPOINT_MAGIC = b"SGCK"
_DTYPE = "<f8"


class HashMismatchError(ContainerError):
    pass


def _prior_arrays(prior: MotionPrior, prefix: str) -> list[tuple[str, np.ndarray]]:
    items = sorted(prior.state_dict().items()) + sorted(prior.buffers().items())
    return [(f"{prefix}/{name}", arr) for name, arr in items]


def _prior_header(prior: MotionPrior) -> dict:
    return {"config": asdict(prior.cfg), "fingerprint": prior.fingerprint()}


def _restore_prior(meta: dict, arrays: dict[str, np.ndarray], prefix: str) -> MotionPrior:
    prior = MotionPrior(PriorConfig(**meta["config"]))
    own = {k[len(prefix) + 1 :]: v for k, v in arrays.items() if k.startswith(prefix + "/")}
    buffers = {k: own.pop(k) for k in prior.buffers()}
    prior.load_state_dict(own)
    prior.set_normalization(buffers["norm_mean"], buffers["norm_std"])
    prior.freeze()
    if prior.fingerprint() != meta["fingerprint"]:
        raise HashMismatchError(f"{prefix}: restored parameters do not match the recorded fingerprint")
    return prior


def save_prior(prior: MotionPrior, path: str | os.PathLike) -> str:
    """Write a frozen prior; returns its fingerprint."""
    ensure_frozen(prior)
    header = {"kind": "prior", "prior": _prior_header(prior)}
    write_container(path, CHECKPOINT_MAGIC, header, _prior_arrays(prior, "prior"), dtype=_DTYPE)
    return prior.fingerprint()


def load_prior(path: str | os.PathLike) -> MotionPrior:
    header, arrays = read_container(path, CHECKPOINT_MAGIC)
    if header.get("kind") != "prior":
        raise ContainerError(f"checkpoint holds {header.get('kind')!r}, not a prior")
    return _restore_prior(header["prior"], arrays, "prior")


def save_generator(model: GeneratorModel, path: str | os.PathLike) -> str:
    """Write a generator together with copies of both frozen priors it decodes through."""
    header = {
        "kind": "generator",
        "config": asdict(model.cfg),
        "fingerprint": model.fingerprint(),
        "priors": {"hands": _prior_header(model.hands), "body": _prior_header(model.body)},
    }
    arrays = (
        [(f"gen/{n}", a) for n, a in sorted(model.state_dict().items())]
        + _prior_arrays(model.hands, "hands")
        + _prior_arrays(model.body, "body")
    )
    write_container(path, CHECKPOINT_MAGIC, header, arrays, dtype=_DTYPE)
    return header["fingerprint"]


def load_generator(
    path: str | os.PathLike,
    hands: MotionPrior | None = None,
    body: MotionPrior | None = None,
) -> GeneratorModel:
    """Restore a generator; priors passed in must match the embedded fingerprints."""
    header, arrays = read_container(path, CHECKPOINT_MAGIC)
    if header.get("kind") != "generator":
        raise ContainerError(f"checkpoint holds {header.get('kind')!r}, not a generator")
    metas = header["priors"]
    for name, given in (("hands", hands), ("body", body)):
        if given is not None and given.fingerprint() != metas[name]["fingerprint"]:
            raise HashMismatchError(f"{name} prior does not match the one this generator was trained with")
    hands = hands or _restore_prior(metas["hands"], arrays, "hands")
    body = body or _restore_prior(metas["body"], arrays, "body")
    cfg = dict(header["config"])
    cfg["weights"] = tuple(cfg["weights"])
    model = GeneratorModel(GeneratorConfig(**cfg), hands, body)
    model.load_state_dict({k[4:]: v for k, v in arrays.items() if k.startswith("gen/")})
    if model.fingerprint() != header["fingerprint"]:
        raise HashMismatchError("restored generator does not match the recorded fingerprint")
    return model
