"""Versioned checkpoint files guarded by the ontology fingerprint."""

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .corpus import Vocab
from .ontology import ontology_from_dict

MAGIC = b"ACTDSTCK"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    state_dict: dict
    config: dict
    ontology: dict
    ontology_hash: str
    vocab: dict
    epoch: int = 0
    step: int = 0
    metrics: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def check_ontology(self, ontology):
        if ontology is not None and ontology.fingerprint() != self.ontology_hash:
            raise CheckpointError(
                "ontology fingerprint mismatch: checkpoint was trained with a different "
                "slot/value layout"
            )

    def build_model(self, ontology=None):
        """Rebuild the model; ``ontology`` defaults to the one stored in the checkpoint."""
        from .training import RunConfig, build_model

        if ontology is None:
            ontology = ontology_from_dict(self.ontology)
        self.check_ontology(ontology)
        model = build_model(RunConfig.from_dict(self.config), Vocab.from_dict(self.vocab), ontology)
        model.load_state_dict(self.state_dict)
        model.eval()
        return model


def save_checkpoint(ckpt, path):
    payload = {
        "state_dict": ckpt.state_dict,
        "config": ckpt.config,
        "ontology": ckpt.ontology,
        "ontology_hash": ckpt.ontology_hash,
        "vocab": ckpt.vocab,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "metrics": ckpt.metrics,
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", ckpt.format_version))
        fh.write(buf.getvalue())
    return path


def load_checkpoint(path, ontology=None):
    """Read a checkpoint; refuses files whose ontology fingerprint differs from ``ontology``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file (bad magic header)")
    (version,) = struct.unpack("<I", raw[len(MAGIC) : len(MAGIC) + 4])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported version {version} (expected {FORMAT_VERSION})")
    try:
        payload = torch.load(io.BytesIO(raw[len(MAGIC) + 4 :]), map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    ckpt = Checkpoint(format_version=version, **payload)
    ckpt.check_ontology(ontology)
    return ckpt
