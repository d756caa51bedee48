"""Supervised fine-tuning on a small annotated subset (stage two).

The projection head from pretraining is discarded; a two-layer classifier
is trained on encoder features with cross entropy. By default the encoder
stays frozen and acts as a fixed feature extractor, which also lets the
loop cache features once instead of re-encoding every epoch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import params as P
from .encoder import EncoderConfig, encode
from .optim import adam_step, init_adam
from .params import merge, param_list
from .rng import make_rng
from .tensor import Tape, Tensor, backward, cross_entropy, linear, relu, zero_grads

NUM_HAND_SHAPES = 8


@dataclass
class ClassifierHead:
    fc1_w: Tensor
    fc1_b: Tensor
    fc2_w: Tensor
    fc2_b: Tensor

    def named(self, prefix: str = "cls.") -> dict[str, Tensor]:
        return {
            prefix + "fc1.w": self.fc1_w,
            prefix + "fc1.b": self.fc1_b,
            prefix + "fc2.w": self.fc2_w,
            prefix + "fc2.b": self.fc2_b,
        }

    @staticmethod
    def from_params(params: dict[str, Tensor], prefix: str = "cls.") -> "ClassifierHead":
        return ClassifierHead(
            fc1_w=params[prefix + "fc1.w"],
            fc1_b=params[prefix + "fc1.b"],
            fc2_w=params[prefix + "fc2.w"],
            fc2_b=params[prefix + "fc2.b"],
        )


@dataclass
class FinetuneConfig:
    labeled_fraction: float = 0.10
    epochs: int = 60
    lr: float = 1e-4
    freeze_encoder: bool = True
    hidden_dim: int = 64
    batch_size: int = 32
    num_classes: int = NUM_HAND_SHAPES

    def validate(self) -> None:
        if not (0 < self.labeled_fraction <= 1):
            raise ValueError(f"labeled_fraction must be in (0,1], got {self.labeled_fraction}")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.lr <= 0 or self.hidden_dim < 1 or self.batch_size < 1 or self.num_classes < 2:
            raise ValueError("invalid fine-tune hyperparameters")


def init_classifier(feature_dim: int, cfg: FinetuneConfig, rng: np.random.Generator) -> ClassifierHead:
    return ClassifierHead(
        fc1_w=P.he_normal(rng, (feature_dim, cfg.hidden_dim), feature_dim),
        fc1_b=P.zeros((cfg.hidden_dim,)),
        fc2_w=P.he_normal(rng, (cfg.hidden_dim, cfg.num_classes), cfg.hidden_dim),
        fc2_b=P.zeros((cfg.num_classes,)),
    )


def select_annotated_subset(labels: Sequence[int], fraction: float, rng: np.random.Generator) -> list[int]:
    """Stratified index selection: round(fraction * count) per class, min 1.

    With fraction 1.0 this returns every index. Classes are processed in
    ascending order and draws are seeded, so the result is deterministic.
    """
    if not (0 < fraction <= 1):
        raise ValueError(f"fraction must be in (0,1], got {fraction}")
    labels = np.asarray(labels)
    picked: list[int] = []
    for cls in sorted(set(int(c) for c in labels)):
        idx = np.flatnonzero(labels == cls)
        if idx.size == 0:
            raise ValueError(f"class {cls} has no examples")
        k = max(1, int(round(fraction * idx.size)))
        order = rng.permutation(idx.size)
        picked.extend(int(idx[o]) for o in order[:k])
    return sorted(picked)


def classify(h: Tensor, head: ClassifierHead) -> Tensor:
    """logits = FC2 . relu(FC1 . h + b1) + b2 for [D] or [B,D] features."""
    squeeze = h.ndim == 1
    if squeeze:
        from .tensor import reshape

        h = reshape(h, (1, h.shape[0]))
    if h.shape[1] != head.fc1_w.shape[0]:
        raise ValueError(f"feature size {h.shape[1]} does not match classifier input {head.fc1_w.shape[0]}")
    logits = linear(relu(linear(h, head.fc1_w, head.fc1_b)), head.fc2_w, head.fc2_b)
    if squeeze:
        from .tensor import reshape

        logits = reshape(logits, (logits.shape[1],))
    return logits


def extract_feature(img: np.ndarray, enc_params: dict[str, Tensor], enc_cfg: EncoderConfig) -> Tensor:
    """Pure inference through the encoder, no augmentation, no taping."""
    return encode(Tensor(np.asarray(img, dtype=np.float64)), enc_params, enc_cfg)


def extract_features_batch(imgs: np.ndarray, enc_params: dict[str, Tensor], enc_cfg: EncoderConfig) -> np.ndarray:
    return encode(Tensor(np.asarray(imgs, dtype=np.float64)), enc_params, enc_cfg).data


def finetune(
    pretrained: dict[str, Tensor],
    subset_images: Sequence[np.ndarray],
    subset_labels: Sequence[int],
    enc_cfg: EncoderConfig,
    cfg: FinetuneConfig,
    seed: int,
) -> tuple[dict[str, Tensor], list[float]]:
    """Train the classifier head (and optionally the encoder) on the subset.

    Returns the combined parameter dict (``enc.*`` plus ``cls.*``; any
    pretraining projection head entries are dropped) and the per-epoch
    subset accuracy history.
    """
    enc_cfg.validate()
    cfg.validate()
    if len(subset_images) != len(subset_labels) or not subset_images:
        raise ValueError("subset images and labels must be nonempty and aligned")
    labels = np.asarray(subset_labels, dtype=np.intp)
    if labels.min() < 0 or labels.max() >= cfg.num_classes:
        raise ValueError(f"labels must be in [0,{cfg.num_classes})")
    enc = {k: v for k, v in pretrained.items() if k.startswith("enc.")}
    if not enc:
        raise ValueError("pretrained checkpoint holds no encoder parameters")
    probe = np.asarray(subset_images[0])
    if probe.shape != (3, *enc_cfg.input_size):
        raise ValueError(f"image shape {probe.shape} does not match encoder config {enc_cfg.input_size}")

    head = init_classifier(enc_cfg.feature_dim, cfg, make_rng(seed, 2))
    params = merge(enc, head.named())
    n = len(subset_images)
    stack = np.stack([np.asarray(im, dtype=np.float64) for im in subset_images])

    if cfg.freeze_encoder:
        feats = extract_features_batch(stack, enc, enc_cfg)  # cached once
        trainable = param_list(head.named())
    else:
        feats = None
        trainable = param_list(params)
    state = init_adam(trainable, lr=cfg.lr)

    history: list[float] = []
    for epoch in range(cfg.epochs):
        order = make_rng(seed, 3, epoch).permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            zero_grads(trainable)
            with Tape() as tape:
                if feats is not None:
                    h = Tensor(feats[idx])
                else:
                    h = encode(Tensor(stack[idx]), enc, enc_cfg)
                loss = cross_entropy(classify(h, head), labels[idx])
            backward(loss, tape)
            adam_step(trainable, None, state)
        if feats is not None:
            logits = classify(Tensor(feats), head).data
        else:
            logits = classify(encode(Tensor(stack), enc, enc_cfg), head).data
        history.append(float((logits.argmax(axis=1) == labels).mean()))
    return params, history


def write_accuracy_history(history: list[float], path) -> None:
    from pathlib import Path

    lines = ["epoch,subset_accuracy"]
    lines += [f"{i},{v:.17g}" for i, v in enumerate(history)]
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("\n".join(lines) + "\n")
