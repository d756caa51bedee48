"""Contrastive pretraining over augmented view pairs (stage one).

A batch of N source images becomes 2N views; rows 2m and 2m+1 of the
projected feature matrix are the positive pair for source m, and every
other row in the batch is a negative. The loss is the normalized
temperature-scaled cross entropy averaged over all 2N ordered positive
pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .augment import AugmentConfig, make_view_pair
from .checkpoint import load_checkpoint
from .encoder import EncoderConfig, ProjectionHead, encode, init_encoder, init_projection, project
from .optim import adam_step, init_adam
from .params import merge, param_list
from .rng import make_rng
from .tensor import (
    NEG_INF,
    Tape,
    Tensor,
    backward,
    div,
    log_softmax_rows,
    matmul,
    mul,
    scale,
    sqrt,
    tsum,
    transpose2d,
    zero_grads,
)


@dataclass
class ContrastiveConfig:
    batch_size: int = 64
    temperature: float = 0.5
    epochs: int = 200
    lr: float = 1e-3
    projection_dim: int = 64
    warm_start_checkpoint: str | None = None
    warm_start_epochs: int = 100

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 0 or self.warm_start_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.projection_dim < 1:
            raise ValueError("projection_dim must be positive")


def cosine_sim(u: Tensor, v: Tensor) -> Tensor:
    """u.v / (|u||v|), differentiable; rejects zero-norm inputs."""
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"cosine_sim expects equal-length vectors, got {u.shape} and {v.shape}")
    if np.linalg.norm(u.data) == 0.0 or np.linalg.norm(v.data) == 0.0:
        raise ValueError("cosine_sim undefined for zero-norm vectors")
    dot = tsum(mul(u, v))
    nu = sqrt(tsum(mul(u, u)))
    nv = sqrt(tsum(mul(v, v)))
    return div(dot, mul(nu, nv))


def nt_xent_loss(z: Tensor, temperature: float) -> Tensor:
    """Mean contrastive loss over all ordered positive pairs in the batch.

    ``z`` is [2N, d] with interleaved pairs. Each row's denominator ranges
    over every other row of the batch (2N-1 terms including its positive).
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if z.ndim != 2 or z.shape[0] % 2 != 0 or z.shape[0] < 2:
        raise ValueError(f"z must be [2N, d] with N >= 1, got {z.shape}")
    n2 = z.shape[0]
    norms_np = np.linalg.norm(z.data, axis=1)
    if np.any(norms_np == 0.0):
        raise ValueError("nt_xent_loss undefined for zero-norm rows")

    sq = tsum(mul(z, z), axis=1, keepdims=True)
    zn = div(z, sqrt(sq))
    sims = matmul(zn, transpose2d(zn))
    logits = scale(sims, 1.0 / temperature)
    # keep k != i: additive mask removes the diagonal from every row's
    # normalization (exp underflows to exactly zero)
    diag_mask = Tensor(np.diag(np.full(n2, NEG_INF)))
    logp = log_softmax_rows(logits + diag_mask)

    pair_idx = np.arange(n2) ^ 1  # 2m <-> 2m+1
    pair_mask = np.zeros((n2, n2))
    pair_mask[np.arange(n2), pair_idx] = 1.0
    picked = tsum(mul(logp, Tensor(pair_mask)))
    return scale(picked, -1.0 / n2)


def init_pretrain_params(enc_cfg: EncoderConfig, cs_cfg: ContrastiveConfig, seed: int):
    rng = make_rng(seed, 0)
    enc = init_encoder(enc_cfg, rng)
    head = init_projection(enc_cfg.feature_dim, cs_cfg.projection_dim, rng)
    return enc, head


def pretrain(
    images: Sequence[np.ndarray],
    enc_cfg: EncoderConfig,
    aug_cfg: AugmentConfig,
    cs_cfg: ContrastiveConfig,
    seed: int,
) -> tuple[dict[str, Tensor], list[float]]:
    """Train encoder + projection head on unlabeled images.

    Returns the combined parameter dict (encoder plus ``proj.*`` head
    entries) and the per-epoch mean loss history. With a warm-start
    checkpoint the parameters are loaded from it and ``warm_start_epochs``
    are run instead of ``epochs``.
    """
    enc_cfg.validate()
    aug_cfg.validate()
    cs_cfg.validate()
    n = len(images)
    if n < 2 * cs_cfg.batch_size:
        raise ValueError(f"need at least {2 * cs_cfg.batch_size} images, got {n}")
    if aug_cfg.output_size != enc_cfg.input_size:
        raise ValueError(
            f"augmentation output {aug_cfg.output_size} must match encoder input {enc_cfg.input_size}"
        )

    if cs_cfg.warm_start_checkpoint:
        all_params = load_checkpoint(cs_cfg.warm_start_checkpoint)
        enc = {k: v for k, v in all_params.items() if k.startswith("enc.")}
        head = ProjectionHead(w1=all_params["proj.w1"], w2=all_params["proj.w2"])
        epochs = cs_cfg.warm_start_epochs
    else:
        enc, head = init_pretrain_params(enc_cfg, cs_cfg, seed)
        epochs = cs_cfg.epochs

    params = merge(enc, head.named())
    plist = param_list(params)
    state = init_adam(plist, lr=cs_cfg.lr)
    n_batch = cs_cfg.batch_size
    history: list[float] = []

    for epoch in range(epochs):
        order = make_rng(seed, 1, epoch).permutation(n)
        losses = []
        for start in range(0, n - n_batch + 1, n_batch):
            batch_idx = order[start : start + n_batch]
            views = np.empty((2 * n_batch, 3) + enc_cfg.input_size)
            for slot, img_idx in enumerate(batch_idx):
                v1, v2 = make_view_pair(images[img_idx], aug_cfg, make_rng(seed, epoch, int(img_idx)))
                views[2 * slot] = v1
                views[2 * slot + 1] = v2
            zero_grads(plist)
            with Tape() as tape:
                h = encode(Tensor(views), params, enc_cfg)
                z = project(h, head)
                loss = nt_xent_loss(z, cs_cfg.temperature)
            backward(loss, tape)
            adam_step(plist, None, state)
            losses.append(loss.item())
        history.append(float(np.mean(losses)) if losses else float("nan"))
    return params, history


def write_loss_history(history: list[float], path) -> None:
    lines = ["epoch,mean_loss"]
    lines += [f"{i},{v:.17g}" for i, v in enumerate(history)]
    from pathlib import Path

    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("\n".join(lines) + "\n")
