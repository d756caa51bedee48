"""Cued-speech hand-shape feature learning and phoneme recognition pipeline.

Three training stages on top of a small tape-based autodiff core:
contrastive pretraining over augmented image pairs, supervised fine-tuning
on a small labeled subset, and a Bi-LSTM + self-attention sequence encoder
trained with CTC. A procedural corpus generator provides images and
sentence sequences with controllable label noise, stream asynchrony, and
appearance pathologies.
"""

from .tensor import Tensor, Tape, backward, tensor_from

__all__ = ["Tensor", "Tape", "backward", "tensor_from"]
__version__ = "0.1.0"
