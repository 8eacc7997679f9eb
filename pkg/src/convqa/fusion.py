"""Multimodal convolution: fusing question segments with the image vector.

The mapped image vector is treated as one semantic component and slotted
between every pair of consecutive question segments.  A shared convolution
unit scores each interleaved window, and a per-feature max over window
positions reduces the candidates to the single joint representation fed to
the classifier.  The parameter-free concatenation variant used for ablation
lives here too.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .layers import activation_pair
from .numeric import as_tensor

WINDOW_SEGMENTS = 3  # question segment, image vector, next question segment


@dataclass
class MultimodalConvParams:
    weights: np.ndarray  # (fusion_maps, 3 * joint_dim)
    biases: np.ndarray   # (fusion_maps,)
    activation: str = "relu"

    def __post_init__(self):
        self.weights = as_tensor(self.weights)
        self.biases = as_tensor(self.biases)
        if self.weights.ndim != 2 or self.biases.ndim != 1:
            raise ShapeError("fusion params: weights must be a matrix and biases a vector")
        if self.biases.shape[0] != self.weights.shape[0]:
            raise ShapeError(
                f"fusion params: {self.weights.shape[0]} feature maps but "
                f"{self.biases.shape[0]} biases"
            )
        if self.weights.shape[1] % WINDOW_SEGMENTS:
            raise ShapeError(
                f"fusion params: weight columns {self.weights.shape[1]} not divisible "
                f"by {WINDOW_SEGMENTS}"
            )
        activation_pair(self.activation)

    @property
    def fusion_maps(self) -> int:
        return self.weights.shape[0]

    @property
    def joint_dim(self) -> int:
        return self.weights.shape[1] // WINDOW_SEGMENTS


def _check_dims(qt: np.ndarray, image_vec: np.ndarray, dim: int):
    if qt.ndim != 2 or image_vec.ndim != 1:
        raise ShapeError(
            f"fusion: question segments must be (positions, dim) and the image "
            f"a vector, got {qt.shape} and {image_vec.shape}"
        )
    if qt.shape[1] != dim or image_vec.shape[0] != dim:
        raise ShapeError(
            f"fusion: question dim {qt.shape[1]} and image dim "
            f"{image_vec.shape[0]} must both equal {dim}"
        )


def fuse_forward(qt: np.ndarray, image_vec: np.ndarray, params: MultimodalConvParams):
    """Interleaved convolution then per-feature max over window positions.

    (P, d) question segments and a (d,) image vector give P - 1 windows
    ``[qt_i | image | qt_{i+1}]`` and a (fusion_maps,) joint vector.
    """
    qt = as_tensor(qt)
    image_vec = as_tensor(image_vec)
    _check_dims(qt, image_vec, params.joint_dim)
    positions = qt.shape[0]
    if positions < 2:
        raise ValueError(
            f"fusion needs at least 2 question segments, got {positions}"
        )
    windows = positions - 1
    tiled = np.broadcast_to(image_vec, (windows, image_vec.shape[0]))
    inputs = np.concatenate([qt[:-1], tiled, qt[1:]], axis=1)  # (windows, 3d)
    act, _ = activation_pair(params.activation)
    activations = act(inputs @ params.weights.T + params.biases)  # (windows, F)
    winner = activations.argmax(axis=0)  # earlier window wins ties
    out = activations[winner, np.arange(params.fusion_maps)]
    cache = (inputs, activations, winner, qt.shape, params)
    return out, cache


def fuse_backward(grad_out: np.ndarray, cache):
    """Returns (grad_qt, grad_image, grad_weights, grad_biases)."""
    inputs, activations, winner, qt_shape, params = cache
    _, act_grad = activation_pair(params.activation)
    windows, maps = activations.shape
    d_act = np.zeros((windows, maps))
    d_act[winner, np.arange(maps)] = as_tensor(grad_out)
    d_pre = d_act * act_grad(activations)
    grad_w = d_pre.T @ inputs
    grad_b = d_pre.sum(axis=0)
    grad_inputs = d_pre @ params.weights  # (windows, 3d)
    dim = params.joint_dim
    grad_qt = np.zeros(qt_shape)
    grad_qt[:-1] += grad_inputs[:, :dim]
    grad_qt[1:] += grad_inputs[:, 2 * dim:]
    grad_image = grad_inputs[:, dim:2 * dim].sum(axis=0)
    return grad_qt, grad_image, grad_w, grad_b


# -- position pooling and the concatenation ablation ---------------------------

def pool_positions_forward(qt: np.ndarray):
    """Per-feature max over question segments: (P, d) -> (d,)."""
    qt = as_tensor(qt)
    if qt.ndim != 2 or qt.shape[0] < 1:
        raise ValueError(f"pooling needs a non-empty (positions, dim) array, got shape {qt.shape}")
    winner = qt.argmax(axis=0)
    pooled = qt[winner, np.arange(qt.shape[1])]
    return pooled, (qt.shape, winner)


def pool_positions_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    qt_shape, winner = cache
    grad_qt = np.zeros(qt_shape)
    grad_qt[winner, np.arange(qt_shape[1])] = as_tensor(grad_out)
    return grad_qt


def fuse_concat_forward(qt: np.ndarray, image_vec: np.ndarray):
    """Parameter-free ablation: pooled question segments joined with the image.

    Output length is always 2d.  A single question segment (P = 1) is allowed
    here since no consecutive pairs are needed.
    """
    qt = as_tensor(qt)
    image_vec = as_tensor(image_vec)
    if qt.ndim != 2 or image_vec.ndim != 1 or qt.shape[1] != image_vec.shape[0]:
        raise ShapeError(
            f"concat fusion: question segments {qt.shape} and image "
            f"{image_vec.shape} must share their feature dimension"
        )
    pooled, pool_cache = pool_positions_forward(qt)
    out = np.concatenate([pooled, image_vec])
    return out, (pool_cache, image_vec.shape[0])


def fuse_concat_backward(grad_out: np.ndarray, cache):
    """Returns (grad_qt, grad_image)."""
    pool_cache, dim = cache
    grad_out = as_tensor(grad_out)
    grad_qt = pool_positions_backward(grad_out[:-dim], pool_cache)
    return grad_qt, grad_out[-dim:].copy()
