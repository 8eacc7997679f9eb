"""Image feature ingestion and the trainable nonlinear image mapping.

Image content arrives as precomputed fixed-length feature vectors (4096-d by
default, matching the last fully-connected output of a frozen image network).
The only trainable part on the image side is a dense nonlinear map that
projects those features down to the joint dimension; gradients never flow
into the stored features themselves.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import DuplicateIdError, ParseError, ShapeError
from .layers import DenseParams, dense_backward, dense_forward
from .numeric import as_tensor, read_tensor, write_tensor


class ImageFeatureStore:
    """Read-only-after-load map from image id to feature vector."""

    def __init__(self, feature_dim: int):
        if feature_dim < 1:
            raise ShapeError(f"feature_dim must be positive, got {feature_dim}")
        self.feature_dim = int(feature_dim)
        self._features: dict[str, np.ndarray] = {}

    def add(self, image_id: str, vector) -> None:
        if image_id in self._features:
            raise DuplicateIdError(f"duplicate image id {image_id!r}")
        vec = as_tensor(vector)
        if vec.shape != (self.feature_dim,):
            raise ShapeError(
                f"feature for {image_id!r} has shape {vec.shape}, "
                f"expected ({self.feature_dim},)"
            )
        self._features[image_id] = vec

    def get(self, image_id: str) -> np.ndarray:
        try:
            return self._features[image_id]
        except KeyError:
            raise KeyError(f"unknown image id {image_id!r}") from None

    def ids(self) -> list[str]:
        return list(self._features)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._features

    def __len__(self) -> int:
        return len(self._features)


def load_features(path) -> ImageFeatureStore:
    """Parse the tab-separated feature format: ``image_id<TAB>v1,v2,...,vD``."""
    store: ImageFeatureStore | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                raise ParseError(f"{path}:{lineno}: expected 'image_id<TAB>values'")
            image_id, payload = parts
            try:
                values = np.array([float(v) for v in payload.split(",")])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad feature value ({exc})") from None
            if store is None:
                store = ImageFeatureStore(values.shape[0])
            if values.shape[0] != store.feature_dim:
                raise ShapeError(
                    f"{path}:{lineno}: record has {values.shape[0]} values, "
                    f"expected {store.feature_dim}"
                )
            try:
                store.add(image_id, values)
            except DuplicateIdError:
                raise DuplicateIdError(
                    f"{path}:{lineno}: duplicate image id {image_id!r}"
                ) from None
    if store is None:
        raise ParseError(f"{path}: no feature records found")
    return store


def save_features(store: ImageFeatureStore, path) -> None:
    """Write the tab-separated format; floats use round-trip-exact repr."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_id in store.ids():
            values = ",".join(repr(float(v)) for v in store.get(image_id))
            fh.write(f"{image_id}\t{values}\n")


_BINARY_MAGIC = b"CQFB"


def save_features_binary(store: ImageFeatureStore, path) -> None:
    """Binary variant: id table followed by one tensor block per id."""
    ids = store.ids()
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(struct.pack("<I", len(ids)))
        for image_id in ids:
            raw = image_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        for image_id in ids:
            write_tensor(fh, store.get(image_id))


def load_features_binary(path) -> ImageFeatureStore:
    with open(path, "rb") as fh:
        if fh.read(4) != _BINARY_MAGIC:
            raise ParseError(f"{path}: not a binary feature file")
        count = struct.unpack("<I", fh.read(4))[0]
        ids = []
        for _ in range(count):
            n = struct.unpack("<I", fh.read(4))[0]
            ids.append(fh.read(n).decode("utf-8"))
        store: ImageFeatureStore | None = None
        for image_id in ids:
            vec = read_tensor(fh)
            if vec.ndim != 1:
                raise ParseError(f"{path}: feature for {image_id!r} is not a vector")
            if store is None:
                store = ImageFeatureStore(vec.shape[0])
            store.add(image_id, vec)
    if store is None:
        raise ParseError(f"{path}: no feature records found")
    return store


def map_image_forward(feature: np.ndarray, params: DenseParams):
    """Nonlinear projection of a raw image feature to the joint dimension."""
    return dense_forward(feature, params)


def map_image_backward(grad_out: np.ndarray, cache):
    """Returns (grad_weights, grad_bias); the stored feature is frozen."""
    _, grad_w, grad_b = dense_backward(grad_out, cache)
    return grad_w, grad_b
