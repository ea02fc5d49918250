"""Built-in desk-scale classifiers returning raw logits."""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from ._validation import check_finite_array
from .exceptions import InvalidInputError, ShapeError
from .io import read_mlp_weights

__all__ = ["Classifier", "LinearSoftmax", "TinyMlp", "load_tiny_mlp", "toy_linear_classifier"]


class Classifier:
    """Anything mapping a batch of flattened inputs to a batch of logits."""

    n_classes: int
    input_dim: int

    def predict_logits(self, X):
        raise NotImplementedError

    def predict(self, X):
        """Top-1 labels; ties go to the lowest class index."""
        return np.argmax(self.predict_logits(X), axis=1)

    def _flatten(self, X):
        X = np.asarray(X, dtype=float)
        X = X.reshape(1, -1) if X.ndim == 1 else X.reshape(len(X), -1)
        if X.shape[1] != self.input_dim:
            raise ShapeError(f"expected inputs of dimension {self.input_dim}, got {X.shape[1]}")
        return X


class LinearSoftmax(Classifier):
    """Affine classifier ``y = W x + b``; the softmax is left to the losses."""

    def __init__(self, weights, bias=None):
        self.weights = check_finite_array(weights, "weights", ndim=2)
        k, d = self.weights.shape
        if k < 2:
            raise InvalidInputError("a classifier needs at least two classes")
        self.bias = np.zeros(k) if bias is None else check_finite_array(bias, "bias", ndim=1)
        if self.bias.shape != (k,):
            raise ShapeError(f"bias must have shape ({k},), got {self.bias.shape}")
        self.n_classes, self.input_dim = k, d

    def predict_logits(self, X):
        return self._flatten(X) @ self.weights.T + self.bias


class TinyMlp(Classifier):
    """Two-layer perceptron: affine, ReLU, affine."""

    def __init__(self, w1, b1, w2, b2):
        self.w1 = check_finite_array(w1, "w1", ndim=2)
        self.b1 = check_finite_array(b1, "b1", ndim=1)
        self.w2 = check_finite_array(w2, "w2", ndim=2)
        self.b2 = check_finite_array(b2, "b2", ndim=1)
        hidden, d = self.w1.shape
        k = self.w2.shape[0]
        if self.b1.shape != (hidden,) or self.w2.shape != (k, hidden) or self.b2.shape != (k,):
            raise ShapeError("inconsistent MLP weight shapes")
        if k < 2:
            raise InvalidInputError("a classifier needs at least two classes")
        self.n_classes, self.input_dim, self.hidden = k, d, hidden

    def predict_logits(self, X):
        hidden = np.maximum(self._flatten(X) @ self.w1.T + self.b1, 0.0)
        return hidden @ self.w2.T + self.b2


def load_tiny_mlp(path):
    return TinyMlp(*read_mlp_weights(path))


def toy_linear_classifier():
    """The fixed 4-class linear classifier on 1x4x4 images used by the toy campaigns."""
    text = resources.files("consensus_attack.data").joinpath("toy_linear.json").read_text()
    data = json.loads(text)
    return LinearSoftmax(np.array(data["weights"]), np.array(data["bias"]))
