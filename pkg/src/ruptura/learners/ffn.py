"""Small fully connected network (ReLU hidden layers, linear outputs) trained with Adam."""
from __future__ import annotations

import logging
from typing import List, Tuple

import numpy as np

logger = logging.getLogger("ruptura.learners.ffn")

DEFAULT_EPOCHS = 150
DEFAULT_LEARNING_RATE = 0.005
DEFAULT_LAYERS = 2
DEFAULT_WIDTH = 2
DEFAULT_BATCH_SIZE = 64

_BETA1 = 0.9
_BETA2 = 0.999
_EPS = 1e-8


class FeedForwardNet:
    """Dense network ``d -> width x layers -> n_outputs``.

    Weights are Glorot-uniform in ``±sqrt(6 / (fan_in + fan_out))``, biases zero. The loss is
    the mean squared error over every (row, output) entry, so both targets weigh equally.
    """

    def __init__(
        self,
        n_inputs: int,
        n_outputs: int = 2,
        *,
        layers: int = DEFAULT_LAYERS,
        width: int = DEFAULT_WIDTH,
        seed: int = 0,
    ):
        rng = np.random.default_rng(seed)
        sizes = [n_inputs] + [width] * layers + [n_outputs]
        self.weights: List[np.ndarray] = []
        self.biases: List[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def parameters(self) -> List[np.ndarray]:
        """Weights then biases, layer by layer; arrays are updated in place by training."""
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def _forward(self, X: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
        activations = [X]
        pre_activations: List[np.ndarray] = []
        h = X
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre_activations.append(z)
            h = z if i == last else np.maximum(z, 0.0)
            activations.append(h)
        return h, activations, pre_activations

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self._forward(np.asarray(X, dtype=np.float64))[0]

    def loss(self, X: np.ndarray, Y: np.ndarray) -> float:
        diff = self.predict(X) - Y
        return float(np.mean(diff**2))

    def loss_and_gradients(self, X: np.ndarray, Y: np.ndarray) -> Tuple[float, List[np.ndarray]]:
        """Loss and its gradient for each array of :attr:`parameters`, by backpropagation."""
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        out, activations, pre_activations = self._forward(X)
        diff = out - Y
        loss = float(np.mean(diff**2))
        delta = 2.0 * diff / diff.size
        grads_w: List[np.ndarray] = [np.empty(0)] * len(self.weights)
        grads_b: List[np.ndarray] = [np.empty(0)] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = activations[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (pre_activations[i - 1] > 0)
        grads: List[np.ndarray] = []
        for gw, gb in zip(grads_w, grads_b):
            grads.extend((gw, gb))
        return loss, grads

    def fit(
        self,
        X: np.ndarray,
        Y: np.ndarray,
        *,
        epochs: int = DEFAULT_EPOCHS,
        lr: float = DEFAULT_LEARNING_RATE,
        batch_size: int = DEFAULT_BATCH_SIZE,
        seed: int = 0,
    ) -> FeedForwardNet:
        """Mini-batch Adam for a fixed number of epochs; batches reshuffled every epoch."""
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        rng = np.random.default_rng([seed, 1])
        params = self.parameters
        m = [np.zeros_like(p) for p in params]
        v = [np.zeros_like(p) for p in params]
        step = 0
        n = X.shape[0]
        for epoch in range(epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                idx = order[start : start + batch_size]
                _, grads = self.loss_and_gradients(X[idx], Y[idx])
                step += 1
                for p, g, m_i, v_i in zip(params, grads, m, v):
                    m_i *= _BETA1
                    m_i += (1 - _BETA1) * g
                    v_i *= _BETA2
                    v_i += (1 - _BETA2) * g * g
                    m_hat = m_i / (1 - _BETA1**step)
                    v_hat = v_i / (1 - _BETA2**step)
                    p -= lr * m_hat / (np.sqrt(v_hat) + _EPS)
            if logger.isEnabledFor(logging.DEBUG) and (epoch + 1) % 25 == 0:
                logger.debug("epoch %d loss %.6f", epoch + 1, self.loss(X, Y))
        return self

    def __repr__(self) -> str:
        shape = [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]
        return f"FeedForwardNet(shape={shape})"
