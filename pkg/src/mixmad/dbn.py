"""Layerwise abstraction through a stack of frozen RBMs.

Every layer is stored as an :class:`~mixmad.rbm.MvRbm` in the energy
convention of that module, where the upward activation is
``sigmoid(b - v W)``. The upper-layer recursion written as
``sigmoid(b + W' h)`` is the same map with ``W' = -W^T``; the functions here
take care of that sign so callers never see two conventions.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .rbm import MvRbm, hidden_probabilities, sample_hidden


class AbstractionChain:
    """An ordered, append-only stack of trained abstraction RBMs.

    Layer 1 reads the mixed-type records; layer ``l >= 2`` is an all-binary
    RBM whose visible size equals the hidden size of layer ``l - 1``.
    """

    __slots__ = ("_layers",)

    def __init__(self, layers: Iterable[MvRbm] = ()):
        layers = tuple(layers)
        for l in range(1, len(layers)):
            _check_upper(layers[l], layers[l - 1].n_hidden, l + 1)
        self._layers = layers

    @property
    def layers(self) -> tuple:
        return self._layers

    @property
    def layer_sizes(self) -> list:
        return [m.n_hidden for m in self._layers]

    def __len__(self):
        return len(self._layers)

    def __getitem__(self, i) -> MvRbm:
        return self._layers[i]

    def __iter__(self):
        return iter(self._layers)

    def append(self, layer: MvRbm) -> "AbstractionChain":
        """Return a new chain with ``layer`` on top; ``self`` is unchanged."""
        if self._layers:
            _check_upper(layer, self._layers[-1].n_hidden, len(self._layers) + 1)
        return AbstractionChain(self._layers + (layer,))


def _check_upper(layer: MvRbm, n_in: int, level: int) -> None:
    if layer.n_visible != n_in or any(c.kind != "binary" for c in layer.kinds):
        raise ValueError(f"layer {level} must be an all-binary RBM with {n_in} visible units")


def _check_depth(chain: AbstractionChain, depth: int) -> None:
    if not 1 <= depth <= len(chain):
        raise ValueError(f"depth {depth} outside 1..{len(chain)}")


def abstract_stochastic(chain: AbstractionChain, x, depth: int, rng: np.random.Generator) -> np.ndarray:
    """Sample h_depth by drawing Bernoulli hidden states layer by layer."""
    _check_depth(chain, depth)
    h = sample_hidden(chain[0], x, rng)
    for layer in chain.layers[1:depth]:
        h = sample_hidden(layer, h, rng)
    return h


def abstract_deterministic(chain: AbstractionChain, x, depth: int) -> np.ndarray:
    """Mean-field abstraction: hidden probabilities replace samples at every layer."""
    _check_depth(chain, depth)
    h = hidden_probabilities(chain[0], x)
    for layer in chain.layers[1:depth]:
        h = hidden_probabilities(layer, h)
    return h


def abstracted_free_energy(detector: MvRbm, h) -> np.ndarray:
    """Free energy of an abstract representation under a binary detector RBM.

    Written in the top-RBM form ``-c'h - sum_k softplus(d_k + U_k h)`` with
    ``c`` the detector's visible biases, ``d`` its hidden biases and
    ``U = -W^T``. Inputs may be mean-field values in [0, 1].
    """
    if any(c.kind != "binary" for c in detector.kinds):
        raise ValueError("detector for abstract input must be all-binary")
    h = np.asarray(h, dtype=np.float64)
    single = h.ndim == 1
    h = h[None, :] if single else h
    if h.shape[1] != detector.n_visible:
        raise ValueError(f"input has dimension {h.shape[1]}, detector expects {detector.n_visible}")
    U = -detector.W.T
    f = -(h @ detector.a) - np.sum(np.logaddexp(0.0, detector.b + h @ U.T), axis=1)
    return float(f[0]) if single else f

