"""Mixed-variate RBM: typed energies, free energy, Gibbs conditionals, CD-1.

Parameters follow the energy

    E(x, h) = sum_i E_i(x_i) + sum_k (-b_k + sum_i G_ik(x_i)) h_k

so the hidden activation is sigmoid(b_k - sum_i G_ik(x_i)). Nominal columns
are one-hot expanded: column i with category c contributes E_i = -a_{i,c} and
G_ik = W_{i,c,k}. The all-binary case is an ordinary RBM.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import expit, gammaln

from .data import ColumnSpec, Dataset, Schema

# exp(30) ~ 1e13 is already far beyond any count seen in practice
POISSON_LOG_RATE_MAX = 30.0
# largest conditional variance of a binary (or one-hot) visible unit
BINARY_UNIT_VARIANCE = 0.25


class TrainingError(RuntimeError):
    pass


class PoissonRateClampWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.3
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    weight_init_scale: float = 0.01
    # shrink steps of gaussian/poisson units to the binary-unit scale
    scale_real_steps: bool = True

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.weight_init_scale < 0:
            raise ValueError("weight_init_scale must be non-negative")


class _Layout:
    """Index bookkeeping for the one-hot expanded visible vector."""

    def __init__(self, kinds: tuple):
        self.kinds = kinds
        self.n_columns = len(kinds)
        offsets, off = [], 0
        for col in kinds:
            offsets.append(off)
            off += col.width
        self.width = off
        self.offsets = np.array(offsets, dtype=np.intp)

        def pick(kind):
            cols = np.array([j for j, c in enumerate(kinds) if c.kind == kind], dtype=np.intp)
            return cols, self.offsets[cols]

        self.bin_cols, self.bin_units = pick("binary")
        self.gauss_cols, self.gauss_units = pick("gaussian")
        self.pois_cols, self.pois_units = pick("poisson")
        self.nominal = [(j, int(self.offsets[j]), c.cardinality) for j, c in enumerate(kinds) if c.kind == "nominal"]
        self.scalar_cols = np.sort(np.r_[self.bin_cols, self.gauss_cols, self.pois_cols]).astype(np.intp)
        self.scalar_units = self.offsets[self.scalar_cols]
        self.identity = not self.nominal


@lru_cache(maxsize=64)
def _layout(kinds: tuple) -> _Layout:
    return _Layout(kinds)


@dataclass(frozen=True, eq=False)
class MvRbm:
    """Visible biases ``a`` (length D, the expanded width), hidden biases ``b``
    (length K) and weights ``W`` (D x K) for the column types in ``kinds``."""

    kinds: tuple
    a: np.ndarray
    b: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        kinds = tuple(self.kinds.columns if isinstance(self.kinds, Schema) else self.kinds)
        object.__setattr__(self, "kinds", kinds)
        lay = _layout(kinds)
        a = np.array(self.a, dtype=np.float64)
        b = np.array(self.b, dtype=np.float64)
        W = np.array(self.W, dtype=np.float64)
        if not kinds:
            raise ValueError("MvRbm needs at least one visible column")
        if b.ndim != 1 or b.size < 1:
            raise ValueError("MvRbm needs at least one hidden unit")
        if a.shape != (lay.width,) or W.shape != (lay.width, b.size):
            raise ValueError(f"parameter shapes a{a.shape} W{W.shape} do not fit width {lay.width}, K={b.size}")
        for arr in (a, b, W):
            arr.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "W", W)

    @property
    def n_visible(self) -> int:
        return len(self.kinds)

    @property
    def n_hidden(self) -> int:
        return self.b.size

    @property
    def layout(self) -> _Layout:
        return _layout(self.kinds)

    @classmethod
    def zeros(cls, kinds, n_hidden: int) -> "MvRbm":
        kinds = tuple(kinds)
        width = _layout(kinds).width
        return cls(kinds, np.zeros(width), np.zeros(n_hidden), np.zeros((width, n_hidden)))

    def with_params(self, a=None, b=None, W=None) -> "MvRbm":
        return MvRbm(
            self.kinds,
            self.a if a is None else a,
            self.b if b is None else b,
            self.W if W is None else W,
        )


def _as_matrix(x) -> np.ndarray:
    if isinstance(x, Dataset):
        x = x.values
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


def expand(kinds, x) -> np.ndarray:
    """One-hot expand nominal columns; other columns pass through."""
    lay = _layout(tuple(kinds))
    x = _as_matrix(x)
    if x.shape[1] != lay.n_columns:
        raise ValueError(f"record has {x.shape[1]} columns, model expects {lay.n_columns}")
    if lay.identity:
        return x
    out = np.zeros((x.shape[0], lay.width))
    out[:, lay.scalar_units] = x[:, lay.scalar_cols]
    rows = np.arange(x.shape[0])
    for j, off, _ in lay.nominal:
        out[rows, off + x[:, j].astype(np.intp)] = 1.0
    return out


def sub_energy(spec: ColumnSpec, x_i, a_i) -> float:
    """Visible self-energy E_i(x_i) of a single cell.

    For nominal columns ``a_i`` is the vector of per-category biases.
    """
    if spec.kind == "binary":
        return -a_i * x_i
    if spec.kind == "gaussian":
        return 0.5 * x_i * x_i - a_i * x_i
    if spec.kind == "poisson":
        return math.lgamma(x_i + 1.0) - a_i * x_i
    return -float(np.asarray(a_i)[int(x_i)])


def visible_energy(model: MvRbm, x) -> np.ndarray:
    """Sum of the visible self-energies, one value per record."""
    x = _as_matrix(x)
    lay = model.layout
    e = -(expand(model.kinds, x) @ model.a)
    if lay.gauss_cols.size:
        g = x[:, lay.gauss_cols]
        e += 0.5 * np.sum(g * g, axis=1)
    if lay.pois_cols.size:
        e += np.sum(gammaln(x[:, lay.pois_cols] + 1.0), axis=1)
    return e


def hidden_preactivation(model: MvRbm, x) -> np.ndarray:
    """z_k = b_k - sum_i G_ik(x_i); shape (M, K), or (K,) for a single record."""
    single = np.ndim(x.values if isinstance(x, Dataset) else x) == 1
    z = model.b - expand(model.kinds, x) @ model.W
    return z[0] if single else z


def hidden_probabilities(model: MvRbm, x) -> np.ndarray:
    return expit(hidden_preactivation(model, x))


def free_energy(model: MvRbm, x) -> np.ndarray:
    """F(x) = sum_i E_i(x_i) - sum_k softplus(z_k), computed stably.

    Returns a scalar for a single record and a length-M vector otherwise.
    """
    single = np.ndim(x.values if isinstance(x, Dataset) else x) == 1
    x = _as_matrix(x)
    z = model.b - expand(model.kinds, x) @ model.W
    f = visible_energy(model, x) - np.sum(np.logaddexp(0.0, z), axis=1)
    return float(f[0]) if single else f


def sample_hidden(model: MvRbm, x, rng: np.random.Generator) -> np.ndarray:
    """Draw h_k ~ Bernoulli(sigmoid(z_k)) independently."""
    p = hidden_probabilities(model, x)
    return (rng.random(p.shape) < p).astype(np.float64)


def visible_fields(model: MvRbm, h) -> np.ndarray:
    """m = a - W h for every expanded visible unit; shape (M, D)."""
    h = np.asarray(h, dtype=np.float64)
    h = h[None, :] if h.ndim == 1 else h
    if h.shape[1] != model.n_hidden:
        raise ValueError(f"hidden vector has length {h.shape[1]}, model has {model.n_hidden} units")
    return model.a - h @ model.W.T


def _sample_visible(model: MvRbm, h, rng: np.random.Generator, m=None):
    if m is None:
        m = visible_fields(model, h)
    lay = model.layout
    n = m.shape[0]
    x = np.empty((n, lay.n_columns))
    if lay.bin_cols.size:
        p = expit(m[:, lay.bin_units])
        x[:, lay.bin_cols] = rng.random(p.shape) < p
    if lay.gauss_cols.size:
        mu = m[:, lay.gauss_units]
        x[:, lay.gauss_cols] = mu + rng.standard_normal(mu.shape)
    n_clamped = 0
    if lay.pois_cols.size:
        log_rate = m[:, lay.pois_units]
        over = log_rate > POISSON_LOG_RATE_MAX
        n_clamped = int(over.sum())
        x[:, lay.pois_cols] = rng.poisson(np.exp(np.minimum(log_rate, POISSON_LOG_RATE_MAX)))
    for j, off, card in lay.nominal:
        logits = m[:, off : off + card]
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        cdf = np.cumsum(p, axis=1)
        u = rng.random((n, 1)) * cdf[:, -1:]
        x[:, j] = np.minimum((cdf <= u).sum(axis=1), card - 1)
    return x, n_clamped


def sample_visible(model: MvRbm, h, rng: np.random.Generator) -> np.ndarray:
    """Draw x ~ P(x | h) column by column.

    binary ~ Bernoulli(sigmoid(m)), gaussian ~ Normal(m, 1),
    poisson ~ Poisson(exp(m)), nominal ~ Categorical(softmax(m_c)).
    """
    single = np.ndim(h) == 1
    x, n_clamped = _sample_visible(model, h, rng)
    if n_clamped:
        warnings.warn(
            f"{n_clamped} poisson log-rate(s) above {POISSON_LOG_RATE_MAX} were clamped",
            PoissonRateClampWarning,
            stacklevel=2,
        )
    return x[0] if single else x


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    free_energy_gap: float  # mean F(reconstruction) - F(data)
    mean_free_energy: float
    poisson_clamped: int = 0


def _check_finite(model: MvRbm, epoch: int, batch: int) -> None:
    for name in ("a", "b", "W"):
        arr = getattr(model, name)
        if not np.all(np.isfinite(arr)):
            bad = int(np.count_nonzero(~np.isfinite(arr)))
            raise TrainingError(
                f"non-finite parameter {name} after epoch {epoch}, batch {batch}: "
                f"{bad} of {arr.size} entries; max |a|={np.nanmax(np.abs(model.a)):.3g}, "
                f"max |W|={np.nanmax(np.abs(model.W)):.3g}. Try a smaller learning rate."
            )


def step_scale(model: MvRbm, fields: np.ndarray) -> np.ndarray:
    """Per visible unit multiplier on the learning rate.

    A CD-1 step moves a unit's field by roughly ``lr * var * (1 + sum_k p_k h_k)``
    times its error, so unit-variance gaussian and rate-lambda poisson units
    overshoot at learning rates that are stable for binary units. Their steps
    are divided by ``var / 0.25``; binary and nominal units keep factor 1.
    """
    lay = model.layout
    scale = np.ones(lay.width)
    scale[lay.gauss_units] = BINARY_UNIT_VARIANCE
    if lay.pois_units.size:
        rate = np.exp(np.minimum(fields[:, lay.pois_units], POISSON_LOG_RATE_MAX)).mean(axis=0)
        scale[lay.pois_units] = BINARY_UNIT_VARIANCE / np.maximum(rate, 1.0)
    return scale


def cd1_epoch(model: MvRbm, data, cfg: TrainConfig, rng: np.random.Generator, epoch: int = 0):
    """Run one shuffled mini-batch pass of CD-1.

    Positive statistics use the hidden probabilities given the data; the
    reconstruction is sampled from a sampled hidden state; negative statistics
    use hidden probabilities given the reconstruction. With
    ``cfg.scale_real_steps`` the visible-side updates of gaussian and poisson
    units are shrunk by :func:`step_scale`.

    Returns ``(updated_model, EpochStats)``; the input model is not modified.
    """
    x_all = _as_matrix(data)
    n = x_all.shape[0]
    a, b, W = model.a.copy(), model.b.copy(), model.W.copy()
    lr = cfg.learning_rate
    order = rng.permutation(n)
    gaps, fes, clamped = [], [], 0
    for bi, start in enumerate(range(0, n, cfg.batch_size)):
        cur = MvRbm(model.kinds, a, b, W)
        xb = x_all[order[start : start + cfg.batch_size]]
        size = xb.shape[0]
        v_pos = expand(model.kinds, xb)
        p_pos = expit(b - v_pos @ W)
        h = (rng.random(p_pos.shape) < p_pos).astype(np.float64)
        fields = visible_fields(cur, h)
        x_neg, nc = _sample_visible(cur, h, rng, fields)
        clamped += nc
        v_neg = expand(model.kinds, x_neg)
        p_neg = expit(b - v_neg @ W)

        f_pos = free_energy(cur, xb)
        gaps.append(float(np.mean(free_energy(cur, x_neg) - f_pos)))
        fes.append(float(np.mean(f_pos)))

        unit_lr = lr * step_scale(cur, fields) if cfg.scale_real_steps else lr
        a = a + unit_lr * (v_pos.mean(axis=0) - v_neg.mean(axis=0))
        b = b + lr * (p_pos.mean(axis=0) - p_neg.mean(axis=0))
        # dE/dW_ik = x_i h_k, so the likelihood ascent direction is negated
        W = W - np.reshape(unit_lr, (-1, 1)) * (v_pos.T @ p_pos - v_neg.T @ p_neg) / size
        _check_finite(MvRbm(model.kinds, a, b, W), epoch, bi)
    if clamped:
        warnings.warn(
            f"epoch {epoch}: {clamped} poisson log-rate(s) clamped at {POISSON_LOG_RATE_MAX}",
            PoissonRateClampWarning,
            stacklevel=2,
        )
    stats = EpochStats(epoch, float(np.mean(gaps)) if gaps else 0.0, float(np.mean(fes)) if fes else 0.0, clamped)
    return MvRbm(model.kinds, a, b, W), stats


def init_model(kinds, n_hidden: int, cfg: TrainConfig, rng: np.random.Generator) -> MvRbm:
    """Biases zero, weights Normal(0, weight_init_scale^2)."""
    if n_hidden < 1:
        raise ValueError("number of hidden units must be >= 1")
    kinds = tuple(kinds.columns if isinstance(kinds, Schema) else kinds)
    width = _layout(kinds).width
    W = rng.normal(0.0, cfg.weight_init_scale, size=(width, n_hidden))
    return MvRbm(kinds, np.zeros(width), np.zeros(n_hidden), W)


def train(kinds, data, n_hidden: int, cfg: TrainConfig, history: Optional[list] = None) -> MvRbm:
    """Initialise and train an RBM for ``cfg.epochs`` CD-1 epochs.

    Deterministic given ``cfg.seed``. If ``history`` is a list, one
    :class:`EpochStats` per epoch is appended to it.
    """
    rng = np.random.default_rng(cfg.seed)
    model = init_model(kinds, n_hidden, cfg, rng)
    x = _as_matrix(data)
    if x.shape[1] != model.n_visible:
        raise ValueError(f"data has {x.shape[1]} columns, model expects {model.n_visible}")
    for epoch in range(cfg.epochs):
        model, stats = cd1_epoch(model, x, cfg, rng, epoch)
        if history is not None:
            history.append(stats)
    return model
