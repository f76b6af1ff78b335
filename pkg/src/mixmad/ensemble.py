"""Multilevel detection: depth-varying detectors, per-level ranks, p-norm fusion."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import Dataset, Schema, SchemaError, binary_columns
from .dbn import AbstractionChain, abstract_deterministic, abstracted_free_energy
from .rbm import TrainConfig, free_energy, sample_hidden, train

# Rows are scored in fixed-size blocks so results never depend on thread count.
SCORE_BLOCK = 256


def parse_p(value) -> float:
    """Accept a positive number or ``inf``."""
    p = float(value)
    if not (p > 0):
        raise ValueError(f"aggregation exponent must be > 0 or inf, got {value!r}")
    return p


def format_p(p: float) -> str:
    if math.isinf(p):
        return "inf"
    text = repr(float(p))
    return text[:-2] if text.endswith(".0") else text


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    schema: Schema
    chain: AbstractionChain
    detectors: tuple
    p: float = 1.0

    def __post_init__(self):
        dets = tuple(self.detectors)
        object.__setattr__(self, "detectors", dets)
        object.__setattr__(self, "p", parse_p(self.p))
        if not dets:
            raise ValueError("ensemble needs at least one detector")
        if len(self.chain) != len(dets) - 1:
            raise ValueError(f"{len(dets)} detectors need {len(dets) - 1} abstraction layers, got {len(self.chain)}")
        if [(c.name, c.kind, c.cardinality) for c in dets[0].kinds] != [
            (c.name, c.kind, c.cardinality) for c in self.schema
        ]:
            raise ValueError("first detector's visible kinds must equal the data schema")
        if len(self.chain) and [(c.kind, c.cardinality) for c in self.chain[0].kinds] != [
            (c.kind, c.cardinality) for c in self.schema
        ]:
            raise ValueError("first abstraction layer must read the data schema")
        for l in range(1, len(dets)):
            k = self.chain[l - 1].n_hidden
            if dets[l].n_visible != k or any(c.kind != "binary" for c in dets[l].kinds):
                raise ValueError(f"detector {l + 1} must be all-binary with {k} visible units")

    @property
    def depth(self) -> int:
        return len(self.detectors)

    @property
    def abstraction_sizes(self) -> list:
        return self.chain.layer_sizes

    @property
    def detection_sizes(self) -> list:
        return [d.n_hidden for d in self.detectors]


@dataclass(frozen=True, eq=False)
class ScoreReport:
    """Per-instance level free energies and ranks, the fused score and flags.

    ``energies`` and ``ranks`` are M x L; ``aggregate`` has length M.
    """

    energies: np.ndarray
    ranks: np.ndarray
    aggregate: np.ndarray
    p: float
    flags: Optional[np.ndarray] = None

    def __len__(self):
        return self.aggregate.shape[0]

    @property
    def depth(self) -> int:
        return self.energies.shape[1]


def _child_seeds(seed: int, n: int) -> list:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def fit(
    data,
    depth: int,
    abstraction_sizes: Sequence[int],
    detection_sizes: Sequence[int],
    cfg: TrainConfig = TrainConfig(),
    p: float = 1.0,
    history: Optional[dict] = None,
) -> EnsembleModel:
    """Grow detectors level by level.

    At level ``l`` a detector with ``detection_sizes[l-1]`` hidden units is
    trained on the level input ``v_l`` (the records at ``l = 1``). Below the
    top level an abstraction RBM with ``abstraction_sizes[l-1]`` units is also
    trained on ``v_l`` and one Bernoulli sample of its hidden layer becomes
    ``v_{l+1}``. Every RBM gets its own seed derived from ``cfg.seed``.

    ``history``, if given, receives per-RBM epoch stats keyed by
    ``("detector", l)`` / ``("abstraction", l)``.
    """
    if not isinstance(data, Dataset):
        raise TypeError("fit expects a Dataset")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    abstraction_sizes = [int(k) for k in abstraction_sizes]
    detection_sizes = [int(k) for k in detection_sizes]
    if len(abstraction_sizes) != depth - 1 or len(detection_sizes) != depth:
        raise ValueError(
            f"depth {depth} needs {depth - 1} abstraction sizes and {depth} detection sizes, "
            f"got {len(abstraction_sizes)} and {len(detection_sizes)}"
        )
    if min(detection_sizes + abstraction_sizes) < 1:
        raise ValueError("hidden sizes must be >= 1")
    p = parse_p(p)
    seeds = _child_seeds(cfg.seed, 3 * depth)
    kinds = tuple(data.schema)
    v = data.values
    chain = AbstractionChain()
    detectors = []
    for l in range(depth):
        hist = [] if history is not None else None
        detectors.append(train(kinds, v, detection_sizes[l], replace(cfg, seed=seeds[3 * l]), hist))
        if history is not None:
            history[("detector", l + 1)] = hist
        if l == depth - 1:
            break
        hist = [] if history is not None else None
        layer = train(kinds, v, abstraction_sizes[l], replace(cfg, seed=seeds[3 * l + 1]), hist)
        if history is not None:
            history[("abstraction", l + 1)] = hist
        chain = chain.append(layer)
        v = sample_hidden(layer, v, np.random.default_rng(seeds[3 * l + 2]))
        kinds = binary_columns(abstraction_sizes[l])
    return EnsembleModel(data.schema, chain, tuple(detectors), p)


def _block_energies(model: EnsembleModel, x: np.ndarray) -> np.ndarray:
    out = np.empty((x.shape[0], model.depth))
    out[:, 0] = free_energy(model.detectors[0], x)
    for l in range(1, model.depth):
        h = abstract_deterministic(model.chain, x, l)
        out[:, l] = abstracted_free_energy(model.detectors[l], h)
    return out


def level_energies(model: EnsembleModel, data, threads: int = 1) -> np.ndarray:
    """M x L matrix of free energies; level 1 on raw records, level l on the
    mean-field abstraction of depth l - 1."""
    x = data.values if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != len(model.schema):
        raise SchemaError(f"data has shape {x.shape}, model expects {len(model.schema)} columns")
    blocks = [x[i : i + SCORE_BLOCK] for i in range(0, x.shape[0], SCORE_BLOCK)]
    if not blocks:
        return np.empty((0, model.depth))
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: _block_energies(model, b), blocks))
    else:
        parts = [_block_energies(model, b) for b in blocks]
    return np.vstack(parts)


def check_schema(model: EnsembleModel, schema: Schema) -> None:
    """Raise SchemaError naming the first column that differs from the model's."""
    want, got = list(model.schema), list(schema)
    for j in range(max(len(want), len(got))):
        if j >= len(want):
            raise SchemaError(f"unexpected extra column {got[j].name!r}")
        if j >= len(got):
            raise SchemaError(f"missing column {want[j].name!r}")
        w, g = want[j], got[j]
        if (w.name, w.kind, w.cardinality) != (g.name, g.kind, g.cardinality):
            raise SchemaError(
                f"column {j} mismatch: model has {w.name!r} ({w.kind}), data has {g.name!r} ({g.kind})"
            )


def rank_levels(energies: np.ndarray) -> np.ndarray:
    """Rank each column from lowest (1) to highest (M) energy; ties get the mean rank."""
    energies = np.asarray(energies, dtype=np.float64)
    if energies.shape[0] == 0:
        return energies.copy()
    return rankdata(energies, method="average", axis=0)


def aggregate_pnorm(ranks, p: float):
    """(sum_l r_l^p)^(1/p) over the last axis; the max when ``p`` is inf."""
    p = parse_p(p)
    r = np.asarray(ranks, dtype=np.float64)
    if np.any(r < 0) or np.any(np.isnan(r)):
        raise ValueError("ranks must be non-negative")
    if math.isinf(p):
        out = r.max(axis=-1)
    elif p == 1.0:
        out = r.sum(axis=-1)
    else:
        with np.errstate(over="ignore"):
            out = np.sum(r**p, axis=-1) ** (1.0 / p)
        if np.any(~np.isfinite(out)):
            top = r.max(axis=-1, keepdims=True)
            safe = np.where(top > 0, top, 1.0)
            scaled = np.squeeze(safe, -1) * np.sum((r / safe) ** p, axis=-1) ** (1.0 / p)
            out = np.where(np.isfinite(out), out, scaled)
    return float(out) if np.ndim(out) == 0 else out


def score(model: EnsembleModel, data, p: Optional[float] = None, threads: int = 1) -> ScoreReport:
    """Free energies, per-level ranks within ``data``, and the fused score."""
    if isinstance(data, Dataset):
        check_schema(model, data.schema)
    p = model.p if p is None else parse_p(p)
    energies = level_energies(model, data, threads)
    ranks = rank_levels(energies)
    return ScoreReport(energies, ranks, aggregate_pnorm(ranks, p), p)


def n_flagged(contamination: float, m: int) -> int:
    if not 0 < contamination < 1:
        raise ValueError("contamination must lie in (0, 1)")
    # rounding guards products like 0.07 * 100 = 7.000000000000001
    return min(m, math.ceil(round(contamination * m, 9)))


def top_mask(scores, contamination: float) -> np.ndarray:
    """Mark the ceil(contamination * M) highest scores; ties resolved by lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    m = scores.shape[0]
    n = n_flagged(contamination, m)
    order = np.lexsort((np.arange(m), -scores))
    mask = np.zeros(m, dtype=bool)
    mask[order[:n]] = True
    return mask


def flag_anomalies(report: ScoreReport, contamination: float) -> ScoreReport:
    return replace(report, flags=top_mask(report.aggregate, contamination))
