"""Expectation-maximisation over a compact set of bases.

The E-step soft-assigns every row of ``X`` to the bases through a softmax
over scaled inner products; the M-step re-estimates each basis as the
responsibility-weighted mean of the rows.  Both steps are built from tape
operations, so gradients flow through every unrolled iteration.

All functions accept leading batch axes: ``X`` is ``[..., n, d]`` and the
bases are either ``[K, d]`` (shared, broadcast over the batch) or
``[..., K, d]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .nn import l2_normalize, softmax
from .tensor import Tensor, as_tensor, broadcast_to, matmul, reduce, reshape, scale, swapaxes, where

DEAD_BASIS_MASS = 1e-12


@dataclass
class EmConfig:
    """EM hyperparameters.

    ``beta=None`` resolves to ``1/sqrt(d)`` for ``d``-dimensional points.
    ``momentum`` drives the moving average applied to stored bases after
    each optimisation step; ``0`` disables it.
    """

    num_bases: int = 4
    iterations: int = 3
    beta: float | None = None
    normalize_bases: bool = False
    momentum: float = 0.9

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if int(self.num_bases) < 1:
            raise ConfigError(f"num_bases must be >= 1, got {self.num_bases}")
        if int(self.iterations) < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.beta is not None and not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")

    def beta_for(self, dim: int) -> float:
        return float(self.beta) if self.beta is not None else 1.0 / math.sqrt(dim)


@dataclass
class EmState:
    bases: Tensor            # [..., K, d]
    responsibilities: Tensor  # [..., n, K]
    dead_bases: int = 0
    history: list = field(default_factory=list)

    @property
    def Z(self) -> Tensor:
        return self.responsibilities

    @property
    def mu(self) -> Tensor:
        return self.bases


def _match_bases(X: Tensor, bases: Tensor) -> Tensor:
    if bases.shape[-1] != X.shape[-1]:
        raise ShapeError("EM: point and basis dimensions differ", X.shape, bases.shape)
    lead = X.shape[:-2]
    if bases.shape[:-2] == lead:
        return bases
    if bases.ndim == 2:
        return broadcast_to(bases, lead + bases.shape)
    raise ShapeError("EM: basis batch extents do not match the points", X.shape, bases.shape)


def e_step(X, bases, beta: float) -> Tensor:
    """Responsibilities ``softmax(beta * X @ bases.T)`` over the bases axis."""
    X, bases = as_tensor(X), as_tensor(bases)
    if not beta > 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    if not (np.isfinite(X.data).all() and np.isfinite(bases.data).all()):
        raise DomainError(f"EM e_step received non-finite values (shapes {X.shape}, {bases.shape})")
    bases = _match_bases(X, bases)
    return softmax(scale(matmul(X, swapaxes(bases, -1, -2)), beta), axis=-1)


def m_step(X, Z, normalize: bool = False, previous=None) -> tuple[Tensor, int]:
    """Weighted means of the rows of ``X`` under responsibilities ``Z``.

    A basis whose responsibility mass falls below ``1e-12`` is "dead": it
    keeps its ``previous`` value (zeros when none is given) and is counted in
    the returned diagnostic instead of raising.
    """
    X, Z = as_tensor(X), as_tensor(Z)
    if Z.shape[:-1] != X.shape[:-1]:
        raise ShapeError("EM m_step: responsibilities do not match points", X.shape, Z.shape)
    mass = reduce("sum", Z, -2)                               # [..., K]
    dead = mass.data < DEAD_BASIS_MASS
    n_dead = int(dead.sum())
    if n_dead:
        mass = where(dead, Tensor(np.ones_like(mass.data)), mass)
    weighted = matmul(swapaxes(Z, -1, -2), X)                 # [..., K, d]
    denom = broadcast_to(reshape(mass, mass.shape + (1,)), weighted.shape)
    bases = weighted / denom
    if normalize:
        bases = l2_normalize(bases, axis=-1)
    if n_dead:
        stale = Tensor(np.zeros(bases.shape, dtype=bases.dtype)) if previous is None else _match_bases(X, as_tensor(previous))
        mask = np.broadcast_to(dead[..., None], bases.shape)
        bases = where(mask, stale, bases)
    return bases, n_dead


def em_iterate(X, init_bases, cfg: EmConfig, beta: float | None = None, track: bool = False) -> EmState:
    """Run ``cfg.iterations`` alternations of E-step then M-step."""
    X, bases = as_tensor(X), as_tensor(init_bases)
    cfg.validate()
    beta = cfg.beta_for(X.shape[-1]) if beta is None else beta
    dead = 0
    history = []
    Z = None
    for _ in range(int(cfg.iterations)):
        Z = e_step(X, bases, beta)
        bases, n_dead = m_step(X, Z, cfg.normalize_bases, previous=bases)
        dead += n_dead
        if track:
            history.append(bases.data.copy())
    return EmState(bases=bases, responsibilities=Z, dead_bases=dead, history=history)


def reconstruct(state: EmState) -> Tensor:
    """Low-rank reconstruction ``Z @ mu`` of the clustered rows."""
    Z, mu = state.responsibilities, state.bases
    if Z.shape[-1] != mu.shape[-2]:
        raise ShapeError("reconstruct: responsibilities and bases disagree on K", Z.shape, mu.shape)
    return matmul(Z, mu)


def surrogate_likelihood(X, bases, beta: float) -> float:
    """``(1/beta) * sum_n log sum_q exp(beta * x_n . mu_q)`` computed in numpy."""
    X = np.asarray(getattr(X, "data", X), dtype=np.float64)
    mu = np.asarray(getattr(bases, "data", bases), dtype=np.float64)
    logits = beta * X @ np.swapaxes(mu, -1, -2)
    top = logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(logits - top).sum(axis=-1)) + top[..., 0]
    return float(lse.sum() / beta)


@dataclass
class EmRecorder:
    """Collects batch-final bases during a training forward pass.

    The training loop folds them into the stored bases with
    :func:`momentum_update` after the optimiser step.
    """

    final_bases: dict = field(default_factory=dict)
    dead_bases: int = 0

    def record(self, name: str, state: EmState) -> None:
        mu = state.bases.data
        flat = mu.reshape(-1, *mu.shape[-2:]).mean(axis=0)
        self.final_bases.setdefault(name, []).append(flat)
        self.dead_bases += state.dead_bases


def momentum_update(stored: Tensor, batch_final: np.ndarray, momentum: float, normalize: bool = False) -> None:
    """``stored <- m * stored + (1 - m) * batch_final`` in place (no tape)."""
    new = momentum * stored.data + (1.0 - momentum) * batch_final.astype(stored.dtype)
    if normalize:
        new = new / np.maximum(np.linalg.norm(new, axis=-1, keepdims=True), 1e-12)
    stored.data = new.astype(stored.dtype)
