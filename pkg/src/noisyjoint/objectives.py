"""Supervised and adversarial losses.

Sign conventions: :func:`discriminator_objective` is maximised by the
discriminator, :func:`generator_objective` is minimised by encoder and decoder.
Scores travel as one ``(n, T + 3)`` matrix per tuple family; the hinge
functions act elementwise and the objectives take batch means per column.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PROB_FLOOR = 1e-12
DENOM_FLOOR = 1e-12


@dataclass(frozen=True)
class AblationFlags:
    no_joint: bool = False
    no_marginal: bool = False
    no_decoder: bool = False

    def validate(self) -> None:
        if self.no_joint and self.no_marginal:
            raise ValueError("no_joint and no_marginal together leave no adversarial score")


class Scores:
    """Per-sample discriminator scores as an ``(n, T + 3)`` matrix.

    Column order is ``joint, x, y0, y1 .. yT``.
    """

    def __init__(self, matrix: Tensor):
        if matrix.ndim != 2 or matrix.shape[1] < 3:
            raise ad.ShapeError("Scores", matrix.shape)
        self.matrix = matrix

    @classmethod
    def from_parts(cls, s_joint, s_x, s_y) -> "Scores":
        cols = [_as_tensor(s_joint), _as_tensor(s_x), *(_as_tensor(s) for s in s_y)]
        return cls(ad.concat_last_axis([ad.reshape(c, (c.shape[0], 1)) for c in cols]))

    @property
    def n_scores(self) -> int:
        return self.matrix.shape[1]

    @property
    def names(self) -> list[str]:
        return ["joint", "x"] + [f"y{i}" for i in range(self.n_scores - 2)]

    @property
    def s_joint(self) -> Tensor:
        return ad.column(self.matrix, 0)

    @property
    def s_x(self) -> Tensor:
        return ad.column(self.matrix, 1)

    @property
    def s_y(self) -> list[Tensor]:
        return [ad.column(self.matrix, j) for j in range(2, self.n_scores)]

    def rows(self, start: int, stop: int) -> "Scores":
        return Scores(ad.slice_first_axis(self.matrix, start, stop))

    def active_indices(self, flags: AblationFlags) -> list[int]:
        keep = []
        if not flags.no_joint:
            keep.append(0)
        if not flags.no_marginal:
            keep.extend(range(1, self.n_scores))
        if not keep:
            raise ValueError("both joint and marginal scores are disabled")
        return keep

    def active(self, flags: AblationFlags) -> Tensor:
        idx = self.active_indices(flags)
        if len(idx) == self.n_scores:
            return self.matrix
        return ad.take_columns(self.matrix, idx)


@dataclass
class LossBreakdown:
    f_total: float
    ce_per_discrete_task: list[float]
    sim_per_continuous_task: list[float]
    adv_generator: float = 0.0
    adv_discriminator: float = 0.0
    per_score_adversarial_terms: dict[str, float] = field(default_factory=dict)
    lam: float = 0.0

    @property
    def generator_total(self) -> float:
        return self.f_total + self.lam * self.adv_generator


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# ----------------------------------------------------------- supervised part

def cross_entropy(pred_probs, noisy_onehot, atol: float = 1e-6) -> Tensor:
    """Batch mean of ``-log p[label]`` with probabilities floored at 1e-12."""
    p = _as_tensor(pred_probs)
    target = np.asarray(noisy_onehot, dtype=np.float64)
    if p.shape != target.shape or p.ndim != 2:
        raise ad.ShapeError("cross_entropy", p.shape, target.shape)
    rows = p.data.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > atol) or np.any(p.data < 0):
        raise ValueError("cross_entropy: predictions are not normalised probability rows")
    logp = ad.log(ad.elementwise_max_with_scalar(p, PROB_FLOOR))
    picked = ad.sum(logp * Tensor(target), axis=1)
    return -ad.mean(picked)


def ccc(pred, target) -> Tensor:
    """Concordance correlation coefficient of two 1-D series (population moments)."""
    p, t = _as_tensor(pred), _as_tensor(target)
    if p.ndim != 1 or p.shape != t.shape:
        raise ad.ShapeError("ccc", p.shape, t.shape)
    if p.shape[0] < 2:
        raise ValueError("ccc needs at least 2 samples")
    mp, mt = ad.mean(p), ad.mean(t)
    dp, dt = p - mp, t - mt
    cov = ad.mean(dp * dt)
    denom = ad.mean(ad.square(dp)) + ad.mean(ad.square(dt)) + ad.square(mp - mt)
    return 2.0 * cov / ad.elementwise_max_with_scalar(denom, DENOM_FLOOR)


def mse(pred, target) -> Tensor:
    p, t = _as_tensor(pred), _as_tensor(target)
    if p.shape != t.shape:
        raise ad.ShapeError("mse", p.shape, t.shape)
    return ad.mean(ad.square(p - t))


def similarity_loss(pred, target, kind: str = "ccc") -> Tensor:
    """``1 - mean_j ccc(pred[:, j], target[:, j])``, or plain MSE when ``kind='mse'``."""
    p, t = _as_tensor(pred), _as_tensor(target)
    if p.ndim != 2 or p.shape != t.shape:
        raise ad.ShapeError("similarity_loss", p.shape, t.shape)
    if kind == "mse":
        return mse(p, t)
    if kind != "ccc":
        raise ValueError(f"unknown similarity loss {kind!r}")
    d = p.shape[1]
    total = ccc(ad.column(p, 0), ad.column(t, 0))
    for j in range(1, d):
        total = total + ccc(ad.column(p, j), ad.column(t, j))
    return 1.0 - total * (1.0 / d)


def multitask_loss(preds, targets, kinds, gamma: float = 1.0, sim: str = "ccc"):
    """``sum CE(discrete) + gamma * sum L_sim(continuous)``.

    ``kinds`` holds ``"discrete"``/``"continuous"`` per task; discrete targets are one-hot.
    Returns ``(total, ce_terms, sim_terms)``.
    """
    ce_terms, sim_terms = [], []
    for p, y, kind in zip(preds, targets, kinds):
        if kind == "discrete":
            ce_terms.append(cross_entropy(p, y))
        else:
            sim_terms.append(similarity_loss(p, y, sim))
    terms = ce_terms + [t * gamma for t in sim_terms]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total, ce_terms, sim_terms


# ---------------------------------------------------------- adversarial part

def hinge_g(z):
    """``min(0, z - 1)``"""
    return ad.elementwise_min_with_scalar(_as_tensor(z) - 1.0, 0.0)


def hinge_h(z):
    """``min(0, -z - 1)``"""
    return ad.elementwise_min_with_scalar(-_as_tensor(z) - 1.0, 0.0)


def h_hat(z):
    """``-z``"""
    return -_as_tensor(z)


def score_terms(scores_enc: Scores, scores_dec: Scores, flags: AblationFlags) -> tuple[list[str], Tensor]:
    """Names of the active scores and the vector of ``mean g(S_enc) + mean h(S_dec)`` per score."""
    if scores_enc.n_scores != scores_dec.n_scores:
        raise ad.ShapeError("score_terms", scores_enc.matrix.shape, scores_dec.matrix.shape)
    names = [scores_enc.names[i] for i in scores_enc.active_indices(flags)]
    terms = ad.mean(hinge_g(scores_enc.active(flags)), axis=0) + ad.mean(hinge_h(scores_dec.active(flags)), axis=0)
    return names, terms


def discriminator_objective(scores_enc: Scores, scores_dec: Scores, flags: AblationFlags) -> Tensor:
    """Sum over active scores of the hinge terms; 0 is its maximum."""
    return ad.sum(score_terms(scores_enc, scores_dec, flags)[1])


def generator_adversarial(scores_enc: Scores, scores_dec: Scores, flags: AblationFlags) -> Tensor:
    """``sum_active(mean h_hat(-S_enc) + mean h_hat(S_dec))``."""
    per_score = ad.mean(h_hat(-scores_enc.active(flags)), axis=0) + ad.mean(h_hat(scores_dec.active(flags)), axis=0)
    return ad.sum(per_score)


def generator_objective(f_value, scores_enc: Scores, scores_dec: Scores, lam: float,
                        flags: AblationFlags) -> Tensor:
    """``f + lam * sum_active(mean h_hat(-S_enc) + mean h_hat(S_dec))``."""
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    return _as_tensor(f_value) + generator_adversarial(scores_enc, scores_dec, flags) * lam
