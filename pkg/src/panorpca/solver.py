"""Masked proximal-gradient robust PCA with a TV-regularized foreground.

Model: ``P_M(Y) ~ P_M(L + S1 + S2)`` with low-rank background ``L``, sparse
corruption ``S1`` and TV-smooth foreground ``S2``. Each iteration takes one
gradient step on the masked data-fit term, shared by all three blocks, and
then applies a per-block estimator: OptShrink (or SVT) for ``L``,
soft-thresholding for ``S1`` and weighted TV denoising for ``S2``.
"""

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .core import Decomposition, FrameStack, TVWeights, project_mask, tv_value
from .optshrink import optshrink_weights, split_spectrum, thin_svd
from .tvprox import AdmmConfig, TVDenoiser, soft_threshold

__all__ = ["SolverConfig", "SolverTrace", "DivergenceError", "decompose",
           "surrogate_objective", "soft_threshold", "ObjectiveValue"]


# iterates this large cannot come from [0, 1] intensities; squaring them in
# the Gram SVD would overflow
_BLOWUP = 1e100


class DivergenceError(ArithmeticError):
    def __init__(self, iteration, trace=None):
        super().__init__(f"non-finite iterate at iteration {iteration}")
        self.iteration = iteration
        self.trace = trace


@dataclass
class SolverConfig:
    tau: float = 0.33
    rank: int = 1
    lambda_s1: float = 0.001
    lambda_s2: float = 0.001
    max_iter: int = 200
    rel_tol: float = 1e-4
    low_rank_mode: str = "optshrink"
    lambda_l: float | None = None
    tv_block: bool = True
    svd_method: str = "auto"
    admm: AdmmConfig = field(default_factory=AdmmConfig)

    def __post_init__(self):
        if isinstance(self.admm, dict):
            self.admm = AdmmConfig(**self.admm)
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.lambda_s1 < 0 or self.lambda_s2 < 0:
            raise ValueError("lambdas must be non-negative")
        if self.lambda_l is not None and self.lambda_l < 0:
            raise ValueError("lambda_l must be non-negative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.low_rank_mode not in ("optshrink", "svt"):
            raise ValueError("low_rank_mode must be 'optshrink' or 'svt'")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")

    def resolved_lambda_l(self, shape):
        if self.lambda_l is not None:
            return self.lambda_l
        return 1.0 / math.sqrt(max(shape))

    def to_dict(self):
        return asdict(self)


@dataclass
class SolverTrace:
    surrogate: list = field(default_factory=list)
    nuclear_norm: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    data_fit: list = field(default_factory=list)
    delta_L: list = field(default_factory=list)
    delta_S1: list = field(default_factory=list)
    delta_S2: list = field(default_factory=list)
    rank_L: list = field(default_factory=list)
    admm_iterations: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return len(self.surrogate)

    def to_dict(self, timing=False):
        d = asdict(self)
        if not timing:
            d.pop("seconds")
        d["iterations"] = self.iterations
        return d

    def to_json(self, timing=False, **kw):
        return json.dumps(self.to_dict(timing), **kw)


class ObjectiveValue(NamedTuple):
    surrogate: float
    nuclear_norm: float


def _nuclear_norm(L, svd_method="auto"):
    return float(thin_svd(L, svd_method)[1].sum())


def surrogate_objective(stack, D, cfg, weights=None, nuclear=True):
    """Data fit plus the S1 and S2 penalties; ``||L||_*`` reported apart.

    The nuclear-norm term is kept separate because the OptShrink update is
    not the proximal map of a nuclear-norm penalty.
    """
    w = weights if weights is not None else TVWeights.from_mask(stack.mask_volume())
    R = project_mask(stack.data - D.L - D.S1 - D.S2, stack.mask)
    val = (0.5 * float(np.vdot(R, R)) + cfg.lambda_s1 * float(np.abs(D.S1).sum())
           + cfg.lambda_s2 * tv_value(D.S2, w))
    nuc = _nuclear_norm(D.L, cfg.svd_method) if nuclear else float("nan")
    return ObjectiveValue(val, nuc)


def _low_rank_step(Z, cfg, lam_l):
    """Return the updated L and its nuclear norm."""
    if cfg.low_rank_mode == "optshrink":
        split = split_spectrum(Z, cfg.rank, cfg.svd_method)
        w = optshrink_weights(split, Z.shape)
        return (split.U * w) @ split.Vt, float(w.sum()), int((w > 0).sum())
    U, s, Vt = thin_svd(Z, cfg.svd_method)
    s = np.maximum(s - cfg.tau * lam_l, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vt[keep], float(s.sum()), int(keep.sum())


def _rel_change(new, old):
    dn = float(np.linalg.norm(new - old))
    if dn == 0.0:
        return 0.0
    return dn / max(float(np.linalg.norm(old)), float(np.linalg.norm(new)))


def decompose(stack: FrameStack, cfg: SolverConfig | None = None, callback=None):
    """Run the robust decomposition; returns ``(Decomposition, SolverTrace)``.

    Initialization: ``L = Y`` and ``S1 = S2 = 0``. Every iteration computes
    the masked residual from the current iterates and updates all three
    blocks from it. Stops when the largest relative block change drops
    below ``cfg.rel_tol`` or after ``cfg.max_iter`` iterations.
    """
    cfg = cfg or SolverConfig()
    Y = np.asfortranarray(stack.data, dtype=np.float64)
    M = stack.mask.astype(bool)
    Y = np.where(M, Y, 0.0)
    weights = TVWeights.from_mask(stack.mask_volume())
    tv = TVDenoiser(weights, cfg.admm)
    lam_l = cfg.resolved_lambda_l(Y.shape)
    tau = cfg.tau

    L = Y.copy(order="F")
    S1 = np.zeros_like(L)
    S2 = np.zeros_like(L)
    trace = SolverTrace()
    for it in range(1, cfg.max_iter + 1):
        t0 = time.perf_counter()
        U = np.where(M, L + S1 + S2 - Y, 0.0)
        ZL = L - tau * U
        if not np.all(np.isfinite(ZL)) or np.abs(ZL).max(initial=0.0) > _BLOWUP:
            raise DivergenceError(it, trace)
        try:
            L_new, nuc, rank = _low_rank_step(ZL, cfg, lam_l)
        except np.linalg.LinAlgError as exc:
            raise DivergenceError(it, trace) from exc
        S1_new = soft_threshold(S1 - tau * U, tau * cfg.lambda_s1)
        if cfg.tv_block:
            S2_new = tv(S2 - tau * U, tau * cfg.lambda_s2)
            admm_its = tv.last_info.iterations
        else:
            S2_new = S2
            admm_its = 0
        if not (np.all(np.isfinite(L_new)) and np.all(np.isfinite(S1_new))
                and np.all(np.isfinite(S2_new))):
            raise DivergenceError(it, trace)
        dL, d1, d2 = (_rel_change(L_new, L), _rel_change(S1_new, S1),
                      _rel_change(S2_new, S2))
        L, S1, S2 = L_new, S1_new, S2_new

        R = np.where(M, Y - L - S1 - S2, 0.0)
        fit2 = float(np.vdot(R, R))
        sur = (0.5 * fit2 + cfg.lambda_s1 * float(np.abs(S1).sum())
               + cfg.lambda_s2 * tv_value(S2, weights))
        full = sur + (lam_l * nuc if cfg.low_rank_mode == "svt" else 0.0)
        trace.surrogate.append(sur)
        trace.nuclear_norm.append(nuc)
        trace.objective.append(full)
        trace.data_fit.append(math.sqrt(fit2))
        trace.delta_L.append(dL)
        trace.delta_S1.append(d1)
        trace.delta_S2.append(d2)
        trace.rank_L.append(rank)
        trace.admm_iterations.append(admm_its)
        trace.seconds.append(time.perf_counter() - t0)
        if callback is not None:
            callback(it, L, S1, S2, trace)
        if max(dL, d1, d2) < cfg.rel_tol:
            trace.converged = True
            break
    return Decomposition(L, S1, S2), trace
