"""Bayesian sparse coding over an overcomplete Haar dictionary.

A feature vector x (length P) is modeled as A h with h sparse.  Candidate
supports S are scored by a Bernoulli prior over activations times a
Gaussian residual likelihood exp(-||Z_S x||^2 / (2 sigma2)), where Z_S
projects onto the orthogonal complement of the selected atoms.  The
estimate h_hat is the posterior-weighted average of the per-support best
linear unbiased (least-squares) coefficients.

Two search modes share one scoring definition: exact enumeration of all
supports up to s_max, and a cardinality-stratified beam search that only
decides WHICH supports are visited.  `exact_mmse_oracle` is a separate,
deliberately plain enumeration used for differential testing; keep it
independent of `mmse_estimate`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadIndexSetError,
    EmptyCalibrationSetError,
    EnumerationTooLargeError,
    MalformedFileError,
    RankDeficientSupportError,
)

_COND_LIMIT = 1e10
# squared norm of an atom's component outside span(A_S) below which adding
# it would push the condition number past _COND_LIMIT
_BETA_MIN = 1e-20


@dataclass(frozen=True)
class Dictionary:
    matrix: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.matrix, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("dictionary must be a 2-D matrix")
        P, Q = a.shape
        if Q <= P:
            raise ValueError(f"dictionary must be overcomplete, got {P}x{Q}")
        if not np.all(np.isfinite(a)):
            raise ValueError("dictionary entries must be finite")
        norms = np.linalg.norm(a, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("dictionary columns must have unit norm")
        a = np.ascontiguousarray(a)
        a.flags.writeable = False
        object.__setattr__(self, "matrix", a)

    @property
    def P(self) -> int:
        return self.matrix.shape[0]

    @property
    def Q(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class SparsePrior:
    p: float
    sigma2: float

    def __post_init__(self):
        if not (0.0 < self.p < 1.0):
            raise ValueError("activation probability must lie in (0, 1)")
        if not (self.sigma2 > 0.0):
            raise ValueError("residual variance must be positive")


@dataclass(frozen=True)
class Support:
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("support indices must be strictly increasing")
        if idx and idx[0] < 0:
            raise ValueError("support indices must be nonnegative")
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class SparseEstimate:
    h_hat: np.ndarray
    supports: tuple[tuple[Support, float], ...]
    log_evidence: float

    def __post_init__(self):
        h = np.ascontiguousarray(np.asarray(self.h_hat, dtype=np.float64))
        supports = tuple((s, float(w)) for s, w in self.supports)
        total = math.fsum(w for _, w in supports)
        if any(w < 0 for _, w in supports) or abs(total - 1.0) > 1e-9:
            raise ValueError("posterior weights must be nonnegative and sum to 1")
        active = set()
        for s, _ in supports:
            active.update(s.indices)
        outside = np.setdiff1d(np.arange(h.size), sorted(active))
        if np.any(h[outside] != 0.0):
            raise ValueError("h_hat must vanish outside the visited supports")
        h.flags.writeable = False
        object.__setattr__(self, "h_hat", h)
        object.__setattr__(self, "supports", supports)


@dataclass(frozen=True)
class SearchConfig:
    mode: str = "beam"
    max_support_size: int = 8
    beam_width: int = 16

    def __post_init__(self):
        if self.mode not in ("exact", "beam"):
            raise ValueError(f"unknown search mode {self.mode!r}")
        if self.max_support_size < 1:
            raise ValueError("max_support_size must be >= 1")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")


def default_prior(x: np.ndarray, Q: int) -> SparsePrior:
    """p = 5/Q expected activations; sigma2 tied to the signal energy."""
    x = np.asarray(x, dtype=np.float64)
    sigma2 = max(0.01 * float(x @ x) / x.size, 1e-12)
    return SparsePrior(p=min(5.0 / Q, 0.5), sigma2=sigma2)


# --------------------------------------------------------------------------
# dictionary construction

def _haar_columns(n: int) -> np.ndarray:
    """Orthonormal Haar basis on length n (n a power of two), scaling
    function first, then wavelets coarse to fine, translates left to right."""
    cols = [np.full(n, 1.0 / math.sqrt(n))]
    j = 0
    while (1 << j) < n:
        block = n >> j  # support length at this scale
        half = block // 2
        amp = 1.0 / math.sqrt(block)
        for k in range(1 << j):
            w = np.zeros(n)
            w[k * block : k * block + half] = amp
            w[k * block + half : (k + 1) * block] = -amp
            cols.append(w)
        j += 1
    return np.column_stack(cols)


def build_wavelet_dictionary(P: int, overcompleteness: int = 4) -> Dictionary:
    """Haar basis on the next power of two, truncated to P rows, padded to
    Q = overcompleteness * P columns with circular shifts of the mother
    wavelets; near-duplicate or zero columns are replaced by seeded random
    unit vectors."""
    if P < 4:
        raise ValueError("feature length must be >= 4")
    if overcompleteness < 2:
        raise ValueError("overcompleteness factor must be >= 2")
    n = 1 << (P - 1).bit_length()
    Q = overcompleteness * P
    basis = _haar_columns(n)
    candidates = [basis[:, k] for k in range(n)]

    # circular shifts of each scale's mother wavelet, skipping shifts that
    # land on the dyadic translates already in the basis
    scales = []
    j = 0
    while (1 << j) < n:
        mother_index = 1 + ((1 << j) - 1)  # first translate at scale j
        scales.append((basis[:, mother_index], n >> j))
        j += 1
    for shift in range(1, n):
        for mother, block in scales:
            if shift % block != 0:
                candidates.append(np.roll(mother, shift))
        if len(candidates) >= Q + n:  # enough raw material even after drops
            break

    rng = np.random.default_rng([int(P), int(overcompleteness), 0x5A])
    accepted: list[np.ndarray] = []
    for raw in candidates:
        if len(accepted) == Q:
            break
        col = raw[:P].copy()
        norm = np.linalg.norm(col)
        if norm > 0:
            col /= norm
        while norm == 0.0 or (
            accepted and np.max(np.stack(accepted) @ col) > 1.0 - 1e-9
        ):
            col = rng.standard_normal(P)
            col /= np.linalg.norm(col)
            norm = 1.0
        accepted.append(col)
    while len(accepted) < Q:
        col = rng.standard_normal(P)
        col /= np.linalg.norm(col)
        if not accepted or np.max(np.stack(accepted) @ col) <= 1.0 - 1e-9:
            accepted.append(col)
    return Dictionary(np.column_stack(accepted))


# --------------------------------------------------------------------------
# per-support algebra

def _columns(A: Dictionary, S: Support) -> np.ndarray:
    if len(S) > A.P:
        raise RankDeficientSupportError(
            f"support size {len(S)} exceeds feature length {A.P}"
        )
    if S.indices and S.indices[-1] >= A.Q:
        raise ValueError(f"support index {S.indices[-1]} out of range for Q={A.Q}")
    return A.matrix[:, list(S.indices)]


def _check_rank(A_S: np.ndarray, S: Support) -> None:
    if A_S.shape[1] == 0:
        return
    if np.linalg.cond(A_S) >= _COND_LIMIT:
        raise RankDeficientSupportError(f"columns {S.indices} are rank deficient")


def blue_estimate(A: Dictionary, S: Support, x: np.ndarray) -> np.ndarray:
    """Least-squares coefficients of x on the selected atoms."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.P,):
        raise ValueError(f"x must have length {A.P}")
    A_S = _columns(A, S)
    _check_rank(A_S, S)
    if A_S.shape[1] == 0:
        return np.zeros(0)
    coef, *_ = np.linalg.lstsq(A_S, x, rcond=None)
    return coef


def complement_projector(A: Dictionary, S: Support) -> np.ndarray:
    """P x P projector onto the orthogonal complement of span(A_S)."""
    A_S = _columns(A, S)
    _check_rank(A_S, S)
    if A_S.shape[1] == 0:
        return np.eye(A.P)
    q, _ = np.linalg.qr(A_S)
    return np.eye(A.P) - q @ q.T


def support_log_prior(S: Support, prior: SparsePrior, Q: int) -> float:
    """Independent Bernoulli activations: |S| on, Q - |S| off."""
    k = len(S)
    return k * math.log(prior.p) + (Q - k) * math.log(1.0 - prior.p)


def support_log_likelihood(
    A: Dictionary, S: Support, x: np.ndarray, prior: SparsePrior
) -> float:
    """-||Z_S x||^2 / (2 sigma2): smaller residual, higher likelihood."""
    x = np.asarray(x, dtype=np.float64)
    r = complement_projector(A, S) @ x
    return -float(r @ r) / (2.0 * prior.sigma2)


def _log_posterior(A: Dictionary, S: Support, x, prior: SparsePrior) -> float:
    return support_log_likelihood(A, S, x, prior) + support_log_prior(S, prior, A.Q)


# --------------------------------------------------------------------------
# support search

def _beam_supports(
    A: Dictionary, x: np.ndarray, prior: SparsePrior, cfg: SearchConfig
) -> list[Support]:
    """Cardinality-stratified beam search; returns the visited supports.

    Each node carries an orthonormal basis of its atoms so every expansion
    scores in O(PQ) per node.  Selection ranks by the incremental residual
    score; ties break toward the lexicographically smaller support.
    """
    P, Q = A.P, A.Q
    log_p_on = math.log(prior.p) - math.log(1.0 - prior.p)
    base_prior = Q * math.log(1.0 - prior.p)

    visited = [Support(())]
    # node: (indices, orthonormal basis (P, k), residual squared norm)
    level = [((), np.zeros((P, 0)), float(x @ x))]
    for depth in range(1, cfg.max_support_size + 1):
        prior_term = base_prior + depth * log_p_on
        # per candidate support: (score, parent basis, new direction, rho)
        candidates: dict[tuple[int, ...], tuple[float, np.ndarray, np.ndarray, float]] = {}
        for indices, basis, rho in level:
            resid_atoms = A.matrix - basis @ (basis.T @ A.matrix)
            beta = np.einsum("ij,ij->j", resid_atoms, resid_atoms)
            gain = resid_atoms.T @ x
            for j in range(Q):
                if j in indices or beta[j] < _BETA_MIN:
                    continue
                new_rho = max(rho - gain[j] * gain[j] / beta[j], 0.0)
                key = tuple(sorted(indices + (j,)))
                score = -new_rho / (2.0 * prior.sigma2) + prior_term
                known = candidates.get(key)
                if known is None or score > known[0]:
                    candidates[key] = (score, basis, resid_atoms[:, j], new_rho)
        if not candidates:
            break
        ranked = sorted(candidates.items(), key=lambda kv: (-kv[1][0], kv[0]))
        level = []
        for key, (_, parent_basis, b, new_rho) in ranked[: cfg.beam_width]:
            q = b / np.linalg.norm(b)
            level.append((key, np.column_stack([parent_basis, q]), new_rho))
            visited.append(Support(key))
    return visited


def _exact_supports(Q: int, s_max: int) -> list[Support]:
    out = []
    for k in range(0, s_max + 1):
        out.extend(Support(c) for c in itertools.combinations(range(Q), k))
    return out


def _weighted_estimate(
    A: Dictionary,
    x: np.ndarray,
    prior: SparsePrior,
    supports: list[Support],
) -> SparseEstimate:
    """Score supports canonically, normalize, and average BLUE coefficients."""
    scored: list[tuple[Support, float, np.ndarray]] = []
    for S in supports:
        try:
            coef = blue_estimate(A, S, x)
            score = _log_posterior(A, S, x, prior)
        except RankDeficientSupportError:
            continue  # mass excluded
        scored.append((S, score, coef))
    if not scored:
        raise RankDeficientSupportError("every candidate support was rank deficient")
    scores = np.array([s for _, s, _ in scored])
    m = float(scores.max())
    unnorm = np.exp(scores - m)
    total = float(unnorm.sum())
    weights = unnorm / total
    log_evidence = m + math.log(total)

    h_hat = np.zeros(A.Q)
    for (S, _, coef), w in zip(scored, weights):
        h_hat[list(S.indices)] += w * coef
    order = sorted(range(len(scored)), key=lambda i: (-weights[i], scored[i][0].indices))
    pairs = tuple((scored[i][0], float(weights[i])) for i in order)
    return SparseEstimate(h_hat=h_hat, supports=pairs, log_evidence=log_evidence)


def mmse_estimate(
    A: Dictionary, x: np.ndarray, prior: SparsePrior, cfg: SearchConfig
) -> SparseEstimate:
    """Posterior-weighted sparse coefficient estimate.

    Exact mode enumerates every support up to max_support_size; beam mode
    visits the empty support plus the top beam_width supports per
    cardinality.  Both normalize posteriors over the visited set.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.P,):
        raise ValueError(f"x must have length {A.P}")
    if cfg.mode == "exact":
        supports = _exact_supports(A.Q, min(cfg.max_support_size, A.P))
    else:
        supports = _beam_supports(A, x, prior, cfg)
    return _weighted_estimate(A, x, prior, supports)


def exact_mmse_oracle(
    A: Dictionary, x: np.ndarray, prior: SparsePrior, s_max: int
) -> SparseEstimate:
    """Plain full-enumeration reference: normal equations, inline scoring.

    Independent of mmse_estimate on purpose; used for differential tests.
    """
    x = np.asarray(x, dtype=np.float64)
    P, Q = A.P, A.Q
    s_max = min(s_max, P)
    total_supports = sum(math.comb(Q, k) for k in range(s_max + 1))
    if total_supports > 1_000_000:
        raise EnumerationTooLargeError(f"{total_supports} supports exceed the cap")

    entries = []  # (indices, log score, coefficients)
    for k in range(s_max + 1):
        for combo in itertools.combinations(range(Q), k):
            A_S = A.matrix[:, list(combo)]
            if k > 0:
                if np.linalg.cond(A_S) >= _COND_LIMIT:
                    continue
                coef = np.linalg.inv(A_S.T @ A_S) @ (A_S.T @ x)
                resid = x - A_S @ coef
            else:
                coef = np.zeros(0)
                resid = x
            score = (
                -float(resid @ resid) / (2.0 * prior.sigma2)
                + k * math.log(prior.p)
                + (Q - k) * math.log(1.0 - prior.p)
            )
            entries.append((combo, score, coef))

    m = max(s for _, s, _ in entries)
    unnorm = [math.exp(s - m) for _, s, _ in entries]
    total = math.fsum(unnorm)
    h_hat = np.zeros(Q)
    pairs = []
    for (combo, _, coef), u in zip(entries, unnorm):
        w = u / total
        h_hat[list(combo)] += w * coef
        pairs.append((Support(combo), w))
    pairs.sort(key=lambda sw: (-sw[1], sw[0].indices))
    return SparseEstimate(
        h_hat=h_hat, supports=tuple(pairs), log_evidence=m + math.log(total)
    )


# --------------------------------------------------------------------------
# 30-sample feature reduction

def reduce_to_sparse_feature(est: SparseEstimate, index_set) -> np.ndarray:
    """Restrict h_hat to the 30 calibrated dictionary indices."""
    idx = [int(i) for i in index_set]
    if len(idx) != 30:
        raise BadIndexSetError(f"index set must hold 30 indices, got {len(idx)}")
    if any(b <= a for a, b in zip(idx, idx[1:])):
        raise BadIndexSetError("index set must be strictly increasing")
    if idx[0] < 0 or idx[-1] >= est.h_hat.size:
        raise BadIndexSetError("index out of dictionary range")
    return est.h_hat[idx]


def calibrate_index_set(estimates, k: int = 30) -> list[int]:
    """The k dictionary indices with the largest mean squared coefficient
    over the calibration estimates; ties prefer the lower index.  Returned
    ascending."""
    estimates = list(estimates)
    if not estimates:
        raise EmptyCalibrationSetError("no calibration estimates")
    Q = estimates[0].h_hat.size
    if any(e.h_hat.size != Q for e in estimates):
        raise ValueError("calibration estimates must share the dictionary size")
    if not (1 <= k <= Q):
        raise ValueError(f"k must lie in [1, {Q}]")
    energy = np.mean([e.h_hat**2 for e in estimates], axis=0)
    ranked = np.lexsort((np.arange(Q), -energy))
    return sorted(int(i) for i in ranked[:k])


# --------------------------------------------------------------------------
# serialization

def write_dictionary_csv(A: Dictionary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{A.P},{A.Q}\n")
        for row in A.matrix:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_dictionary_csv(path: str | Path) -> Dictionary:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if len(header) != 2:
            raise MalformedFileError(f"{path}: first line must be P,Q")
        try:
            P, Q = int(header[0]), int(header[1])
        except ValueError:
            raise MalformedFileError(f"{path}: non-integer dimensions") from None
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            if len(parts) != Q:
                raise MalformedFileError(f"{path}:{lineno}: expected {Q} columns")
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise MalformedFileError(f"{path}:{lineno}: non-numeric entry") from None
    if len(rows) != P:
        raise MalformedFileError(f"{path}: expected {P} rows, found {len(rows)}")
    return Dictionary(np.array(rows))


def write_index_set(index_set, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in index_set:
            fh.write(f"{int(i)}\n")


def read_index_set(path: str | Path) -> list[int]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    try:
        return [int(ln) for ln in lines]
    except ValueError:
        raise MalformedFileError(f"{path}: non-integer index line") from None
