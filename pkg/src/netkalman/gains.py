"""Optimal structured estimator gains for the four delay outcomes.

Given the prior covariance, the update gain that minimizes the posterior
trace is the standard Kalman gain when both cross measurements arrive on
time.  When a cross measurement is delayed the corresponding gain block
is forced to zero, and the constrained optimum has a closed form built
from the blocks of the innovation covariance.  This module computes those
closed forms, and also provides an exact brute-force oracle (row-wise
normal equations over the free entries) used to verify them.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .model import ALL_OUTCOMES, BlockDims, DelayOutcome

__all__ = [
    "StructuredMask",
    "InnovationBlocks",
    "GainSet",
    "mask_for_outcome",
    "mask_pattern",
    "innovation_blocks",
    "optimal_gain",
    "gain_set",
    "oracle_structured_gain",
    "posterior_cov",
    "kalman_factorization_check",
]

COND_WARN = 1e12


class StructuredMask(enum.Enum):
    """Zero pattern forced on an (n, m) gain by a delay outcome.

    ``FULL`` leaves all entries free; ``BLOCK_DIAG`` zeroes both
    cross blocks; ``LOWER_BLOCK`` zeroes the upper-right (n1, m2) block;
    ``UPPER_BLOCK`` zeroes the lower-left (n2, m1) block.  As sets of
    admissible matrices, FULL contains LOWER_BLOCK and UPPER_BLOCK, both
    of which contain BLOCK_DIAG.
    """

    FULL = "full"
    BLOCK_DIAG = "block_diag"
    LOWER_BLOCK = "lower_block"
    UPPER_BLOCK = "upper_block"


_OUTCOME_MASK = {
    "11": StructuredMask.FULL,
    "01": StructuredMask.LOWER_BLOCK,
    "10": StructuredMask.UPPER_BLOCK,
    "00": StructuredMask.BLOCK_DIAG,
}


def mask_for_outcome(outcome: DelayOutcome) -> StructuredMask:
    """The gain structure admissible under a delay outcome."""
    return _OUTCOME_MASK[outcome.label]


def mask_pattern(mask: StructuredMask, dims: BlockDims) -> np.ndarray:
    """Boolean (n, m) array marking the free entries of a masked gain."""
    n1, n2, m1, m2 = dims
    free = np.ones((n1 + n2, m1 + m2), dtype=bool)
    if mask in (StructuredMask.BLOCK_DIAG, StructuredMask.LOWER_BLOCK):
        free[:n1, m1:] = False
    if mask in (StructuredMask.BLOCK_DIAG, StructuredMask.UPPER_BLOCK):
        free[n1:, :m1] = False
    return free


def _sym(M: np.ndarray) -> np.ndarray:
    return (M + M.T) / 2.0


def _warn_cond(M: np.ndarray, what: str):
    c = np.linalg.cond(M)
    if c > COND_WARN:
        warnings.warn(f"{what} is ill conditioned (cond ~ {c:.2e})", RuntimeWarning)


def _spd_inverse(M: np.ndarray, what: str) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via Cholesky solve."""
    _warn_cond(M, what)
    factor = sla.cho_factor(_sym(M), lower=True)
    return sla.cho_solve(factor, np.eye(M.shape[0]))


@dataclass(frozen=True)
class InnovationBlocks:
    """Blocks of the innovation covariance ``S = V + C P C^T``.

    ``s12``/``s21`` are the off-diagonal sensor-coupling blocks of S,
    ``s11_inv``/``s22_inv`` the inverses of its diagonal blocks (both
    symmetric positive definite), and ``xcov1``/``xcov2`` the columns of
    the state/measurement cross covariance ``P C^T`` belonging to sensor
    1 and sensor 2.
    """

    s21: np.ndarray
    xcov1: np.ndarray
    s11_inv: np.ndarray
    s12: np.ndarray
    xcov2: np.ndarray
    s22_inv: np.ndarray


def innovation_blocks(P, C, V, dims: BlockDims) -> InnovationBlocks:
    """Split ``V + C P C^T`` and ``P C^T`` into per-sensor blocks.

    P must be symmetric positive semidefinite and V positive definite;
    the diagonal blocks are then positive definite and inverted via
    Cholesky solves.
    """
    P = _sym(np.asarray(P, dtype=float))
    C = np.asarray(C, dtype=float)
    V = np.asarray(V, dtype=float)
    eigs = np.linalg.eigvalsh(P)
    if eigs[0] < -1e-8 * max(eigs[-1], 1.0):
        raise ValueError(f"P is not positive semidefinite (min eig {eigs[0]:.3e})")
    m1 = dims.m1
    S = _sym(V + C @ P @ C.T)
    xcov = P @ C.T
    return InnovationBlocks(
        s21=S[m1:, :m1].copy(),
        xcov1=xcov[:, :m1].copy(),
        s11_inv=_spd_inverse(S[:m1, :m1], "sensor-1 innovation covariance"),
        s12=S[:m1, m1:].copy(),
        xcov2=xcov[:, m1:].copy(),
        s22_inv=_spd_inverse(S[m1:, m1:], "sensor-2 innovation covariance"),
    )


def _kalman_gain(P, C, V) -> np.ndarray:
    S = _sym(V + C @ P @ C.T)
    _warn_cond(S, "innovation covariance")
    factor = sla.cho_factor(S, lower=True)
    return sla.cho_solve(factor, (P @ C.T).T).T


def _rsolve(B: np.ndarray, M: np.ndarray, what: str) -> np.ndarray:
    """Compute ``B @ inv(M)`` for a general square M via an LU solve."""
    _warn_cond(M, what)
    return np.linalg.solve(M.T, B.T).T


def optimal_gain(P, C, V, dims: BlockDims, outcome: DelayOutcome) -> np.ndarray:
    """Trace-optimal update gain under the structure forced by ``outcome``.

    Minimizes ``trace((I - D C) P (I - D C)^T + D V D^T)`` over gains D
    whose blocks match :func:`mask_for_outcome`.  The masked-out blocks
    of the result are exact zeros.
    """
    P = _sym(np.asarray(P, dtype=float))
    C = np.asarray(C, dtype=float)
    V = np.asarray(V, dtype=float)
    n1, n2, m1, m2 = dims
    n, m = dims.n, dims.m

    if outcome.label == "11":
        return _kalman_gain(P, C, V)

    blocks = innovation_blocks(P, C, V, dims)
    D = np.zeros((n, m))
    if outcome.label == "00":
        # Decoupled: each subsystem applies its local Kalman gain.
        D[:n1, :m1] = blocks.xcov1[:n1] @ blocks.s11_inv
        D[n1:, m1:] = blocks.xcov2[n1:] @ blocks.s22_inv
        return D

    # Coupling corrections between the free column blocks.
    cross12 = blocks.s11_inv @ blocks.s12 @ blocks.s22_inv  # inv(S11) S12 inv(S22)
    if outcome.label == "01":
        # Sensor-1 columns fully free, sensor-2 columns restricted to
        # subsystem 2.
        resid2 = blocks.xcov1 @ cross12 - blocks.xcov2 @ blocks.s22_inv
        coupling = resid2[n1:]  # (n2, m2)
        system = np.eye(m2) - blocks.s21 @ cross12
        own2 = -_rsolve(coupling, system, "delayed-to-1 gain system")
        left = blocks.xcov1 - np.vstack([np.zeros((n1, m2)), own2]) @ blocks.s21
        D[:, :m1] = left @ blocks.s11_inv
        D[n1:, m1:] = own2
        return D

    if outcome.label == "10":
        cross21 = blocks.s22_inv @ blocks.s21 @ blocks.s11_inv
        resid1 = blocks.xcov2 @ cross21 - blocks.xcov1 @ blocks.s11_inv
        coupling = resid1[:n1]  # (n1, m1)
        system = np.eye(m1) - blocks.s12 @ cross21
        own1 = -_rsolve(coupling, system, "delayed-to-2 gain system")
        right = blocks.xcov2 - np.vstack([own1, np.zeros((n2, m1))]) @ blocks.s12
        D[:n1, :m1] = own1
        D[:, m1:] = right @ blocks.s22_inv
        return D

    raise ValueError(f"unknown outcome {outcome!r}")


@dataclass(frozen=True)
class GainSet:
    """The four structured optimal gains for one prior covariance."""

    d11: np.ndarray
    d01: np.ndarray
    d10: np.ndarray
    d00: np.ndarray

    def for_outcome(self, outcome: DelayOutcome) -> np.ndarray:
        return getattr(self, f"d{outcome.label}")


def gain_set(P, C, V, dims: BlockDims) -> GainSet:
    """Compute all four per-outcome optimal gains at once."""
    return GainSet(
        **{
            f"d{oc.label}": optimal_gain(P, C, V, dims, oc)
            for oc in ALL_OUTCOMES
        }
    )


def oracle_structured_gain(P, C, V, dims: BlockDims, mask: StructuredMask) -> np.ndarray:
    """Exact masked minimizer of the posterior trace, by normal equations.

    The objective ``trace((I - D C) P (I - D C)^T + D V D^T)`` decouples
    across rows of D: row i minimizes ``d S d^T - 2 d b_i^T`` over its
    free entries, with ``S = V + C P C^T`` and ``b = P C^T``.  Each row
    is solved exactly with a Cholesky factorization of the corresponding
    principal submatrix of S.  Independent of :func:`optimal_gain`.
    """
    P = _sym(np.asarray(P, dtype=float))
    C = np.asarray(C, dtype=float)
    V = np.asarray(V, dtype=float)
    free = mask_pattern(mask, dims)
    S = _sym(V + C @ P @ C.T)
    B = P @ C.T
    D = np.zeros((dims.n, dims.m))
    # All rows of a subsystem share a support; factor once per support.
    for rows in (range(0, dims.n1), range(dims.n1, dims.n)):
        rows = list(rows)
        cols = np.where(free[rows[0]])[0]
        if cols.size == 0:
            continue
        factor = sla.cho_factor(S[np.ix_(cols, cols)], lower=True)
        sol = sla.cho_solve(factor, B[np.ix_(rows, cols)].T).T
        D[np.ix_(rows, cols)] = sol
    return D


def posterior_cov(P, D, C, V) -> np.ndarray:
    """Posterior covariance for gain D, in the numerically safe product form.

    ``(I - D C) P (I - D C)^T + D V D^T``, symmetrized on output.
    """
    P = np.asarray(P, dtype=float)
    D = np.asarray(D, dtype=float)
    IDC = np.eye(P.shape[0]) - D @ C
    return _sym(IDC @ P @ IDC.T + D @ V @ D.T)


def kalman_factorization_check(P, C, V, dims: BlockDims) -> float:
    """Max-abs deviation of the block factorization of the Kalman gain.

    The unconstrained gain ``P C^T (V + C P C^T)^{-1}`` factors through
    the per-sensor blocks: ``[xcov1 xcov2]`` times the inverse of the
    2x2 block matrix ``[[S11, S12], [S21, S22]]``.  Returns the largest
    absolute entry of the difference between the two evaluations (zero up
    to rounding).
    """
    P = _sym(np.asarray(P, dtype=float))
    C = np.asarray(C, dtype=float)
    V = np.asarray(V, dtype=float)
    lhs = _kalman_gain(P, C, V)
    # Rebuild both factors from the computed per-sensor pieces (inverting
    # the stored diagonal-block inverses back), then compare.
    b = innovation_blocks(P, C, V, dims)
    m1, m2 = dims.m1, dims.m2
    assembled = np.block(
        [
            [sla.cho_solve(sla.cho_factor(b.s11_inv, lower=True), np.eye(m1)), b.s12],
            [b.s21, sla.cho_solve(sla.cho_factor(b.s22_inv, lower=True), np.eye(m2))],
        ]
    )
    rhs = np.linalg.solve(assembled.T, np.hstack([b.xcov1, b.xcov2]).T).T
    return float(np.abs(lhs - rhs).max())
