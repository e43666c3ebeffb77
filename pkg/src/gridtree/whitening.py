"""Cholesky whitening of complex current deviations.

The whitening matrix is the inverse of the *upper*-triangular factor ``M`` with
``M @ M^H = Sigma``.  Because ``M`` is upper triangular, factoring only the
trailing (observed) block of a covariance yields exactly the trailing block of
the full factor; :func:`check_theorem1` and :func:`check_theorem2` turn the two
consequences of that structure into executable checks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import WhiteningError

log = logging.getLogger(__name__)

JITTER = 1e-10


@dataclass
class WhiteningPair:
    """Upper-triangular whitening matrix ``W`` and its inverse ``M``."""

    W: np.ndarray
    M: np.ndarray
    bus_order: list = field(default_factory=list)
    jittered: bool = False


def sample_covariance(I: np.ndarray) -> np.ndarray:
    """Covariance ``E[i i^H]`` of the per-sample current vectors, normalized by 1/N.

    ``I`` holds one sample per row, so this is ``(1/N) I^T conj(I)``: the
    convention under which :func:`whiten` yields identity covariance.
    """
    I = np.asarray(I)
    n, m = I.shape
    if n < m + 1:
        raise WhiteningError(f"insufficient samples: N={n} for {m} columns")
    S = I.T @ I.conj() / n
    return (S + S.conj().T) / 2


def _upper_cholesky(S: np.ndarray) -> np.ndarray:
    # Reverse order, take the lower factor, reverse back: L' L'^H = P S P gives
    # (P L' P)(P L' P)^H = S with P L' P upper triangular.
    R = S[::-1, ::-1]
    L = np.linalg.cholesky(R)
    return L[::-1, ::-1]


def cholesky_upper(S: np.ndarray, bus_order=None) -> WhiteningPair:
    """Factor a Hermitian positive definite matrix as ``M M^H`` with ``M`` upper.

    The diagonal of ``M`` is real and positive.  If the first attempt fails a
    jitter of ``1e-10 * mean(diag(S))`` is added to the diagonal once.
    """
    S = np.asarray(S, dtype=complex)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise WhiteningError("covariance must be square")
    jittered = False
    try:
        M = _upper_cholesky(S)
    except np.linalg.LinAlgError:
        delta = JITTER * float(np.mean(np.real(np.diag(S))))
        log.warning("covariance not positive definite; retrying with jitter %.3g", delta)
        try:
            M = _upper_cholesky(S + delta * np.eye(S.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise WhiteningError("singular covariance") from exc
        jittered = True
    W = solve_triangular(M, np.eye(M.shape[0], dtype=complex), lower=False)
    return WhiteningPair(W=W, M=M, bus_order=list(bus_order or []), jittered=jittered)


def whiten(I: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Apply ``(I~)^T = W I^T`` row-wise to an ``N x m`` sample matrix."""
    I = np.asarray(I)
    W = np.asarray(W)
    if W.shape != (I.shape[1], I.shape[1]):
        raise WhiteningError(f"whitening matrix {W.shape} does not match {I.shape[1]} columns")
    return I @ W.T


def unwhiten(I_white: np.ndarray, M: np.ndarray) -> np.ndarray:
    return np.asarray(I_white) @ np.asarray(M).T


def check_theorem1(S_full: np.ndarray, observed_idx) -> float:
    """Max deviation between the factor of the trailing block and the trailing
    block of the full factor.  ``observed_idx`` must be the last indices."""
    S_full = np.asarray(S_full, dtype=complex)
    n = S_full.shape[0]
    idx = sorted(int(i) for i in observed_idx)
    if not idx or idx != list(range(n - len(idx), n)):
        raise WhiteningError("ordering violates trailing-block premise: observed indices must be last")
    k = idx[0]
    full = cholesky_upper(S_full)
    M_obs = cholesky_upper(S_full[k:, k:]).M
    dev = float(np.max(np.abs(full.M[k:, k:] - M_obs)))
    return max(dev, float(np.max(np.abs(full.W[k:, k:] - np.linalg.inv(M_obs)))))


def check_theorem2(S_full: np.ndarray, n_observed: int) -> float:
    """Frobenius norm of the hidden/observed block ``M_2`` of the full factor.

    Zero whenever the hidden/observed cross-covariance is zero.
    """
    S_full = np.asarray(S_full, dtype=complex)
    k = S_full.shape[0] - int(n_observed)
    if not 0 <= k <= S_full.shape[0]:
        raise WhiteningError("n_observed out of range")
    M = cholesky_upper(S_full).M
    return float(np.linalg.norm(M[:k, k:]))
