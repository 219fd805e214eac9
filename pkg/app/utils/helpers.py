import numpy as np
from typing import Optional
import logging

logger = logging.getLogger(__name__)


class NonFiniteError(ValueError):
    """A numeric input or intermediate contained NaN or inf"""

    def __init__(self, what: str, k: Optional[int] = None):
        self.what = what
        self.k = k
        where = f" at k={k}" if k is not None else ""
        super().__init__(f"Non-finite values in {what}{where}")


def require_finite(values: np.ndarray, what: str, k: Optional[int] = None) -> np.ndarray:
    """
    Return `values` as a float array, raising NonFiniteError on NaN/inf

    Args:
        values: array-like to check
        what: name used in the error message
        k: optional time index carried by the error
    """
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(what, k)
    return arr


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    """Average a square matrix with its transpose"""
    return 0.5 * (matrix + matrix.T)


def frozen(arr: np.ndarray) -> np.ndarray:
    """Read-only float copy, for containers that are shared across workers"""
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def lag1_autocorrelation(chain: np.ndarray) -> np.ndarray:
    """
    Lag-1 autocorrelation per column of an (n, p) chain

    Constant columns yield 0.
    """
    chain = np.asarray(chain, dtype=float)
    if chain.ndim == 1:
        chain = chain[:, None]
    if chain.shape[0] < 3:
        return np.zeros(chain.shape[1])
    centred = chain - chain.mean(axis=0)
    denom = np.sum(centred ** 2, axis=0)
    numer = np.sum(centred[1:] * centred[:-1], axis=0)
    out = np.zeros(chain.shape[1])
    ok = denom > 0
    out[ok] = numer[ok] / denom[ok]
    return out


def batch_means_se(chain: np.ndarray, n_batches: int = 20) -> np.ndarray:
    """
    Batch-means standard error of the column means of an (n, p) chain

    Short chains fall back to the i.i.d. formula; fewer than two rows give 0.
    """
    chain = np.asarray(chain, dtype=float)
    if chain.ndim == 1:
        chain = chain[:, None]
    if chain.shape[0] < 2:
        return np.zeros(chain.shape[1])
    n = chain.shape[0] - chain.shape[0] % n_batches
    if n < n_batches * 2:
        return chain.std(axis=0, ddof=1) / np.sqrt(max(chain.shape[0], 1))
    batches = chain[:n].reshape(n_batches, n // n_batches, -1).mean(axis=1)
    return batches.std(axis=0, ddof=1) / np.sqrt(n_batches)
