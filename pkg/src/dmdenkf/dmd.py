"""Exact and total-least-squares dynamic mode decomposition.

Snapshots are stored column-wise.  A series is passed as an ``(m, n)``
array (one row per time step) and turned into the pair of shifted
snapshot matrices ``X`` and ``X'`` by :func:`build_snapshots`, optionally
after a time-delay (Hankel) embedding with the newest block on top.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "DmdError",
    "InsufficientDataError",
    "RankShrinkWarning",
    "SnapshotPair",
    "SvdTruncation",
    "DmdModel",
    "delay_embed",
    "build_snapshots",
    "fit_exact_dmd",
    "fit_tdmd",
    "predict",
    "propagate_state",
    "sort_spectrum",
    "find_pairing",
    "check_conjugate_closed",
    "cumulative_energy",
]

PAIR_TOL = 1e-8
# singular values below RANK_RTOL * s_max are treated as zero
RANK_RTOL = 1e-10


class DmdError(ValueError):
    pass


class InsufficientDataError(DmdError):
    pass


class RankShrinkWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SnapshotPair:
    """Shifted snapshot matrices ``X`` and ``Xprime`` (state x time).

    ``n`` is the original state dimension and ``d`` the delay-embedding
    dimension, so both matrices have ``n * d`` rows.
    """

    X: np.ndarray
    Xprime: np.ndarray
    n: int
    d: int = 1

    def __post_init__(self):
        if self.X.shape != self.Xprime.shape:
            raise DmdError(
                f"X and Xprime shapes differ: {self.X.shape} vs {self.Xprime.shape}"
            )
        if self.X.shape[0] != self.n * self.d:
            raise DmdError("row count must equal n * d")

    @property
    def n_eff(self) -> int:
        return self.n * self.d


@dataclass(frozen=True)
class SvdTruncation:
    """Rule for choosing the retained SVD rank.

    Use the constructors :meth:`fixed_rank`, :meth:`drop_smallest` and
    :meth:`energy_threshold` rather than building instances directly.
    """

    policy: str = "full"
    value: float = 0

    def __post_init__(self):
        if self.policy not in ("full", "fixed_rank", "drop_smallest", "energy_threshold"):
            raise ValueError(f"unknown truncation policy {self.policy!r}")
        if self.policy == "fixed_rank" and int(self.value) < 1:
            raise ValueError("fixed rank must be >= 1")
        if self.policy == "drop_smallest" and int(self.value) < 0:
            raise ValueError("cannot drop a negative number of singular values")
        if self.policy == "energy_threshold" and not 0 < self.value <= 1:
            raise ValueError("energy fraction must lie in (0, 1]")

    @classmethod
    def full(cls) -> SvdTruncation:
        return cls("full", 0)

    @classmethod
    def fixed_rank(cls, r: int) -> SvdTruncation:
        return cls("fixed_rank", int(r))

    @classmethod
    def drop_smallest(cls, k: int = 1) -> SvdTruncation:
        return cls("drop_smallest", int(k))

    @classmethod
    def energy_threshold(cls, fraction: float) -> SvdTruncation:
        return cls("energy_threshold", float(fraction))

    def rank(self, singular_values: np.ndarray) -> int:
        """Number of singular values to keep (before any rank shrinking)."""
        s = np.asarray(singular_values)
        k = s.size
        if self.policy == "full":
            return k
        if self.policy == "fixed_rank":
            r = int(self.value)
            if r > k:
                raise DmdError(f"requested rank {r} exceeds min(rows, cols) = {k}")
            return r
        if self.policy == "drop_smallest":
            return max(k - int(self.value), 1)
        energy = np.cumsum(s**2) / np.sum(s**2)
        return int(np.searchsorted(energy, self.value - 1e-12) + 1)

    def to_dict(self) -> dict:
        return {"policy": self.policy, "value": self.value}

    @classmethod
    def from_dict(cls, data: dict) -> SvdTruncation:
        return cls(data["policy"], data["value"])


@dataclass(frozen=True)
class DmdModel:
    """Spatial modes, temporal modes and amplitudes of a fitted DMD.

    Attributes
    ----------
    modes : (n * d, r) complex ndarray
        Spatial modes, one per column.
    eigenvalues : (r,) complex ndarray
        Temporal modes, sorted by descending modulus then ascending
        argument in ``[0, 2 pi)``.
    amplitudes : (r,) complex ndarray
        Least-squares coordinates of the first snapshot in the mode basis.
    pairing : tuple of tuples
        ``(i,)`` for a real temporal mode, ``(i, j)`` for a conjugate pair
        where ``i`` is the member with positive imaginary part.
    zero_modes : tuple of int
        Indices of (numerically) zero eigenvalues whose columns use the
        projected mode instead of the exact one.
    """

    modes: np.ndarray
    eigenvalues: np.ndarray
    amplitudes: np.ndarray
    pairing: tuple
    n: int
    d: int = 1
    zero_modes: tuple = ()

    @property
    def rank(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def n_eff(self) -> int:
        return self.n * self.d

    @cached_property
    def modes_pinv(self) -> np.ndarray:
        return np.linalg.pinv(self.modes)

    @property
    def has_complex_pair(self) -> bool:
        return any(len(g) == 2 for g in self.pairing)

    def operator(self) -> np.ndarray:
        """Dense real one-step operator ``Phi Lambda Phi^+``."""
        return np.real((self.modes * self.eigenvalues) @ self.modes_pinv)


def delay_embed(series, d: int) -> np.ndarray:
    """Stack ``d`` consecutive states into columns, newest block on top.

    Column ``j`` holds ``[x_{j+d}; x_{j+d-1}; ...; x_{j+1}]`` (1-based time),
    giving an ``(n * d, m - d + 1)`` array.
    """
    data = _as_series(series)
    m, n = data.shape
    if d < 1:
        raise ValueError("delay dimension must be >= 1")
    if m < d:
        raise InsufficientDataError(f"insufficient data: {m} snapshots for d={d}")
    cols = m - d + 1
    H = np.empty((n * d, cols))
    for lag in range(d):
        # block `lag` holds x_{k - lag}
        H[lag * n:(lag + 1) * n, :] = data[d - 1 - lag:d - 1 - lag + cols].T
    return H


def build_snapshots(series, d: int = 1) -> SnapshotPair:
    """Build the shifted snapshot matrices from a time series.

    Parameters
    ----------
    series : (m, n) array_like or sequence of scalars
        States in time order.
    d : int
        Delay-embedding dimension; 1 means no embedding.

    Raises
    ------
    InsufficientDataError
        If there are not at least ``d + 1`` snapshots.
    """
    data = _as_series(series)
    m, n = data.shape
    if m <= d:
        raise InsufficientDataError(
            f"insufficient data: need at least {d + 1} snapshots, got {m}"
        )
    H = delay_embed(data, d)
    return SnapshotPair(H[:, :-1].copy(), H[:, 1:].copy(), n=n, d=d)


def _as_series(series) -> np.ndarray:
    data = np.asarray(series, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if data.ndim != 2:
        raise ValueError("series must be a sequence of equal-length vectors")
    return data


def sort_spectrum(eigenvalues: np.ndarray) -> np.ndarray:
    """Permutation ordering by descending modulus, then ascending argument."""
    lam = np.asarray(eigenvalues)
    arg = np.mod(np.angle(lam), 2 * np.pi)
    return np.lexsort((arg, -np.abs(lam)))


def find_pairing(eigenvalues: np.ndarray, tol: float = PAIR_TOL) -> tuple:
    """Group eigenvalues into real singletons and conjugate pairs.

    Raises
    ------
    DmdError
        If a non-real eigenvalue has no conjugate partner.
    """
    lam = np.asarray(eigenvalues)
    used = np.zeros(lam.size, dtype=bool)
    groups = []
    for i in range(lam.size):
        if used[i]:
            continue
        used[i] = True
        if abs(lam[i].imag) <= tol:
            groups.append((i,))
            continue
        candidates = [
            j for j in range(lam.size)
            if not used[j] and abs(lam[j] - np.conj(lam[i])) <= tol
        ]
        if not candidates:
            raise DmdError(f"eigenvalue {lam[i]} at index {i} has no conjugate partner")
        j = candidates[0]
        used[j] = True
        groups.append((i, j) if lam[i].imag > 0 else (j, i))
    return tuple(groups)


def check_conjugate_closed(eigenvalues, pairing, tol: float = PAIR_TOL) -> None:
    lam = np.asarray(eigenvalues)
    seen = sorted(i for g in pairing for i in g)
    if seen != list(range(lam.size)):
        raise DmdError("pairing does not cover every temporal mode exactly once")
    for g in pairing:
        if len(g) == 1:
            if abs(lam[g[0]].imag) > tol:
                raise DmdError(f"temporal mode {g[0]} should be real, got {lam[g[0]]}")
        elif abs(lam[g[0]] - np.conj(lam[g[1]])) > tol:
            raise DmdError(f"temporal modes {g} are not a conjugate pair")


def _truncated_svd(X: np.ndarray, trunc: SvdTruncation):
    if not np.any(X):
        raise DmdError("all-zero data")
    U, s, Vh = np.linalg.svd(X, full_matrices=False)
    r = trunc.rank(s)
    numerical = int(np.sum(s > RANK_RTOL * s[0]))
    if numerical < r:
        warnings.warn(
            f"rank shrunk from {r} to {numerical}: zero singular values inside "
            "the retained rank", RankShrinkWarning, stacklevel=3,
        )
        r = numerical
    return U[:, :r], s[:r], Vh[:r].conj().T


def _exact_from_svd(X, Xp, U, s, V, n, d, tol) -> DmdModel:
    XpV_s = (Xp @ V) / s
    atilde = U.conj().T @ XpV_s
    lam, W = np.linalg.eig(atilde)
    # snap tiny imaginary parts so real modes stay exactly real
    real = np.abs(lam.imag) <= tol
    lam = np.where(real, lam.real, lam)
    order = sort_spectrum(lam)
    lam, W = lam[order], W[:, order]
    W[:, real[order]] = W[:, real[order]].real
    modes = XpV_s @ W
    scale = np.max(np.abs(lam)) if lam.size else 0.0
    zero = np.abs(lam) <= 1e-12 * max(scale, 1.0)
    if np.any(zero):
        modes[:, zero] = U @ W[:, zero]
    modes = _normalize_columns(modes)
    pairing = find_pairing(lam, tol)
    # enforce exact conjugate symmetry of paired columns
    for g in pairing:
        if len(g) == 2:
            i, j = g
            lam[j] = np.conj(lam[i])
            modes[:, j] = np.conj(modes[:, i])
    amplitudes = np.linalg.lstsq(modes, X[:, 0], rcond=None)[0]
    return DmdModel(
        modes=modes,
        eigenvalues=lam,
        amplitudes=amplitudes,
        pairing=pairing,
        n=n,
        d=d,
        zero_modes=tuple(int(i) for i in np.flatnonzero(zero)),
    )


def _normalize_columns(modes: np.ndarray) -> np.ndarray:
    # unit norm, largest-magnitude entry real and positive
    norms = np.linalg.norm(modes, axis=0)
    norms[norms == 0] = 1.0
    modes = modes / norms
    lead = modes[np.argmax(np.abs(modes), axis=0), np.arange(modes.shape[1])]
    phase = np.where(lead == 0, 1.0, lead / np.where(lead == 0, 1.0, np.abs(lead)))
    return modes / phase


def fit_exact_dmd(pair: SnapshotPair, trunc: SvdTruncation | None = None,
                  tol: float = PAIR_TOL) -> DmdModel:
    """Exact DMD of a snapshot pair.

    The reduced operator is ``U_r^* X' V_r S_r^{-1}``, its eigenvectors ``W``
    give the exact modes ``X' V_r S_r^{-1} W`` and the amplitudes are the
    least-squares coordinates of the first column of ``X``.
    """
    trunc = trunc or SvdTruncation.full()
    U, s, V = _truncated_svd(pair.X, trunc)
    return _exact_from_svd(pair.X, pair.Xprime, U, s, V, pair.n, pair.d, tol)


def fit_tdmd(pair: SnapshotPair, trunc: SvdTruncation | None = None,
             tol: float = PAIR_TOL) -> DmdModel:
    """Total-least-squares DMD.

    Both snapshot matrices are projected onto the leading ``r`` right
    singular vectors of the stacked matrix ``[X; X']`` before the exact DMD
    fit, so noise is attributed to inputs and outputs alike.  The rank
    ``r`` is chosen by ``trunc`` from the singular values of ``X``.
    """
    trunc = trunc or SvdTruncation.full()
    X, Xp = pair.X, pair.Xprime
    if not np.any(X):
        raise DmdError("all-zero data")
    r = trunc.rank(np.linalg.svd(X, compute_uv=False))
    # TLS projection step
    _, sz, Vzh = np.linalg.svd(np.vstack([X, Xp]), full_matrices=False)
    numerical = int(np.sum(sz > RANK_RTOL * sz[0]))
    if numerical < r:
        warnings.warn(
            f"rank shrunk from {r} to {numerical} after stacking [X; X']",
            RankShrinkWarning, stacklevel=2,
        )
        r = numerical
    Vr = Vzh[:r].conj().T
    proj = Vr @ Vr.conj().T
    Xbar, Xpbar = X @ proj, Xp @ proj
    U, s, V = _truncated_svd(Xbar, SvdTruncation.fixed_rank(r))
    model = _exact_from_svd(Xbar, Xpbar, U, s, V, pair.n, pair.d, tol)
    amplitudes = np.linalg.lstsq(model.modes, X[:, 0], rcond=None)[0]
    return DmdModel(model.modes, model.eigenvalues, amplitudes,
                    model.pairing, model.n, model.d, model.zero_modes)


def predict(model: DmdModel, k: int) -> np.ndarray:
    """Real part of ``Phi Lambda^k b`` restricted to the newest ``n`` rows.

    ``k = 0`` reconstructs the first snapshot column used for the fit.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    full = model.modes @ (model.eigenvalues**k * model.amplitudes)
    return full[:model.n].real


def propagate_state(model: DmdModel, x, lambda_override=None, p: int = 1,
                    tol: float = PAIR_TOL) -> np.ndarray:
    """Advance a full (embedded) state ``p`` steps: ``Re(Phi L^p Phi^+ x)``.

    ``lambda_override`` replaces the fitted temporal modes and must keep the
    model's conjugate structure.
    """
    lam = model.eigenvalues if lambda_override is None else np.asarray(
        lambda_override, dtype=complex)
    if lam.shape != model.eigenvalues.shape:
        raise DmdError("override must have one temporal mode per DMD mode")
    check_conjugate_closed(lam, model.pairing, tol)
    x = np.asarray(x, dtype=float)
    coeff = model.modes_pinv @ x
    return (model.modes @ (lam**p * coeff)).real


def cumulative_energy(X: np.ndarray) -> np.ndarray:
    """Fraction of total variance retained by the first ``r`` singular values."""
    s = np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False)
    return np.cumsum(s**2) / np.sum(s**2)
