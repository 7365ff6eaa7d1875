"""Independent reference computations the package is checked against.

None of these import the package; they are deliberately naive.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy import integrate


def lstsq_operator(X, Xp):
    """Dense ``A = X' X^+`` by direct least squares on ``A X = X'``."""
    At, *_ = np.linalg.lstsq(np.asarray(X).T, np.asarray(Xp).T, rcond=None)
    return At.T


def kalman_filter(x0, P0, F, Q, H, R, ys):
    """Closed-form linear-Gaussian filter; returns posterior means and covariances."""
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    P = np.atleast_2d(np.asarray(P0, dtype=float))
    F, Q, H, R = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (F, Q, H, R))
    means, covs = [], []
    for y in ys:
        x = F @ x
        P = F @ P @ F.T + Q
        S = H @ P @ H.T + R
        K = P @ H.T @ np.linalg.inv(S)
        x = x + K @ (np.atleast_1d(y) - H @ x)
        P = (np.eye(len(x)) - K @ H) @ P
        means.append(x.copy())
        covs.append(P.copy())
    return np.array(means), np.array(covs)


def best_integer_split(total: int, shares):
    """Brute force: integer split of ``total`` closest (L1) to ``total * shares``.

    Ties are broken toward giving extra units to earlier groups.
    """
    target = total * np.asarray(shares, dtype=float)
    best, best_err = None, np.inf
    for combo in itertools.product(range(total + 1), repeat=len(target) - 1):
        last = total - sum(combo)
        if last < 0:
            continue
        cand = np.array(combo + (last,))
        err = np.abs(cand - target).sum()
        if err < best_err - 1e-12:
            best, best_err = cand, err
    return best


def kde_mass(centers, bandwidth, lo=-np.inf, hi=np.inf):
    """Probability mass of an equal-weight Gaussian mixture by quadrature."""
    c = np.asarray(centers, dtype=float)

    def pdf(x):
        z = (x - c) / bandwidth
        return np.exp(-0.5 * z**2).mean() / (bandwidth * np.sqrt(2 * np.pi))

    # a finite range 40 bandwidths past the outermost kernels loses < 1e-300
    lo = max(lo, c.min() - 40 * bandwidth)
    hi = min(hi, c.max() + 40 * bandwidth)
    if hi <= lo:
        return 0.0
    pts = [p for p in np.unique(c) if lo < p < hi]
    val, _ = integrate.quad(pdf, lo, hi, points=pts or None, limit=1000,
                            epsabs=1e-13, epsrel=1e-11)
    return val


def rotation_matrix(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])
