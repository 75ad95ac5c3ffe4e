"""Independent reference implementations used as test oracles.

Nothing here imports the package under test. The db3 filter is obtained by
numerically solving its defining equations, the wavelet transform is an
explicit orthogonal matrix, and GP posteriors use dense matrix inverses.
"""
import numpy as np
from scipy import optimize


def db3_taps_by_conditions():
    """Solve orthonormality plus three vanishing moments for a 6-tap filter.

    Started near the minimum-phase solution so the root found is db3.
    """
    k = np.arange(6)

    def equations(h):
        eqs = [h.sum() - np.sqrt(2.0)]
        eqs += [np.dot(h[: 6 - 2 * m], h[2 * m:]) - (1.0 if m == 0 else 0.0) for m in range(3)]
        eqs += [np.sum((-1.0) ** k * k ** p * h) for p in range(3)]
        return eqs

    sol = optimize.least_squares(equations, x0=[0.3, 0.8, 0.5, -0.1, -0.1, 0.0], xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return sol.x


def periodized_analysis_matrix(n, taps):
    """One level of the periodized orthogonal DWT as an ``n x n`` matrix.

    Rows ``0..n/2-1`` give approximation coefficients, the rest details.
    Alignment follows the common convention where coefficient ``k`` sums
    ``x[(2k + 1 + j) mod n] * g[j]`` over the reversed taps.
    """
    L = len(taps)
    lo = np.asarray(taps)[::-1]
    hi = np.array([(-1.0) ** (j + 1) * taps[j] for j in range(L)])
    W = np.zeros((n, n))
    for row in range(n // 2):
        for j in range(L):
            col = (2 * row + L // 2 - j) % n
            W[row, col] += lo[j]
            W[n // 2 + row, col] += hi[j]
    return W


def periodized_dwt(x, levels, taps):
    """Multi-level periodized DWT by repeated matrix products: (details by level, approximation).

    Odd-length inputs to a level are extended by repeating the last sample.
    """
    approx = np.asarray(x, dtype=float)
    details = {}
    for level in range(1, levels + 1):
        if len(approx) % 2:
            approx = np.append(approx, approx[-1])
        W = periodized_analysis_matrix(len(approx), taps)
        c = W @ approx
        approx, details[level] = c[: len(approx) // 2], c[len(approx) // 2:]
    return details, approx


def se_gram(X1, X2, amp, length):
    d2 = ((X1[:, None, :] - X2[None, :, :]) ** 2).sum(-1)
    return amp ** 2 * np.exp(-d2 / (2.0 * length ** 2))


def gp_dense_posterior(X, y, Xs, amp, length, noise):
    """Posterior mean and noise-inclusive variance by explicit inversion."""
    K = se_gram(X, X, amp, length) + noise * np.eye(len(X))
    Kinv = np.linalg.inv(K)
    ks = se_gram(Xs, X, amp, length)
    mean = ks @ Kinv @ y
    var = amp ** 2 + noise - np.einsum("ij,jk,ik->i", ks, Kinv, ks)
    return mean, var


def gp_dense_nlml(X, y, amp, length, noise):
    K = se_gram(X, X, amp, length) + noise * np.eye(len(X))
    sign, logdet = np.linalg.slogdet(K)
    assert sign > 0
    return 0.5 * y @ np.linalg.inv(K) @ y + 0.5 * logdet + 0.5 * len(y) * np.log(2 * np.pi)


def central_difference(f, theta, rel_h=1e-5):
    theta = np.asarray(theta, dtype=float)
    g = np.zeros_like(theta)
    for i in range(len(theta)):
        h = rel_h * theta[i]
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        g[i] = (f(up) - f(down)) / (2 * h)
    return g


def butterworth_two_pass_gain(order, lo_hz, hi_hz, rate_hz, f_hz):
    """|H|^2 of the digital Butterworth band-pass evaluated from its analog prototype.

    Uses the bilinear-transform frequency warping directly, independent of
    any filter-design routine.
    """
    warp = lambda f: 2.0 * rate_hz * np.tan(np.pi * f / rate_hz)  # noqa: E731
    w = warp(np.asarray(f_hz, dtype=float))
    wl, wh = warp(lo_hz), warp(hi_hz)
    # low-pass prototype frequency of the band-pass mapping
    omega = (w ** 2 - wl * wh) / (w * (wh - wl))
    mag2 = 1.0 / (1.0 + omega ** (2 * order))
    return mag2  # single-pass |H|^2 equals the two-pass magnitude
