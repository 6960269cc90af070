"""Shared numerical kernels.

Least squares on a pivoted QR, the distribution functions needed by the
screening and regression layers (normal, Student t, F, studentized range),
and a small deterministic PRNG used for every stochastic step in the package.

The t and F CDFs are built on a regularized incomplete beta evaluated by
Lentz's continued fraction with the usual symmetry switch at
x > (a + 1) / (a + b + 2).  The studentized range CDF evaluates the classical
double integral with Gauss-Legendre rules whose node counts double until two
successive estimates agree to 1e-7.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import qr as _qr, solve_triangular as _solve_triangular
from scipy.special import ndtr as _ndtr, ndtri as _ndtri

from ._errors import ConvergenceError, NumericalError

__all__ = [
    "LeastSquaresSolution",
    "RandomStream",
    "solve_least_squares",
    "unscaled_covariance",
    "incomplete_beta_regularized",
    "normal_cdf",
    "normal_quantile",
    "t_cdf",
    "f_cdf",
    "studentized_range_cdf",
]


# ---------------------------------------------------------------------------
# deterministic PRNG
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1
# Weyl increment and output-mixing multipliers of SplitMix64.
_WEYL = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
# Distinct odd constant used only for deriving child-stream seeds.
_SPLIT = 0xD1B54A32D192ED03


def _mix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


class RandomStream:
    """Counter-based SplitMix64 stream.

    The i-th raw output (i = 1, 2, ...) is mix64(seed + i * WEYL) where all
    arithmetic wraps modulo 2**64 and mix64 is the standard SplitMix64
    finalizer.  Everything is plain unsigned 64-bit integer arithmetic, so an
    identical seed yields an identical stream on every platform and library
    version.  Child streams for concurrency or per-repetition seeding come
    from ``split(index)``: child seed = mix64(seed + (index + 1) * SPLIT)
    with SPLIT a different odd constant, so child streams never alias the
    parent's outputs.

    Uniform doubles take the top 53 bits of a raw output, giving values in
    [0, 1).  Normal deviates use the Box-Muller transform (two uniforms per
    pair, no cached spare).  Bounded integers use floor(u * bound), whose
    bias is below bound * 2**-53 and irrelevant at the bounds used here.
    """

    def __init__(self, seed: int):
        if not isinstance(seed, (int, np.integer)):
            raise NumericalError("RandomStream seed must be an integer")
        self._seed = int(seed) & _MASK64
        self._count = 0

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def draws_consumed(self) -> int:
        return self._count

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        z = np.uint64(self._seed) + idx * np.uint64(_WEYL)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def uniforms(self, n: int) -> np.ndarray:
        """n uniform doubles in [0, 1)."""
        if n < 0:
            raise NumericalError("draw count must be nonnegative")
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def normals(self, n: int) -> np.ndarray:
        """n standard normal deviates via Box-Muller."""
        if n < 0:
            raise NumericalError("draw count must be nonnegative")
        pairs = (n + 1) // 2
        u1 = self.uniforms(pairs)
        u2 = self.uniforms(pairs)
        # 1 - u1 lies in (0, 1], keeping the log argument positive.
        radius = np.sqrt(-2.0 * np.log1p(-u1))
        angle = 2.0 * math.pi * u2
        out = np.empty(2 * pairs)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n integers uniform on {0, ..., bound - 1}."""
        if bound <= 0:
            raise NumericalError("integer bound must be positive")
        draws = np.floor(self.uniforms(n) * bound).astype(np.int64)
        return np.minimum(draws, bound - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        if n < 2:
            return perm
        # one uniform per swap position, consumed high index first
        u = self.uniforms(n - 1)
        for pos, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[pos] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def split(self, index: int) -> "RandomStream":
        """Independent child stream for the given nonnegative index."""
        if index < 0:
            raise NumericalError("split index must be nonnegative")
        child = _mix64((self._seed + (index + 1) * _SPLIT) & _MASK64)
        return RandomStream(child)


# ---------------------------------------------------------------------------
# least squares
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LeastSquaresSolution:
    coefficients: np.ndarray
    residual_sum_squares: float
    rank: int


def _pivoted_qr(design: np.ndarray):
    q, r, piv = _qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    n, p = design.shape
    tol = max(n, p) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.count_nonzero(diag > tol))
    return q, r, piv, rank


def solve_least_squares(design, target) -> LeastSquaresSolution:
    """Minimum-RSS coefficients for ``design @ b ~ target``.

    Solved through a column-pivoted QR factorization, never through the
    normal equations.  A design whose numerical rank falls below its column
    count raises NumericalError naming the first dependent column.
    """
    x = np.asarray(design, dtype=float)
    y = np.asarray(target, dtype=float)
    if x.ndim != 2 or y.ndim != 1:
        raise NumericalError("design must be 2-d and target 1-d")
    n, p = x.shape
    if y.shape[0] != n:
        raise NumericalError("design and target row counts differ")
    if n < p:
        raise NumericalError(f"under-determined system: {n} rows for {p} columns")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NumericalError("non-finite values in least-squares inputs")

    q, r, piv, rank = _pivoted_qr(x)
    if rank < p:
        err = NumericalError(
            f"design is rank deficient (rank {rank} of {p}): "
            f"column {piv[rank]} is linearly dependent on the others"
        )
        err.column = int(piv[rank])
        raise err
    b_perm = _solve_triangular(r, q.T @ y)
    coef = np.empty(p)
    coef[piv] = b_perm
    residual = y - x @ coef
    return LeastSquaresSolution(coef, float(residual @ residual), rank)


def unscaled_covariance(design) -> np.ndarray:
    """(X'X)^-1 computed from the pivoted QR of X, for coefficient SEs."""
    x = np.asarray(design, dtype=float)
    if x.ndim != 2:
        raise NumericalError("design must be 2-d")
    n, p = x.shape
    if n < p:
        raise NumericalError(f"under-determined system: {n} rows for {p} columns")
    q, r, piv, rank = _pivoted_qr(x)
    if rank < p:
        raise NumericalError(
            f"design is rank deficient (rank {rank} of {p}): "
            f"column {piv[rank]} is linearly dependent on the others"
        )
    rinv = _solve_triangular(r, np.eye(p))
    m = rinv @ rinv.T
    cov = np.empty((p, p))
    cov[np.ix_(piv, piv)] = m
    return cov


# ---------------------------------------------------------------------------
# distribution functions
# ---------------------------------------------------------------------------

_SQRT2 = math.sqrt(2.0)


def normal_cdf(x: float) -> float:
    """Standard normal CDF."""
    return 0.5 * math.erfc(-x / _SQRT2)


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF, defined for 0 < p < 1."""
    if not 0.0 < p < 1.0:
        raise NumericalError(f"normal_quantile needs 0 < p < 1, got {p}")
    return float(_ndtri(p))


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    """Lentz evaluation of the continued fraction for the incomplete beta."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 301):
        m2 = 2 * m
        # even step
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        # odd step
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ConvergenceError(
        f"incomplete beta continued fraction did not converge for a={a}, b={b}, x={x}"
    )


def incomplete_beta_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and 0 <= x <= 1."""
    if a <= 0.0 or b <= 0.0:
        raise NumericalError(f"incomplete beta needs a, b > 0, got a={a}, b={b}")
    if not 0.0 <= x <= 1.0:
        raise NumericalError(f"incomplete beta needs 0 <= x <= 1, got x={x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def t_cdf(x: float, df: float) -> float:
    """CDF of Student's t with df degrees of freedom."""
    if df <= 0:
        raise NumericalError(f"t_cdf needs df > 0, got {df}")
    if math.isnan(x):
        raise NumericalError("t_cdf got NaN")
    if math.isinf(x):
        return 1.0 if x > 0 else 0.0
    if x == 0.0:
        return 0.5
    tail = incomplete_beta_regularized(df / 2.0, 0.5, df / (df + x * x))
    return 1.0 - 0.5 * tail if x > 0 else 0.5 * tail


def f_cdf(x: float, df1: float, df2: float) -> float:
    """CDF of the F distribution with (df1, df2) degrees of freedom."""
    if df1 <= 0 or df2 <= 0:
        raise NumericalError(f"f_cdf needs positive dfs, got ({df1}, {df2})")
    if math.isnan(x):
        raise NumericalError("f_cdf got NaN")
    if x <= 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    return incomplete_beta_regularized(df1 / 2.0, df2 / 2.0, df1 * x / (df1 * x + df2))


# ---------------------------------------------------------------------------
# studentized range
# ---------------------------------------------------------------------------


@lru_cache(maxsize=32)
def _gl_rule(n: int):
    nodes, weights = np.polynomial.legendre.leggauss(n)
    return nodes, weights


def _scaled_rule(n: int, lo: float, hi: float):
    nodes, weights = _gl_rule(n)
    half = 0.5 * (hi - lo)
    return lo + half * (nodes + 1.0), half * weights


def _range_cdf_of_scale(w: np.ndarray, k: int, n_nodes: int) -> np.ndarray:
    """P(range of k iid standard normals <= w_i) for each entry, by quadrature."""
    z, wz = _scaled_rule(n_nodes, -9.0, 9.0)
    phi = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    inner = _ndtr(z)[:, None] - _ndtr(z[:, None] - w[None, :])
    np.clip(inner, 0.0, 1.0, out=inner)
    integrand = phi[:, None] * inner ** (k - 1)
    return k * (wz @ integrand)


def studentized_range_cdf(q: float, k: int, df: float) -> float:
    """CDF of the studentized range for k groups and df error degrees of freedom.

    Evaluates the classical double integral: the range CDF of k standard
    normals, mixed over the scale distribution sqrt(chi2_df / df), both by
    Gauss-Legendre quadrature.  Node counts double until two successive
    estimates differ by less than 1e-7.
    """
    if not isinstance(k, (int, np.integer)) or k < 2:
        raise NumericalError(f"studentized range needs integer k >= 2, got {k}")
    if df < 1:
        raise NumericalError(f"studentized range needs df >= 1, got {df}")
    if math.isnan(q):
        raise NumericalError("studentized_range_cdf got NaN")
    if q <= 0.0:
        return 0.0
    if math.isinf(q):
        return 1.0

    df = float(df)
    # upper limit where the chi (scale) density is numerically dead
    s_hi = math.sqrt((df + 14.0 * math.sqrt(2.0 * df) + 100.0) / df)
    ln_norm = (df / 2.0) * math.log(df) - (df / 2.0 - 1.0) * math.log(2.0) - math.lgamma(df / 2.0)

    previous = None
    for n_nodes in (32, 64, 128, 256, 512):
        s, ws = _scaled_rule(n_nodes, 0.0, s_hi)
        log_density = ln_norm + (df - 1.0) * np.log(s) - df * s * s / 2.0
        density = np.exp(log_density)
        inner = _range_cdf_of_scale(q * s, k, n_nodes)
        estimate = float(ws @ (density * inner))
        if previous is not None and abs(estimate - previous) < 1e-7:
            return min(max(estimate, 0.0), 1.0)
        previous = estimate
    raise ConvergenceError(
        f"studentized range quadrature did not stabilize for q={q}, k={k}, df={df}"
    )
