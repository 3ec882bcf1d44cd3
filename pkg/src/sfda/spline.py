"""Penalized least-squares smoothing splines for pooled sparse data.

For one group with observations ``(t_ij, y_ij)`` and optional per-subject
weights ``u_i`` the estimator minimizes

    (1 / 2M) sum_ij u_i (y_ij - f(t_ij))^2 + (lam / 2) J(f),

with ``J(f) = int (f^(m))^2``. The minimizer is ``f = T d + Q c`` where
``(c, d)`` solve the saddle system

    (Q + M lam W^-1) c + T d = y,    T' c = 0.

Two engines solve it. :class:`DenseSmoother` works for any order and is
what :func:`fit_penalized` uses. :class:`CubicSmoother` handles ``m = 2``
in O(M) through the state-space form of the same minimizer and backs the
GCV search and the bootstrap refits.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from sfda._statespace import smooth_batch
from sfda.errors import (
    DegenerateGCVError,
    NumericalError,
    RankDeficiencyError,
    ValidationError,
)
from sfda.kernel import check_order, gram_matrices, kernel_R, null_basis

DEFAULT_LAMBDA_GRID = (1e-6, 1e2, 40)

_TRACE_FLOOR = 1e-10


@dataclass(frozen=True)
class Observation:
    """A single noisy reading ``y`` of subject ``subject`` at time ``t``."""

    group: int
    subject: object
    t: float
    y: float

    def __post_init__(self):
        if self.group not in (1, 2):
            raise ValidationError(f"group must be 1 or 2, got {self.group!r}")
        if not (np.isfinite(self.t) and 0.0 <= self.t <= 1.0):
            raise ValidationError(f"observation time {self.t!r} outside [0, 1]")
        if not np.isfinite(self.y):
            raise ValidationError(f"observation value {self.y!r} is not finite")


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GroupSample:
    """All observations of one group in long format.

    Attributes
    ----------
    t, y : ndarray, shape (M,)
        Observation times in [0, 1] and responses, in input order.
    subject : ndarray of int, shape (M,)
        Contiguous subject index (0..n-1, first-appearance order) per row.
    subject_ids : tuple
        Original subject identifiers, indexed by ``subject``.
    group : int
    """

    t: np.ndarray
    y: np.ndarray
    subject: np.ndarray
    subject_ids: tuple
    group: int = 1
    _counts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        t = _frozen(self.t)
        y = _frozen(self.y)
        subject = _frozen(self.subject, dtype=np.intp)
        if not (t.ndim == y.ndim == subject.ndim == 1):
            raise ValidationError("t, y and subject must be one-dimensional")
        if not (t.size == y.size == subject.size) or t.size == 0:
            raise ValidationError("t, y and subject must be nonempty and of equal length")
        if not np.all(np.isfinite(t)) or t.min() < 0.0 or t.max() > 1.0:
            raise ValidationError("observation times must lie in [0, 1]")
        if not np.all(np.isfinite(y)):
            raise ValidationError("observation values must be finite")
        n = len(self.subject_ids)
        if subject.min() < 0 or subject.max() >= n:
            raise ValidationError("subject index out of range")
        counts = np.bincount(subject, minlength=n)
        if np.any(counts == 0):
            raise ValidationError("every subject needs at least one observation")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "subject", subject)
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        object.__setattr__(self, "_counts", _frozen(counts, dtype=np.intp))

    @classmethod
    def from_records(cls, subjects, t, y, group=1):
        """Build a sample from parallel sequences, indexing subjects by first appearance."""
        index = {}
        codes = [index.setdefault(s, len(index)) for s in subjects]
        return cls(t=t, y=y, subject=codes, subject_ids=tuple(index), group=group)

    @classmethod
    def from_observations(cls, observations):
        observations = list(observations)
        if not observations:
            raise ValidationError("cannot build a sample from zero observations")
        groups = {o.group for o in observations}
        if len(groups) != 1:
            raise ValidationError(f"observations mix groups {sorted(groups)}")
        return cls.from_records(
            [o.subject for o in observations],
            [o.t for o in observations],
            [o.y for o in observations],
            group=groups.pop(),
        )

    @property
    def M(self):
        return self.t.size

    @property
    def n(self):
        return len(self.subject_ids)

    @property
    def counts(self):
        """Observations per subject, ``N_i``."""
        return self._counts

    def observations(self):
        return [
            Observation(self.group, self.subject_ids[s], float(t), float(y))
            for s, t, y in zip(self.subject, self.t, self.y)
        ]

    def observation_weights(self, subject_weights=None):
        """Replicate per-subject weights over each subject's rows."""
        if subject_weights is None:
            return np.ones(self.M)
        u = np.asarray(subject_weights, dtype=float)
        if u.shape != (self.n,):
            raise ValidationError(
                f"expected {self.n} subject weights, got shape {u.shape}"
            )
        if not np.all(np.isfinite(u)) or np.any(u <= 0):
            raise ValidationError("subject weights must be positive and finite")
        return u[self.subject]


@dataclass(frozen=True)
class SplineFit:
    """Representer coefficients of a fitted mean curve.

    ``f(t) = sum_k d[k] t^k + sum_a c[a] R(knots[a], t)``.
    """

    m: int
    lam: float
    knots: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __call__(self, t):
        return evaluate(self, t)

    def roughness(self):
        """``J(f) = c' Q c``."""
        Q = gram_matrices(self.knots, self.m).Q
        return float(self.c @ Q @ self.c)


def _check_lambda(lam):
    lam = float(lam)
    if not np.isfinite(lam) or lam <= 0:
        raise ValidationError(f"smoothing parameter must be positive, got {lam!r}")
    return lam


def lambda_grid(lo=DEFAULT_LAMBDA_GRID[0], hi=DEFAULT_LAMBDA_GRID[1], count=DEFAULT_LAMBDA_GRID[2]):
    """Log-spaced candidate smoothing parameters."""
    if not (0 < lo <= hi) or int(count) < 1:
        raise ValidationError(f"invalid lambda grid ({lo}, {hi}, {count})")
    return np.logspace(np.log10(lo), np.log10(hi), int(count))


class DenseSmoother:
    """Saddle-system solver for arbitrary order via null-space elimination.

    With ``T = [F1 F2] [R; 0]`` (full QR), ``c = F2 z`` and
    ``(F2' Q F2 + rho F2' W^-1 F2) z = F2' y``, ``rho = M lam``. The
    unweighted case reuses an eigendecomposition of ``F2' Q F2`` so that
    every lambda costs O(M^2).
    """

    def __init__(self, sample, m=2):
        self.m = check_order(m)
        self.sample = sample
        gram = gram_matrices(sample.t, self.m)
        self.Q = gram.Q
        self.T = gram.T
        F, R = np.linalg.qr(self.T, mode="complete")
        self._F1 = F[:, : self.m]
        self._F2 = F[:, self.m :]
        self._R = R[: self.m]
        if np.min(np.abs(np.diag(self._R))) < 1e-12 * max(1.0, np.abs(self._R).max()):
            raise RankDeficiencyError("null-space design is numerically rank deficient")
        self._eig = None

    def _eigensystem(self):
        if self._eig is None:
            P = self._F2.T @ self.Q @ self._F2
            vals, vecs = np.linalg.eigh(0.5 * (P + P.T))
            self._eig = (np.clip(vals, 0.0, None), vecs)
        return self._eig

    def coefficients(self, lam, obs_weights=None):
        """Solve for ``(c, d)``."""
        rho = self.sample.M * _check_lambda(lam)
        y = self.sample.y
        F2 = self._F2
        if obs_weights is None:
            vals, vecs = self._eigensystem()
            z = vecs @ ((vecs.T @ (F2.T @ y)) / (vals + rho))
            c = F2 @ z
            resid = rho * c
        else:
            winv = 1.0 / np.asarray(obs_weights, dtype=float)
            P = F2.T @ (self.Q + np.diag(rho * winv)) @ F2
            try:
                cho = linalg.cho_factor(0.5 * (P + P.T), lower=True)
            except linalg.LinAlgError as exc:
                raise NumericalError(f"weighted saddle system is singular: {exc}") from exc
            c = F2 @ linalg.cho_solve(cho, F2.T @ y)
            resid = rho * winv * c
        d = linalg.solve_triangular(self._R, self._F1.T @ (y - self.Q @ c - resid))
        return c, d

    def fitted(self, lam, obs_weights=None):
        c, d = self.coefficients(lam, obs_weights)
        return self.Q @ c + self.T @ d

    def curve(self, lam, grid, obs_weights=None):
        c, d = self.coefficients(lam, obs_weights)
        grid = np.asarray(grid, dtype=float)
        return kernel_R(grid[:, None], self.sample.t[None, :], self.m) @ c + null_basis(self.m, grid) @ d

    def curve_batch(self, lam, grid, obs_weights=None):
        if obs_weights is None:
            return self.curve(lam, grid)[None]
        return np.stack([self.curve(lam, grid, w) for w in np.atleast_2d(obs_weights)])

    def residual_trace(self, lam):
        """``tr(I - S(lam))`` for the unweighted fit."""
        rho = self.sample.M * _check_lambda(lam)
        vals, _ = self._eigensystem()
        return float(np.sum(rho / (vals + rho)))

    def residuals(self, lam):
        c, _ = self.coefficients(lam)
        return self.sample.M * lam * c

    def gcv_terms(self, lams):
        lams = np.atleast_1d(lams)
        rss = np.array([np.sum(self.residuals(v) ** 2) for v in lams])
        return rss, np.array([self.residual_trace(v) for v in lams])


def _state_space_smooth(x, W, ybar, q, want_var=False):
    """Batched smoothing of the cubic spline prior ``f = d0 + d1 t + g(t)``.

    ``g`` is an integrated Wiener process started at ``g(0) = g'(0) = 0``
    with diffusion ``q``; ``(d0, d1)`` is diffuse. Observations at knot ``k``
    have precision ``W[:, k]``. The leading axis of ``W``, ``ybar`` and ``q``
    is a batch axis (several lambdas, or several bootstrap weightings).

    Returns posterior means of ``f`` and ``f'`` at the knots, shape (nb, K),
    and with ``want_var`` the diagonal of the knot smoother matrix
    ``W_k Var(f(x_k) | y)``.
    """
    W = np.ascontiguousarray(W, dtype=float)
    nb, K = W.shape
    ybar = np.ascontiguousarray(np.broadcast_to(ybar, (nb, K)), dtype=float)
    q = np.ascontiguousarray(np.broadcast_to(np.asarray(q, dtype=float), (nb,)))
    fhat = np.empty((nb, K))
    dfhat = np.empty((nb, K))
    var = np.empty((nb, K) if want_var else (nb, 0))
    x = np.ascontiguousarray(x, dtype=float)
    if not smooth_batch(x, W, ybar, q, bool(want_var), fhat, dfhat, var):
        raise RankDeficiencyError("knots do not identify the linear null space")
    return fhat, dfhat, (var if want_var else None)


class CubicSmoother:
    """O(M) engine for ``m = 2`` using the state-space form of the spline.

    The cubic smoothing spline is the posterior mean of a Gaussian model
    with an integrated Wiener process prior and a diffuse linear trend, so
    a Kalman filter plus backward smoother recovers knot values, slopes and
    the smoother diagonal without forming any divided differences. Tied
    times are merged into distinct knots with summed weights.
    """

    m = 2

    def __init__(self, sample):
        self.sample = sample
        x, inverse = np.unique(sample.t, return_inverse=True)
        if x.size < 2:
            raise RankDeficiencyError(
                f"{x.size} distinct point(s) cannot identify a null space of dimension 2"
            )
        self.x = x
        self._inverse = inverse.ravel()
        self._counts = np.bincount(self._inverse, minlength=x.size).astype(float)
        self._ysum = np.bincount(self._inverse, weights=sample.y, minlength=x.size)
        self._grid_cache = {}

    @property
    def K(self):
        return self.x.size

    def _aggregate(self, obs_weights):
        """Per-knot summed weights and weighted means, batched on axis 0."""
        if obs_weights is None:
            return self._counts[None], (self._ysum / self._counts)[None]
        w = np.atleast_2d(np.asarray(obs_weights, dtype=float))
        nb = w.shape[0]
        idx = self._inverse + self.K * np.arange(nb)[:, None]
        size = nb * self.K
        W = np.bincount(idx.ravel(), weights=w.ravel(), minlength=size).reshape(nb, self.K)
        yw = np.bincount(idx.ravel(), weights=(w * self.sample.y).ravel(), minlength=size)
        return W, yw.reshape(nb, self.K) / W

    def solve_batch(self, lam, obs_weights=None):
        """Knot values and slopes for one lambda and a batch of weightings."""
        rho = self.sample.M * _check_lambda(lam)
        W, ybar = self._aggregate(obs_weights)
        f, df, _ = _state_space_smooth(self.x, W, ybar, 1.0 / rho)
        return f, df

    def fitted(self, lam, obs_weights=None):
        f, _ = self.solve_batch(lam, obs_weights)
        return f[0, self._inverse]

    def _grid_operator(self, grid):
        key = grid.tobytes()
        op = self._grid_cache.get(key)
        if op is not None:
            return op
        x, K = self.x, self.K
        G = grid.size
        Ef = np.zeros((G, K))
        Ed = np.zeros((G, K))
        rows = np.arange(G)
        k = np.clip(np.searchsorted(x, grid, side="right") - 1, 0, K - 2)
        left = grid < x[0]
        right = grid > x[-1]
        inside = ~(left | right)
        # cubic Hermite pieces between knots
        ri, ki = rows[inside], k[inside]
        hk = x[ki + 1] - x[ki]
        s = (grid[inside] - x[ki]) / hk
        Ef[ri, ki] += 2 * s**3 - 3 * s**2 + 1
        Ed[ri, ki] += (s**3 - 2 * s**2 + s) * hk
        Ef[ri, ki + 1] += -2 * s**3 + 3 * s**2
        Ed[ri, ki + 1] += (s**3 - s**2) * hk
        # linear beyond the boundary knots
        for mask, j in ((left, 0), (right, K - 1)):
            rr = rows[mask]
            Ef[rr, j] += 1.0
            Ed[rr, j] += grid[mask] - x[j]
        op = (Ef, Ed)
        if len(self._grid_cache) < 8:
            self._grid_cache[key] = op
        return op

    def curve_batch(self, lam, grid, obs_weights=None):
        """Fitted curves on ``grid``, one row per weighting in the batch."""
        grid = np.ascontiguousarray(grid, dtype=float)
        f, df = self.solve_batch(lam, obs_weights)
        Ef, Ed = self._grid_operator(grid)
        return f @ Ef.T + df @ Ed.T

    def curve(self, lam, grid, obs_weights=None):
        return self.curve_batch(lam, grid, obs_weights)[0]

    def gcv_terms(self, lams):
        """Residual sums of squares and ``tr(I - S)`` for many lambdas at once."""
        lams = np.array([_check_lambda(v) for v in np.atleast_1d(lams)])
        M = self.sample.M
        nb = lams.size
        W = np.broadcast_to(self._counts, (nb, self.K))
        ybar = np.broadcast_to(self._ysum / self._counts, (nb, self.K))
        f, _, sdiag = _state_space_smooth(self.x, W, ybar, 1.0 / (M * lams), want_var=True)
        resid = self.sample.y[None, :] - f[:, self._inverse]
        rss = np.einsum("bi,bi->b", resid, resid)
        return rss, M - sdiag.sum(axis=1)

    def residual_trace(self, lam):
        return float(self.gcv_terms(lam)[1][0])

    def residuals(self, lam):
        return self.sample.y - self.fitted(lam)


def make_smoother(sample, m=2, method="auto"):
    """Pick a solver engine: ``"cubic"`` (m = 2 only), ``"dense"`` or ``"auto"``."""
    m = check_order(m)
    if method == "auto":
        method = "cubic" if m == 2 else "dense"
    if method == "cubic":
        if m != 2:
            raise ValidationError("the cubic engine only supports m = 2")
        return CubicSmoother(sample)
    if method == "dense":
        return DenseSmoother(sample, m)
    raise ValidationError(f"unknown solver method {method!r}")


def fit_penalized(sample, lam, m=2, subject_weights=None):
    """Fit the (optionally subject-weighted) penalized spline.

    Parameters
    ----------
    sample : GroupSample
    lam : float
        Smoothing parameter, > 0.
    m : int, default=2
        Penalized derivative order.
    subject_weights : array_like, shape (n,), optional
        Positive multiplier per subject; omitted means all ones.

    Returns
    -------
    SplineFit
    """
    lam = _check_lambda(lam)
    w = None if subject_weights is None else sample.observation_weights(subject_weights)
    engine = DenseSmoother(sample, m)
    c, d = engine.coefficients(lam, w)
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(d))):
        raise NumericalError("saddle system produced non-finite coefficients")
    return SplineFit(m=engine.m, lam=lam, knots=sample.t, c=c, d=d)


def evaluate(fit, t):
    """Evaluate a fitted curve at ``t`` in [0, 1] (scalar or array)."""
    t_arr = np.asarray(t, dtype=float)
    flat = np.atleast_1d(t_arr).ravel()
    vals = kernel_R(flat[:, None], fit.knots[None, :], fit.m) @ fit.c
    vals = vals + null_basis(fit.m, flat) @ fit.d
    return float(vals[0]) if t_arr.ndim == 0 else vals.reshape(t_arr.shape)


def smoother_trace(sample, lam, m=2, method="auto"):
    """``tr S(lam)`` of the unweighted smoother at the observation points."""
    engine = make_smoother(sample, m, method)
    return sample.M - engine.residual_trace(lam)


def _gcv_from_terms(rss, trace, M):
    if trace <= _TRACE_FLOOR:
        return np.nan
    return float((rss / M) / (trace / M) ** 2)


def gcv_score(sample, lam, m=2, method="auto"):
    """Generalized cross-validation score, normalized by the number of observations."""
    lam = _check_lambda(lam)
    rss, trace = make_smoother(sample, m, method).gcv_terms([lam])
    score = _gcv_from_terms(rss[0], trace[0], sample.M)
    if np.isnan(score):
        raise DegenerateGCVError(f"tr(I - S) = {trace[0]:.3g} at lambda = {lam:.3g}")
    return score


def select_lambda(sample, m=2, grid=None, method="auto", engine=None, return_scores=False):
    """Grid-search the GCV minimizer; ties go to the larger lambda.

    Grid points where the score is undefined are skipped.
    """
    grid = lambda_grid() if grid is None else np.asarray(grid, dtype=float).ravel()
    if grid.size == 0 or not np.all(np.isfinite(grid)) or np.any(grid <= 0):
        raise ValidationError("lambda grid must be nonempty and positive")
    engine = engine or make_smoother(sample, m, method)
    rss, trace = engine.gcv_terms(grid)
    scores = np.array([_gcv_from_terms(a, b, sample.M) for a, b in zip(rss, trace)])
    ok = np.isfinite(scores)
    if not ok.any():
        raise NumericalError("GCV is degenerate at every grid point")
    best = np.min(scores[ok])
    yscale = 1.0 + float(np.max(np.abs(sample.y))) ** 2
    tol = 1e-9 * best + 1e-20 * yscale
    tied = ok & (scores <= best + tol)
    choice = float(np.max(grid[tied]))
    return (choice, scores) if return_scores else choice
