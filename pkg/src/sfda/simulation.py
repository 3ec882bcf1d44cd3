"""Simulation designs and Monte Carlo harness.

Curves follow a truncated Karhunen-Loeve expansion around the mean design

    mu_1(t) = (2t - 0.3)^3 + 0.5 t
    mu_2(t) = mu_1(t) + delta * n2^(-1/4) * (e^t - (2t - 1)^3 - 1)

and are observed at ``N_i ~ U{2, ..., N_max}`` uniform random times with
Gaussian noise. Group 1 always uses eigenvalues (1, 0.25, 0.09, 0.05) on a
sine basis; group 2 varies with the covariance setting.
"""

import csv
import logging
from contextlib import nullcontext
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from sfda.errors import NumericalError, SFDAError, ValidationError
from sfda.inference import TestConfig, two_sample_test
from sfda.rng import derived_seed, substream, worker_count
from sfda.spline import DEFAULT_LAMBDA_GRID, GroupSample

log = logging.getLogger(__name__)

SETTINGS = ("c1", "c2", "c3")
COVERAGE_POINTS = np.linspace(0.0, 1.0, 51)
MAX_FAILURE_FRACTION = 0.01

SUMMARY_COLUMNS = (
    "setting", "n1", "n2", "N_max", "delta",
    "imse_mean", "imse_sd", "rejection_rate", "runs", "failures",
)


@dataclass(frozen=True)
class EigenSystem:
    values: tuple
    basis_kind: str

    def basis(self, t):
        """Eigenfunctions at ``t``, shape (len(t), K)."""
        k = np.arange(1, len(self.values) + 1)
        arg = np.pi * np.multiply.outer(np.asarray(t, dtype=float), k)
        return np.sin(arg) if self.basis_kind == "sine" else np.cos(arg)


_GROUP1 = EigenSystem((1.0, 0.25, 0.09, 0.05), "sine")
_GROUP2 = {
    "c1": _GROUP1,
    "c2": EigenSystem((0.81, 0.36, 0.09, 0.01), "sine"),
    "c3": EigenSystem((0.64, 0.36, 0.16, 0.04, 0.01), "cosine"),
}


def _check_setting(setting):
    if setting not in SETTINGS:
        raise ValidationError(f"unknown setting {setting!r}; expected one of {SETTINGS}")
    return setting


def _check_group(group):
    if group not in (1, 2):
        raise ValidationError(f"group must be 1 or 2, got {group!r}")
    return group


def eigensystem_for(setting, group):
    _check_setting(setting)
    return _GROUP1 if _check_group(group) == 1 else _GROUP2[setting]


def mean_function(group, t, delta=0.0, n2=1):
    """Mean curve of ``group`` at ``t``; ``delta`` scales the group-2 shift."""
    _check_group(group)
    if n2 < 1:
        raise ValidationError(f"n2 must be >= 1, got {n2}")
    t = np.asarray(t, dtype=float)
    mu = (2.0 * t - 0.3) ** 3 + 0.5 * t
    if group == 2:
        mu = mu + delta * n2**-0.25 * (np.exp(t) - (2.0 * t - 1.0) ** 3 - 1.0)
    return mu if mu.ndim else float(mu)


def true_difference(t, delta, n2):
    """``mu_1(t) - mu_2(t)``."""
    return mean_function(1, t, delta, n2) - mean_function(2, t, delta, n2)


@dataclass(frozen=True)
class SimConfig:
    """One simulation cell.

    ``noise_var`` holds the error variances of groups 1 and 2.
    """

    setting: str = "c1"
    n1: int = 200
    n2: int = 100
    N_max: int = 10
    delta: float = 0.0
    noise_var: tuple = (0.09, 0.04)
    m: int = 2
    B: int = 300
    alpha: float = 0.05
    mc_runs: int = 300
    seed: int = 0
    grid_size: int = 101
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    paper_literal_weights: bool = False

    def validate(self):
        _check_setting(self.setting)
        for name in ("n1", "n2", "mc_runs"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValidationError(f"{name} must be a positive integer, got {value!r}")
        if int(self.N_max) != self.N_max or self.N_max < 2:
            raise ValidationError(f"N_max must be an integer >= 2, got {self.N_max!r}")
        if self.delta < 0:
            raise ValidationError(f"delta must be nonnegative, got {self.delta}")
        if len(self.noise_var) != 2 or min(self.noise_var) <= 0:
            raise ValidationError("noise_var must be a pair of positive variances")
        self.test_config(0).validate()
        return self

    def test_config(self, seed):
        return TestConfig(
            m=self.m, alpha=self.alpha, B=self.B, grid_size=self.grid_size,
            lambda_grid=tuple(self.lambda_grid), seed=seed,
            paper_literal_weights=self.paper_literal_weights,
        )


@dataclass(frozen=True)
class SubjectRecord:
    """Observation times, noisy responses and the latent curve values."""

    t: np.ndarray
    y: np.ndarray
    x: np.ndarray


def gen_subject(setting, group, config, rng, times=None):
    """Simulate one subject of ``group`` under ``setting``.

    ``times`` overrides the random observation times (the draw of ``N_i``
    still happens, so the stream advances the same way for the scores).
    """
    eig = eigensystem_for(setting, group)
    n_obs = int(rng.integers(2, config.N_max + 1))
    scores = rng.normal(0.0, np.sqrt(eig.values))
    if times is None:
        t = rng.uniform(0.0, 1.0, n_obs)
    else:
        t = np.atleast_1d(np.asarray(times, dtype=float))
        n_obs = t.size
    x = mean_function(group, t, config.delta, config.n2) + eig.basis(t) @ scores
    noise_sd = np.sqrt(config.noise_var[group - 1])
    y = x + rng.normal(0.0, noise_sd, n_obs)
    return SubjectRecord(t=t, y=y, x=x)


def generate_group(config, group, rng):
    """A full :class:`GroupSample` for ``group``."""
    n = config.n1 if group == 1 else config.n2
    ts, ys, ids = [], [], []
    for i in range(n):
        rec = gen_subject(config.setting, group, config, rng)
        ts.append(rec.t)
        ys.append(rec.y)
        ids.append(np.full(rec.t.size, i))
    return GroupSample(
        t=np.concatenate(ts), y=np.concatenate(ys), subject=np.concatenate(ids),
        subject_ids=tuple(range(n)), group=group,
    )


def imse(estimated_diff, true_diff, grid=None):
    """Trapezoid-rule integrated squared error of two curves on one grid."""
    est = np.asarray(estimated_diff, dtype=float)
    true = np.asarray(true_diff, dtype=float)
    if est.shape != true.shape or est.ndim != 1:
        raise ValidationError(f"curves on different grids: {est.shape} vs {true.shape}")
    grid = np.linspace(0.0, 1.0, est.size) if grid is None else np.asarray(grid, dtype=float)
    if grid.shape != est.shape:
        raise ValidationError("grid does not match the curves")
    return float(trapezoid((est - true) ** 2, grid))


@dataclass(frozen=True)
class RunResult:
    run: int
    imse: float
    covered: np.ndarray
    reject: bool
    lambda1: float
    lambda2: float


@dataclass(frozen=True, eq=False)
class MCSummary:
    setting: str
    n1: int
    n2: int
    N_max: int
    delta: float
    imse_mean: float
    imse_sd: float
    coverage: np.ndarray
    rejection_rate: float
    runs: int
    failures: int
    rejections: int
    coverage_grid: np.ndarray = field(default_factory=lambda: COVERAGE_POINTS.copy())
    imse_values: np.ndarray = field(default=None, repr=False)

    def coverage_at(self, t):
        return float(np.interp(t, self.coverage_grid, self.coverage))

    def row(self):
        return {name: getattr(self, name) for name in SUMMARY_COLUMNS}


def simulate_pair(config, run):
    """Both groups for Monte Carlo run ``run``."""
    return (
        generate_group(config, 1, substream(config.seed, run, 1)),
        generate_group(config, 2, substream(config.seed, run, 2)),
    )


def run_one(config, run):
    """Generate, test and score a single Monte Carlo run."""
    sample1, sample2 = simulate_pair(config, run)
    report = two_sample_test(sample1, sample2, config.test_config(derived_seed(config.seed, run, 0)))
    truth = true_difference(report.grid, config.delta, config.n2)
    lower = np.interp(COVERAGE_POINTS, report.grid, report.band_lower)
    upper = np.interp(COVERAGE_POINTS, report.grid, report.band_upper)
    target = true_difference(COVERAGE_POINTS, config.delta, config.n2)
    return RunResult(
        run=run,
        imse=imse(report.diff_estimate, truth, report.grid),
        covered=(lower <= target) & (target <= upper),
        reject=report.reject,
        lambda1=report.lambda1,
        lambda2=report.lambda2,
    )


def _safe_run(config, run):
    try:
        return run_one(config, run)
    except SFDAError as exc:
        log.warning("Monte Carlo run %d failed: %s", run, exc)
        return None


def _run_many(config, runs):
    return [_safe_run(config, r) for r in runs]


def run_mc(config, workers=None):
    """Run ``config.mc_runs`` independent replications and aggregate them.

    Runs use run-indexed random substreams and are aggregated by sums, so
    the summary is the same for any worker count. Failed runs are dropped
    and counted; more than 1% failures is an error.
    """
    config.validate()
    runs = range(config.mc_runs)
    workers = worker_count() if workers is None else max(1, int(workers))
    if workers == 1:
        results = _run_many(config, runs)
    else:
        batches = [runs[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_many, [config] * workers, batches))
        results = [res for part in parts for res in part]
    results = sorted((r for r in results if r is not None), key=lambda r: r.run)
    failures = config.mc_runs - len(results)
    if failures > MAX_FAILURE_FRACTION * config.mc_runs:
        raise NumericalError(f"{failures} of {config.mc_runs} Monte Carlo runs failed")
    if not results:
        raise NumericalError("no Monte Carlo run succeeded")
    values = np.array([r.imse for r in results])
    rejections = sum(r.reject for r in results)
    return MCSummary(
        setting=config.setting, n1=config.n1, n2=config.n2, N_max=config.N_max,
        delta=config.delta,
        imse_mean=float(values.mean()),
        imse_sd=float(values.std(ddof=1)) if values.size > 1 else 0.0,
        coverage=np.mean([r.covered for r in results], axis=0),
        rejection_rate=rejections / len(results),
        runs=len(results),
        failures=failures,
        rejections=int(rejections),
        imse_values=values,
    )


def _sink(target):
    if hasattr(target, "write"):
        return nullcontext(target)
    return open(target, "w", newline="")


def _fmt(value):
    return format(value, ".10g") if isinstance(value, float) else str(value)


def write_summary_csv(summaries, path):
    """Write summary rows to a path or open text file.

    ``summaries`` may be a single :class:`MCSummary`.
    """
    if isinstance(summaries, MCSummary):
        summaries = [summaries]
    with _sink(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            writer.writerow([_fmt(v) for v in s.row().values()])


def write_coverage_csv(summary, path):
    with _sink(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(("t", "coverage"))
        for t, c in zip(summary.coverage_grid, summary.coverage):
            writer.writerow((_fmt(float(t)), _fmt(float(c))))

