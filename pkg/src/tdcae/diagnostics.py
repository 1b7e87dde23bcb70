"""Embedding and consistency diagnostics for trained encoders.

Four families:
  * intrinsic dimension of the data manifold (Two-NN maximum likelihood),
  * box-counting dimension of 2-D point sets,
  * encoder geometry (Jacobian rank via SVD, pairwise injectivity ratios),
  * latent consistency: eta (variance ratio of min-max scaled derivative vs
    state channels) and rho (squared gap between the accumulated derivative
    and the re-based state).

All of these are read-only over parameters and data.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from . import net
from .dataio import EngineRun
from .tdc import LatentSeries

TWO_NN_TRIM = 0.1
RANK_THRESHOLD = 1e-9
INJECTIVITY_DELTA = 1e-6
INJECTIVITY_FLOOR = 1e-5

# log-spaced cell sizes 10^-2 .. 10^-0.4, 17 values, spanning 1.6 decades
DEFAULT_EPSILONS = 10.0 ** np.linspace(-2.0, -0.4, 17)


@dataclass(frozen=True)
class DimensionEstimate:
    value: float
    std: float
    method: str
    n_samples: int

    def __post_init__(self):
        if self.method not in ("two_nn", "box_counting"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.value > 0:
            raise ValueError(f"non-positive dimension estimate {self.value}")
        if self.std < 0:
            raise ValueError("negative spread")

    def as_dict(self) -> dict:
        return {"method": self.method, "value": self.value,
                "std": self.std, "n_samples": self.n_samples}


# --- Two-NN intrinsic dimension ------------------------------------------------

def two_nn_dimension(points: np.ndarray, trim: float = TWO_NN_TRIM) -> DimensionEstimate:
    """Two-nearest-neighbor maximum-likelihood intrinsic dimension.

    For each point, mu = r2/r1 (second vs first neighbor distance). The top
    `trim` fraction of mu is not simply discarded: the likelihood is
    censored at the trim point,

        d = r / (sum_{i<=r} ln mu_(i) + (N-r) * ln mu_(r)),

    which keeps the estimator unbiased under trimming. Exact duplicate
    points are removed first (warned, since r1=0 breaks the ratios).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D array [N x D]")
    deduped = np.unique(pts, axis=0)
    if len(deduped) < len(pts):
        warnings.warn(f"removed {len(pts) - len(deduped)} duplicate points")
    n = len(deduped)
    if n < 20:
        raise ValueError(f"need at least 20 distinct points, got {n}")

    dist, _ = cKDTree(deduped).query(deduped, k=3)
    log_mu = np.sort(np.log(dist[:, 2] / dist[:, 1]))
    r = n - int(math.floor(trim * n))
    kept = log_mu[:r]
    denom = kept.sum() + (n - r) * kept[-1]
    if denom <= 0:
        raise ValueError("degenerate neighbor ratios; cannot estimate dimension")
    return DimensionEstimate(value=r / denom, std=0.0, method="two_nn", n_samples=n)


def two_nn_by_engine(runs: list[EngineRun], trim: float = TWO_NN_TRIM) -> DimensionEstimate:
    """Per-engine Two-NN on normal rows, aggregated mean +/- std across engines."""
    values, total = [], 0
    for run in runs:
        try:
            est = two_nn_dimension(run.normal_features(), trim=trim)
        except ValueError as exc:
            warnings.warn(f"unit {run.unit_id}: {exc}; skipped")
            continue
        values.append(est.value)
        total += est.n_samples
    if not values:
        raise ValueError("no engine yielded a dimension estimate")
    return DimensionEstimate(value=float(np.mean(values)), std=float(np.std(values)),
                             method="two_nn", n_samples=total)


def recommend_embedding_dim(dimension: float) -> int:
    """Smallest even latent width strictly above twice the intrinsic dimension.

    The embedding bound for fractal sets is strict (n > 2d), hence the
    open inequality: d = 4.0 recommends 10, not 8.
    """
    if dimension <= 0:
        raise ValueError("dimension must be positive")
    n = math.floor(2.0 * dimension) + 1
    return n if n % 2 == 0 else n + 1


# --- box-counting dimension ----------------------------------------------------

def box_counts(points: np.ndarray, epsilons, normalize: bool = True) -> np.ndarray:
    """Occupied-cell counts N(eps) on a grid anchored at the bounding-box corner.

    With normalize=True coordinates are first mapped to the unit bounding
    square, so eps is a fraction of the set's extent; with normalize=False
    eps is in data units.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D array")
    shifted = pts - pts.min(axis=0)
    span = shifted.max(axis=0)
    if not np.any(span > 0):
        raise ValueError("degenerate point set (all points identical)")
    if normalize:
        shifted = shifted / np.where(span > 0, span, 1.0)
    counts = []
    for eps in epsilons:
        if eps <= 0:
            raise ValueError("epsilon values must be positive")
        cells = np.floor(shifted / eps).astype(np.int64)
        counts.append(np.unique(cells, axis=0).shape[0])
    return np.array(counts)


def box_counting_dimension(points: np.ndarray, epsilons=None,
                           normalize: bool = True) -> DimensionEstimate:
    """Least-squares slope of ln N(eps) against ln(1/eps).

    The returned std is the RMS residual of the log-log fit, a goodness
    measure rather than a sampling spread.
    """
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 100:
        raise ValueError(f"need at least 100 points, got {len(pts)}")
    eps = DEFAULT_EPSILONS if epsilons is None else np.asarray(epsilons, dtype=np.float64)
    if len(eps) < 4 or eps.max() / eps.min() < 10.0:
        raise ValueError("need at least 4 epsilon values spanning a decade")
    counts = box_counts(pts, eps, normalize=normalize)
    x = -np.log(eps)
    y = np.log(counts)
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return DimensionEstimate(value=float(slope), std=residual,
                             method="box_counting", n_samples=len(pts))


# --- encoder geometry ------------------------------------------------------------

@dataclass
class RankReport:
    """Per-sample encoder-Jacobian singular values and ranks at a threshold."""

    singular_values: np.ndarray
    ranks: np.ndarray
    threshold: float
    full_rank: int
    full_rank_fraction: float
    failed: list[int]

    def as_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "full_rank": self.full_rank,
            "full_rank_fraction": self.full_rank_fraction,
            "n_samples": int(len(self.ranks)),
            "n_failed": len(self.failed),
            "min_singular_value": float(self.singular_values[:, -1].min())
            if len(self.ranks) else float("nan"),
        }


def jacobian_rank_survey(params: net.NetworkParams, inputs: np.ndarray,
                         threshold: float = RANK_THRESHOLD) -> RankReport:
    """SVD-based rank of the encoder Jacobian at every input row.

    Samples where the SVD fails to converge are flagged in `failed` and
    excluded from the fraction, never silently dropped.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    jac = net.encoder_jacobian_batch(params, np.asarray(inputs, dtype=np.float64))
    full = min(jac.shape[1], jac.shape[2])
    svs, ranks, failed = [], [], []
    for i in range(jac.shape[0]):
        try:
            s = np.linalg.svd(jac[i], compute_uv=False)
        except np.linalg.LinAlgError:
            failed.append(i)
            continue
        svs.append(s)
        ranks.append(int(np.sum(s > threshold)))
    ranks = np.array(ranks, dtype=int)
    fraction = float(np.mean(ranks == full)) if len(ranks) else 0.0
    return RankReport(singular_values=np.array(svs), ranks=ranks, threshold=threshold,
                      full_rank=full, full_rank_fraction=fraction, failed=failed)


def injectivity_ratio_survey(params: net.NetworkParams, inputs: np.ndarray,
                             delta: float = INJECTIVITY_DELTA,
                             floor: float = INJECTIVITY_FLOOR,
                             max_pairs: int = 1_000_000,
                             seed: int = 0) -> tuple[float, int]:
    """Minimum pairwise contraction ratio of the encoder and count below floor.

    Ratios ||E(x1)-E(x2)|| / ||x1-x2|| over all pairs separated by more than
    delta; beyond max_pairs total pairs, a uniform random subsample of
    max_pairs pairs is used instead.
    """
    x = np.asarray(inputs, dtype=np.float64)
    n = len(x)
    if n < 2:
        raise ValueError("need at least 2 inputs")
    n_enc = net.encoder_layer_count(params)
    latent, _ = net.forward(params, x, n_layers=n_enc)

    if n * (n - 1) // 2 <= max_pairs:
        dx = pdist(x)
        dz = pdist(latent)
    else:
        rng = np.random.default_rng(seed)
        need = max_pairs
        i = rng.integers(0, n, size=int(need * 1.02) + 16)
        j = rng.integers(0, n, size=i.size)
        keep = i != j
        i, j = i[keep][:need], j[keep][:need]
        dx = np.linalg.norm(x[i] - x[j], axis=1)
        dz = np.linalg.norm(latent[i] - latent[j], axis=1)

    mask = dx > delta
    if not np.any(mask):
        raise ValueError("no pairs separated by more than delta")
    ratios = dz[mask] / dx[mask]
    return float(ratios.min()), int(np.sum(ratios < floor))


# --- consistency metrics ---------------------------------------------------------

def _minmax(series: np.ndarray) -> np.ndarray:
    s = np.asarray(series, dtype=np.float64)
    span = s.max() - s.min()
    if span == 0:
        raise ValueError("constant series has no min-max scale")
    return (s - s.min()) / span


def eta_metric(z_series: np.ndarray, zdot_series: np.ndarray) -> float:
    """Variance of the min-max scaled derivative over that of the state.

    Both series are scaled to [0, 1] independently, which makes the ratio
    invariant to affine maps of either series. Near 1 means the derivative
    channel varies as much as the state channel it annotates.
    """
    if len(z_series) < 2 or len(zdot_series) < 2:
        raise ValueError("series must have length >= 2")
    return float(np.var(_minmax(zdot_series)) / np.var(_minmax(z_series)))


def rho_metric(z_series: np.ndarray, zdot_series: np.ndarray, dt: float = 1.0) -> float:
    """Mean squared gap between the state increment and the accumulated derivative.

    With x_i = z_i - z_0, rho = mean_i (x_i - sum_{j<=i} zdot_j dt)^2 over
    i = 1..N. Re-basing to z_0 keeps rho about the dynamics rather than the
    starting level; a backward-difference derivative gives exactly 0.
    """
    z = np.asarray(z_series, dtype=np.float64)
    zd = np.asarray(zdot_series, dtype=np.float64)
    if z.shape != zd.shape or z.ndim != 1:
        raise ValueError("series must be aligned 1-D arrays")
    if len(z) < 2:
        raise ValueError("series must have length >= 2")
    x = z[1:] - z[0]
    accumulated = np.cumsum(zd[1:]) * dt
    return float(np.mean((x - accumulated) ** 2))


@dataclass(frozen=True)
class ConsistencyReport:
    pair_index: int
    eta: float
    rho: float
    window: tuple[int, int]


def consistency_reports(latent: LatentSeries, dt: float = 1.0,
                        window: tuple[int, int] | None = None) -> list[ConsistencyReport]:
    """Per-pair eta/rho over one index window of a latent series.

    A pair whose state or derivative channel is constant over the window
    gets eta = nan instead of aborting the whole report.
    """
    start, stop = window if window is not None else (0, len(latent))
    if not (0 <= start < stop <= len(latent)) or stop - start < 2:
        raise ValueError(f"bad window ({start}, {stop}) for series of length {len(latent)}")
    reports = []
    for k in range(latent.n_pairs):
        z = latent.z[start:stop, k]
        zd = latent.z_dot[start:stop, k]
        try:
            eta = eta_metric(z, zd)
        except ValueError:
            eta = float("nan")
        reports.append(ConsistencyReport(pair_index=k, eta=eta,
                                         rho=rho_metric(z, zd, dt), window=(start, stop)))
    return reports


def eta_per_engine(latent: LatentSeries, window: tuple[int, int] | None = None) -> float:
    """Mean eta across the latent pairs of one engine."""
    return float(np.mean([r.eta for r in consistency_reports(latent, window=window)]))


def eta_table(latents: list[LatentSeries], windows: list[tuple[int, int]]) -> list[dict]:
    """Per-pair eta mean +/- std across engines, each on its own window."""
    n_pairs = latents[0].n_pairs
    rows = []
    for k in range(n_pairs):
        values = []
        for latent, window in zip(latents, windows):
            eta = consistency_reports(latent, window=window)[k].eta
            if math.isfinite(eta):
                values.append(eta)
        rows.append({"pair": k, "mean": float(np.mean(values)), "std": float(np.std(values)),
                     "n_engines": len(values)})
    return rows


def rho_table(latents: list[LatentSeries], labels: list[np.ndarray],
              dt: float = 1.0) -> list[dict]:
    """Per-pair rho over the normal and anomalous segments, across engines.

    Each segment is re-based to its own first sample, so the anomalous rho
    measures consistency decay inside the degraded regime, not the jump
    from the start of life.
    """
    n_pairs = latents[0].n_pairs
    per_pair_normal = [[] for _ in range(n_pairs)]
    per_pair_anom = [[] for _ in range(n_pairs)]
    for latent, lab in zip(latents, labels):
        boundary = int(np.argmax(lab)) if lab.any() else len(lab)
        for segment, sink in (((0, boundary), per_pair_normal),
                              ((boundary, len(lab)), per_pair_anom)):
            if segment[1] - segment[0] < 2:
                continue
            for r in consistency_reports(latent, dt=dt, window=segment):
                sink[r.pair_index].append(r.rho)
    rows = []
    for k in range(n_pairs):
        rows.append({
            "pair": k,
            "normal_mean": float(np.mean(per_pair_normal[k])) if per_pair_normal[k] else float("nan"),
            "normal_std": float(np.std(per_pair_normal[k])) if per_pair_normal[k] else float("nan"),
            "anomalous_mean": float(np.mean(per_pair_anom[k])) if per_pair_anom[k] else float("nan"),
            "anomalous_std": float(np.std(per_pair_anom[k])) if per_pair_anom[k] else float("nan"),
        })
    return rows
