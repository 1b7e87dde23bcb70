"""Autoencoder training with a temporal differential consistency penalty.

The total loss per batch is

    Rec-Loss + alpha * TDC-Loss

where Rec-Loss is the reconstruction MSE at time t and TDC-Loss is the MSE
between the central difference of the latent state half,
(z_{t+1} - z_{t-1}) / (2 dt), and the latent derivative half z_dot_t. The
TDC gradient flows through all three encoder evaluations by default; a
stop-gradient mode treats the central difference as a constant target.

Inference is single-step: the derivative channels are read off one encoded
measurement, no temporal context needed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import net
from .dataio import EngineRun, VAL_FRACTION, atomic_write_text, normal_row_split


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.003
    alpha: float = 100.0
    latent_dim: int = 8
    dt: float = 1.0
    seed: int = 0
    stop_gradient: bool = False
    hidden_dim: int = 24
    input_dim: int = 24

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.latent_dim, self.hidden_dim, self.input_dim) <= 0:
            raise ValueError("epochs, batch_size and dimensions must be positive")
        if self.learning_rate <= 0 or self.dt <= 0:
            raise ValueError("learning_rate and dt must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.latent_dim % 2 != 0:
            raise ValueError("latent_dim must be even (state-derivative pairs)")


@dataclass(frozen=True)
class TripletBatch:
    """Aligned consecutive scaled measurements: rows of (t-1, t, t+1)."""

    prev: np.ndarray
    cur: np.ndarray
    nxt: np.ndarray

    def __post_init__(self):
        if not (self.prev.shape == self.cur.shape == self.nxt.shape):
            raise ValueError("triplet matrices must share a shape")

    def __len__(self) -> int:
        return self.cur.shape[0]

    def take(self, idx: np.ndarray) -> "TripletBatch":
        return TripletBatch(self.prev[idx], self.cur[idx], self.nxt[idx])


def make_triplets(runs: list[EngineRun], subset: str = "train",
                  val_fraction: float = VAL_FRACTION) -> TripletBatch:
    """Triplets over each engine's normal rows, restricted to one row subset.

    subset "train" uses each engine's leading 90% of normal rows, "val" the
    trailing 10%, "all" the whole normal range. Every index with both
    neighbors inside the chosen contiguous range yields one triplet, so
    triplets never straddle engines or the train/val boundary. Engines whose
    range has fewer than 3 rows are skipped with a warning.
    """
    if subset not in ("train", "val", "all"):
        raise ValueError(f"unknown subset {subset!r}")
    prevs, curs, nxts = [], [], []
    for run in runs:
        train_rows, val_rows = normal_row_split(run, val_fraction)
        rows = {"train": train_rows, "val": val_rows,
                "all": range(0, run.normal_count)}[subset]
        if len(rows) < 3:
            warnings.warn(f"unit {run.unit_id}: {subset} range has {len(rows)} rows, "
                          "too short for triplets; skipped")
            continue
        a, b = rows.start, rows.stop
        prevs.append(run.features[a:b - 2])
        curs.append(run.features[a + 1:b - 1])
        nxts.append(run.features[a + 2:b])
    if not prevs:
        empty = np.empty((0, runs[0].features.shape[1] if runs else 0))
        return TripletBatch(empty, empty.copy(), empty.copy())
    return TripletBatch(np.vstack(prevs), np.vstack(curs), np.vstack(nxts))


def central_difference(z_prev: np.ndarray, z_next: np.ndarray, dt: float) -> np.ndarray:
    return (z_next - z_prev) / (2.0 * dt)


def tdc_loss(z_prev: np.ndarray, z_next: np.ndarray, z_dot: np.ndarray, dt: float) -> float:
    """MSE between the central difference of z and the predicted derivative."""
    delta = central_difference(z_prev, z_next, dt)
    return float(np.mean((delta - z_dot) ** 2))


def rec_loss(reconstruction: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean((reconstruction - target) ** 2))


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    rec: float
    tdc: float
    val_rec: float
    val_tdc: float


def _batch_losses(params: net.NetworkParams, batch: TripletBatch, dt: float) -> tuple[float, float]:
    """(rec, tdc) for a batch without touching gradients."""
    out, _ = net.forward(params, batch.cur)
    zp, _ = net.encode(params, batch.prev)
    zn, _ = net.encode(params, batch.nxt)
    _, zdot = net.encode(params, batch.cur)
    return rec_loss(out, batch.cur), tdc_loss(zp, zn, zdot, dt)


def train_step(params: net.NetworkParams, batch: TripletBatch, config: TrainingConfig,
               state: net.AdamaxState) -> tuple[float, float]:
    """One Adamax update on a triplet batch; returns (rec, tdc) pre-update.

    Gradient wiring: the reconstruction MSE backpropagates through the full
    pass at t. The TDC residual e = (z_next - z_prev)/(2 dt) - z_dot enters
    three ways: -2 alpha e / size at the derivative half of the latent layer
    of the t pass, and +/- 2 alpha e / (2 dt size) at the state half of the
    encoder-only passes at t+1 / t-1. Stop-gradient mode drops the neighbor
    terms, leaving the central difference as a constant target.
    """
    n_enc = net.encoder_layer_count(params)
    half = net.latent_dim(params) // 2

    out, cache = net.forward(params, batch.cur)
    latent_t = cache.activations[n_enc]
    z_dot = latent_t[:, half:]

    zp, cache_p = net.forward(params, batch.prev, n_layers=n_enc)
    zn, cache_n = net.forward(params, batch.nxt, n_layers=n_enc)
    e = central_difference(zp[:, :half], zn[:, :half], config.dt) - z_dot

    rec = rec_loss(out, batch.cur)
    tdc = float(np.mean(e * e))
    total = rec + config.alpha * tdc
    if not np.isfinite(total):
        raise ValueError("non-finite loss")

    out_grad = 2.0 * (out - batch.cur) / out.size
    c = 2.0 * config.alpha / e.size
    latent_inject = np.zeros_like(latent_t)
    latent_inject[:, half:] = -c * e
    grads = net.backward(params, cache, out_grad, inject={n_enc - 1: latent_inject})

    if config.alpha > 0 and not config.stop_gradient:
        neighbor = np.zeros_like(zp)
        neighbor[:, :half] = c * e / (2.0 * config.dt)
        net.add_grads(grads, net.backward(params, cache_n, neighbor))
        net.add_grads(grads, net.backward(params, cache_p, -neighbor))

    net.adamax_step(params, grads, state)
    return rec, tdc


def train(runs: list[EngineRun], config: TrainingConfig,
          params: net.NetworkParams | None = None) -> tuple[net.NetworkParams, list[EpochStats]]:
    """Train on the normal training ranges of already-scaled engine runs.

    Fixed epoch count, no early stopping; the validation losses (trailing
    10% of normal rows) are logged for reporting only. Triplets are
    reshuffled across engines every epoch with the seeded RNG, so a given
    (config, seed) reproduces the loss history exactly.
    """
    train_set = make_triplets(runs, "train")
    val_set = make_triplets(runs, "val")
    if len(train_set) == 0:
        raise ValueError("no training triplets available")

    rng = np.random.default_rng(config.seed)
    if params is None:
        specs = net.autoencoder_specs(config.input_dim, config.hidden_dim, config.latent_dim)
        params = net.init_params(specs, rng)
    state = net.init_adamax(params, learning_rate=config.learning_rate)

    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        rec_sum = tdc_sum = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                rec, tdc = train_step(params, train_set.take(idx), config, state)
            except ValueError as exc:
                raise ValueError(
                    f"epoch {epoch}, batch {start // config.batch_size}: {exc}") from None
            rec_sum += rec * len(idx)
            tdc_sum += tdc * len(idx)
        if len(val_set) > 0:
            val_rec, val_tdc = _batch_losses(params, val_set, config.dt)
        else:
            val_rec = val_tdc = float("nan")
        history.append(EpochStats(epoch, rec_sum / len(order), tdc_sum / len(order),
                                  val_rec, val_tdc))
    return params, history


LOSS_CSV_HEADER = "epoch,rec_loss,tdc_loss,val_rec_loss,val_tdc_loss"


def write_loss_history(history: list[EpochStats], path) -> None:
    lines = [LOSS_CSV_HEADER]
    for s in history:
        lines.append(f"{s.epoch},{s.rec!r},{s.tdc!r},{s.val_rec!r},{s.val_tdc!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")


@dataclass(frozen=True)
class LatentSeries:
    """Per-timestep latent trajectory split into state and derivative halves."""

    unit_id: int
    z: np.ndarray
    z_dot: np.ndarray

    def __post_init__(self):
        if self.z.shape != self.z_dot.shape:
            raise ValueError("state and derivative halves must share a shape")

    def __len__(self) -> int:
        return self.z.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.z.shape[1]


def infer_latent(params: net.NetworkParams, run: EngineRun) -> LatentSeries:
    """Encode every row of a scaled run; single-step, no temporal context."""
    z, z_dot = net.encode(params, run.features)
    return LatentSeries(unit_id=run.unit_id, z=z, z_dot=z_dot)
