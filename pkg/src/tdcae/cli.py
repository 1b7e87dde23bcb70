"""Command-line pipeline: simulate, train, detect, diagnose, report.

Config lives in an INI file with sections [run], [training], [detector] and
[pendulum]; every flag overrides its file value. All randomness flows from
one root seed (--seed / [run] seed) expanded per component as

    component_seed(root, name) = SeedSequence([root, crc32(name)]) state[0]

so the engine split, synthetic data and threshold-search order stay fixed
while the training seeds vary. Output files carry no timestamps; a command
rerun with the same config and seed reproduces them byte for byte.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
import zlib
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import dataio, detector, diagnostics, net, pendulum, tdc


def component_seed(root_seed: int, name: str) -> int:
    """Derive an independent stream seed for a named component."""
    seq = np.random.SeedSequence([int(root_seed), zlib.crc32(name.encode())])
    return int(seq.generate_state(1)[0])


def write_json(path: Path, payload: dict) -> None:
    dataio.atomic_write_text(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")


# --- config assembly -----------------------------------------------------------

def load_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is not None:
        if not Path(path).is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        cp.read(path)
    return cp


def _get(cp, section, key, cast, fallback):
    if cp.has_option(section, key):
        getter = {int: cp.getint, float: cp.getfloat, bool: cp.getboolean,
                  str: cp.get}[cast]
        return getter(section, key)
    return fallback


def training_config(cp: configparser.ConfigParser, args) -> tdc.TrainingConfig:
    cfg = tdc.TrainingConfig(
        epochs=_get(cp, "training", "epochs", int, 50),
        batch_size=_get(cp, "training", "batch_size", int, 32),
        learning_rate=_get(cp, "training", "learning_rate", float, 0.003),
        alpha=_get(cp, "training", "alpha", float, 100.0),
        latent_dim=_get(cp, "training", "latent_dim", int, 8),
        dt=_get(cp, "training", "dt", float, 1.0),
        stop_gradient=_get(cp, "training", "stop_gradient", bool, False),
        hidden_dim=_get(cp, "training", "hidden_dim", int, 24),
    )
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, epochs=args.epochs)
    if getattr(args, "alpha", None) is not None:
        cfg = replace(cfg, alpha=args.alpha)
    if getattr(args, "latent_dim", None) is not None:
        cfg = replace(cfg, latent_dim=args.latent_dim)
    if getattr(args, "stop_gradient", False):
        cfg = replace(cfg, stop_gradient=True)
    return cfg


def detector_config(cp: configparser.ConfigParser, args) -> detector.DetectorConfig:
    cfg = detector.DetectorConfig(
        upper_percentile=_get(cp, "detector", "upper_percentile", float, 86.0),
        lower_percentile=_get(cp, "detector", "lower_percentile", float, 9.0),
        moving_average_window=_get(cp, "detector", "moving_average_window", int, 12),
        baseline_window=_get(cp, "detector", "baseline_window", int, 10),
        vote_threshold=_get(cp, "detector", "vote_threshold", int, 2),
        latent_dim=_get(cp, "detector", "latent_dim", int, 8),
        use_baseline=_get(cp, "detector", "use_baseline", bool, True),
    )
    if getattr(args, "latent_dim", None) is not None:
        cfg = replace(cfg, latent_dim=args.latent_dim)
    return cfg


def pendulum_config(cp: configparser.ConfigParser, args) -> pendulum.PendulumConfig:
    cfg = pendulum.PendulumConfig(
        gamma=_get(cp, "pendulum", "gamma", float, 0.2),
        omega0=_get(cp, "pendulum", "omega0", float, 1.0),
        amplitude=_get(cp, "pendulum", "amplitude", float, 0.8),
        omega_drive=_get(cp, "pendulum", "omega_drive", float, 1.2),
        drift_alpha=_get(cp, "pendulum", "drift_alpha", float, 0.005),
        drift_beta=_get(cp, "pendulum", "drift_beta", float, 0.002),
        dt=_get(cp, "pendulum", "dt", float, 0.01),
        t_end=_get(cp, "pendulum", "t_end", float, 100.0),
        theta0=_get(cp, "pendulum", "theta0", float, 0.5),
        theta_dot0=_get(cp, "pendulum", "theta_dot0", float, 0.0),
    )
    if getattr(args, "no_drift", False):
        cfg = replace(cfg, drift_alpha=0.0, drift_beta=0.0)
    return cfg


def root_seed(cp, args) -> int:
    if args.seed is not None:
        return args.seed
    return _get(cp, "run", "seed", int, 0)


def seed_list(cp, args) -> list[int]:
    if getattr(args, "seeds", None):
        return [int(s) for s in args.seeds.replace(",", " ").split()]
    raw = _get(cp, "run", "seeds", str, None)
    if raw:
        return [int(s) for s in raw.replace(",", " ").split()]
    return [root_seed(cp, args)]


def output_dir(cp, args) -> Path:
    out = Path(args.out if args.out is not None else _get(cp, "run", "out", str, "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_runs(cp, args, root: int) -> list[dataio.EngineRun]:
    subset = args.subset if getattr(args, "subset", None) else _get(cp, "run", "subset", str, "synthetic")
    if subset == "synthetic":
        return dataio.synthetic_runs(seed=component_seed(root, "synthetic-data"))
    data = getattr(args, "data", None) or _get(cp, "run", "dataset", str, None)
    if data is None:
        raise FileNotFoundError(f"subset {subset} needs a dataset path (--data or [run] dataset)")
    path = Path(data)
    if path.is_dir():
        path = path / f"train_{subset}.txt"
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    return dataio.parse_cmapss(path)


def select_runs(runs, units) -> list[dataio.EngineRun]:
    chosen = [run for run in runs if run.unit_id in units]
    if len(chosen) != len(units):
        missing = sorted(set(units) - {run.unit_id for run in chosen})
        raise ValueError(f"dataset is missing engines {missing} named by the checkpoint")
    return chosen


# --- subcommands ------------------------------------------------------------------

def cmd_simulate(cp, args) -> int:
    cfg = pendulum_config(cp, args)
    out = output_dir(cp, args)
    traj = pendulum.simulate(cfg)
    pendulum.write_trajectory_csv(traj, out / "trajectory.csv")

    start, stop = 100, min(1000, len(traj) - 1)
    points = pendulum.phase_slice(traj, start, stop)
    est = diagnostics.box_counting_dimension(points)
    counts = diagnostics.box_counts(points, diagnostics.DEFAULT_EPSILONS)
    write_json(out / "box_counting.json", {
        "slope": est.value,
        "fit_residual": est.std,
        "n_points": est.n_samples,
        "window_steps": [start, stop],
        "epsilons": list(diagnostics.DEFAULT_EPSILONS),
        "counts": [int(c) for c in counts],
        "theta_range": [float(traj.theta.min()), float(traj.theta.max())],
        "theta_dot_range": [float(traj.theta_dot.min()), float(traj.theta_dot.max())],
    })
    print(f"wrote {out / 'trajectory.csv'} ({len(traj)} steps) and "
          f"{out / 'box_counting.json'} (slope {est.value:.3f})")
    return 0


def _prepared_data(cp, args, root):
    """Runs, split, scaler and scaled train runs shared by train/detect/diagnose."""
    runs = load_runs(cp, args, root)
    test_fraction = _get(cp, "run", "test_fraction", float, 0.2)
    split = dataio.split_engines(runs, test_fraction, component_seed(root, "engine-split"))
    train_runs = select_runs(runs, split.train_engines)
    scaler = dataio.fit_scaler(train_runs)
    scaled_train = [dataio.apply_scaler(r, scaler) for r in train_runs]
    return runs, split, scaler, scaled_train


def cmd_train(cp, args) -> int:
    root = root_seed(cp, args)
    out = output_dir(cp, args)
    base = training_config(cp, args)
    runs, split, scaler, scaled_train = _prepared_data(cp, args, root)

    summary = []
    for seed in seed_list(cp, args):
        cfg = replace(base, seed=component_seed(seed, "training"))
        params, history = tdc.train(scaled_train, cfg)
        ckpt = out / f"checkpoint_seed{seed}.json"
        loss_csv = out / f"loss_seed{seed}.csv"
        net.save_checkpoint(ckpt, params, seed=seed, scaler=scaler, split=split,
                            training_config=asdict(cfg))
        tdc.write_loss_history(history, loss_csv)
        last = history[-1]
        summary.append({
            "seed": seed, "checkpoint": ckpt.name, "loss_csv": loss_csv.name,
            "first_rec": history[0].rec, "first_tdc": history[0].tdc,
            "final_rec": last.rec, "final_tdc": last.tdc,
            "final_val_rec": last.val_rec, "final_val_tdc": last.val_tdc,
        })
        print(f"seed {seed}: rec {history[0].rec:.5f} -> {last.rec:.5f}, "
              f"tdc {history[0].tdc:.5f} -> {last.tdc:.5f} ({ckpt})")
    write_json(out / "train_summary.json", {
        "n_engines_train": len(split.train_engines),
        "n_engines_test": len(split.test_engines),
        "runs": summary,
    })
    return 0


def _load_compatible_checkpoint(args, det_cfg):
    ckpt = net.load_checkpoint(args.checkpoint)
    params = ckpt["params"]
    n = net.latent_dim(params)
    if n != det_cfg.latent_dim:
        raise ValueError(f"checkpoint latent dim {n} != configured {det_cfg.latent_dim}")
    if ckpt.get("scaler") is None or ckpt.get("split") is None:
        raise ValueError("checkpoint lacks scaler/split metadata; retrain with cmd_train")
    return ckpt, params


def cmd_detect(cp, args) -> int:
    out = output_dir(cp, args)
    root = root_seed(cp, args)
    det_cfg = detector_config(cp, args)
    ckpt, params = _load_compatible_checkpoint(args, det_cfg)
    scaler, split = ckpt["scaler"], ckpt["split"]

    runs = load_runs(cp, args, root)
    train_runs = select_runs(runs, split.train_engines)
    latents_train = [tdc.infer_latent(params, dataio.apply_scaler(r, scaler))
                     for r in train_runs]
    normalized = [detector.normalize_stream(lat, det_cfg) for lat in latents_train]
    thresholds = detector.fit_thresholds(normalized, det_cfg)

    target_units = split.train_engines if args.engines == "train" else split.test_engines
    target_runs = select_runs(runs, target_units)
    latents = [tdc.infer_latent(params, dataio.apply_scaler(r, scaler))
               for r in target_runs]
    results, summary = detector.run_detector(latents, target_runs, thresholds, det_cfg)

    detector.write_detections_csv(results, target_runs, out / "detections.csv")
    write_json(out / "metrics.json", {
        "engines": args.engines,
        "metrics": summary.as_dict(),
        "thresholds": {"upper": list(thresholds.upper), "lower": list(thresholds.lower)},
        "mac": detector.mac_report(params),
    })
    print(f"{args.engines} engines: acc {summary.accuracy:.4f} prec {summary.precision:.4f} "
          f"rec {summary.recall:.4f} f1 {summary.f1:.4f} cdr {summary.cdr:.4f}")
    return 0


def cmd_diagnose(cp, args) -> int:
    out = output_dir(cp, args)
    root = root_seed(cp, args)
    det_cfg = detector_config(cp, args)
    ckpt, params = _load_compatible_checkpoint(args, det_cfg)
    scaler, split = ckpt["scaler"], ckpt["split"]

    runs = load_runs(cp, args, root)
    if not runs:
        raise ValueError("empty dataset")
    train_runs = [dataio.apply_scaler(r, scaler) for r in select_runs(runs, split.train_engines)]
    test_runs = [dataio.apply_scaler(r, scaler) for r in select_runs(runs, split.test_engines)]

    two_nn = diagnostics.two_nn_by_engine(train_runs)
    test_rows = np.vstack([r.features for r in test_runs])
    rank = diagnostics.jacobian_rank_survey(params, test_rows)
    min_ratio, violations = diagnostics.injectivity_ratio_survey(
        params, test_rows, seed=component_seed(root, "injectivity"))

    latents_train = [tdc.infer_latent(params, r) for r in train_runs]
    windows = [(0, r.normal_count) for r in train_runs]
    latents_test = [tdc.infer_latent(params, r) for r in test_runs]
    labels_test = [r.labels for r in test_runs]

    write_json(out / "diagnostics.json", {
        "two_nn": two_nn.as_dict(),
        "recommended_latent_dim": diagnostics.recommend_embedding_dim(two_nn.value),
        "jacobian_rank": rank.as_dict(),
        "injectivity": {"min_ratio": min_ratio, "violations": violations,
                        "floor": diagnostics.INJECTIVITY_FLOOR,
                        "n_samples": int(len(test_rows))},
        "eta_train": diagnostics.eta_table(latents_train, windows),
        "rho_test": diagnostics.rho_table(latents_test, labels_test),
    })
    print(f"two-NN {two_nn.value:.2f} +/- {two_nn.std:.2f}; "
          f"full-rank fraction {rank.full_rank_fraction:.4f}; "
          f"injectivity violations {violations}")
    return 0


def cmd_report(cp, args) -> int:
    out = output_dir(cp, args)
    rows = []
    for path in args.metrics:
        payload = json.loads(Path(path).read_text())
        rows.append(payload["metrics"])
    if not rows:
        raise ValueError("no metrics files given")
    keys = ("accuracy", "precision", "recall", "specificity", "f1", "cdr")
    table = {k: {"mean": float(np.mean([r[k] for r in rows])),
                 "std": float(np.std([r[k] for r in rows])),
                 "values": [r[k] for r in rows]} for k in keys}
    write_json(out / "report.json", {"n_runs": len(rows), "metrics": table})
    for k in keys:
        print(f"{k}: {table[k]['mean']:.4f} +/- {table[k]['std']:.4f}")
    return 0


# --- argument parsing ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tdcae",
        description="Latent-consistency anomaly detection for bounded dynamical systems")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="root seed (overrides [run] seed)")
        p.add_argument("--out", help="output directory (overrides [run] out)")

    p = sub.add_parser("simulate", help="integrate the pendulum and report box counting")
    common(p)
    p.add_argument("--no-drift", action="store_true", help="disable the linear drift terms")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train one autoencoder per seed")
    common(p)
    p.add_argument("--data", help="dataset directory or file")
    p.add_argument("--subset", choices=("FD001", "FD003", "synthetic"))
    p.add_argument("--seeds", help="training seeds, comma or space separated")
    p.add_argument("--epochs", type=int)
    p.add_argument("--alpha", type=float, help="consistency-loss weight")
    p.add_argument("--latent-dim", type=int, dest="latent_dim")
    p.add_argument("--stop-gradient", action="store_true", dest="stop_gradient",
                   help="treat the central difference as a constant target")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="fit thresholds on training engines and score")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset directory or file")
    p.add_argument("--subset", choices=("FD001", "FD003", "synthetic"))
    p.add_argument("--engines", choices=("train", "test"), default="test")
    p.add_argument("--latent-dim", type=int, dest="latent_dim")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("diagnose", help="dimension, rank, injectivity and consistency report")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset directory or file")
    p.add_argument("--subset", choices=("FD001", "FD003", "synthetic"))
    p.add_argument("--latent-dim", type=int, dest="latent_dim")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("report", help="aggregate per-seed metrics into mean +/- std")
    common(p)
    p.add_argument("metrics", nargs="+", help="metrics.json files from detect runs")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cp = load_config(args.config)
        return args.func(cp, args)
    except (OSError, ValueError, dataio.ParseError, pendulum.DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
