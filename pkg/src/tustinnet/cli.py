"""Batch command-line interface.

Subcommands: generate (synthetic dataset), prepare (velocity + equilibrium
annotations), train (transfer or standard procedure), identify (grey-box
parameters, with/without the spring term), evaluate (free-run RMSE matrix
plus plot-ready trajectory CSVs). Every run writes its fully resolved
configuration next to its outputs so it can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import data as dataio
from . import evaluation, greybox, synth, training
from .checkpoint import load_checkpoint
from .errors import ConfigError, TustinNetError

OUT_ROOT_ENV = "TUSTINNET_OUT_ROOT"


def _resolve_out(out: str) -> Path:
    root = os.environ.get(OUT_ROOT_ENV)
    path = Path(out)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(path, allowed: set) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return doc


def _dump_resolved(out_dir: Path, doc: dict):
    with open(out_dir / "resolved_config.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def _load_theta(spec) -> greybox.ELParameters:
    if spec is None:
        return greybox.default_parameters()
    if isinstance(spec, str):
        return greybox.load_parameters(spec)
    if isinstance(spec, dict):
        return greybox.default_parameters().copy(**{k: float(v)
                                                    for k, v in spec.items()})
    raise ConfigError(f"cannot interpret parameter spec {spec!r}")


# ---------------------------------------------------------------------------
# generate

GENERATE_KEYS = {"tau_s", "duration_range", "quantize", "noise_amplitude",
                 "perturbation", "min_perturbation", "theta0_perturbation",
                 "substeps", "parameters", "layout", "seed"}
LAYOUT_KEYS = {"train_free_fall", "train_noise",
               "validation_free_fall", "validation_noise"}


def cmd_generate(args) -> int:
    doc = _load_config(args.config, GENERATE_KEYS)
    layout = dict(train_free_fall=10, train_noise=5,
                  validation_free_fall=4, validation_noise=4)
    user_layout = doc.get("layout") or {}
    unknown = set(user_layout) - LAYOUT_KEYS
    if unknown:
        raise ConfigError(f"unknown layout keys {sorted(unknown)}")
    layout.update({k: int(v) for k, v in user_layout.items()})

    tau_s = float(doc.get("tau_s", 0.01))
    duration_range = doc.get("duration_range", [7.16, 14.99])
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    theta = _load_theta(doc.get("parameters"))
    out_dir = _resolve_out(args.out)

    rng = np.random.default_rng([seed, 911])
    entries = []
    idx = 0

    def durations(n):
        lo = int(round(duration_range[0] / tau_s))
        hi = int(round(duration_range[1] / tau_s))
        return rng.integers(lo, hi + 1, size=n) * tau_s

    plan = [
        ("train", dataio.FREE_FALL, layout["train_free_fall"], "train_ff"),
        ("train", dataio.NOISE_EXCITED, layout["train_noise"], "train_wn"),
        ("validation", dataio.FREE_FALL, layout["validation_free_fall"], "val_ff"),
        ("validation", dataio.NOISE_EXCITED, layout["validation_noise"], "val_wn"),
    ]
    for split, kind, count, stem in plan:
        for j, dur in enumerate(durations(count)):
            spec = synth.GenerationSpec(
                theta=theta, kind=kind, duration=float(dur), tau_s=tau_s,
                noise_amplitude=float(doc.get("noise_amplitude", 3.0)),
                perturbation=float(doc.get("perturbation", 0.1)),
                min_perturbation=float(doc.get("min_perturbation", 0.03)),
                theta0_perturbation=float(doc.get("theta0_perturbation", 0.0)),
                seed=int(rng.integers(2 ** 31)),
                quantize=bool(doc.get("quantize", True)),
                substeps=int(doc.get("substeps", 10)),
            )
            seq = synth.generate(spec, id=idx)
            fname = f"{stem}_{j:02d}.csv"
            dataio.write_experiment_csv(out_dir / fname, seq.t, seq.q, seq.u)
            entries.append(dataio.ManifestEntry(file=fname, kind=kind, split=split))
            idx += 1

    dataio.write_manifest(out_dir / "manifest.yaml", entries, tau_s)
    greybox.save_parameters(out_dir / "planted_parameters.yaml", theta)
    _dump_resolved(out_dir, {
        "command": "generate", "seed": seed, "tau_s": tau_s,
        "duration_range": [float(duration_range[0]), float(duration_range[1])],
        "layout": layout, "quantize": bool(doc.get("quantize", True)),
        "noise_amplitude": float(doc.get("noise_amplitude", 3.0)),
        "perturbation": float(doc.get("perturbation", 0.1)),
        "min_perturbation": float(doc.get("min_perturbation", 0.03)),
        "theta0_perturbation": float(doc.get("theta0_perturbation", 0.0)),
        "substeps": int(doc.get("substeps", 10)),
        "parameters": theta.as_dict(),
    })
    print(f"wrote {idx} experiments + manifest to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# prepare

PREPARE_KEYS = {"manifest", "speed_tol", "window"}


def cmd_prepare(args) -> int:
    doc = _load_config(args.config, PREPARE_KEYS)
    manifest = _require_manifest(doc)
    speed_tol = float(doc.get("speed_tol", dataio.DEFAULT_SPEED_TOL))
    window = int(doc.get("window", dataio.DEFAULT_EQUILIBRIUM_WINDOW))
    out_dir = _resolve_out(args.out)

    annotations = []
    for split in ("train", "validation"):
        for seq in dataio.load_split(manifest, split, speed_tol=speed_tol,
                                     window=window):
            stem = Path(seq.source).stem
            vel_path = out_dir / f"{stem}_velocities.csv"
            with open(vel_path, "w", encoding="utf-8") as fh:
                fh.write("t,theta_dot,alpha_dot,one_sided\n")
                for k in range(len(seq.t)):
                    fh.write(f"{float(seq.t[k])!r},{float(seq.qdot_est[k, 0])!r},"
                             f"{float(seq.qdot_est[k, 1])!r},"
                             f"{int(seq.boundary_mask[k])}\n")
            annotations.append({
                "file": Path(seq.source).name, "split": split,
                "kind": seq.kind, "kbar": int(seq.kbar),
                "horizon": int(seq.horizon),
                "settles": bool(seq.kbar < seq.horizon),
            })
    with open(out_dir / "annotations.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump({"speed_tol": speed_tol, "window": window,
                        "experiments": annotations}, fh, sort_keys=False)
    _dump_resolved(out_dir, {"command": "prepare", "manifest": str(manifest),
                             "speed_tol": speed_tol, "window": window})
    print(f"annotated {len(annotations)} experiments into {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# train

TRAIN_KEYS = {"manifest", "training"}


def _require_manifest(doc) -> Path:
    if "manifest" not in doc:
        raise ConfigError("config is missing the 'manifest' path")
    manifest = Path(doc["manifest"])
    if not manifest.exists():
        raise ConfigError(f"manifest not found: {manifest}")
    return manifest


def cmd_train(args) -> int:
    doc = _load_config(args.config, TRAIN_KEYS)
    manifest = _require_manifest(doc)
    cfg = training.TrainingConfig.from_dict(doc.get("training") or {})
    if args.seed is not None:
        cfg.seed = args.seed
    if args.procedure is not None:
        cfg.procedure = args.procedure
    if args.strict:
        cfg.strict = True
    cfg.validate()
    out_dir = _resolve_out(args.out)

    experiments = dataio.load_split(manifest, "train",
                                    speed_tol=cfg.equilibrium_speed_tol,
                                    window=cfg.equilibrium_window)
    model = training.init_model(cfg, n_q=experiments[0].n_q,
                                n_u=experiments[0].n_u)
    try:
        if cfg.procedure == "transfer":
            model, reports = training.run_transfer_learning(
                model, experiments, cfg, out_dir=str(out_dir))
        else:
            model, report = training.train_standard(
                model, experiments, cfg, out_dir=str(out_dir))
            reports = {"standard": report}
    except TustinNetError as exc:
        stage = getattr(exc, "stage", None)
        raise TustinNetError(
            f"training failed{f' in stage {stage}' if stage else ''}: {exc}"
        ) from exc

    resolved = {"command": "train", "manifest": str(manifest)}
    resolved["training"] = {k: (list(v) if isinstance(v, tuple) else v)
                            for k, v in cfg.__dict__.items()}
    _dump_resolved(out_dir, resolved)
    for name, report in reports.items():
        print(f"stage {name}: {report.epochs_run} epochs, "
              f"final loss {report.final_loss:.6g}")
    return 0


# ---------------------------------------------------------------------------
# identify

IDENTIFY_KEYS = {"manifest", "theta0", "bounds", "identify"}
IDENTIFY_OPT_KEYS = {"loss", "max_evals", "restarts", "substeps",
                     "positive_kappa2", "free"}


def cmd_identify(args) -> int:
    doc = _load_config(args.config, IDENTIFY_KEYS)
    manifest = _require_manifest(doc)
    opts = doc.get("identify") or {}
    unknown = set(opts) - IDENTIFY_OPT_KEYS
    if unknown:
        raise ConfigError(f"unknown identify keys {sorted(unknown)}")
    theta0 = _load_theta(doc.get("theta0"))
    bounds = greybox.default_bounds(bool(opts.get("positive_kappa2", False)))
    if doc.get("bounds"):
        spec = doc["bounds"]
        unknown = set(spec) - {"lower", "upper"}
        if unknown:
            raise ConfigError(f"unknown bounds keys {sorted(unknown)}")
        bounds.lower.update({k: float(v) for k, v in (spec.get("lower") or {}).items()})
        bounds.upper.update({k: float(v) for k, v in (spec.get("upper") or {}).items()})
    cfg = greybox.IdentifyConfig(
        loss=str(opts.get("loss", "state")),
        max_evals=int(opts.get("max_evals", 4000)),
        restarts=int(opts.get("restarts", 3)),
        substeps=int(opts.get("substeps", 10)),
        free=tuple(opts.get("free", greybox.DEFAULT_FREE)),
    )
    out_dir = _resolve_out(args.out)
    experiments = dataio.load_split(manifest, "train")

    modes = {"on": [greybox.WITH_SPRING], "off": [greybox.NO_SPRING],
             "both": [greybox.WITH_SPRING, greybox.NO_SPRING]}[args.spring]
    summary = {}
    for mode in modes:
        theta, report = greybox.identify_parameters(
            experiments, bounds, theta0, mode=mode, cfg=cfg)
        tag = "with_spring" if mode == greybox.WITH_SPRING else "no_spring"
        greybox.save_parameters(out_dir / f"identified_{tag}.yaml", theta)
        with open(out_dir / f"identify_{tag}_trace.csv", "w", encoding="utf-8") as fh:
            fh.write("eval,best_loss\n")
            for i, v in enumerate(report.trace):
                fh.write(f"{i},{float(v)!r}\n")
        summary[tag] = {"final_loss": report.final_loss,
                        "initial_loss": report.initial_loss,
                        "n_evals": report.n_evals,
                        "wall_time": report.wall_time}
        print(f"{tag}: loss {report.initial_loss:.6g} -> {report.final_loss:.6g} "
              f"in {report.n_evals} evaluations")
    with open(out_dir / "identify_summary.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump(summary, fh, sort_keys=False)
    _dump_resolved(out_dir, {
        "command": "identify", "manifest": str(manifest), "spring": args.spring,
        "theta0": theta0.as_dict(),
        "bounds": {"lower": bounds.lower, "upper": bounds.upper},
        "identify": {"loss": cfg.loss, "max_evals": cfg.max_evals,
                     "restarts": cfg.restarts, "substeps": cfg.substeps,
                     "free": list(cfg.free)},
    })
    return 0


# ---------------------------------------------------------------------------
# evaluate

EVALUATE_KEYS = {"manifest", "models", "split"}
MODEL_KEYS = {"name", "type", "path", "spring", "substeps"}


def _build_runners(model_specs):
    runners = []
    for spec in model_specs:
        unknown = set(spec) - MODEL_KEYS
        if unknown:
            raise ConfigError(f"unknown model keys {sorted(unknown)}")
        kind = spec.get("type")
        name = spec.get("name") or Path(spec["path"]).stem
        if kind == "tustin":
            model = load_checkpoint(spec["path"])
            runners.append(evaluation.TustinRunner(name=name, model=model))
        elif kind == "greybox":
            theta = greybox.load_parameters(spec["path"])
            mode = greybox.WITH_SPRING if spec.get("spring", True) \
                else greybox.NO_SPRING
            runners.append(evaluation.GreyboxRunner(
                name=name, theta=theta, mode=mode,
                substeps=int(spec.get("substeps", 10))))
        else:
            raise ConfigError(f"unknown model type {kind!r}")
    return runners


def cmd_evaluate(args) -> int:
    doc = _load_config(args.config, EVALUATE_KEYS)
    manifest = _require_manifest(doc)
    if not doc.get("models"):
        raise ConfigError("config lists no models to evaluate")
    runners = _build_runners(doc["models"])
    split = doc.get("split", "validation")
    out_dir = _resolve_out(args.out)

    experiments = dataio.load_split(manifest, split)
    if not experiments:
        raise ConfigError(f"manifest has no '{split}' experiments")
    sink = evaluation.trajectory_csv_sink(out_dir / "trajectories")
    result = evaluation.evaluate_models(runners, experiments,
                                        trajectory_sink=sink)
    evaluation.write_rmse_csv(out_dir / "rmse_matrix.csv", result)
    evaluation.write_rmse_report(out_dir / "rmse_report.txt", result)
    _dump_resolved(out_dir, {
        "command": "evaluate", "manifest": str(manifest), "split": split,
        "models": doc["models"],
    })
    for name, row in zip(result.runner_names, result.matrix):
        print(f"{name}: mean RMSE {np.mean(row):.4f} rad")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tustinnet",
        description="Rotary-pendulum system identification toolbox",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, procedure=False, spring=False, strict=False):
        p.add_argument("--config", type=str, default=None,
                       help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", type=str, required=True,
                       help=f"output directory (relative paths resolve "
                            f"under ${OUT_ROOT_ENV} when set)")
        if procedure:
            p.add_argument("--procedure", choices=["transfer", "standard"],
                           default=None)
        if spring:
            p.add_argument("--spring", choices=["on", "off", "both"],
                           default="on")
        if strict:
            p.add_argument("--strict", action="store_true",
                           help="bit-reproducible gradient reductions")

    common(sub.add_parser("generate", help="write a synthetic dataset"))
    common(sub.add_parser("prepare",
                          help="estimate velocities and equilibrium entries"))
    common(sub.add_parser("train", help="train a neural model"),
           procedure=True, strict=True)
    common(sub.add_parser("identify", help="identify grey-box parameters"),
           spring=True)
    common(sub.add_parser("evaluate", help="free-run RMSE on a split"))
    return parser


_DISPATCH = {
    "generate": cmd_generate,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "identify": cmd_identify,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _DISPATCH[args.command](args)
    except (TustinNetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
