"""Command-line entry point.

Subcommands: synth, train, predict, eval, gradcheck, ablate, keys.  Every
run echoes its fully resolved configuration into the output directory as
``resolved.cfg`` so it can be replayed exactly.  Exit codes: 0 success,
1 usage or configuration error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

from .config import (
    build_model_config,
    build_stage_plan,
    build_synth_spec,
    build_train_settings,
    eval_horizons_frames,
    key_reference,
    merge_config,
    parse_config_file,
    write_resolved,
)
from .dataio import (
    MotionSequence,
    NormStats,
    UnitWindow,
    denormalize,
    make_windows,
    normalize_action,
    parse_mtf,
    synth_generate,
    write_mtf,
)
from .errors import ConfigError, DataError, NumericError
from .model import load_model, predict_long, save_model
from .numerics.rng import RngState
from .training import (
    ABLATION_VARIANTS,
    EvalReport,
    apply_ablation,
    evaluate_model,
    train_actions,
)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2; usage problems are exit 1
        raise _UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="configuration file (key = value lines)")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        dest="sets",
        help="override one configuration key (repeatable)",
    )


def _resolve(args, extra: dict[str, str] | None = None) -> dict[str, str]:
    file_cfg = parse_config_file(args.config) if args.config else None
    overrides: dict[str, str] = {}
    for item in args.sets:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        overrides[key.strip()] = value.strip()
    if extra:
        overrides.update(extra)
    return merge_config(file_cfg, overrides)


def _load_dataset(data_dir, cfg: dict[str, str]) -> dict[str, tuple[list[UnitWindow], NormStats]]:
    """Every *.mtf in the directory, normalized per action and windowed."""
    data_dir = Path(data_dir)
    paths = sorted(data_dir.glob("*.mtf"))
    if not paths:
        raise DataError(f"no .mtf files in {data_dir}")
    k, l = int(cfg["k"]), int(cfg["l"])
    extended, stride = int(cfg["extended"]), int(cfg["stride"])
    out: dict[str, tuple[list[UnitWindow], NormStats]] = {}
    joints = None
    for path in paths:
        seq = parse_mtf(path.read_text(encoding="utf-8"))
        if seq.name in out:
            raise DataError(f"duplicate action name {seq.name!r} (file {path.name})")
        if joints is None:
            joints = seq.joints
        elif seq.joints != joints:
            raise DataError(f"{path.name} has {seq.joints} joints, earlier files have {joints}")
        normed, stats = normalize_action(seq)
        windows = make_windows(normed, k=k, l=l, extended=extended, stride=stride)
        if not windows:
            raise DataError(f"{path.name}: {seq.n_frames} frames yield no ({k} observed, {l} target) window")
        out[seq.name] = (windows, stats)
    return out


def _eval_windows(dataset, maxh: int):
    """Keep windows carrying at least maxh future frames; drop empty actions."""
    kept: dict[str, list[UnitWindow]] = {}
    stats: dict[str, NormStats] = {}
    for action, (windows, st) in dataset.items():
        ok = [w for w in windows if w.target.shape[0] + w.extended_future.shape[0] >= maxh]
        if ok:
            kept[action] = ok
            stats[action] = st
    if not kept:
        raise DataError(f"no window carries the {maxh} future frames the largest horizon needs")
    return kept, stats


def _merge_reports(reports: list[EvalReport]) -> EvalReport:
    first = reports[0]
    merged = EvalReport(
        horizons_frames=first.horizons_frames,
        fps=first.fps,
        per_action={},
        per_action_denorm={} if first.per_action_denorm is not None else None,
        window_counts={},
    )
    for rep in reports:
        merged.per_action.update(rep.per_action)
        if merged.per_action_denorm is not None:
            merged.per_action_denorm.update(rep.per_action_denorm or {})
        merged.window_counts.update(rep.window_counts)
    return merged


def _run_eval(models: dict[str, object], dataset, cfg: dict[str, str], out_dir: Path) -> EvalReport:
    horizons = eval_horizons_frames(cfg)
    windows_by_action, stats_by_action = _eval_windows(dataset, max(horizons))
    fps = float(cfg["fps"])
    batch = int(cfg["eval.batch"])
    if set(models) == {"model"}:
        all_windows = [w for ws in windows_by_action.values() for w in ws]
        report = evaluate_model(
            models["model"], all_windows, horizons, stats_by_action=stats_by_action, fps=fps, batch_size=batch
        )
    else:
        reports = []
        for action in sorted(windows_by_action):
            stem = f"model.{action}"
            if stem not in models:
                raise DataError(f"no model for action {action!r}")
            reports.append(
                evaluate_model(
                    models[stem],
                    windows_by_action[action],
                    horizons,
                    stats_by_action={action: stats_by_action[action]},
                    fps=fps,
                    batch_size=batch,
                )
            )
        report = _merge_reports(reports)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = report.to_table()
    (out_dir / "eval.txt").write_text(table + "\n", encoding="utf-8")
    (out_dir / "eval.kv").write_text("".join(line + "\n" for line in report.to_kv()), encoding="utf-8")
    print(table)
    return report


def _train_into(dataset, cfg: dict[str, str], out_dir: Path):
    joints = next(iter(dataset.values()))[0][0].observed.shape[1]
    model_cfg = build_model_config(cfg, joints)
    plan = build_stage_plan(cfg)
    settings = build_train_settings(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    models, stats = train_actions(dataset, model_cfg, plan, settings, mode=cfg["train_mode"], out_dir=out_dir)
    for stem, model in models.items():
        save_model(model, out_dir / f"{stem}.pms")
    (out_dir / "train.log").write_text("".join(s.log_line() + "\n" for s in stats), encoding="utf-8")
    return models, stats


def cmd_synth(args) -> int:
    extra = {}
    for flag, key in (
        ("sequences", "synth.sequences"),
        ("joints", "synth.joints"),
        ("frames", "synth.frames"),
        ("seed", "seed"),
    ):
        value = getattr(args, flag)
        if value is not None:
            extra[key] = str(value)
    cfg = _resolve(args, extra)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = int(cfg["synth.sequences"])
    if n < 1:
        raise ConfigError(f"synth.sequences must be at least 1, got {n}")
    master = RngState(int(cfg["seed"]))
    for i in range(n):
        name = f"seq{i:03d}"
        spec = build_synth_spec(cfg, seed=master.derive_seed(f"synth:{name}"), name=name)
        seq = synth_generate(spec)
        (out_dir / f"{name}.mtf").write_text(write_mtf(seq), encoding="utf-8")
    write_resolved(cfg, out_dir)
    print(f"wrote {n} sequences to {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    dataset = _load_dataset(args.data, cfg)
    out_dir = Path(args.out)
    models, stats = _train_into(dataset, cfg, out_dir)
    write_resolved(cfg, out_dir)
    last = stats[-1]
    print(f"trained {len(models)} model(s) on {sum(len(ws) for ws, _ in dataset.values())} windows")
    print(f"final epoch: {last.log_line()}")
    return 0


def cmd_predict(args) -> int:
    cfg = _resolve(args)
    model = load_model(args.model)
    seq = parse_mtf(Path(args.input).read_text(encoding="utf-8"))
    k = model.cfg.k
    if seq.joints != model.cfg.joints:
        raise DataError(f"input has {seq.joints} joints, model expects {model.cfg.joints}")
    if seq.n_frames < k:
        raise DataError(f"input has {seq.n_frames} frames, model needs {k} observed frames")
    horizon = args.horizon if args.horizon is not None else model.cfg.l
    if horizon < 1:
        raise ConfigError(f"horizon must be at least 1, got {horizon}")
    normed, stats = normalize_action(seq)
    window = normed.frames[-k:]
    pred = predict_long(window, model, horizon=horizon, window_id=seq.name)
    frames = denormalize(pred.frames, stats)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_seq = MotionSequence(name=f"{seq.name}.pred", fps=seq.fps, frames=frames)
    out_path = out_dir / "prediction.mtf"
    out_path.write_text(write_mtf(out_seq), encoding="utf-8")
    write_resolved(cfg, out_dir)
    print(f"wrote {horizon} predicted frames to {out_path}")
    return 0


def cmd_eval(args) -> int:
    extra = {"eval.horizons_ms": args.horizons} if args.horizons else None
    cfg = _resolve(args, extra)
    dataset = _load_dataset(args.data, cfg)
    model_path = Path(args.model)
    if model_path.is_dir():
        paths = [p for p in sorted(model_path.glob("model.*.pms")) if not re.search(r"\.stage\d+$", p.stem)]
        models = {p.stem: load_model(p) for p in paths}
        if not models:
            raise DataError(f"no model.<action>.pms files in {model_path}")
    else:
        models = {"model": load_model(model_path)}
    out_dir = Path(args.out)
    report = _run_eval(models, dataset, cfg, out_dir)
    write_resolved(cfg, out_dir)
    print(f"average = {report.average('model')!r}")
    return 0


def cmd_gradcheck(args) -> int:
    from .diagnostics import gradcheck_suite

    failed = False
    for name, report in gradcheck_suite():
        status = "ok" if report.passed else "fail"
        failed = failed or not report.passed
        coords = sum(report.checked_coords.values())
        print(f"check={name} max_rel_err={report.max_rel_error!r} coords={coords} status={status}")
    if failed:
        print("gradient check failed", file=sys.stderr)
        return 3
    return 0


def cmd_ablate(args) -> int:
    base = _resolve(args)
    cfg = apply_ablation(base, args.variant)
    dataset = _load_dataset(args.data, cfg)
    out_dir = Path(args.out)
    models, _ = _train_into(dataset, cfg, out_dir)
    report = _run_eval(models, dataset, cfg, out_dir)
    write_resolved(cfg, out_dir)
    print(f"variant={args.variant} average={report.average('model')!r}")
    return 0


def cmd_keys(args) -> int:
    print(key_reference())
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="pms", description="Parallel multi-scale incremental motion forecasting.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate seeded synthetic motion files")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--sequences", type=int, metavar="N")
    p.add_argument("--joints", type=int, metavar="J")
    p.add_argument("--frames", type=int, metavar="F")
    p.add_argument("--seed", type=int, metavar="S")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a directory of .mtf files")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="forecast from the tail of one sequence")
    p.add_argument("--model", required=True, metavar="FILE")
    p.add_argument("--input", required=True, metavar="MTF")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--horizon", type=int, metavar="FRAMES")
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score a model against ground truth windows")
    p.add_argument("--model", required=True, metavar="FILE_OR_DIR")
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--horizons", metavar="MS_CSV", help="horizons in milliseconds")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="run the built-in gradient-check suite")
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and score one named variant")
    p.add_argument("--variant", required=True, choices=sorted(ABLATION_VARIANTS))
    p.add_argument("--data", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    _add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("keys", help="print the configuration key reference")
    p.set_defaults(func=cmd_keys)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
