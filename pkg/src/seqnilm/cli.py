"""Command-line entry point: train, eval, disaggregate, synth, verify, defaults.

Exit codes: 0 ok, 1 verification failure, 2 configuration error, 3 data
error, 4 divergence during training.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .checkpoint import load_checkpoint, read_checkpoint_extra, save_checkpoint
from .config import RunConfig, dump_config, load_config, parse_config, reference_page
from .data.align import resample_mains
from .data.households import write_household
from .data.series import PowerSeries, parse_channel_file, write_channel_file
from .data.synth import default_spec, dump_synth_spec, house_seed, load_synth_spec, synth_generate
from .errors import CheckpointError, ConfigError, ContractError, DataError, DivergenceError, MetricError
from .evaluate import evaluate
from .manifest import RunManifest, start
from .model import disaggregate_array, init_model
from .pipeline import build_window_sets
from .plot import loss_svg
from .train import train_loop

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3, 4

logger = logging.getLogger("seqnilm")


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGED
    if isinstance(exc, (DataError, CheckpointError, ContractError, MetricError, OSError)):
        return EXIT_DATA
    raise exc


def _fail(manifest: Optional[RunManifest], exc: BaseException) -> int:
    code = _exit_code(exc)
    print(f"error: {exc}", file=sys.stderr)
    if manifest is not None:
        manifest.finalize(code, str(exc))
    return code


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_seed(args.seed) if args.seed is not None else cfg


# -- commands --------------------------------------------------------------


def cmd_train(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = start(out, "train")
    try:
        cfg = _run_config(args)
        if args.epochs is not None:
            cfg.train.epochs = args.epochs
            cfg.validate()
        manifest.seed = cfg.train.seed
        manifest.config = cfg.to_dict()
        manifest.write()

        sets = build_window_sets(args.data_dir, cfg, cache_dir=None if args.no_cache else out / "cache")
        if sets.from_cache:
            manifest.notes["window_cache"] = "hit"
        else:
            manifest.notes["skipped_houses"] = sets.skipped
        manifest.notes["windows"] = {"train": len(sets.train), "seen_test": len(sets.seen_test),
                                     "unseen_test": len(sets.unseen_test)}
        if not args.no_cache:
            manifest.add(*sorted((out / "cache").glob("windows-*")))
        logger.info("windows: %s", manifest.notes["windows"])

        model = init_model(cfg.model)
        model.norm = sets.stats

        def progress(epoch, log):
            logger.info("epoch %d/%d  train %.6f  val %.6f", epoch, cfg.train.epochs, log.train[-1], log.val[-1])

        best, log = train_loop(model, sets.train, cfg.train, test_windows=sets.seen_test or None,
                               on_epoch=progress)
        ckpt, blob = save_checkpoint(best, out / "model.json", extra={
            "config_text": dump_config(cfg),
            "best_epoch": log.best_epoch,
            "train_houses": list(sets.split.train_houses),
            "unseen_houses": list(sets.split.unseen_houses),
        })
        (out / "losses.csv").write_text(log.to_csv())
        (out / "losses.svg").write_text(loss_svg(log))
        manifest.notes["best_epoch"] = log.best_epoch
        manifest.add(ckpt, blob, out / "losses.csv", out / "losses.svg")
    except (ConfigError, DataError, CheckpointError, ContractError, DivergenceError, OSError) as exc:
        return _fail(manifest, exc)
    manifest.finalize(EXIT_OK)
    print(f"trained {len(log)} epochs; best validation loss {min(log.val):.6f} at epoch {log.best_epoch}")
    print(f"checkpoint: {ckpt}")
    return EXIT_OK


def _checkpoint_config(path) -> RunConfig:
    extra = read_checkpoint_extra(path)
    text = extra.get("config_text")
    return parse_config(text, f"{path} (embedded config)") if text else RunConfig()


def cmd_eval(args) -> int:
    out = Path(args.out_dir) if args.out_dir else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    manifest = start(out, "eval", name=f"run-eval-{args.scenario}.json")
    try:
        model = load_checkpoint(args.checkpoint)
        cfg = _checkpoint_config(args.checkpoint)
        if args.config:
            # the checkpoint fixes model and appliances; data settings may be overridden
            cfg.data = load_config(args.config).data
        manifest.config = cfg.to_dict()
        manifest.write()
        sets = build_window_sets(args.data_dir, cfg, stats=model.norm)
        windows = sets.get(args.scenario)
        if not windows:
            what = "unseen houses" if args.scenario == "unseen" else "seen-test ranges"
            raise DataError(f"no {args.scenario} windows: the data provides no {what} for this split")
        title = f"{args.scenario} scenario ({len(windows)} windows)"
        report = evaluate(model, windows, state_source=args.state_source, title=title)
        stem = f"report-{args.scenario}"
        (out / f"{stem}.txt").write_text(report.to_text())
        (out / f"{stem}.csv").write_text(report.to_csv())
        manifest.add(out / f"{stem}.txt", out / f"{stem}.csv")
    except (ConfigError, DataError, CheckpointError, ContractError, MetricError, OSError) as exc:
        return _fail(manifest, exc)
    manifest.finalize(EXIT_OK)
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_disaggregate(args) -> int:
    out = Path(args.out_dir)
    try:
        model = load_checkpoint(args.checkpoint)
        mains = parse_channel_file(args.mains_file, "mains")
        if mains.empty:
            raise DataError(f"{args.mains_file}: no readings")
        period = _checkpoint_config(args.checkpoint).data.period
        grid, watts_in, valid = resample_mains(mains, period)
        watts, _ = disaggregate_array(model, watts_in)
    except (ConfigError, DataError, CheckpointError, ContractError, OSError) as exc:
        # nothing has been written yet
        return _fail(None, exc)
    manifest = start(out, "disaggregate")
    manifest.notes["invalid_bins"] = int((~valid).sum())
    paths = []
    for i, a in enumerate(model.config.appliances):
        p = out / f"{a.name}.dat"
        write_channel_file(p, PowerSeries(a.name, grid, np.where(valid, watts[i], 0.0), period))
        paths.append(p)
    manifest.add(*paths)
    manifest.finalize(EXIT_OK)
    print(f"wrote {len(paths)} appliance traces of {len(grid)} points to {out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.out_dir)
    try:
        spec = load_synth_spec(args.spec) if args.spec else default_spec()
        if args.days is not None:
            spec.days = args.days
        seed = args.seed if args.seed is not None else spec.seed
        spec.seed = seed
        spec.validate()
    except ConfigError as exc:
        return _fail(None, exc)
    manifest = start(out, "synth")
    manifest.seed = seed
    manifest.config = {"spec": dump_synth_spec(spec)}
    manifest.write()
    for i in range(spec.houses):
        s = house_seed(seed, i)
        series = synth_generate(spec, s, spec.days * 86400.0)
        meta = {"source": "synthetic", "seed": s, "days": f"{spec.days:g}", "period": f"{spec.period:g}"}
        manifest.add(*write_household(out / f"house_{i + 1}", str(i + 1), series, meta))
        for a in spec.appliances:
            got = float(series[a.name].power.mean())
            manifest.notes.setdefault("mean_power", {})[f"house_{i + 1}/{a.name}"] = {
                "generated": got, "expected": a.mean_power}
    (out / "synth.spec.ini").write_text(dump_synth_spec(spec))
    manifest.add(out / "synth.spec.ini")
    manifest.finalize(EXIT_OK)
    print(f"wrote {spec.houses} synthetic house(s), {spec.days:g} days each, to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import main_report

    results, table = main_report(args.seed if args.seed is not None else 0)
    print(table)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VERIFY
    print("all checks passed")
    return EXIT_OK


def cmd_defaults(args) -> int:
    if args.synth:
        print(dump_synth_spec(default_spec()), end="")
    else:
        print(reference_page(), end="")
    return EXIT_OK


# -- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, help="cap BLAS/OpenMP threads")
    common.add_argument("--config", type=Path, help="run configuration file (see `seqnilm defaults`)")
    common.add_argument("-q", "--quiet", action="store_true", help="only print results and errors")

    p = argparse.ArgumentParser(prog="seqnilm", description=__doc__.splitlines()[0],
                                epilog="exit codes: 0 ok, 1 verification failure, 2 config, 3 data, 4 divergence")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train a model on a data directory")
    t.add_argument("data_dir", type=Path, help="household directories or a synth.ini spec")
    t.add_argument("out_dir", type=Path)
    t.add_argument("--epochs", type=int, help="override the configured epoch count")
    t.add_argument("--no-cache", action="store_true", help="do not read or write the window cache")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="score a checkpoint on the seen or unseen scenario")
    e.add_argument("checkpoint", type=Path)
    e.add_argument("data_dir", type=Path)
    e.add_argument("--scenario", choices=("seen", "unseen"), default="seen")
    e.add_argument("--out-dir", type=Path, help="where reports go (default: checkpoint directory)")
    e.add_argument("--state-source", choices=("head", "power"), default="head",
                   help="derive on/off from the state head or by thresholding predicted watts")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("disaggregate", parents=[common], help="split a mains channel file into appliance traces")
    d.add_argument("checkpoint", type=Path)
    d.add_argument("mains_file", type=Path)
    d.add_argument("out_dir", type=Path)
    d.set_defaults(func=cmd_disaggregate)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic households")
    s.add_argument("out_dir", type=Path)
    s.add_argument("--spec", type=Path, help="synthetic spec (default: built-in three-appliance spec)")
    s.add_argument("--days", type=float)
    s.set_defaults(func=cmd_synth)

    v = sub.add_parser("verify", parents=[common], help="run gradient checks and invariants")
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("defaults", parents=[common], help="print the configuration reference")
    r.add_argument("--synth", action="store_true", help="print the default synthetic spec instead")
    r.set_defaults(func=cmd_defaults)
    return p


def _thread_limit(n: Optional[int]):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    with _thread_limit(args.threads):
        return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
