"""Command-line entry point: generate, train, eval, infer, gradcheck, describe.

Exit codes: 0 success, 1 runtime failure (diagnostic on stderr), 2 usage
error. Option values resolve as: explicit flag > config file (--config,
flat key=value lines) > built-in default, and every subcommand echoes its
fully resolved configuration before doing work.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np


class UsageError(Exception):
    pass


def _read_config_file(path: str) -> dict[str, str]:
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{ln}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _resolve(args: argparse.Namespace, parser: argparse.ArgumentParser, defaults: dict) -> dict:
    """flag > config file > default."""
    file_values = _read_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = set(file_values) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    resolved = {}
    for key, default in defaults.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            resolved[key] = flag_val
        elif key in file_values:
            raw = file_values[key]
            if isinstance(default, bool):
                resolved[key] = raw.lower() in ("1", "true", "yes", "on")
            elif default is None:
                resolved[key] = raw
            else:
                resolved[key] = type(default)(raw)
        else:
            resolved[key] = default
    return resolved


def _echo(subcommand: str, resolved: dict) -> None:
    parts = " ".join(f"{k}={resolved[k]}" for k in sorted(resolved))
    print(f"effective-config: cmd={subcommand} {parts}", file=sys.stderr)


def _workers_default() -> int:
    env = os.environ.get("BIVEX_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_generate(args, parser) -> int:
    from bivex.datagen import AugmentSpec, GenSpec, generate_corpus

    defaults = dict(count=100, vertical_frac=0.5, seed=0, out=None, min_len=3, max_len=8, augment=True)
    cfg = _resolve(args, parser, defaults)
    if not cfg["out"]:
        raise UsageError("generate requires --out")
    _echo("generate", cfg)
    spec = GenSpec(
        count=cfg["count"],
        min_len=cfg["min_len"],
        max_len=cfg["max_len"],
        vertical_fraction=cfg["vertical_frac"],
        seed=cfg["seed"],
        augment=AugmentSpec() if cfg["augment"] else AugmentSpec.none(),
    )
    manifest = generate_corpus(spec, cfg["out"])
    print(f"wrote {len(manifest)} samples to {cfg['out']}")
    return 0


def _cmd_train(args, parser) -> int:
    from bivex import persistence
    from bivex.train import TrainConfig, TrainState, train

    defaults = dict(
        train_manifest=None,
        val_manifest=None,
        out=None,
        iters=3000,
        batch=32,
        lr=1e-3,
        lr_decay=0.9,
        patience=10,
        clip_norm=5.0,
        val_interval=100,
        seed=0,
        use_dem=False,
        use_san=False,
        dem_kernel_swap=False,
        d_h=128,
        d_a=128,
        dtype="float32",
        workers=_workers_default(),
        resume=None,
        stop_at_val_acc=None,
    )
    cfg = _resolve(args, parser, defaults)
    if not cfg["train_manifest"] or not cfg["val_manifest"]:
        raise UsageError("train requires --train-manifest and --val-manifest")
    if not cfg["out"]:
        raise UsageError("train requires --out")
    _echo("train", cfg)

    tc = TrainConfig(
        iters=cfg["iters"],
        batch=cfg["batch"],
        lr=cfg["lr"],
        lr_decay=cfg["lr_decay"],
        patience=cfg["patience"],
        clip_norm=cfg["clip_norm"],
        val_interval=cfg["val_interval"],
        seed=cfg["seed"],
        use_dem=cfg["use_dem"],
        use_san=cfg["use_san"],
        dem_kernel_swap=cfg["dem_kernel_swap"],
        d_h=cfg["d_h"],
        d_a=cfg["d_a"],
        dtype=cfg["dtype"],
        workers=cfg["workers"],
        stop_at_val_acc=cfg["stop_at_val_acc"],
        verbose=True,
    )
    resume_state = None
    if cfg["resume"]:
        ckpt = persistence.load(cfg["resume"])
        persistence.check_compatible(ckpt, cfg["use_dem"], cfg["use_san"], cfg["dem_kernel_swap"])
        resume_state = TrainState(
            params=ckpt.params,
            rmsprop=ckpt.rmsprop,
            rng_state=ckpt.rng_state,
            iteration=ckpt.iteration,
            best_val_acc=ckpt.best_val_acc if ckpt.best_val_acc is not None else -1.0,
            best_iteration=-1,
            bad_checks=ckpt.bad_checks,
        )

    outcome = train(tc, cfg["train_manifest"], cfg["val_manifest"], resume=resume_state)

    os.makedirs(cfg["out"], exist_ok=True)
    best_path = os.path.join(cfg["out"], "best.ckpt")
    last_path = os.path.join(cfg["out"], "last.ckpt")
    persistence.save(
        persistence.Checkpoint(
            params=outcome.params,
            rmsprop=None,
            iteration=outcome.best_iteration,
            rng_state=None,
            val_acc=outcome.best_val_acc,
            best_val_acc=outcome.best_val_acc,
        ),
        best_path,
    )
    persistence.save(
        persistence.Checkpoint(
            params=outcome.final_params,
            rmsprop=outcome.rmsprop,
            iteration=outcome.iteration,
            rng_state=outcome.rng_state,
            val_acc=outcome.report.rows[-1].val_acc if outcome.report.rows else None,
            best_val_acc=outcome.best_val_acc,
        ),
        last_path,
    )
    outcome.report.save(os.path.join(cfg["out"], "report.csv"))
    print(f"best_val_acc {outcome.best_val_acc:.4f} at iteration {outcome.best_iteration}")
    print(f"checkpoints: {best_path} {last_path}")
    return 0


def _cmd_eval(args, parser) -> int:
    from bivex import persistence
    from bivex.datagen import load_manifest
    from bivex.evaluation import dump_attention, evaluate

    defaults = dict(
        checkpoint=None,
        manifest=None,
        lexicon=None,
        lexicon_50=False,
        lexicon_seed=0,
        report=None,
        dump_attention=None,
    )
    cfg = _resolve(args, parser, defaults)
    if not cfg["checkpoint"] or not cfg["manifest"]:
        raise UsageError("eval requires --checkpoint and --manifest")
    if cfg["lexicon"] and cfg["lexicon_50"]:
        raise UsageError("--lexicon and --lexicon-50 are mutually exclusive")
    _echo("eval", cfg)

    ckpt = persistence.load(cfg["checkpoint"])
    lexicon = None
    if cfg["lexicon_50"]:
        lexicon = "50"
    elif cfg["lexicon"]:
        with open(cfg["lexicon"], "r", encoding="utf-8") as fh:
            lexicon = [w.strip() for w in fh if w.strip()]
    report = evaluate(ckpt.params, cfg["manifest"], lexicon=lexicon, lexicon_seed=cfg["lexicon_seed"])
    if cfg["report"]:
        with open(cfg["report"], "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
    if cfg["dump_attention"]:
        manifest = load_manifest(cfg["manifest"])
        for s in manifest.samples[: min(4, len(manifest.samples))]:
            dump_attention(ckpt.params, s, os.path.join(cfg["dump_attention"], os.path.splitext(s.path)[0]), root=manifest.root)
    print(report.summary())
    return 0


def _cmd_infer(args, parser) -> int:
    from bivex import persistence, pgm
    from bivex.datagen import Sample
    from bivex.evaluation import dump_attention
    from bivex.model import predict_routed
    from bivex.routing import decide_direction, route

    cfg = dict(checkpoint=args.checkpoint, image=args.image, dump_attention=args.dump_attention)
    _echo("infer", cfg)
    ckpt = persistence.load(args.checkpoint)
    img = pgm.read_pgm(args.image)
    routed = route(img, target=(ckpt.params.config.h_net, ckpt.params.config.w_net))
    result = predict_routed(ckpt.params, routed)
    print(f"{result.text}\t{routed.direction.value}")
    if args.dump_attention:
        h, w = img.shape
        sample = Sample(
            path=os.path.basename(args.image),
            label=result.text or "xxx",
            direction=decide_direction(w, h),
            width=w,
            height=h,
        )
        dump_attention(ckpt.params, sample, args.dump_attention, root=os.path.dirname(os.path.abspath(args.image)))
    return 0


def _cmd_gradcheck(args, parser) -> int:
    from bivex.gradcheck import run_all, tolerances

    seeds = tuple(range(args.seeds))
    cfg = dict(seeds=args.seeds)
    _echo("gradcheck", cfg)
    results = run_all(seeds=seeds)
    tols = tolerances()
    ok = True
    for name, err in results.items():
        status = "PASS" if err <= tols[name] else "FAIL"
        ok &= err <= tols[name]
        print(f"{status} {name:14s} max_rel_err {err:.3e} (tol {tols[name]:.0e})")
    return 0 if ok else 1


def _cmd_describe(args, parser) -> int:
    from bivex import persistence

    header = persistence.read_header(args.checkpoint)
    print(json.dumps(header, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bivex", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="cmd", required=True)

    def add_config(p):
        p.add_argument("--config", help="flat key=value config file; flags override it")

    g = sub.add_parser("generate", help="write a synthetic word-image corpus")
    add_config(g)
    g.add_argument("--count", type=int)
    g.add_argument("--vertical-frac", dest="vertical_frac", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.add_argument("--min-len", dest="min_len", type=int)
    g.add_argument("--max-len", dest="max_len", type=int)
    g.add_argument("--augment", action="store_true", default=None)
    g.add_argument("--no-augment", dest="augment", action="store_false", default=None)
    g.set_defaults(fn=_cmd_generate)

    t = sub.add_parser("train", help="train a model on a generated corpus")
    add_config(t)
    t.add_argument("--train-manifest", dest="train_manifest")
    t.add_argument("--val-manifest", dest="val_manifest")
    t.add_argument("--out")
    t.add_argument("--iters", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lr-decay", dest="lr_decay", type=float)
    t.add_argument("--patience", type=int)
    t.add_argument("--clip-norm", dest="clip_norm", type=float)
    t.add_argument("--val-interval", dest="val_interval", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--use-dem", dest="use_dem", action="store_true", default=None)
    t.add_argument("--use-san", dest="use_san", action="store_true", default=None)
    t.add_argument("--dem-kernel-swap", dest="dem_kernel_swap", action="store_true", default=None)
    t.add_argument("--d-h", dest="d_h", type=int)
    t.add_argument("--d-a", dest="d_a", type=int)
    t.add_argument("--dtype", choices=["float32", "float64"])
    t.add_argument("--workers", type=int)
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--stop-at-val-acc", dest="stop_at_val_acc", type=float)
    t.set_defaults(fn=_cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint against a manifest")
    add_config(e)
    e.add_argument("--checkpoint")
    e.add_argument("--manifest")
    e.add_argument("--lexicon", help="file with one candidate word per line")
    e.add_argument("--lexicon-50", dest="lexicon_50", action="store_true", default=None)
    e.add_argument("--lexicon-seed", dest="lexicon_seed", type=int)
    e.add_argument("--report", help="write the per-sample CSV here")
    e.add_argument("--dump-attention", dest="dump_attention", help="write attention maps here")
    e.set_defaults(fn=_cmd_eval)

    i = sub.add_parser("infer", help="recognize one PGM image")
    i.add_argument("checkpoint")
    i.add_argument("image")
    i.add_argument("--dump-attention", dest="dump_attention")
    i.set_defaults(fn=_cmd_infer)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every op")
    gc.add_argument("--seeds", type=int, default=3)
    gc.set_defaults(fn=_cmd_gradcheck)

    d = sub.add_parser("describe", help="print a checkpoint header")
    d.add_argument("checkpoint")
    d.set_defaults(fn=_cmd_describe)

    return parser


def run(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args, parser)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # runtime failure, never a raw crash
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
