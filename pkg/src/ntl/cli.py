"""``ntl`` command line: datagen, train, eval, compare, bench, landscape, selfcheck.

Every run writes ``manifest.json`` into its output directory. Rerunning with
an identical manifest and all listed outputs present does nothing unless
``--force`` is given. The output root defaults to ``$NTL_OUT`` (or
``./ntl_out``); each subcommand uses ``<root>/<subcommand>`` unless
``--out-dir`` says otherwise.

Exit codes: 0 success, 2 invalid input, 3 runtime or I/O failure,
4 selfcheck failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from importlib import metadata
from pathlib import Path

from . import bench as B
from . import datagen as D
from . import landscape as LS
from .checkpoint import CheckpointError, load_checkpoint
from .evalx import compare_runs, evaluate_by_bucket
from .numvocab import NumberVocabulary, VocabularyError, default_vocabulary
from .selfcheck import run_selfcheck
from .train import LOSS_SPECS, ConfigError, TrainConfig, TrainingDiverged, TrainLog, run_training

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_SELFCHECK = 0, 2, 3, 4
TASKS = {"mul": "multiplication", "multiplication": "multiplication", "add_sub": "add_sub"}

log = logging.getLogger("ntl")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _range(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition("..")
    try:
        lo_i, hi_i = (int(lo), int(hi)) if sep else (int(lo), int(lo))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a range like 1..5, got {text!r}") from None
    if not 1 <= lo_i <= hi_i:
        raise argparse.ArgumentTypeError(f"invalid range {text!r}")
    return lo_i, hi_i


def _out_dir(args) -> Path:
    if args.out_dir is not None:
        return Path(args.out_dir)
    return Path(os.environ.get("NTL_OUT", "ntl_out")) / args.command


# -------------------------------------------------------------- manifest


def _manifest(args, config: dict, outputs: list[str], seed: int | None = None) -> dict:
    seed = getattr(args, "seed", None) if seed is None else seed
    return {"command": args.command, "version": _version(), "seed": seed,
            "config": config, "outputs": sorted(outputs)}


def _up_to_date(out: Path, manifest: dict) -> bool:
    path = out / "manifest.json"
    if not path.exists():
        return False
    try:
        old = json.loads(path.read_text())
    except json.JSONDecodeError:
        return False
    return old == manifest and all((out / name).exists() for name in manifest["outputs"])


def _write_manifest(out: Path, manifest: dict) -> None:
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _skip(args, out: Path, manifest: dict) -> bool:
    if not args.force and _up_to_date(out, manifest):
        print(f"{out}: up to date (use --force to rerun)")
        return True
    out.mkdir(parents=True, exist_ok=True)
    return False


def _digest(*paths: Path) -> str:
    """Content hash so a manifest goes stale when an input file changes."""
    h = hashlib.sha256()
    for path in paths:
        h.update(Path(path).read_bytes())
    return h.hexdigest()


def _dataset_files(data_dir: Path) -> list[Path]:
    meta = json.loads((data_dir / "splits.json").read_text())
    return [data_dir / "splits.json"] + [data_dir / info["path"] for info in meta["splits"].values()]


def _json_safe(d: dict) -> dict:
    return {k: (str(v) if isinstance(v, Path) else list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


# ------------------------------------------------------------- commands


def cmd_datagen(args) -> int:
    out = _out_dir(args)
    n_interp = args.n_interp if args.n_interp is not None else max(1, args.n // 10)
    n_extra = args.n_extra if args.n_extra is not None else max(1, args.n // 10)
    spec = D.GenSpec(TASKS[args.task], args.train_digits, args.extra_digits, args.n, n_interp, n_extra, args.seed)
    config = _json_safe({"task": spec.task, "train_digits": spec.train_digits, "extra_digits": spec.extra_digits,
                         "n_train": spec.n_train, "n_interp": spec.n_interp, "n_extra": spec.n_extra,
                         "n_operands": spec.n_operands})
    manifest = _manifest(args, config, [f"{s}.tsv" for s in D.SPLITS] + ["splits.json"])
    if _skip(args, out, manifest):
        return EXIT_OK
    D.write_dataset(D.generate(spec), out, spec)
    _write_manifest(out, manifest)
    print(f"wrote {spec.n_train}/{spec.n_interp}/{spec.n_extra} samples to {out}")
    return EXIT_OK


def _load_vocab(path) -> NumberVocabulary:
    return default_vocabulary() if path is None else NumberVocabulary.load(path)


def _train_config(args) -> TrainConfig:
    overrides = {"loss": args.loss, "lam": args.lam, "sigma": args.sigma, "squash": args.squash,
                 "softmax_domain": args.softmax_domain, "batch_size": args.batch_size, "steps": args.steps,
                 "lr": args.lr, "seed": args.seed, "eval_every": args.eval_every,
                 "eval_samples": args.eval_samples, "checkpoint_every": args.checkpoint_every}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    text = Path(args.config).read_text() if args.config else ""
    return TrainConfig.loads(text, **overrides)


def cmd_train(args) -> int:
    out = _out_dir(args)
    cfg = _train_config(args)
    vocab = _load_vocab(args.vocab)
    cfg.check_vocab(vocab)
    data = D.load_dataset(args.data)
    per_split = cfg.eval_samples // max(1, len(args.eval_splits))
    evals = [s for name in args.eval_splits for s in data[name][:per_split]] if cfg.eval_every else None
    config = {"train": _json_safe(asdict(cfg)), "data": str(Path(args.data).resolve()),
              "data_sha256": _digest(*_dataset_files(Path(args.data))),
              "vocab": None if args.vocab is None else str(Path(args.vocab).resolve()),
              "eval_splits": list(args.eval_splits)}
    manifest = _manifest(args, config, ["model.ntlf", "optimizer.npz", "train_log.csv", "eval_buckets.csv",
                                        "train.cfg", "vocab.txt"], seed=cfg.seed)
    if _skip(args, out, manifest):
        return EXIT_OK
    vocab.save(out / "vocab.txt")
    _, tlog = run_training(cfg, data["train"], vocab, evals, out)
    _write_manifest(out, manifest)
    last = tlog.records[-1] if tlog.records else None
    if last is not None:
        print(f"step {last.step}: loss {last.loss_total:.4f} (ce {last.loss_ce:.4f}, ntl {last.loss_ntl:.4f})")
    print(f"checkpoint and logs in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _out_dir(args)
    ckpt = Path(args.checkpoint)
    if ckpt.is_dir():
        ckpt = ckpt / "model.ntlf"
    vocab_path = args.vocab
    if vocab_path is None and (ckpt.parent / "vocab.txt").exists():
        vocab_path = ckpt.parent / "vocab.txt"
    vocab = _load_vocab(vocab_path)
    config = {"checkpoint": str(ckpt.resolve()), "checkpoint_sha256": _digest(ckpt),
              "data": str(Path(args.data).resolve()), "data_sha256": _digest(*_dataset_files(Path(args.data))),
              "split": args.split,
              "vocab": None if vocab_path is None else str(Path(vocab_path).resolve()),
              "log_transform": not args.no_log_transform, "limit": args.limit}
    name = f"metrics_{args.split}"
    manifest = _manifest(args, config, [f"{name}.csv", f"{name}_buckets.csv"])
    if _skip(args, out, manifest):
        return EXIT_OK
    params, mcfg = load_checkpoint(ckpt, len(vocab))
    samples = D.load_dataset(args.data)[args.split]
    if args.limit:
        samples = samples[: args.limit]
    report, buckets = evaluate_by_bucket(params, mcfg, samples, vocab, not args.no_log_transform)
    (out / f"{name}.csv").write_text(report.to_csv())
    with open(out / f"{name}_buckets.csv", "w") as fh:
        fh.write("bucket," + report.HEADER + "\n")
        for b, r in buckets.items():
            fh.write(f"{b}," + r.to_csv().splitlines()[1] + "\n")
    _write_manifest(out, manifest)
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_compare(args) -> int:
    runs = [Path(p) for p in (args.run_a, args.run_b)]
    logs = [TrainLog.read_csv(r / "train_log.csv", r / "eval_buckets.csv") for r in runs]
    crossings = compare_runs(logs[0], logs[1], args.threshold)
    lines = ["bucket,step_a,step_b"]
    for b, c in crossings.items():
        lines.append(f"{b},{'' if c.step_a is None else c.step_a},{'' if c.step_b is None else c.step_b}")
    print("\n".join(lines))
    return EXIT_OK


def cmd_bench(args) -> int:
    out = _out_dir(args)
    spec = B.BenchSpec(vocab_size=args.vocab_size, positions=args.positions, iterations=args.iterations,
                       warmup=args.warmup, seed=args.seed)
    manifest = _manifest(args, _json_safe(asdict(spec)) | {"full_step": not args.loss_only}, ["bench.csv"])
    if _skip(args, out, manifest):
        return EXIT_OK
    report = B.run_bench(spec, full_step=not args.loss_only)
    report.write_csv(out / "bench.csv")
    _write_manifest(out, manifest)
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_landscape(args) -> int:
    out = _out_dir(args)
    if args.figure == "1b":
        outputs = ["figure_1b.csv"]
    else:
        outputs = ["figure_2.csv"] + [f"figure_2_{c}.svg" for c in LS.GRID_HEADER[2:]]
    manifest = _manifest(args, {"figure": args.figure, "resolution": args.resolution}, outputs)
    if _skip(args, out, manifest):
        return EXIT_OK
    if args.figure == "1b":
        LS.write_csv(LS.figure_1b(), LS.CURVE_HEADER, out / "figure_1b.csv")
    else:
        rows = LS.figure_2(args.resolution)
        LS.write_csv(rows, LS.GRID_HEADER, out / "figure_2.csv")
        problems = LS.scan_grid(LS.read_grid_csv(out / "figure_2.csv"))
        for col in LS.GRID_HEADER[2:]:
            (out / f"figure_2_{col}.svg").write_text(LS.heatmap_svg(rows, col, args.resolution))
        if problems:
            print("\n".join(problems[:10]), file=sys.stderr)
            raise RuntimeError(f"figure 2 grid scan found {len(problems)} violations")
    _write_manifest(out, manifest)
    print(f"wrote {', '.join(outputs)} to {out}")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    out = _out_dir(args)
    manifest = _manifest(args, {"cases": args.cases}, ["selfcheck.txt"])
    if _skip(args, out, manifest):
        return EXIT_OK
    report = run_selfcheck(args.seed, args.cases)
    text = report.to_text()
    (out / "selfcheck.txt").write_text(text)
    print(text, end="")
    if not report.passed:
        return EXIT_SELFCHECK
    _write_manifest(out, manifest)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ntl", description="Number-token losses: data, training, evaluation, checks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--out-dir", help="output directory (default $NTL_OUT/<command>)")
        sp.add_argument("--force", action="store_true", help="rerun even if the manifest matches")
        sp.set_defaults(func=fn)
        return sp

    sp = command("datagen", cmd_datagen, "generate arithmetic splits")
    sp.add_argument("--task", choices=sorted(TASKS), required=True)
    sp.add_argument("--train-digits", type=_range, default=(1, 5))
    sp.add_argument("--extra-digits", type=int, default=6)
    sp.add_argument("--n", type=int, default=1000, help="training samples")
    sp.add_argument("--n-interp", type=int)
    sp.add_argument("--n-extra", type=int)
    sp.add_argument("--seed", type=int, default=0)

    sp = command("train", cmd_train, "train a model")
    sp.add_argument("--data", required=True, help="dataset directory written by datagen")
    sp.add_argument("--config", help="key = value training config file")
    sp.add_argument("--vocab", help="vocabulary file (default: built-in character vocabulary)")
    sp.add_argument("--loss", choices=LOSS_SPECS)
    sp.add_argument("--lambda", dest="lam", type=float)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--squash", type=float)
    sp.add_argument("--softmax-domain", choices=("slice", "full"))
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--eval-every", type=int)
    sp.add_argument("--eval-samples", type=int)
    sp.add_argument("--eval-splits", nargs="+", default=["interpolation", "extrapolation"],
                    choices=list(D.SPLITS))
    sp.add_argument("--checkpoint-every", type=int)

    sp = command("eval", cmd_eval, "evaluate a checkpoint on one split")
    sp.add_argument("--checkpoint", required=True, help="model.ntlf or a train output directory")
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", choices=list(D.SPLITS), default="extrapolation")
    sp.add_argument("--vocab")
    sp.add_argument("--limit", type=int, default=0)
    sp.add_argument("--no-log-transform", action="store_true")

    sp = sub.add_parser("compare", help="first MAPE-crossing step per bucket for two training runs")
    sp.add_argument("run_a")
    sp.add_argument("run_b")
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.set_defaults(func=cmd_compare)

    sp = command("bench", cmd_bench, "time the losses alone and inside a training step")
    sp.add_argument("--vocab-size", type=int, default=32000)
    sp.add_argument("--positions", type=int, default=512)
    sp.add_argument("--iterations", type=int, default=100)
    sp.add_argument("--warmup", type=int, default=5)
    sp.add_argument("--loss-only", action="store_true")
    sp.add_argument("--seed", type=int, default=0)

    sp = command("landscape", cmd_landscape, "emit loss-landscape figure data")
    sp.add_argument("--figure", choices=("1b", "2"), required=True)
    sp.add_argument("--resolution", type=int, default=101)

    sp = command("selfcheck", cmd_selfcheck, "gradient and transport oracle checks")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--cases", type=int)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for bad flags
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "cases", None) is not None and args.cases < 1:
        print("error: --cases must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except (TrainingDiverged, CheckpointError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, VocabularyError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
