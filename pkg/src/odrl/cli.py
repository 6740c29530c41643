"""Command-line entry point: ``odrl {suites,vocab,collect,train,eval,ablate,report}``.

All commands share ``--config``, ``--seed``, ``--out`` and the per-stage
overrides. Artifacts live under the output directory at the locations named
in the config's ``paths`` section; each gets a ``*.manifest.json`` recording
the config snapshot, the seed and sha256 digests of inputs and outputs.

Exit codes: 0 success, 2 configuration error, 3 hash or provenance error,
4 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import shutil
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .datasets import parse_mixture, parse_policy, read_dataset, write_dataset
from .errors import ConfigError, CorruptFile, HashMismatch, NonFiniteLoss, OdrlError
from .evaluation import ABLATION_FIELDS, BREAKDOWN_FIELDS, SUMMARY_FIELDS, AblationAxis, ablation_sweep, write_rows
from .neural import read_checkpoint, write_checkpoint
from .scenarios import read_suite, write_suite
from .vocabulary import read_vocabulary, write_vocabulary

EXIT_OK, EXIT_CONFIG, EXIT_HASH, EXIT_NUMERIC = 0, 2, 3, 4


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Resolved configuration, output locations and the set of files written so far."""

    def __init__(self, command: str, cfg: pipeline.PipelineConfig, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.written: list[Path] = []
        self.inputs: dict[str, str] = {}

    def path(self, name: str) -> Path:
        p = Path(getattr(self.cfg.paths, name))
        return p if p.is_absolute() else self.out / p

    def need(self, path: Path) -> Path:
        if not path.exists():
            raise ConfigError(f"missing upstream artifact {path}; run the earlier stage first")
        self.inputs[str(path)] = file_digest(path)
        return path

    def output(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(path)
        return path

    def manifest(self, artifact: Path, extra: dict | None = None) -> None:
        doc = {
            "command": self.command,
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {str(p): file_digest(p) for p in self.written if p.is_file()},
        }
        if extra:
            doc.update(extra)
        mpath = self.output(artifact.with_name(artifact.name + ".manifest.json"))
        mpath.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

    def cleanup(self) -> None:
        for p in reversed(self.written):
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            elif p.exists():
                p.unlink()


def _suites_from_disk(run: Run, names=pipeline.SUITE_NAMES) -> dict:
    base = run.path("suites")
    out = {}
    for name in names:
        try:
            out[name] = read_suite(run.need(base / f"{name}.json"))
        except (ValueError, KeyError) as exc:
            raise CorruptFile(f"{base / name}.json: unreadable suite ({exc})") from exc
    return out


def cmd_suites(run: Run, args) -> None:
    suites = pipeline.make_suites(run.cfg)
    d = run.path("suites")
    if not d.exists():
        run.output(d)
    d.mkdir(parents=True, exist_ok=True)
    for name, (specs, seed) in suites.items():
        write_suite(specs, run.output(d / f"{name}.json"), seed)
        print(f"{name}: {len(specs)} scenarios (seed {seed})")
    run.manifest(d / "suites")


def cmd_vocab(run: Run, args) -> None:
    suites = _suites_from_disk(run, ("train_general", "train_safety"))
    vocab = pipeline.build_vocab(run.cfg, suites["train_general"][0] + suites["train_safety"][0])
    path = run.output(run.path("vocab"))
    write_vocabulary(vocab, path)
    run.manifest(path, {"vocab_hash": vocab.hash})
    print(f"vocabulary K={vocab.K} hash {vocab.hash[:16]}")


def _vocab(run: Run):
    return read_vocabulary(run.need(run.path("vocab")))


def cmd_collect(run: Run, args) -> None:
    suites = _suites_from_disk(run, ("train_general", "train_safety"))
    vocab = _vocab(run)
    ds = pipeline.collect_dataset(run.cfg, vocab, suites)
    path = run.output(run.path("dataset"))
    write_dataset(ds, path)
    run.manifest(path, {"vocab_hash": vocab.hash, "transitions": len(ds)})
    print(f"{len(ds)} transitions from {run.cfg.collect.n_episodes} episodes ({run.cfg.collect.mixture})")


def cmd_train(run: Run, args) -> None:
    vocab = _vocab(run)
    ds = read_dataset(run.need(run.path("dataset")), expected_vocab_hash=vocab.hash)
    ckpt, log = pipeline.train_model(run.cfg, ds, vocab)
    path = run.output(run.path("checkpoint"))
    write_checkpoint(ckpt, path)
    log_path = run.output(path.with_name("training_log.csv"))
    log.write_csv(log_path)
    run.manifest(path, {"vocab_hash": vocab.hash})
    print(f"trained {run.cfg.train.total_iters} iterations, checkpoint {path}")


def cmd_eval(run: Run, args) -> None:
    vocab = _vocab(run)
    ckpt = read_checkpoint(run.need(run.path("checkpoint")))
    if ckpt.vocab_hash != vocab.hash:
        raise HashMismatch(vocab.hash, ckpt.vocab_hash, "checkpoint vocabulary")
    suites = _suites_from_disk(run, ("eval_general", "eval_safety"))
    alpha = ckpt.meta.get("train", {}).get("alpha")
    reports = [pipeline.evaluate_model(ckpt, suites, vocab, f"policy alpha={alpha}")]
    if args.baselines:
        seed = pipeline.stage_seed(run.cfg, "behavior-eval")
        for pol in [parse_policy("expert")] + parse_mixture(run.cfg.collect.mixture):
            reports.append(pipeline.evaluate_behavior(pol, suites, vocab, seed))
    d = run.path("reports")
    d.mkdir(parents=True, exist_ok=True)
    summary = run.output(d / "summary.csv")
    write_rows(summary, SUMMARY_FIELDS, [r.summary() for r in reports])
    write_rows(run.output(d / "breakdown.csv"), BREAKDOWN_FIELDS, reports[0].rows)
    run.manifest(summary)
    for r in reports:
        print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in r.summary().items()))


def _ablation_grid(args) -> tuple[AblationAxis, list]:
    chosen = [(AblationAxis.ALPHA, args.alpha), (AblationAxis.MIXTURE, args.mixture), (AblationAxis.REWARD_WEIGHTS, args.reward_weights)]
    chosen = [(a, g) for a, g in chosen if g]
    if args.axis:
        axis = AblationAxis(args.axis)
        grid = dict(chosen).get(axis)
        if not grid:
            defaults = {AblationAxis.ALPHA: [0.0, 0.1, 0.2, 0.4, 1.0]}
            if axis not in defaults:
                raise ConfigError(f"axis {axis.value} needs an explicit grid")
            grid = defaults[axis]
        return axis, list(grid)
    if len(chosen) != 1:
        raise ConfigError("ablate needs exactly one repeated axis flag (--alpha, --mixture or --reward-weights) or --axis")
    return chosen[0][0], list(chosen[0][1])


def cmd_ablate(run: Run, args) -> None:
    axis, grid = _ablation_grid(args)
    if axis == AblationAxis.MIXTURE:
        for m in grid:
            parse_mixture(m)
    d = run.path("reports")
    d.mkdir(parents=True, exist_ok=True)
    ckpt_dir = d / f"ablation_{axis.value}_checkpoints"
    if not ckpt_dir.exists():
        run.output(ckpt_dir)
    ckpt_dir.mkdir(exist_ok=True)
    rows, scatter = ablation_sweep(axis, grid, run.cfg, workdir=ckpt_dir, progress=lambda r: print(json.dumps(r)))
    table = run.output(d / f"ablation_{axis.value}.csv")
    write_rows(table, ABLATION_FIELDS, rows)
    pts = [{"value": r["value"], "rc_general": x, "one_minus_cr_safety": y} for r, (x, y) in zip(rows, scatter)]
    write_rows(run.output(d / f"ablation_{axis.value}_scatter.csv"), ("value", "rc_general", "one_minus_cr_safety"), pts)
    run.manifest(table, {"axis": axis.value, "grid": [str(g) for g in grid]})


def cmd_report(run: Run, args) -> None:
    from . import plotting

    d = run.path("reports")
    made = []
    summary = d / "summary.csv"
    summaries = []
    if summary.exists():
        summaries = plotting.read_csv_rows(run.need(summary))
        made.append(plotting.plot_metrics(summaries, run.output(d / "metrics.png")))
    log_path = run.path("checkpoint").with_name("training_log.csv")
    if log_path.exists():
        rows = plotting.read_csv_rows(run.need(log_path))
        if rows:
            made.append(plotting.plot_training_curves(rows, run.output(d / "training_curves.png")))
    tables = []
    for axis in AblationAxis:
        sc = d / f"ablation_{axis.value}_scatter.csv"
        if sc.exists():
            pts = plotting.read_csv_rows(run.need(sc))
            xy = [(float(p["rc_general"]), float(p["one_minus_cr_safety"])) for p in pts]
            made.append(plotting.plot_tradeoff(xy, [p["value"] for p in pts], run.output(d / f"tradeoff_{axis.value}.png"), axis.value))
            tab = d / f"ablation_{axis.value}.csv"
            if tab.exists():
                tables.extend(plotting.read_csv_rows(run.need(tab)))
    if not made:
        raise ConfigError(f"nothing to report under {d}; run eval or ablate first")
    combined = [{"kind": "summary", **s} for s in summaries] + [{"kind": "ablation", "label": f"{t['axis']}={t['value']}", **t} for t in tables]
    fields = ("kind", "label", "cr_general", "rc_general", "cr_safety", "src", "jsr", "jerk_long", "jerk_lat")
    report = run.output(d / "report.csv")
    write_rows(report, fields, combined)
    run.manifest(report, {"figures": [str(p) for p in made]})
    for p in [report, *made]:
        print(p)


COMMANDS = {
    "suites": cmd_suites,
    "vocab": cmd_vocab,
    "collect": cmd_collect,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", default=".", help="existing output directory (default: .)")
    common.add_argument("--alpha", type=float, action="append", help="BC weight; repeat on ablate for a sweep")
    common.add_argument("--w-imitation", type=float, help="imitation reward weight")
    common.add_argument("--c-event", type=float, help="penalty for collision, off-road and off-route")
    common.add_argument("--mixture", action="append", help='behavior mixture "spec:weight,..."; repeat on ablate for a sweep')
    common.add_argument("--iters", type=int, help="main-phase training iterations")
    parser = argparse.ArgumentParser(prog="odrl", description="Offline-RL driving pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "eval":
            p.add_argument("--baselines", action="store_true", help="also evaluate the scripted expert and each behavior policy")
        if name == "ablate":
            p.add_argument("--axis", choices=[a.value for a in AblationAxis])
            p.add_argument("--reward-weights", action="append", type=_weight_pair, help="W_IM,W_EV; repeat for a sweep")
    return parser


def _weight_pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected W_IM,W_EV, got {text!r}") from exc
    return a, b


def resolve_config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.load_config(args.config) if args.config else pipeline.PipelineConfig()
    sweep = args.command == "ablate"
    cfg = cfg.with_overrides(
        alpha=None if sweep or not args.alpha else args.alpha[-1],
        w_imitation=args.w_imitation,
        c_event=args.c_event,
        mixture=None if sweep or not args.mixture else args.mixture[-1],
        seed=args.seed,
    )
    if args.iters is not None:
        if args.iters < 0:
            raise ConfigError("--iters must be >= 0")
        cfg = replace(cfg, train=replace(cfg.train, total_iters=args.iters))
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    run = None
    try:
        out = Path(args.out)
        if not out.is_dir():
            raise ConfigError(f"output directory does not exist: {out}")
        run = Run(args.command, resolve_config(args), out)
        COMMANDS[args.command](run, args)
        return EXIT_OK
    except (HashMismatch, CorruptFile) as exc:
        code, kind = EXIT_HASH, "provenance error"
        err = exc
    except NonFiniteLoss as exc:
        code, kind = EXIT_NUMERIC, "numerical abort"
        err = exc
    except (ConfigError, OdrlError) as exc:
        code, kind = EXIT_CONFIG, "config error"
        err = exc
    if run is not None:
        run.cleanup()
    print(f"odrl {args.command}: {kind}: {err}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
