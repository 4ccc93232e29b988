"""Command-line entry point: ``dfdsed <subcommand> [--config PATH] [--seed N] [--out DIR]``.

Subcommands: synth, train, gradcheck, eval, mf-search, att-var.
Exit codes: 0 success, 1 validation error, 2 runtime or numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import attention_variance, collect_attention, export_variance
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, parse_config
from .evaluation import MedianFilterPlan, classwise_mf_search, read_events_tsv, write_events_tsv
from .features import CLASSES, AudioFormatError, read_wav, synth_corpus, write_dump, write_wav, \
    label_frame_duration
from .gradcheck import grad_check
from .model import NumericError, build_crnn
from .pipeline import decode, evaluate, fit, make_example, predict, recalibrate_bn

log = logging.getLogger("dfdsed")

REFERENCE_TSV = "references.tsv"
CHECKPOINT = "model.dfdc"


class UsageError(ValueError):
    pass


# -- helpers --------------------------------------------------------------------

def load_corpus(data_dir: Path, cfg: RunConfig):
    data_dir = Path(data_dir)
    tsv = data_dir / REFERENCE_TSV
    if not tsv.exists():
        raise UsageError(f"{tsv} not found (run 'synth' first or point --data at a corpus)")
    refs = read_events_tsv(tsv)
    by_clip = defaultdict(list)
    for ev in refs:
        by_clip[ev.clip_id].append(ev)
    wavs = sorted((data_dir / "audio").glob("*.wav"))
    if not wavs:
        raise UsageError(f"no WAV files under {data_dir / 'audio'}")
    examples = [
        make_example(w.name, read_wav(w), by_clip.get(w.name, []), cfg.feature, CLASSES, cfg.model.time_pool)
        for w in wavs
    ]
    return examples, refs


def frame_duration(cfg: RunConfig) -> float:
    return label_frame_duration(cfg.feature.hop, cfg.model.time_pool, cfg.feature.sample_rate)


def resolve_data(args, cfg: RunConfig, key: str) -> Path:
    if args.data is not None:
        return Path(args.data)
    if key in cfg.data:
        return cfg.data[key]
    raise UsageError(f"no data directory: pass --data or set data.{key} in the config")


def resolve_checkpoints(args, cfg: RunConfig) -> list[Path]:
    paths = [Path(p) for p in (args.checkpoint or [])]
    if not paths and "checkpoint" in cfg.data:
        paths = [cfg.data["checkpoint"]]
    if not paths:
        raise UsageError("no checkpoint given: pass --checkpoint or set data.checkpoint")
    for p in paths:
        if not p.exists():
            raise UsageError(f"checkpoint {p} does not exist")
    return paths


def load_plan(args, cfg: RunConfig) -> MedianFilterPlan:
    if getattr(args, "plan", None):
        return MedianFilterPlan.from_text(Path(args.plan).read_text())
    return MedianFilterPlan.uniform(CLASSES, cfg.eval.median)


# -- subcommands ------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    corpus = synth_corpus(args.seed, args.clips, args.duration, args.max_events, prefix=args.prefix)
    events = []
    for sc in corpus:
        write_wav(out / "audio" / sc.clip_id, sc.clip)
        events += sc.events
    write_events_tsv(out / REFERENCE_TSV, events)
    print(f"wrote {len(corpus)} clips and {len(events)} events to {out}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    examples, _ = load_corpus(resolve_data(args, cfg, "train_dir"), cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tcfg = replace(cfg.train, seed=args.seed)
    if args.steps is not None:
        tcfg = replace(tcfg, steps=args.steps)
    model = build_crnn(cfg.model, args.seed)
    lines = []
    fit(model, examples, tcfg, cfg.augment, on_step=lambda s, l: lines.append(f"{s},{l:.17g}"))
    recalibrate_bn(model, examples)
    (out / "loss.log").write_text("step,loss\n" + "\n".join(lines) + "\n")
    save_checkpoint(model, out / CHECKPOINT)
    print(f"trained {tcfg.steps} steps; final loss {lines[-1].split(',')[1]}; checkpoint {out / CHECKPOINT}")
    return 0


def micro_gradcheck(seed: int, tol: float):
    """grad_check of the full strong+weak loss on a tiny CRNN; returns the report."""
    from .model import ModelConfig, crnn_forward, freq_dilations, sed_loss

    cfg = ModelConfig(
        n_classes=3, channels=(2, 2, 2, 2, 2, 2, 2), gru_hidden=3, gru_layers=1, n_mels=128,
        temperature=1.0, attention_reduction=1,
    ).with_dilations(freq_dilations((1, 2, 3)))
    model = build_crnn(cfg, seed)
    rng = np.random.default_rng(seed)
    mel = rng.normal(size=(2, 1, 4, 128))
    strong = (rng.random((2, 1, 3)) > 0.5).astype(float)
    weak = strong.max(axis=1)
    params = list(model.named_parameters().values())

    def loss(*_):
        return sed_loss(crnn_forward(model, mel, training=True), strong, weak)

    return grad_check(loss, params, step=1e-5, tol=tol)


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    report = micro_gradcheck(args.seed, args.tol)
    print(f"max relative error {report.max_rel_err:.3e} (tolerance {args.tol:.1e})")
    if not report.passed:
        print("gradient check FAILED", file=sys.stderr)
        return 2
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    model = load_checkpoint(resolve_checkpoints(args, cfg)[0])
    examples, refs = load_corpus(resolve_data(args, cfg, "eval_dir"), cfg)
    out = Path(args.out)
    (out / "scores").mkdir(parents=True, exist_ok=True)
    scores = predict(model, examples)
    plan = load_plan(args, cfg)
    fd = frame_duration(cfg)
    ev = cfg.eval
    result = evaluate(scores, refs, CLASSES, fd, plan, ev.threshold, ev.thresholds, ev.max_efpr, ev.criteria)
    for cid, s in scores.items():
        write_dump(out / "scores" / (Path(cid).stem + ".bin"), s)
    write_events_tsv(out / "detections.tsv", decode(scores, plan, CLASSES, fd, ev.threshold))
    lines = ["class\tf1"] + [f"{c}\t{result.per_class_f1[c]:.6f}" for c in CLASSES]
    lines += [f"macro\t{result.macro_f1:.6f}", f"psds_lite\t{result.psds_lite:.6f}"]
    (out / "metrics.tsv").write_text("\n".join(lines) + "\n")
    print(f"macro intersection F1 {result.macro_f1:.4f}  psds_lite {result.psds_lite:.4f}")
    return 0


def cmd_mf_search(args, cfg: RunConfig) -> int:
    model = load_checkpoint(resolve_checkpoints(args, cfg)[0])
    examples, refs = load_corpus(resolve_data(args, cfg, "eval_dir"), cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scores = predict(model, examples)
    ev = cfg.eval
    plan = classwise_mf_search(scores, refs, CLASSES, ev.median_candidates, frame_duration(cfg),
                               ev.threshold, ev.criteria)
    (out / "median_plan.txt").write_text(plan.to_text())
    print(plan.to_text(), end="")
    return 0


def cmd_att_var(args, cfg: RunConfig) -> int:
    examples, _ = load_corpus(resolve_data(args, cfg, "eval_dir"), cfg)
    paths = resolve_checkpoints(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in paths:
        model = load_checkpoint(path)
        stats = attention_variance(collect_attention(model, [e.features for e in examples]))
        target = out / f"{path.stem}_attention_variance.csv"
        export_variance(stats, target)
        summary = ", ".join(f"L{l}: {v.mean():.3e}" for l, v in sorted(stats.var.items()))
        print(f"{path.name}: mean variance per layer {summary} -> {target}")
    return 0


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "gradcheck": cmd_gradcheck,
    "eval": cmd_eval, "mf-search": cmd_mf_search, "att-var": cmd_att_var,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run config file (section.key = value lines)")
    common.add_argument("--seed", type=int, default=None, help="random seed (default: train.seed)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dfdsed", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic WAV corpus + reference TSV")
    p.add_argument("--clips", type=int, default=32)
    p.add_argument("--duration", type=float, default=2.048, help="clip length in seconds")
    p.add_argument("--max-events", type=int, default=2)
    p.add_argument("--prefix", default="synth", help="clip filename prefix")

    p = sub.add_parser("train", parents=[common], help="train a CRNN, write checkpoint + loss log")
    p.add_argument("--data", type=Path, help="corpus directory from 'synth'")
    p.add_argument("--steps", type=int, help="override train.steps")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of a micro CRNN")
    p.add_argument("--tol", type=float, default=1e-5)

    for name, helptext in (("eval", "per-class intersection F1 and psds_lite"),
                           ("mf-search", "class-wise median filter length search"),
                           ("att-var", "attention weight variance per layer and frequency")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--data", type=Path, help="corpus directory from 'synth'")
        p.add_argument("--checkpoint", type=Path, action="append",
                       help="model checkpoint (att-var accepts several)")
        if name == "eval":
            p.add_argument("--plan", type=Path, help="median filter plan from mf-search")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config) if args.config else RunConfig()
        if args.seed is None:
            args.seed = cfg.train.seed
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, UsageError, CheckpointError, AudioFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
