"""Command-line surface: synth, preprocess, train, eval, report.

All commands share one RunConfig, resolved in fixed precedence order:
built-in defaults < config file (--config) < FLOWSLEUTH_CACHE environment
override < --set key=value pairs < dedicated flags. The fully resolved
config is echoed to stdout before any work starts and serialized next to
the command's outputs, so every artifact records how it was produced.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from .dataset import Split, SyntheticConfig, load_all_splits, make_synthetic_corpus
from .errors import FlowSleuthError, InvalidWeights
from .evaluation import (
    FusionConfig,
    evaluate_dataset,
    load_report,
    render_ablation_table,
    render_report_table,
    serialize_report,
    write_report,
    write_scores_tsv,
)
from .flow import FlowEstimatorConfig
from .model import Aggregation, BackboneConfig, init_model
from .pipeline import EncodingPipeline
from .residual import InputKind, NormalizationSpec
from .training import TrainConfig, TrainState, load_checkpoint, save_checkpoint, train_branch

ENV_CACHE = "FLOWSLEUTH_CACHE"

BRANCH_KINDS = {
    "ori": InputKind.RGB_FRAME,
    "res": InputKind.FLOW_RESIDUAL,
    "flow": InputKind.FLOW_MAP,
}


class UsageError(Exception):
    """Bad arguments or config values; maps to exit code 2."""


@dataclasses.dataclass
class RunConfig:
    manifest: str = ""
    cache_dir: str = ""
    flow_dir: str = ""
    out_dir: str = "runs"
    seed: int = 0
    max_frames: int = 32
    flow: FlowEstimatorConfig = dataclasses.field(default_factory=FlowEstimatorConfig)
    model: BackboneConfig = dataclasses.field(default_factory=BackboneConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    fusion: FusionConfig = dataclasses.field(default_factory=FusionConfig)
    norm: NormalizationSpec = dataclasses.field(default_factory=NormalizationSpec)


def _parse_stages(raw: str) -> tuple[tuple[int, int, int], ...]:
    stages = []
    for part in raw.split(";"):
        part = part.strip()
        if not part:
            continue
        nums = [int(x) for x in part.split(",")]
        if len(nums) != 3:
            raise ValueError(f"stage {part!r} needs channels,blocks,stride")
        stages.append(tuple(nums))
    if not stages:
        raise ValueError("no stages given")
    return tuple(stages)


def _fmt_stages(stages: tuple[tuple[int, int, int], ...]) -> str:
    return ";".join(",".join(str(x) for x in s) for s in stages)


# dotted key -> (value parser, value formatter); order defines the echo layout
_SCHEMA: dict[str, tuple] = {
    "manifest": (str, str),
    "cache_dir": (str, str),
    "flow_dir": (str, str),
    "out_dir": (str, str),
    "seed": (int, str),
    "max_frames": (int, str),
    "flow.smoothness_weight": (float, repr),
    "flow.iterations": (int, str),
    "flow.convergence_eps": (float, repr),
    "flow.pyramid_levels": (int, str),
    "flow.max_displacement": (float, repr),
    "model.input_size": (int, str),
    "model.stages": (_parse_stages, _fmt_stages),
    "model.head_hidden": (int, str),
    "model.seed": (int, str),
    "model.aggregation": (Aggregation, lambda a: a.value),
    "train.lr_init": (float, repr),
    "train.lr_factor": (float, repr),
    "train.patience_epochs": (int, str),
    "train.lr_floor": (float, repr),
    "train.batch_size": (int, str),
    "train.max_epochs": (int, str),
    "train.adam_beta1": (float, repr),
    "train.adam_beta2": (float, repr),
    "train.adam_eps": (float, repr),
    "train.seed": (int, str),
    "fusion.alpha": (float, repr),
    "fusion.beta": (float, repr),
    "fusion.threshold": (float, repr),
    "norm.clip": (float, repr),
}


def _get_key(cfg: RunConfig, dotted: str):
    if "." in dotted:
        sub, name = dotted.split(".", 1)
        return getattr(getattr(cfg, sub), name)
    return getattr(cfg, dotted)


def _set_key(cfg: RunConfig, dotted: str, raw: str) -> None:
    if dotted not in _SCHEMA:
        raise UsageError(f"unknown config key {dotted!r}")
    parse = _SCHEMA[dotted][0]
    try:
        value = parse(raw)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad value for {dotted}: {raw!r} ({exc})") from None
    if "." in dotted:
        sub, name = dotted.split(".", 1)
        setattr(cfg, sub, dataclasses.replace(getattr(cfg, sub), **{name: value}))
    else:
        setattr(cfg, dotted, value)


def render_config(cfg: RunConfig) -> str:
    lines = []
    for key, (_, fmt) in _SCHEMA.items():
        lines.append(f"{key} = {fmt(_get_key(cfg, key))}")
    return "\n".join(lines) + "\n"


def parse_config_file(path: Path) -> list[tuple[str, str]]:
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    pairs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected `key = value`, got {line!r}")
        key, _, raw = stripped.partition("=")
        pairs.append((key.strip(), raw.strip()))
    return pairs


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults < config file < env cache override < --set < dedicated flags."""
    cfg = RunConfig()
    explicit: set[str] = set()

    def apply(key: str, raw: str) -> None:
        _set_key(cfg, key, raw)
        explicit.add(key)

    if getattr(args, "config", None):
        for key, raw in parse_config_file(Path(args.config)):
            apply(key, raw)
    env_cache = os.environ.get(ENV_CACHE)
    if env_cache:
        apply("cache_dir", env_cache)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set needs key=value, got {item!r}")
        key, _, raw = item.partition("=")
        apply(key.strip(), raw.strip())
    for flag, key in (
        ("manifest", "manifest"),
        ("cache", "cache_dir"),
        ("flow_dir", "flow_dir"),
        ("out", "out_dir"),
        ("seed", "seed"),
        ("alpha", "fusion.alpha"),
        ("beta", "fusion.beta"),
        ("threshold", "fusion.threshold"),
    ):
        val = getattr(args, flag, None)
        if val is not None:
            apply(key, str(val))

    # one --seed propagates everywhere unless a sub-seed was pinned itself
    if "seed" in explicit:
        if "model.seed" not in explicit:
            cfg.model = dataclasses.replace(cfg.model, seed=cfg.seed)
        if "train.seed" not in explicit:
            cfg.train = dataclasses.replace(cfg.train, seed=cfg.seed)
    return cfg


def _echo_config(cfg: RunConfig, out_path: Path | None) -> None:
    text = render_config(cfg)
    sys.stdout.write("# resolved config\n" + text + "# end config\n")
    if out_path is not None:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text, encoding="utf-8")


def _build_pipeline(cfg: RunConfig) -> EncodingPipeline:
    return EncodingPipeline(
        input_size=cfg.model.input_size,
        norm=cfg.norm,
        flow_cfg=cfg.flow,
        max_frames=cfg.max_frames,
        cache_dir=Path(cfg.cache_dir) if cfg.cache_dir else None,
        flow_import_dir=Path(cfg.flow_dir) if cfg.flow_dir else None,
    )


# --- commands -------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    _echo_config(cfg, out / "run_config_synth.txt")
    syn = SyntheticConfig(
        out_dir=out,
        real_count=args.real,
        fake_count=args.fake,
        image_size=args.size,
        frame_count=args.frames,
        seed=cfg.seed,
        jitter_std=args.jitter_std,
        val_fraction=args.val_fraction,
        test_fraction=args.test_fraction,
    )
    try:
        syn.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    make_synthetic_corpus(syn)
    print(out / "manifest.tsv")
    return 0


def cmd_preprocess(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if not cfg.manifest:
        raise UsageError("preprocess needs --manifest (or a config file setting it)")
    if not cfg.cache_dir:
        raise UsageError("preprocess needs --cache, a config entry, or $" + ENV_CACHE)
    _echo_config(cfg, Path(cfg.cache_dir) / "run_config_preprocess.txt")
    pipeline = _build_pipeline(cfg)
    splits = load_all_splits(cfg.manifest)
    failures = []
    n_done = n_fresh = 0
    for split in Split:
        for entry in splits[split].entries:
            try:
                result = pipeline.preprocess_entry(entry)
            except FlowSleuthError as exc:
                failures.append((entry.id, str(exc)))
                continue
            n_done += 1
            n_fresh += int(result.recomputed)
            print(
                f"{entry.id}: {result.n_flows} flows, {result.n_residuals} residuals"
                f" ({'computed' if result.recomputed else 'cached'})"
            )
    print(f"preprocessed {n_done} videos ({n_fresh} recomputed), {len(failures)} failed")
    if failures:
        for vid, msg in failures:
            print(f"FAILED {vid}: {msg}", file=sys.stderr)
        return 1
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if not cfg.manifest:
        raise UsageError("train needs --manifest (or a config file setting it)")
    kind = BRANCH_KINDS[args.branch]
    out = Path(cfg.out_dir)
    _echo_config(cfg, out / f"run_config_train_{args.branch}.txt")
    ckpt_path = out / f"checkpoint_{args.branch}.npz"
    if ckpt_path.exists() and not args.force:
        print(f"refusing to overwrite {ckpt_path} (use --force)", file=sys.stderr)
        return 1
    splits = load_all_splits(cfg.manifest)
    pipeline = _build_pipeline(cfg)
    model = init_model(cfg.model, kind)
    best, log = train_branch(model, splits[Split.TRAIN], splits[Split.VAL], cfg.train, pipeline)
    out.mkdir(parents=True, exist_ok=True)
    # the checkpoint holds the best model as a deployable artifact, not a
    # resume point, so it carries a fresh schedule state
    final_state = TrainState(lr=cfg.train.lr_init)
    save_checkpoint(best, final_state, ckpt_path, norm=cfg.norm)
    log.write(out / f"trainlog_{args.branch}.tsv")
    last = log.records[-1]
    print(f"trained {args.branch}: {len(log.records)} epochs, best val_acc {max(r.val_acc for r in log.records)!r}")
    print(f"final epoch {last.epoch}: train_loss {last.train_loss!r} val_acc {last.val_acc!r} lr {last.lr!r}")
    print(ckpt_path)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if not cfg.manifest:
        raise UsageError("eval needs --manifest (or a config file setting it)")
    try:
        cfg.fusion.validate()
    except InvalidWeights as exc:
        raise UsageError(str(exc)) from None
    out = Path(cfg.out_dir)
    _echo_config(cfg, out / "run_config_eval.txt")
    ori_model, _, ori_norm = load_checkpoint(args.ori_checkpoint)
    res_model, _, res_norm = load_checkpoint(args.res_checkpoint)
    if ori_model.modality is not InputKind.RGB_FRAME:
        print(f"{args.ori_checkpoint}: not an ori-branch checkpoint", file=sys.stderr)
        return 1
    if res_model.modality is not InputKind.FLOW_RESIDUAL:
        print(f"{args.res_checkpoint}: not a res-branch checkpoint", file=sys.stderr)
        return 1
    if ori_norm != res_norm or ori_model.config.input_size != res_model.config.input_size:
        print("checkpoints disagree on normalization or input size", file=sys.stderr)
        return 1
    pipeline = dataclasses.replace(
        _build_pipeline(cfg), input_size=ori_model.config.input_size, norm=ori_norm
    )
    splits = load_all_splits(cfg.manifest)
    report = evaluate_dataset(
        (ori_model, res_model), splits[Split.TEST], cfg.fusion, pipeline, dataset_tag=args.tag
    )
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / f"report_{report.dataset_tag}.txt")
    write_scores_tsv(report, out / f"scores_{report.dataset_tag}.tsv")
    print(render_report_table([(report.dataset_tag, report.acc, report.auc, report.f1)]))
    print(f"fused AUC: {report.auc!r}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    reports = [load_report(p) for p in args.reports]
    print(render_report_table([(r.dataset_tag, r.acc, r.auc, r.f1) for r in reports]))
    if args.per_branch:
        print()
        print(
            render_ablation_table(
                [(r.dataset_tag, r.per_branch["ori"], r.per_branch["res"]) for r in reports],
                left="Ori",
                right="Resid",
            )
        )
    return 0


# --- argument wiring --------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file of `key = value` lines")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--seed", type=int, help="run seed (propagates to model/train seeds)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowsleuth",
        description="Detect AI-generated video from optical-flow residual statistics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    _add_common(p)
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--real", type=int, default=4)
    p.add_argument("--fake", type=int, default=4)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--jitter-std", type=float, default=1.0, dest="jitter_std")
    p.add_argument("--val-fraction", type=float, default=0.0, dest="val_fraction")
    p.add_argument("--test-fraction", type=float, default=0.0, dest="test_fraction")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="compute and cache flows and residuals")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--cache", help=f"cache root (or ${ENV_CACHE})")
    p.add_argument("--flow-dir", dest="flow_dir", help="import precomputed .flo files instead of solving")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one branch")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--branch", required=True, choices=sorted(BRANCH_KINDS))
    p.add_argument("--cache")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true", help="overwrite an existing checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate fused branches on the test split")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--ori-checkpoint", required=True)
    p.add_argument("--res-checkpoint", required=True)
    p.add_argument("--cache")
    p.add_argument("--flow-dir", dest="flow_dir")
    p.add_argument("--out")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--tag", help="dataset tag for the report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render saved eval reports as tables")
    p.add_argument("reports", nargs="+", help="report files from `eval`")
    p.add_argument("--per-branch", action="store_true", dest="per_branch")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FlowSleuthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
