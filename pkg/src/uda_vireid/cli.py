"""Command line entry point: ``uda-vireid <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure.

Pipeline settings resolve in this order, later wins: built-in defaults,
``--config`` file, ``--preset`` radii, explicit flags. ``finetune`` starts
from the configuration saved with the stage-1 artifacts instead of the
built-in defaults.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .config import EPS_PRESETS, PipelineConfig, coerce, load_config
from .core import INFRARED, UNLABELED, VISIBLE
from .errors import ConfigError, UDAError
from .evaluation import DEFAULT_RANKS, evaluate_retrieval
from .fileio import format_value, read_embeddings, read_labels, read_table, write_embeddings, write_labels, write_table
from .gradcheck import run_gradcheck
from .pipeline import read_probs, run_finetune_stage, run_pretrain_stage
from .synthbench import SynthConfig, generate_synthetic

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("uda_vireid")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _ranks(text: str) -> tuple[int, ...]:
    try:
        ranks = tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad rank list {text!r}") from None
    if not ranks or min(ranks) < 1:
        raise argparse.ArgumentTypeError("ranks must be positive integers")
    return ranks


def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline settings")
    g.add_argument("--config", type=Path, help="flat 'key = value' file")
    g.add_argument("--preset", choices=sorted(EPS_PRESETS), help="per-mode clustering radii")
    for f in fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in (bool, "bool"):
            g.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            g.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())


def _resolve_config(args, base: PipelineConfig) -> PipelineConfig:
    cfg = base
    if args.config is not None:
        cfg = load_config(args.config, cfg)
    if args.preset is not None:
        e1v, e2v, e1i, e2i = EPS_PRESETS[args.preset]
        cfg = replace(cfg, eps1_v=e1v, eps2_v=e2v, eps1_i=e1i, eps2_i=e2i)
    changes = {}
    for f in fields(PipelineConfig):
        raw = getattr(args, f.name)
        if raw is None:
            continue
        changes[f.name] = raw if isinstance(raw, bool) else coerce(f.name, raw)
    return replace(cfg, **changes).validate()


def _truth_for(target, path):
    if path is None:
        return None
    by_id = read_labels(path)
    missing = [s for s in target.sample_id if s not in by_id]
    if missing:
        raise UDAError(f"truth file lacks {len(missing)} target samples, e.g. {missing[0]}")
    return np.array([by_id[s] for s in target.sample_id], dtype=np.int64)


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        n_identities=args.n_identities,
        samples_per_modality=args.samples_per_modality,
        dim=args.dim,
        modality_offset_scale=args.modality_offset_scale,
        domain_offset_scale=args.domain_offset_scale,
        noise_std=args.noise_std,
        identities_missing_in_infrared=args.missing_in_infrared,
        seed=args.seed,
    )
    source, target, truth = generate_synthetic(cfg)
    out = args.out
    write_embeddings(source, out / "source.emb")
    write_embeddings(target, out / "target.emb")
    write_labels(out / "target_truth.tsv", target.sample_id, target.modality, truth.target_labels)
    # retrieval protocol: infrared queries against the visible gallery
    labeled = target.with_labels(truth.target_labels)
    write_embeddings(labeled.select(modality=INFRARED), out / "query.emb")
    write_embeddings(labeled.select(modality=VISIBLE), out / "gallery.emb")
    print(f"wrote {len(source)} source and {len(target)} target rows to {out}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args, PipelineConfig())
    source = read_embeddings(args.source)
    target = read_embeddings(args.target)
    probs = None if args.domain_probs is None else read_probs(args.domain_probs)
    result = run_pretrain_stage(cfg, source, target, probs, _truth_for(target, args.truth))
    result.save(args.out)
    _print_report(result.report)
    return EXIT_OK


def cmd_finetune(args) -> int:
    saved = args.stage1 / "config.cfg"
    base = load_config(saved) if saved.exists() else PipelineConfig()
    cfg = _resolve_config(args, base)
    probs = None if args.domain_probs is None else read_probs(args.domain_probs)
    truth = None
    if args.truth is not None:
        truth = _truth_for(read_embeddings(args.stage1 / "target.emb"), args.truth)
    result = run_finetune_stage(cfg, args.stage1, probs, truth)
    result.save(args.out)
    _print_report(result.report)
    return EXIT_OK


def cmd_eval(args) -> int:
    query = read_embeddings(args.query)
    gallery = read_embeddings(args.gallery)
    if args.labels is not None:
        # score pseudo labels instead of the stored identities
        by_id = read_labels(args.labels)
        query = query.with_labels([by_id.get(s, UNLABELED) for s in query.sample_id])
        gallery = gallery.with_labels([by_id.get(s, UNLABELED) for s in gallery.sample_id])
    metrics = evaluate_retrieval(query, gallery, args.ranks)
    rows = metrics.as_rows()
    if args.out is not None:
        write_table(args.out, ("metric", "value"), rows)
    if args.curve is not None:
        write_table(args.curve, ("rank", "cmc"), [(k + 1, float(v)) for k, v in enumerate(metrics.curve)])
    for key, value in rows:
        print(f"{key}\t{format_value(value)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(args.instances, args.seed)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.loss}\t{r.n_instances}\t{r.max_relative_error:.3e}\t{r.tolerance:.0e}\t{status}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def _read_key_values(path: Path) -> dict[str, str]:
    header, rows = read_table(path)
    if len(header) != 2:
        raise UDAError(f"{path}: expected a two-column key/value table")
    return {r[0]: r[1] for r in rows if len(r) == 2}


def cmd_report(args) -> int:
    stems = [p.stem for p in args.inputs]
    unique = len(set(stems)) == len(stems)
    tables = [(p.stem if unique else str(p), _read_key_values(p)) for p in args.inputs]
    keys: list[str] = []
    for _, table in tables:
        keys += [k for k in table if k not in keys]
    names = [name for name, _ in tables]
    write_table(args.out_dir / "summary.tsv", ["key"] + names, [[k] + [t.get(k, "") for _, t in tables] for k in keys])

    series = []
    for name, table in tables:
        for key, value in table.items():
            if key.startswith("rank") and key[4:].isdigit():
                series.append((name, "cmc", int(key[4:]), float(value)))
            elif key.startswith("loss_"):
                series.append((name, key[5:], 0, float(value)))
    series.sort(key=lambda r: (r[0], r[1], r[2]))
    write_table(args.out_dir / "series.tsv", ("source", "series", "x", "y"), series)
    print(f"wrote summary.tsv and series.tsv to {args.out_dir}")
    return EXIT_OK


def _print_report(report) -> None:
    for key, value in report.rows:
        print(f"{key}\t{format_value(value)}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uda-vireid", description="Cross-domain visible-infrared pseudo-labeling toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-identities", type=int, default=20)
    p.add_argument("--samples-per-modality", type=int, default=8)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--modality-offset-scale", type=float, default=0.3)
    p.add_argument("--domain-offset-scale", type=float, default=0.3)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.add_argument("--missing-in-infrared", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="stage 1: per-modality pseudo labels and adversarial terms")
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--target", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--domain-probs", type=Path, help="discriminator outputs, one per row (source then target)")
    p.add_argument("--truth", type=Path, help="true target labels; adds quality rows to the report")
    _config_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="stage 2: joint labels, consistency loss and final loss")
    p.add_argument("--stage1", type=Path, required=True, help="output directory of pretrain")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--domain-probs", type=Path)
    p.add_argument("--truth", type=Path)
    _config_flags(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="rank-k, mAP and mINP of query against gallery")
    p.add_argument("--query", type=Path, required=True)
    p.add_argument("--gallery", type=Path, required=True)
    p.add_argument("--ranks", type=_ranks, default=DEFAULT_RANKS)
    p.add_argument("--labels", type=Path, help="label file overriding the stored identities")
    p.add_argument("--out", type=Path, help="write metrics as a two-column table")
    p.add_argument("--curve", type=Path, help="write the full CMC curve")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all loss gradients")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", help="merge key/value tables into a summary and a plot-ready series file")
    p.add_argument("inputs", type=Path, nargs="+")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UDAError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
