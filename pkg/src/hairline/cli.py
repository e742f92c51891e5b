"""Command line entry point: ``hairline <subcommand> ...``.

Exit codes: 0 success, 1 invalid input or arguments, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .augment import (
    DEFAULT_MIN_HAIR_FRACTION,
    AugmentationSpec,
    Mode,
    Scope,
    filter_source_pool,
    iter_augmentation,
    load_source_pool,
)
from .errors import HairlineError, InvalidSpec
from .ingest import load_dataset
from .labeling import DEFAULT_THRESHOLD, label_dataset, load_labels, write_labels
from .manifests import ManifestSpec, Protocol, build, build_superset, load_female_pool, load_training_manifest, default_grid
from .pairstats import AuditReport, audit, resolve_threads
from .regions import Region
from .report import GridResult, dprime_table, emit_table, read_table, render_distributions, render_grid
from .synth import SynthParams, generate_cohort

log = logging.getLogger("hairline")


class UsageError(HairlineError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _csv_list(text: str) -> list[str]:
    return [t for t in (s.strip() for s in text.split(",")) if t]


def _pick_seed(args, own):
    return args.seed_override if args.seed_override is not None else own


# -- subcommands ------------------------------------------------------------


def cmd_label(args) -> int:
    if not 0.0 < args.threshold < 1.0:
        raise InvalidSpec("--threshold must lie strictly inside (0, 1)")
    ds = load_dataset(args.manifest, attributes=args.attributes)
    labels, summary = label_dataset(ds.manifest, args.threshold)
    write_labels(args.out, labels)
    total = summary.total()
    log.info("labeled %d images: CS=%d FH=%d Excluded=%d", len(labels), total["CS"], total["FH"], total["Excluded"])
    return 0


def cmd_audit(args) -> int:
    if args.impostor_sample is not None and _pick_seed(args, args.seed) is None:
        raise InvalidSpec("--impostor-sample requires --seed")
    if args.impostor_sample is not None and args.impostor_sample < 1:
        raise InvalidSpec("--impostor-sample must be positive")
    run = {}
    if args.protocol is not None:
        run = {"protocol": args.protocol, "grid_point": args.grid_point, "repetition": args.rep}
        if args.k is not None:
            run["k"] = args.k
        if args.subjects is not None:
            run["subjects"] = args.subjects
        if args.grid_point is None:
            raise InvalidSpec("--protocol needs --grid-point")
    ds = load_dataset(args.manifest, embeddings=args.embeddings)
    labels = load_labels(args.labels)
    threads = resolve_threads(args.threads if args.threads is not None else args.global_threads)
    report = audit(
        ds,
        labels,
        args.cohort or None,
        threads=threads,
        impostor_sample=args.impostor_sample,
        seed=_pick_seed(args, args.seed),
        run=run,
    )
    Path(args.out).write_text(report.to_json(), encoding="utf-8")
    for cohort, cr in sorted(report.cohorts.items()):
        log.info("%s: %s", cohort, ", ".join(f"{g.display} d'={d:.3f}" for g, d in cr.dprime.items()))
    return 0


def cmd_manifest(args) -> int:
    protocol = Protocol(args.protocol)
    seed = _pick_seed(args, args.seed)
    if args.grid:
        points = default_grid(protocol, args.subjects, args.k)
        if args.out_dir is None:
            raise InvalidSpec("--grid writes one file per manifest; give --out-dir")
    else:
        if args.x is None or args.out is None:
            raise InvalidSpec("give --x and --out, or --grid with --out-dir")
        points = [args.x]
    # validate every spec before touching inputs
    reps = range(args.reps) if args.grid else [args.rep]
    specs = [ManifestSpec(protocol, x, args.subjects, args.k, (), r, seed) for x in points for r in reps]

    ds = load_dataset(args.manifest)
    labels = load_labels(args.labels)
    subject_index = {r.image_id: r.subject_id for r in ds.manifest}
    missing = set(labels) - set(subject_index)
    if missing:
        raise InvalidSpec(f"{len(missing)} labeled images are not in the manifest")
    female = load_female_pool(args.female_pool) if args.female_pool else ()
    superset = build_superset(labels, subject_index, args.subjects, args.k, seed)
    for spec in specs:
        spec = ManifestSpec(spec.protocol, spec.grid_point, spec.subjects_male, spec.images_per_subject, female, spec.repetition, spec.seed)
        m = build(spec, superset)
        if args.grid:
            out_dir = Path(args.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            path = out_dir / f"{protocol.value}_x{spec.grid_point:05d}_rep{spec.repetition}.csv"
        else:
            path = Path(args.out)
        m.write(path)
        log.info("wrote %s (%d entries, %d CS)", path, len(m), m.count("CS"))
    return 0


def cmd_augment(args) -> int:
    mode = Mode(args.mode)
    if mode is Mode.RANDOM_REGION and args.region is None:
        raise InvalidSpec("--mode random-region needs --region")
    if mode is Mode.HAIR_TRANSFER and args.source_pool is None:
        raise InvalidSpec("--mode hair-transfer needs --source-pool")
    if not 0.0 <= args.prob <= 1.0:
        raise InvalidSpec("--prob must lie in [0, 1]")
    seed = _pick_seed(args, args.seed)
    ds = load_dataset(args.manifest, landmarks=args.landmarks)
    pool = ()
    if mode is Mode.HAIR_TRANSFER:
        src = load_dataset(args.source_pool, landmarks=args.source_landmarks or args.landmarks)
        ids = filter_source_pool(src, args.min_hair_fraction)
        ids = [i for i in ids if i in src.landmarks]
        pool = tuple(load_source_pool(src, ids))
        log.info("source pool: %d images above %.0f%% hair pixels", len(pool), 100 * args.min_hair_fraction)
    spec = AugmentationSpec(mode, args.prob, Scope(args.scope), seed, Region(args.region) if args.region else None, pool)

    records = list(ds.manifest)
    if args.training_manifest:
        keep = {e.image_id for e in load_training_manifest(args.training_manifest)}
        records = [r for r in records if r.image_id in keep]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_aug = n_seen = 0
    with open(args.log, "w", encoding="utf-8") as logf:
        for outcome in iter_augmentation(records, ds, spec):
            n_seen += 1
            if outcome.augmented:
                n_aug += 1
                Image.fromarray(np.ascontiguousarray(outcome.image)).save(out_dir / f"{outcome.image_id}.png", format="PNG")
            logf.write(json.dumps(outcome.log_record(), sort_keys=True) + "\n")
    log.info("augmented %d of %d in-scope images", n_aug, n_seen)
    return 0


def cmd_synth(args) -> int:
    params = SynthParams(
        subjects=args.subjects,
        images_per_subject=args.images,
        dim=args.dim,
        cs_fraction=args.cs_frac,
        genuine_mu=args.genuine_mu,
        impostor_mu=args.impostor_mu,
        fh_offset=args.fh_offset,
        sigma=args.sigma,
        seed=_pick_seed(args, args.seed),
        cohorts=tuple(_csv_list(args.cohorts)),
        female_fraction=args.female_frac,
        image_size=args.image_size,
        with_images=not args.no_images,
    )
    cohort = generate_cohort(params)
    out = cohort.write(args.out_dir)
    log.info("wrote %d images of %d subjects to %s", len(cohort.records), params.subjects * len(params.cohorts), out)
    return 0


def cmd_report(args) -> int:
    inputs = _csv_list(args.inputs)
    if not inputs:
        raise InvalidSpec("--in needs at least one file")
    tables = [p for p in inputs if p.endswith(".csv")]
    reports = [AuditReport.load(p) for p in inputs if not p.endswith(".csv")]
    grid = None
    # a lone report without grid metadata gets the per-cohort d' table instead
    plain = len(reports) == 1 and not tables and "grid_point" not in reports[0].run and args.fig != "grid"
    if args.fig == "grid" or (args.table and not plain):
        if tables and reports:
            raise InvalidSpec("mix of grid tables and audit reports in --in")
        if tables:
            if len(tables) > 1:
                raise InvalidSpec("only one grid table can be read at a time")
            grid = read_table(tables[0])
        else:
            grid = GridResult.from_reports(reports)
    if args.fig == "dist":
        if len(reports) != 1:
            raise InvalidSpec("--fig dist takes exactly one audit report")
        render_distributions(reports[0], args.out)
    elif args.fig == "grid":
        render_grid(grid, args.out)
    if args.table and plain:
        Path(args.table).write_text(dprime_table(reports[0]), encoding="utf-8")
    elif args.table:
        emit_table(grid, args.table)
    return 0


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hairline", description="Facial-hairstyle accuracy audit toolkit.")
    p.add_argument("--version", action="version", version=f"hairline {__version__}")
    p.add_argument("--threads", dest="global_threads", type=int, default=None, help="worker cap (env HAIRLINE_THREADS)")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--seed", dest="seed_override", type=int, default=None, help="override every subcommand seed")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("label", help="classify images as CS / FH / Excluded")
    s.add_argument("--manifest", required=True)
    s.add_argument("--attributes", required=True)
    s.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_label)

    s = sub.add_parser("audit", help="d-prime per pair group and cohort")
    s.add_argument("--manifest", required=True)
    s.add_argument("--embeddings", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--cohort", action="append", help="repeatable; default all cohorts")
    s.add_argument("--out", required=True)
    s.add_argument("--threads", type=int, default=None)
    s.add_argument("--impostor-sample", type=int, default=None, metavar="K")
    s.add_argument("--seed", type=int, default=None)
    g = s.add_argument_group("run metadata (for grid reports)")
    g.add_argument("--protocol", choices=[x.value for x in Protocol])
    g.add_argument("--grid-point", type=int)
    g.add_argument("--rep", type=int, default=0)
    g.add_argument("--k", type=int)
    g.add_argument("--subjects", type=int)
    s.set_defaults(func=cmd_audit)

    s = sub.add_parser("manifest", help="build controlled training manifests")
    s.add_argument("--protocol", required=True, choices=[x.value for x in Protocol])
    s.add_argument("--x", type=int)
    s.add_argument("--k", type=int, default=12)
    s.add_argument("--subjects", type=int, default=5000)
    s.add_argument("--manifest", required=True, help="dataset manifest (subject ids)")
    s.add_argument("--labels", required=True)
    s.add_argument("--female-pool")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rep", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--grid", action="store_true", help="build the full grid x --reps repetitions")
    s.add_argument("--reps", type=int, default=5)
    s.add_argument("--out-dir")
    s.set_defaults(func=cmd_manifest)

    s = sub.add_parser("augment", help="one augmentation pass over a dataset")
    s.add_argument("--manifest", required=True)
    s.add_argument("--mode", required=True, choices=[m.value for m in Mode])
    s.add_argument("--region", choices=[r.value for r in Region])
    s.add_argument("--prob", type=float, required=True)
    s.add_argument("--scope", choices=[x.value for x in Scope], default="male")
    s.add_argument("--source-pool", help="manifest of candidate source images (with mask_path)")
    s.add_argument("--source-landmarks")
    s.add_argument("--min-hair-fraction", type=float, default=DEFAULT_MIN_HAIR_FRACTION)
    s.add_argument("--landmarks")
    s.add_argument("--training-manifest")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--log", required=True)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("synth", help="generate a synthetic cohort")
    s.add_argument("--subjects", type=int, default=200)
    s.add_argument("--images", type=int, default=24)
    s.add_argument("--dim", type=int, default=128)
    s.add_argument("--cs-frac", type=float, default=0.5)
    s.add_argument("--fh-offset", type=float, default=0.0)
    s.add_argument("--genuine-mu", type=float, default=0.7)
    s.add_argument("--impostor-mu", type=float, default=0.0)
    s.add_argument("--sigma", type=float, default=0.1)
    s.add_argument("--cohorts", default="SYN")
    s.add_argument("--female-frac", type=float, default=0.0)
    s.add_argument("--image-size", type=int, default=64)
    s.add_argument("--no-images", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("report", help="figures and tables from audit reports")
    s.add_argument("--in", dest="inputs", required=True, help="comma-separated audit JSONs or one grid CSV")
    s.add_argument("--fig", choices=["dist", "grid"])
    s.add_argument("--out")
    s.add_argument("--table")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report" and args.fig and not args.out:
        print("hairline report: --fig needs --out", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except HairlineError as exc:
        print(f"hairline {args.command}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"hairline {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
