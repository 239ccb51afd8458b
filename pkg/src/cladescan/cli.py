"""Command-line interface.

Subcommands: scan, region-report, simulate, build-trees,
export-branch-genotypes, effect-size. ``--config FILE`` supplies ``key value``
lines mirroring any long flag. Exit codes: 0 success, 1 input error,
2 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .bayes import (
    BayesResult,
    ScanParams,
    bf_position_1mut,
    branch_prior_weights,
    scan,
)
from .copying import (
    HmmParams,
    copying_posterior,
    clade_dosage,
    export_branch_genotypes,
    write_branch_genotype_file,
)
from .data import (
    DataError,
    PriorSpec,
    load_genotypes,
    load_map,
    load_panel,
    make_grid,
    write_genotypes,
)
from .effects import BranchEffect, FitError, branch_logistic_map, mixture_effect
from .report import build_region_report, report_to_json, report_to_svg
from .simulate import DiseaseModel, SimConfig, select_causal_pairs, simulate_case_control
from .tree import MarginalTree, TreesimParams, build_tree, tree_store_read, tree_store_write

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INTERNAL = 2


def _apply_config(argv: list[str]) -> list[str]:
    """Expand ``--config FILE`` into leading long flags (explicit flags win)."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    try:
        path = argv[i + 1]
    except IndexError:
        raise DataError("--config requires a file argument") from None
    rest = argv[:i] + argv[i + 2 :]
    extra: list[str] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition(" ")
            flag = "--" + key.lstrip("-")
            if flag in rest:
                continue
            extra.append(flag)
            if val.strip():
                extra.append(val.strip())
    # insert after the subcommand
    if rest and not rest[0].startswith("-"):
        return [rest[0]] + extra + rest[1:]
    return extra + rest


def _add_common_inputs(p: argparse.ArgumentParser, with_study: bool = True) -> None:
    p.add_argument("--legend", required=True, help="panel legend file")
    p.add_argument("--haps", required=True, help="panel haps file")
    p.add_argument("--map", required=True, dest="map_file", help="recombination map file")
    if with_study:
        p.add_argument("--gen", required=True, help="study gen file")
        p.add_argument("--sample", required=True, help="study sample file")
        p.add_argument(
            "--drop-unmatched",
            action="store_true",
            help="warn instead of fail on study SNPs absent from the panel",
        )


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid-start", type=int, required=True)
    p.add_argument("--grid-end", type=int, required=True)
    p.add_argument("--grid-spacing", type=int, default=5000)
    p.add_argument("--window-sites", type=int, default=200)
    p.add_argument("--prior-a", type=float, default=20.0)
    p.add_argument("--prior-c", type=float, default=30.0)
    p.add_argument("--prior-odds-2v1", type=float, default=1.0)
    p.add_argument("--threshold", type=float, default=4.0, help="log10 BF highlight threshold")
    p.add_argument("--trees", help="tree store to reuse instead of rebuilding")


def _load_inputs(args, with_study: bool = True):
    panel = load_panel(args.legend, args.haps)
    gmap = load_map(args.map_file)
    study = None
    if with_study:
        study = load_genotypes(
            args.gen, args.sample, panel, drop_unmatched=getattr(args, "drop_unmatched", False)
        )
    return panel, gmap, study


def _scan_params(args) -> ScanParams:
    prior = PriorSpec(a=args.prior_a, c=args.prior_c, prior_odds_2v1=args.prior_odds_2v1)
    return ScanParams(
        prior=prior,
        tree_params=TreesimParams(window_sites=args.window_sites),
        hmm_params=HmmParams(window_sites=args.window_sites),
    )


def _tree_lookup(args, panel, gmap, grid, params) -> dict[int, MarginalTree]:
    if args.trees:
        return {t.focal_position_bp: t for t in tree_store_read(args.trees)}
    return {
        pos: build_tree(panel, gmap, pos, params.tree_params) for pos in grid
    }


def _write_scan_outputs(results: list[BayesResult], trees, out_prefix: str, threshold: float):
    tsv_path = out_prefix + ".tsv"
    json_path = out_prefix + ".json"
    with open(tsv_path, "w", newline="\n") as fh:
        fh.write("position\tlog10_bf1\tlog10_bf2\tposterior_2v1\tbest_branch\tbest_pair\n")
        for r in sorted(results, key=lambda r: r.position_bp):
            if r.error is not None:
                continue
            fh.write(
                f"{r.position_bp}\t{r.log10_bf1:.4f}\t{r.log10_bf2:.4f}\t"
                f"{r.posterior_2v1:.4f}\t{r.best_branch}\t"
                f"{r.best_pair[0]},{r.best_pair[1]}\n"
            )
    sidecar = {
        "threshold_log10_bf": threshold,
        "super_threshold_positions": [
            r.position_bp
            for r in results
            if r.error is None
            and (r.log10_bf1 > threshold or r.log10_bf2 > threshold)
        ],
        "positions": [
            {
                "position": r.position_bp,
                "best_branch": r.best_branch,
                "best_branch_tips_hex": (
                    f"{trees[r.position_bp].branch_by_id(r.best_branch).tips:x}"
                    if r.error is None
                    else None
                ),
                "best_pair": list(r.best_pair),
                "best_pair_tips_hex": (
                    [
                        f"{trees[r.position_bp].branch_by_id(b).tips:x}"
                        for b in r.best_pair
                    ]
                    if r.error is None
                    else None
                ),
                "table_1mut": r.table_1mut.tolist() if r.error is None else None,
                "table_2mut": r.table_2mut.tolist() if r.error is None else None,
                "error": r.error,
            }
            for r in sorted(results, key=lambda r: r.position_bp)
        ],
    }
    with open(json_path, "w", newline="\n") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_scan(args) -> int:
    panel, gmap, study = _load_inputs(args)
    grid = make_grid(args.grid_start, args.grid_end, args.grid_spacing)
    params = _scan_params(args)
    trees = _tree_lookup(args, panel, gmap, grid, params)
    results = scan(panel, gmap, study, grid, params, trees=trees)
    _write_scan_outputs(results, trees, args.out, args.threshold)
    n_err = sum(1 for r in results if r.error is not None)
    print(f"scan: {len(results)} positions, {n_err} failed, outputs {args.out}.tsv/.json")
    return EXIT_OK


def cmd_build_trees(args) -> int:
    panel, gmap, _ = _load_inputs(args, with_study=False)
    grid = make_grid(args.grid_start, args.grid_end, args.grid_spacing)
    params = TreesimParams(window_sites=args.window_sites)
    trees = [build_tree(panel, gmap, pos, params) for pos in grid]
    tree_store_write(trees, args.out)
    print(f"build-trees: {len(trees)} trees written to {args.out}")
    return EXIT_OK


def cmd_region_report(args) -> int:
    panel, gmap, study = _load_inputs(args)
    grid = make_grid(args.grid_start, args.grid_end, args.grid_spacing)
    params = _scan_params(args)
    trees = _tree_lookup(args, panel, gmap, grid, params)
    results = scan(panel, gmap, study, grid, params, trees=trees)
    report = build_region_report(results, trees, panel, gmap)
    with open(args.out + ".json", "w", newline="\n") as fh:
        fh.write(report_to_json(report))
    with open(args.out + ".svg", "w", newline="\n") as fh:
        fh.write(report_to_svg(report))
    print(
        f"region-report: focal {report.focal_position_bp}, "
        f"outputs {args.out}.json/.svg"
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    panel, gmap, _ = _load_inputs(args, with_study=False)
    if args.model == "null":
        causal, rrs = None, None
    else:
        pairs = select_causal_pairs(panel, args.model)
        if not pairs:
            raise DataError(f"no eligible causal pairs for model {args.model} in panel")
        causal = pairs[args.pair_index % len(pairs)]
        rrs = (args.rra, args.rrb)

    freq = panel.frequencies()
    maf = np.minimum(freq, 1.0 - freq)
    if args.typed_sites:
        typed = np.array([int(t) for t in args.typed_sites.split(",")], dtype=np.int64)
    else:
        typed = np.nonzero(maf >= args.typed_maf_min)[0]
        if causal is not None:
            typed = typed[~np.isin(typed, causal)]
        typed = typed[:: max(1, args.typed_stride)]
    manifest = {
        "model": args.model,
        "n_cases": args.cases,
        "n_controls": args.controls,
        "seed": args.seed,
        "replicates": [],
    }
    for rep in range(args.replicates):
        seed = args.seed + 1000 * rep
        if causal is None:
            model = DiseaseModel(
                causal_sites=(0,), relative_risks=(1.0,), baseline_risk=args.baseline
            )
        else:
            model = DiseaseModel(
                causal_sites=tuple(causal), relative_risks=rrs, baseline_risk=args.baseline
            )
        config = SimConfig(
            n_cases=args.cases, n_controls=args.controls, seed=seed, typed_mask=typed
        )
        study, _ = simulate_case_control(panel, gmap, model, config)
        gen_path = f"{args.out}.rep{rep}.gen"
        sample_path = f"{args.out}.rep{rep}.sample"
        write_genotypes(study, panel, gen_path, sample_path)
        manifest["replicates"].append(
            {
                "replicate": rep,
                "seed": seed,
                "gen": os.path.basename(gen_path),
                "sample": os.path.basename(sample_path),
                "causal_sites": list(causal) if causal else [],
                "relative_risks": list(rrs) if rrs else [],
            }
        )
    blob = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    manifest["sha256"] = hashlib.sha256(blob.encode()).hexdigest()
    tmp = args.out + ".manifest.json.tmp"
    with open(tmp, "w", newline="\n") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, args.out + ".manifest.json")
    print(f"simulate: {args.replicates} replicates, manifest {args.out}.manifest.json")
    return EXIT_OK


def cmd_export_branch_genotypes(args) -> int:
    panel, gmap, study = _load_inputs(args)
    params = HmmParams(window_sites=args.window_sites)
    tree = build_tree(
        panel, gmap, args.position, TreesimParams(window_sites=args.window_sites)
    )
    dosage = copying_posterior(study, panel, gmap, args.position, params)
    rows = []
    for b in tree.branches:
        probs = export_branch_genotypes(dosage, b.tips)
        rows.append((f"branch{b.id}", args.position, "A", "B", probs))
    write_branch_genotype_file(args.out, rows)
    print(f"export-branch-genotypes: {len(rows)} branch SNPs to {args.out}")
    return EXIT_OK


def cmd_effect_size(args) -> int:
    panel, gmap, study = _load_inputs(args)
    prior = PriorSpec(a=args.prior_a, c=args.prior_c, effect_prior_sd=args.effect_prior_sd)
    tree = build_tree(
        panel, gmap, args.position, TreesimParams(window_sites=args.window_sites)
    )
    dosage = copying_posterior(
        study, panel, gmap, args.position, HmmParams(window_sites=args.window_sites)
    )
    _, branch_log_bfs = bf_position_1mut(tree, dosage, study.phenotypes, prior)
    weights = branch_prior_weights(tree)
    effects = []
    with open(args.out, "w", newline="\n") as fh:
        fh.write("position\tbranch\tbeta\tse\tlog_bf\tweight\n")
        for b, log_bf, w in zip(tree.branches, branch_log_bfs, weights):
            e = clade_dosage(dosage, b.tips)
            try:
                beta, se = branch_logistic_map(
                    e, study.phenotypes, effect_prior_sd=args.effect_prior_sd
                )
            except FitError as exc:
                print(f"warning: branch {b.id} skipped: {exc}", file=sys.stderr)
                continue
            effects.append(
                BranchEffect(
                    branch_id=b.id,
                    beta_hat=beta,
                    sigma_hat=se,
                    log_bf=float(log_bf),
                    prior_weight=float(w),
                )
            )
            fh.write(
                f"{args.position}\t{b.id}\t{beta:.6f}\t{se:.6f}\t"
                f"{float(log_bf):.6f}\t{float(w):.6f}\n"
            )
        post = mixture_effect(effects)
        fh.write(f"# beta_star {post.beta_star:.6f} or_star {post.odds_ratio:.6f}\n")
    print(
        f"effect-size: {len(effects)} branches, beta* = {post.beta_star:.4f}, "
        f"OR* = {post.odds_ratio:.4f}"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cladescan",
        description="Genealogy-based Bayesian association scan with allelic "
        "heterogeneity detection",
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="model-averaged Bayes factor scan over a region")
    _add_common_inputs(p)
    _add_model_flags(p)
    p.add_argument("--out", required=True, help="output prefix (.tsv + .json)")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("build-trees", help="build and store marginal trees for a grid")
    _add_common_inputs(p, with_study=False)
    p.add_argument("--grid-start", type=int, required=True)
    p.add_argument("--grid-end", type=int, required=True)
    p.add_argument("--grid-spacing", type=int, default=5000)
    p.add_argument("--window-sites", type=int, default=200)
    p.add_argument("--out", required=True, help="tree store path")
    p.set_defaults(func=cmd_build_trees)

    p = sub.add_parser("region-report", help="scan a region and emit JSON + SVG report")
    _add_common_inputs(p)
    _add_model_flags(p)
    p.add_argument("--out", required=True, help="output prefix (.json + .svg)")
    p.set_defaults(func=cmd_region_report)

    p = sub.add_parser("simulate", help="simulate case-control datasets from the panel")
    _add_common_inputs(p, with_study=False)
    p.add_argument("--model", choices=["A", "B", "null"], required=True)
    p.add_argument("--rra", type=float, default=2.0, help="RR at the first causal SNP")
    p.add_argument("--rrb", type=float, default=1.3, help="RR at the second causal SNP")
    p.add_argument("--baseline", type=float, default=0.05)
    p.add_argument("--cases", type=int, default=2000)
    p.add_argument("--controls", type=int, default=2000)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--pair-index", type=int, default=0, help="which eligible causal pair")
    p.add_argument("--typed-sites", help="comma-separated panel site indices")
    p.add_argument("--typed-maf-min", type=float, default=0.05)
    p.add_argument("--typed-stride", type=int, default=1)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "export-branch-genotypes",
        help="per-branch 0/1/2-copy probabilities at one position",
    )
    _add_common_inputs(p)
    p.add_argument("--position", type=int, required=True)
    p.add_argument("--window-sites", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_branch_genotypes)

    p = sub.add_parser("effect-size", help="per-branch logistic fits and mixture estimate")
    _add_common_inputs(p)
    p.add_argument("--position", type=int, required=True)
    p.add_argument("--window-sites", type=int, default=200)
    p.add_argument("--prior-a", type=float, default=20.0)
    p.add_argument("--prior-c", type=float, default=30.0)
    p.add_argument("--effect-prior-sd", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_effect_size)

    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _apply_config(argv)
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
