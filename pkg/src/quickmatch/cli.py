"""Command-line front end: synthetic data generation, centralized and
distributed matching, evaluation, and comparison sweeps.

Every flag default can be overridden by an environment variable prefixed
``QM_`` (e.g. ``QM_RHO=1.3``); explicit flags always win. Exit codes: 0 on
success, 1 on invalid input, 2 on an internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from .centralized import MatchParams, quickmatch
from .core import (
    FeatureId,
    InputError,
    ProtocolError,
    canonical_cluster_bytes,
    canonical_json,
    load_clustering,
    load_features,
    save_clustering,
    save_features,
    sha256_hex,
)
from .distributed import CONTESTED_SIGMA_MODES, DEFAULT_CONTESTED_SIGMA, distributed_quickmatch
from .kernels import Kernel
from .metrics import compare_clusterings, split_quality
from .partition import Partition
from .synthetic import SynthConfig, generate_synthetic

__all__ = ["main", "build_parser"]

_KERNELS = [k.value for k in Kernel]


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad usage as an input error (exit 1, not 2)."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise InputError(message)


def _env(name: str, default: Any) -> Any:
    return os.environ.get(f"QM_{name}", default)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quickmatch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic feature file plus ground truth")
    gen.add_argument("--clusters", type=int, default=int(_env("CLUSTERS", 25)))
    gen.add_argument("--per-cluster", type=int, default=int(_env("PER_CLUSTER", 10)))
    gen.add_argument("--dim", type=int, default=int(_env("DIM", 2)))
    gen.add_argument("--spread", type=float, default=float(_env("SPREAD", 0.25)))
    gen.add_argument("--extent", type=float, default=float(_env("EXTENT", 10.0)))
    gen.add_argument("--seed", type=int, default=int(_env("SEED", 0)))
    gen.add_argument("--out", default=_env("OUT", "features.txt"))

    match = sub.add_parser("match", help="run centralized matching on a feature file")
    match.add_argument("input")
    match.add_argument("--rho", type=float, default=float(_env("RHO", 1.1)))
    match.add_argument("--kernel", choices=_KERNELS, default=_env("KERNEL", Kernel.GAUSSIAN.value))
    match.add_argument("--out", default=_env("OUT", "clusters.json"))

    dmatch = sub.add_parser("dmatch", help="run distributed matching on a feature file")
    dmatch.add_argument("input")
    dmatch.add_argument("--agents", "-m", type=int, default=int(_env("AGENTS", 4)))
    dmatch.add_argument("--rho", type=float, default=float(_env("RHO", 1.1)))
    dmatch.add_argument("--kernel", choices=_KERNELS, default=_env("KERNEL", Kernel.QUADRATIC.value))
    dmatch.add_argument("--seed", type=int, default=int(_env("SEED", 0)))
    dmatch.add_argument("--seeding", choices=["kmeans", "random"], default=_env("SEEDING", "kmeans"))
    dmatch.add_argument(
        "--contested-sigma",
        choices=list(CONTESTED_SIGMA_MODES),
        default=_env("CONTESTED_SIGMA", DEFAULT_CONTESTED_SIGMA),
    )
    dmatch.add_argument("--workers", type=int, default=int(_env("WORKERS", 1)))
    dmatch.add_argument("--out", default=_env("OUT", "clusters.json"))

    ev = sub.add_parser("eval", help="compare clusterings or measure partition splits")
    ev.add_argument("pred", help="clustering JSON to evaluate")
    ev.add_argument("--mode", choices=["compare", "split"], required=True)
    ev.add_argument("--truth", help="reference clustering JSON (mode=compare)")
    ev.add_argument("--partition", help="partition JSON (mode=split)")
    ev.add_argument("--contested-from", help="dmatch report JSON supplying the detected contested set")
    ev.add_argument("--out", default=_env("OUT", None))

    comp = sub.add_parser("compare", help="sweep agent counts and emit a Table-style CSV")
    comp.add_argument("input")
    comp.add_argument("--agents", default=_env("AGENTS", "1,2,4,8"), help="comma separated agent counts")
    comp.add_argument("--rho", type=float, default=float(_env("RHO", 1.1)))
    comp.add_argument("--kernel", choices=_KERNELS, default=_env("KERNEL", Kernel.QUADRATIC.value))
    comp.add_argument("--seed", type=int, default=int(_env("SEED", 0)))
    comp.add_argument("--seeding", choices=["kmeans", "random"], default=_env("SEEDING", "kmeans"))
    comp.add_argument(
        "--contested-sigma",
        choices=list(CONTESTED_SIGMA_MODES),
        default=_env("CONTESTED_SIGMA", DEFAULT_CONTESTED_SIGMA),
    )
    comp.add_argument("--workers", type=int, default=int(_env("WORKERS", 1)))
    comp.add_argument("--out", default=_env("OUT", "sweep.csv"))
    return parser


def _strip_timings(obj: Any) -> Any:
    """Drop timing fields (keys ending in `_s`) for the determinism hash."""
    if isinstance(obj, dict):
        return {k: _strip_timings(v) for k, v in obj.items() if not k.endswith("_s")}
    if isinstance(obj, list):
        return [_strip_timings(v) for v in obj]
    return obj


def _finish_report(report: dict, path: Path) -> dict:
    report["determinism_hash"] = sha256_hex(canonical_json(_strip_timings(report)).encode())
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


def _cmd_generate(args: argparse.Namespace) -> int:
    cfg = SynthConfig(args.clusters, args.per_cluster, args.dim, args.spread, args.seed, args.extent)
    fs, truth = generate_synthetic(cfg)
    out = Path(args.out)
    save_features(fs, out)
    truth_path = out.with_suffix(out.suffix + ".truth.json") if out.suffix != ".txt" else out.with_suffix(".truth.json")
    save_clustering(truth, truth_path, fs)
    print(f"wrote {len(fs)} features ({fs.image_count} images, dim {fs.dim}) to {out}")
    print(f"wrote {len(truth)} ground-truth clusters to {truth_path}")
    return 0


def _cmd_match(args: argparse.Namespace) -> int:
    fs = load_features(args.input)
    params = MatchParams(rho=args.rho, kernel=Kernel(args.kernel))
    t0 = time.perf_counter()
    clustering = quickmatch(fs, params)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    save_clustering(clustering, out, fs)
    report = {
        "command": "match",
        "config": {
            "input": str(args.input),
            "rho": params.rho,
            "kernel": params.kernel.value,
            "out": str(out),
        },
        "feature_count": len(fs),
        "image_count": fs.image_count,
        "dim": fs.dim,
        "clusters_found": len(clustering),
        "clusters_digest": sha256_hex(canonical_cluster_bytes(clustering)),
        "timings_s": {"match_s": elapsed},
    }
    report_path = out.with_suffix(out.suffix + ".report.json")
    _finish_report(report, report_path)
    print(f"matched {len(fs)} features into {len(clustering)} clusters -> {out}")
    print(f"report -> {report_path}")
    return 0


def _cmd_dmatch(args: argparse.Namespace) -> int:
    fs = load_features(args.input)
    if args.agents < 1:
        raise InputError(f"agent count must be >= 1, got {args.agents}")
    params = MatchParams(rho=args.rho, kernel=Kernel(args.kernel))
    run = distributed_quickmatch(
        fs,
        args.agents,
        params,
        seed=args.seed,
        seeding=args.seeding,
        contested_sigma=args.contested_sigma,
        workers=args.workers,
    )
    out = Path(args.out)
    save_clustering(run.clustering, out, fs)
    ledger_path = out.with_suffix(out.suffix + ".ledger.json")
    ledger_path.write_text(run.ledger.to_json() + "\n")
    partition_path = out.with_suffix(out.suffix + ".partition.json")
    run.partition.save(partition_path)

    total_local = sum(s["local_clusters"] for s in run.per_agent_stats)
    total_contested_clusters = sum(s["contested_clusters"] for s in run.per_agent_stats)
    report = {
        "command": "dmatch",
        "config": {
            "input": str(args.input),
            "agents": args.agents,
            "rho": params.rho,
            "kernel": params.kernel.value,
            "seed": args.seed,
            "seeding": args.seeding,
            "contested_sigma": args.contested_sigma,
            "workers": args.workers,
            "out": str(out),
        },
        "feature_count": len(fs),
        "image_count": fs.image_count,
        "dim": fs.dim,
        "clusters_found": len(run.clustering),
        "clusters_digest": sha256_hex(canonical_cluster_bytes(run.clustering)),
        "per_agent": list(run.per_agent_stats),
        "contested_features": len(run.contested_ids),
        "contested_ids": [[int(i), int(k)] for i, k in run.contested_ids],
        "percent_contested_clusters_detected": 100.0 * total_contested_clusters / total_local if total_local else 0.0,
        "percent_contested_features_found": None,  # needs a reference run; see `compare`
        "ledger": {
            "route": run.ledger.route_count,
            "scalar": run.ledger.scalar_count,
            "cluster": run.ledger.cluster_count,
            "cross_agent": run.ledger.cross_agent_count(),
            "digest": run.ledger.digest(),
            "transfer_chains": [
                {"cluster_head": [int(members[0][0]), int(members[0][1])], "size": len(members), "chain": chain}
                for members, chain in run.ledger.transfer_chains()
            ],
        },
        "timings_s": dict(run.timings),
    }
    if args.agents == 1:
        reference = quickmatch(fs, params)
        report["m1_equivalent_to_centralized"] = (
            canonical_cluster_bytes(reference) == canonical_cluster_bytes(run.clustering)
        )
    report_path = out.with_suffix(out.suffix + ".report.json")
    _finish_report(report, report_path)
    print(
        f"distributed matched {len(fs)} features into {len(run.clustering)} clusters "
        f"({args.agents} agents, {run.ledger.cluster_count} cluster transfers) -> {out}"
    )
    print(f"report -> {report_path}; ledger -> {ledger_path}; partition -> {partition_path}")
    return 0


def _load_contested(path: str) -> list[FeatureId]:
    payload = json.loads(Path(path).read_text())
    ids = payload.get("contested_ids") if isinstance(payload, dict) else payload
    if ids is None:
        raise InputError(f"{path}: no contested_ids field")
    return [FeatureId(int(i), int(k)) for i, k in ids]


def _cmd_eval(args: argparse.Namespace) -> int:
    pred = load_clustering(args.pred)
    if args.mode == "compare":
        if not args.truth:
            raise InputError("--mode compare requires --truth")
        result = compare_clusterings(pred, load_clustering(args.truth)).to_dict()
    else:
        if not args.partition:
            raise InputError("--mode split requires --partition")
        part = Partition.load(args.partition)
        contested = _load_contested(args.contested_from) if args.contested_from else None
        result = split_quality(pred, part, contested).to_dict()
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"report -> {args.out}")
    else:
        print(text)
    return 0


_SWEEP_COLUMNS = [
    "Number of Agents",
    "Compute Time Per Agent (s)",
    "QP Time Per Agent (s)",
    "Post-QP Compute Time Per Agent (s)",
    "Percent Contested Clusters",
    "Number of Clusters Found",
    "% Contested Features Found",
    "Pairwise F1 vs Centralized",
]


def _cmd_compare(args: argparse.Namespace) -> int:
    fs = load_features(args.input)
    try:
        m_list = [int(tok) for tok in str(args.agents).replace(" ", "").split(",") if tok]
    except ValueError:
        raise InputError(f"bad agent list {args.agents!r}") from None
    if not m_list or any(m < 1 for m in m_list):
        raise InputError(f"agent counts must be positive, got {args.agents!r}")
    params = MatchParams(rho=args.rho, kernel=Kernel(args.kernel))
    reference = quickmatch(fs, params)

    out = Path(args.out)
    rows = []
    for m in m_list:
        run = distributed_quickmatch(
            fs, m, params,
            seed=args.seed, seeding=args.seeding,
            contested_sigma=args.contested_sigma, workers=args.workers,
        )
        report = split_quality(reference, run.partition, run.contested_ids)
        comparison = compare_clusterings(run.clustering, reference)
        mean = lambda key: sum(s[key] for s in run.per_agent_stats) / m  # noqa: E731
        rows.append(
            {
                "Number of Agents": m,
                "Compute Time Per Agent (s)": round(mean("post_qp_compute_time_s") + mean("qp_time_s"), 6),
                "QP Time Per Agent (s)": round(mean("qp_time_s"), 6) if m > 1 else "NA",
                "Post-QP Compute Time Per Agent (s)": round(mean("post_qp_compute_time_s"), 6),
                "Percent Contested Clusters": round(100.0 * report.p_contested, 4),
                "Number of Clusters Found": len(run.clustering),
                "% Contested Features Found": (
                    round(100.0 * report.contested_recall, 4) if report.contested_recall is not None else "NA"
                ),
                "Pairwise F1 vs Centralized": round(comparison.pairwise_f1, 6),
            }
        )
        _write_plot_data(out, m, fs, run)

    with out.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_SWEEP_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    print(f"sweep over agents {m_list} -> {out}")
    return 0


def _write_plot_data(out: Path, m: int, fs, run) -> None:
    """Scatter-plot data: coordinates with final cluster and agent labels."""
    path = out.with_suffix(f".m{m}.points.csv")
    labels = run.clustering.labels()
    agent_of = run.partition.label_map()
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "feature", "x0", "x1", "cluster", "agent"])
        for fid, vec in zip(fs.ids, fs.vectors):
            x0 = float(vec[0])
            x1 = float(vec[1]) if fs.dim > 1 else 0.0
            writer.writerow([fid.image, fid.index, repr(x0), repr(x1), labels[fid], agent_of[fid]])


_COMMANDS = {
    "generate": _cmd_generate,
    "match": _cmd_match,
    "dmatch": _cmd_dmatch,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ProtocolError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except BrokenPipeError:
        return 0


if __name__ == "__main__":
    sys.exit(main())
