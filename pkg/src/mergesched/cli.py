"""Experiment commands: bench, fit, search, sweep, train, report.

Each command reads an optional JSON config document; flags override document
fields.  Every output embeds the resolved config and the artifact version,
and every stochastic command demands an explicit --seed, so runs are
reproducible byte for byte.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path


from . import __version__, fixtures
from .compressors import CompressorSpec
from .costmodel import CostParams, FitResult, TimingSample, fit, microbench, scale_comm_params
from .profiles import ModelProfile, Partition, load_profile_file
from .scheduler import (
    SearchConfig,
    analytic_evaluator,
    exhaustive_search,
    heuristic_search,
    naive_partition,
)
from .simulator import SimConfig, simulate_iteration
from .trainer import TrainConfig, Trainer

SWEEP_COLUMNS = ["model", "algo", "n", "scheme", "y", "partition", "T_ms", "overlap_ms", "scaling_factor"]

DEFAULT_BENCH_SIZES = [2 ** e for e in range(6, 23)]


class UsageError(Exception):
    pass


def _provenance(config: dict) -> dict:
    return {"artifact": {"name": "mergesched", "version": __version__}, "config": config}


def _write_json(path, config: dict, body: dict) -> None:
    doc = _provenance(config)
    doc.update(body)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def _write_csv(path, config: dict, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# " + json.dumps(_provenance(config)) + "\n")
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _read_csv(path) -> tuple[dict, list[str], list[dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        meta = {}
        if first.startswith("#"):
            meta = json.loads(first[1:].strip())
            body = fh.read()
        else:
            body = first + fh.read()
    reader = csv.DictReader(io.StringIO(body))
    return meta, list(reader.fieldnames or []), list(reader)


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ValueError("config document must be a JSON object")
    return doc


def _resolve_profile(ref: str) -> ModelProfile:
    if ref in fixtures.FIXTURE_PROFILES:
        return fixtures.load_fixture_profile(ref)
    return load_profile_file(ref)


def _resolve_costs(ref: str) -> CostParams:
    if ref == "paper_calibration":
        return fixtures.load_calibration()
    with open(ref, "r", encoding="utf-8") as fh:
        return CostParams.from_dict(json.load(fh))


def _spec_from(doc) -> CompressorSpec:
    if isinstance(doc, str):
        return CompressorSpec(algorithm=doc)
    return CompressorSpec.from_dict(doc)


def _collective_for(algorithm: str) -> str:
    # dense formats reduce in place; everything else exchanges whole payloads
    return "allreduce" if algorithm in ("identity", "fp16") else "allgather"


# --- bench -------------------------------------------------------------------

def cmd_bench(args) -> int:
    config = _load_config(args.config)
    spec_doc = json.loads(args.spec) if args.spec else config.get("spec")
    if spec_doc is None:
        raise UsageError("bench needs --spec (or a config with a 'spec' field)")
    spec = _spec_from(spec_doc)
    seed = args.seed if args.seed is not None else config.get("seed")
    if spec.is_stochastic and seed is None:
        raise UsageError(f"--seed is required: {spec.algorithm} is a stochastic codec")
    sizes = args.sizes or config.get("sizes") or DEFAULT_BENCH_SIZES
    reps = args.reps if args.reps is not None else config.get("repetitions", 20)
    samples = microbench(spec, sizes, reps, seed=seed or 0)
    resolved = {
        "command": "bench",
        "spec": spec.to_dict(),
        "sizes": [int(s) for s in sizes],
        "repetitions": reps,
        "seed": seed,
    }
    _write_json(
        args.out,
        resolved,
        {"samples": [{"size": s.size, "time_ms": s.time, "kind": s.kind} for s in samples]},
    )
    print(f"bench: {len(samples)} samples -> {args.out}")
    return 0


# --- fit ---------------------------------------------------------------------

def _samples_from_doc(doc: dict) -> list[TimingSample]:
    if "samples" not in doc:
        raise ValueError("samples document missing 'samples'")
    return [
        TimingSample(size=int(s["size"]), time=float(s["time_ms"]), kind=s["kind"])
        for s in doc["samples"]
    ]


def cmd_fit(args) -> int:
    with open(args.samples, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    samples = _samples_from_doc(doc)
    by_kind = {"compression": [], "communication": []}
    for s in samples:
        by_kind[s.kind].append(s)
    fits: dict[str, FitResult] = {}
    for kind, group in by_kind.items():
        if group:
            fits[kind] = fit(group)
    if not fits:
        raise ValueError("no samples to fit")
    comp = fits.get("compression", FitResult(0.0, 0.0, 0.0, False))
    comm = fits.get("communication", FitResult(0.0, 0.0, 0.0, False))
    params = CostParams(B_h=comp.B, gamma_h=comp.gamma, B_g=comm.B, gamma_g=comm.gamma, A=args.A)
    resolved = {"command": "fit", "samples": args.samples, "A_ms": args.A}
    body = params.to_dict()
    body["fit_diagnostics"] = {
        kind: {"residual_norm": f.residual_norm, "intercept_clamped": f.intercept_clamped}
        for kind, f in fits.items()
    }
    _write_json(args.out, resolved, body)
    print(f"fit: {', '.join(fits)} -> {args.out}")
    return 0


# --- search ------------------------------------------------------------------

def cmd_search(args) -> int:
    config = _load_config(args.config)
    profile_ref = args.profile or config.get("profile")
    costs_ref = args.costs or config.get("costs")
    if not profile_ref or not costs_ref:
        raise UsageError("search needs --profile and --costs")
    profile = _resolve_profile(profile_ref)
    costs = _resolve_costs(costs_ref)
    spec = _spec_from(json.loads(args.spec) if args.spec else config.get("spec", "identity"))
    n_workers = args.workers if args.workers is not None else config.get("n_workers", 2)
    g_on_payload = False if args.g_on_group else config.get("g_on_payload", True)
    y_cap = args.Y if args.Y is not None else config.get("Y", 2)
    alpha = args.alpha if args.alpha is not None else config.get("alpha", 0.02)
    mode = args.mode or config.get("mode", "heuristic")

    costs = scale_comm_params(costs, n_workers, _collective_for(spec.algorithm))
    sim = SimConfig(profile, Partition.merged(profile.n_tensors), spec, costs, n_workers, g_on_payload)
    evaluate = analytic_evaluator(sim)

    resolved = {
        "command": "search",
        "profile": profile_ref,
        "costs": costs_ref,
        "spec": spec.to_dict(),
        "n_workers": n_workers,
        "g_on_payload": g_on_payload,
        "Y": y_cap,
        "alpha": alpha,
        "mode": mode,
    }
    body: dict = {}
    if mode in ("heuristic", "both"):
        result = heuristic_search(SearchConfig(Y=y_cap, alpha=alpha, evaluator=evaluate), profile)
        body["heuristic"] = result.to_dict()
    if mode in ("exhaustive", "both"):
        result = exhaustive_search(evaluate, profile, y_max=y_cap)
        body["exhaustive"] = result.to_dict()
    if mode == "both":
        body["agreement"] = {
            "F_equal": body["heuristic"]["F_ms"] == body["exhaustive"]["F_ms"],
            "F_heuristic_ms": body["heuristic"]["F_ms"],
            "F_exhaustive_ms": body["exhaustive"]["F_ms"],
        }
    if mode not in ("heuristic", "exhaustive", "both"):
        raise UsageError(f"unknown search mode {mode!r}")
    _write_json(args.out, resolved, body)
    summary = {k: v["F_ms"] for k, v in body.items() if isinstance(v, dict) and "F_ms" in v}
    print(f"search: {summary} -> {args.out}")
    return 0


# --- sweep ---------------------------------------------------------------------

def _parse_entry_token(token: str) -> dict:
    """Translate tokens like fp32, dgc_lite_layerwise, qsgd_merged into entries."""
    if token in ("fp32", "identity"):
        return {"algo": "identity", "scheme": "layerwise", "label": "fp32"}
    for suffix in ("layerwise", "merged", "single"):
        tail = "_" + suffix
        if token.endswith(tail):
            return {"algo": token[: -len(tail)], "scheme": suffix}
    if "_naive" in token:
        algo, _, y = token.rpartition("_naive")
        return {"algo": algo, "scheme": f"naive:{y}"}
    raise ValueError(
        f"cannot parse sweep token {token!r}; use <algo>_<layerwise|merged|single|naiveK> or fp32"
    )


def _entry_partition(scheme: str, profile, spec, costs, n_workers, g_on_payload, y_cap, alpha):
    n = profile.n_tensors
    if scheme == "layerwise":
        return Partition.layer_wise(n)
    if scheme == "single":
        return Partition.merged(n)
    if scheme == "merged":
        sim = SimConfig(profile, Partition.merged(n), spec, costs, n_workers, g_on_payload)
        result = heuristic_search(
            SearchConfig(Y=y_cap, alpha=alpha, evaluator=analytic_evaluator(sim)), profile
        )
        return result.partition
    if scheme.startswith("naive:"):
        return naive_partition(profile, int(scheme.split(":", 1)[1]))
    raise ValueError(f"unknown scheme {scheme!r}")


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    profile_ref = args.profile or config.get("profile")
    costs_ref = args.costs or config.get("costs")
    if not profile_ref or not costs_ref:
        raise UsageError("sweep needs --profile and --costs")
    profile = _resolve_profile(profile_ref)
    base_costs = _resolve_costs(costs_ref)
    workers = args.workers or config.get("workers", [2, 4, 8])
    batch = args.batch if args.batch is not None else config.get("batch", 64)
    y_cap = config.get("Y", 2)
    alpha = config.get("alpha", 0.02)
    g_on_payload = config.get("g_on_payload", True)

    entries = config.get("entries", [])
    if args.algos:
        entries = [_parse_entry_token(t) for t in args.algos]
    if not entries:
        raise UsageError("sweep needs --algos tokens or config 'entries'")

    rows = []
    for entry in entries:
        spec = _spec_from(entry.get("spec", entry["algo"]))
        scheme = entry["scheme"]
        label = entry.get("label", spec.algorithm)
        collective = _collective_for(spec.algorithm)
        for n in workers:
            costs = scale_comm_params(base_costs, n, collective)
            if spec.algorithm == "identity":
                # dense baseline: no codec work at all
                costs = CostParams(0.0, 0.0, costs.B_g, costs.gamma_g, costs.A)
            partition = _entry_partition(
                scheme, profile, spec, costs, n, g_on_payload, y_cap, alpha
            )
            report = simulate_iteration(
                SimConfig(profile, partition, spec, costs, n, g_on_payload)
            )
            t1_speed = batch / (base_costs.A / 1e3)
            tn_speed = n * batch / (report.iteration_ms / 1e3)
            rows.append(
                {
                    "model": profile.name,
                    "algo": label,
                    "n": n,
                    "scheme": scheme,
                    "y": partition.y,
                    "partition": "|".join(str(b) for b in partition.boundaries) or "-",
                    "T_ms": f"{report.iteration_ms:.6f}",
                    "overlap_ms": f"{report.overlap_ms:.6f}",
                    "scaling_factor": f"{tn_speed / (n * t1_speed):.6f}",
                }
            )
    resolved = {
        "command": "sweep",
        "profile": profile_ref,
        "costs": costs_ref,
        "workers": list(workers),
        "batch": batch,
        "entries": entries,
        "Y": y_cap,
        "alpha": alpha,
        "g_on_payload": g_on_payload,
    }
    _write_csv(args.out, resolved, SWEEP_COLUMNS, rows)
    print(f"sweep: {len(rows)} rows -> {args.out}")
    return 0


# --- train ---------------------------------------------------------------------

def _partition_from_doc(doc) -> "Partition | str":
    if isinstance(doc, str):
        return doc
    if isinstance(doc, dict):
        return Partition(doc["n_tensors"], tuple(doc["boundaries"]))
    raise ValueError(f"cannot parse partition {doc!r}")


def _train_config(doc: dict, overrides: dict) -> TrainConfig:
    merged = dict(doc)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    if "seed" not in merged:
        raise UsageError("train config must carry a seed")
    return TrainConfig(
        task=merged["task"],
        n_workers=merged.get("n_workers", 1),
        batch_size=merged.get("batch_size", 64),
        lr=merged["lr"],
        iterations=merged["iterations"],
        spec=_spec_from(merged.get("spec", "identity")),
        partition=_partition_from_doc(merged.get("partition", "merged_all")),
        seed=merged["seed"],
        shared_data=merged.get("shared_data", True),
    )


def cmd_train(args) -> int:
    config = _load_config(args.config)
    if not config:
        raise UsageError("train needs --config")
    runs = config.get("runs")
    overrides = {"seed": args.seed}
    out_prefix = Path(args.out)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)

    summaries = []
    run_docs = [dict(config, **run) for run in runs] if runs else [config]
    for i, run_doc in enumerate(run_docs):
        run_doc.pop("runs", None)
        cfg = _train_config(run_doc, overrides)
        trainer = Trainer(cfg)
        report = trainer.train()
        label = run_doc.get("label", f"run{i}")
        csv_path = out_prefix.parent / f"{out_prefix.name}_{label}.csv"
        rows = [
            {"iteration": t + 1, "loss": f"{loss:.10g}", "time_ms": f"{ms:.4f}"}
            for t, (loss, ms) in enumerate(zip(report.loss_curve, report.iteration_times_ms))
        ]
        resolved = {"command": "train", "label": label, "run": _jsonable(run_doc)}
        _write_csv(csv_path, resolved, ["iteration", "loss", "time_ms"], rows)
        summaries.append(
            {
                "label": label,
                "algorithm": cfg.spec.algorithm,
                "final_loss": report.loss_curve[-1],
                "final_metric": report.final_metric,
                "metric_name": report.metric_name,
                "wall_ms": report.wall_ms,
                "curve_csv": str(csv_path),
            }
        )
    _write_json(
        out_prefix.parent / f"{out_prefix.name}_summary.json",
        {"command": "train", "config": _jsonable(config)},
        {"runs": summaries},
    )
    print(f"train: {len(summaries)} run(s) -> {out_prefix}_summary.json")
    return 0


def _jsonable(doc):
    if isinstance(doc, dict):
        return {k: _jsonable(v) for k, v in doc.items()}
    if isinstance(doc, (list, tuple)):
        return [_jsonable(v) for v in doc]
    if isinstance(doc, (str, int, float, bool)) or doc is None:
        return doc
    if hasattr(doc, "to_dict"):
        return doc.to_dict()
    if hasattr(doc, "to_document"):
        return doc.to_document()
    return str(doc)


# --- report --------------------------------------------------------------------

def cmd_report(args) -> int:
    columns = None
    all_rows = []
    sources = []
    for path in args.inputs:
        meta, cols, rows = _read_csv(path)
        if columns is None:
            columns = cols
        elif cols != columns:
            raise ValueError(
                f"mixed input schemas: {path} has columns {cols}, expected {columns}"
            )
        all_rows.extend(rows)
        sources.append(str(path))
    if not all_rows:
        raise ValueError("no rows in inputs")

    best: dict[tuple, dict] = {}
    for row in all_rows:
        key = (row["model"], row["algo"])
        group = best.setdefault(key, {})
        group.setdefault(row["scheme"], []).append(float(row["scaling_factor"]))
    summary = []
    for (model, algo), schemes in sorted(best.items()):
        means = {scheme: sum(v) / len(v) for scheme, v in schemes.items()}
        top = max(means, key=means.get)
        summary.append(
            {
                "model": model,
                "algo": algo,
                "best_scheme": top,
                "mean_scaling_factor": means[top],
                "schemes": means,
            }
        )

    resolved = {"command": "report", "inputs": sources}
    _write_json(args.out, resolved, {"summary": summary})

    long_out = args.long_out or str(Path(args.out).with_suffix("")) + "_long.csv"
    id_cols = ["model", "algo", "n", "scheme", "y", "partition"]
    long_rows = []
    for row in all_rows:
        for metric in [c for c in columns if c not in id_cols]:
            long_rows.append({**{c: row[c] for c in id_cols}, "metric": metric, "value": row[metric]})
    _write_csv(long_out, resolved, id_cols + ["metric", "value"], long_rows)
    print(f"report: {len(summary)} groups -> {args.out}, long CSV -> {long_out}")
    return 0


# --- entry point -----------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mergesched",
        description="Compression-scheduling experiments: cost fitting, partition search, sweeps, training.",
    )
    parser.add_argument("--version", action="version", version=f"mergesched {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="microbenchmark a codec over buffer sizes")
    p.add_argument("--config")
    p.add_argument("--spec", help='codec spec JSON, e.g. {"algorithm": "topk"}')
    p.add_argument("--sizes", type=_int_list, help="comma-separated element counts")
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fit", help="fit affine cost params from timing samples")
    p.add_argument("--samples", required=True)
    p.add_argument("--A", type=float, default=0.0, help="iteration compute time to carry (ms)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("search", help="search for the best partition")
    p.add_argument("--config")
    p.add_argument("--profile")
    p.add_argument("--costs")
    p.add_argument("--spec")
    p.add_argument("--workers", type=int)
    p.add_argument("--Y", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--mode", choices=["heuristic", "exhaustive", "both"])
    p.add_argument("--g-on-group", action="store_true", help="evaluate g on raw group size, not payload")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("sweep", help="simulate algo x workers x scheme grid")
    p.add_argument("--config")
    p.add_argument("--profile")
    p.add_argument("--costs")
    p.add_argument("--algos", type=lambda s: s.split(","), help="tokens like fp32,dgc_lite_merged")
    p.add_argument("--workers", type=_int_list)
    p.add_argument("--batch", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="run desk-scale data-parallel training")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output prefix for CSV/summary files")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="merge sweep CSVs into a summary")
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--long-out")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
