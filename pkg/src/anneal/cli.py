"""Command line entry points.

Everything here is a thin argparse shell over the library. All commands are
deterministic for a fixed ``--seed``. Relative ``--data`` paths resolve
against ``$ANNEAL_DATA_ROOT`` when that variable is set.

    anneal init     build a synthetic labeled corpus (manifest + features)
    anneal run      one annotation loop with a simulated annotator
    anneal sweep    threshold-spread sweep over lambda values
    anneal ablate   diversity / transitivity on-off grid
    anneal compare  strategy benchmark under equal bit budgets
    anneal eval     retrieval quality of a saved model checkpoint
    anneal serve    the HTTP annotation service
    anneal export   dump a service run (snapshot + metrics) to one JSON file
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .core import DatasetError, assign_splits, load_manifest, make_synthetic, save_manifest
from .evaluation import map_at_k
from .loop import (
    EXPERIMENT_STRATEGIES,
    ExperimentConfig,
    LoopConfig,
    aggregate_histories,
    curve_area,
    run_experiment,
    run_loop,
    write_results_jsonl,
    write_summary_json,
)
from .metric import ConfigError, TrainConfig, load_checkpoint, save_checkpoint

DATA_ROOT_VAR = "ANNEAL_DATA_ROOT"


def _data_path(raw: str) -> Path:
    path = Path(raw)
    root = os.environ.get(DATA_ROOT_VAR)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--margin", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")


def _add_loop_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset manifest JSON")
    p.add_argument("--h", type=int, default=50, help="pairs labeled per round")
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--lam", type=float, default=3.0)
    p.add_argument("--init-fraction", type=float, default=0.05)
    p.add_argument("--map-k", type=int, default=5)
    p.add_argument("--no-diversity", action="store_true")
    p.add_argument("--no-transitivity", action="store_true")
    p.add_argument("--head-dims", type=int, nargs=2, default=(512, 256))
    p.add_argument("--classifier-dims", type=int, nargs=2, default=(256, 64))
    p.add_argument("--seed", type=int, default=0)
    _add_train_args(p)


def _train_config(args, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        margin=args.margin,
        gamma=args.gamma,
        optimizer=args.optimizer,
        seed=seed,
    )


def _loop_config(args, strategy: str | None = None) -> LoopConfig:
    return LoopConfig(
        strategy=strategy or args.strategy,
        h=args.h,
        iterations=args.iterations,
        lam=args.lam,
        use_diversity=not args.no_diversity,
        use_transitivity=not args.no_transitivity,
        init_fraction=args.init_fraction,
        map_k=args.map_k,
        seed=args.seed,
        head_dims=tuple(args.head_dims),
        classifier_dims=tuple(args.classifier_dims),
        train=_train_config(args, args.seed),
    )


def _print_history(tag: str, history) -> None:
    for rec in history:
        thr = "-" if rec.threshold is None else f"{rec.threshold:.4f}"
        print(
            f"[{tag}] iter={rec.iteration} bits={rec.bits_spent:.1f} "
            f"pairs={rec.n_pairs} transitive={rec.n_transitive} "
            f"map@k={rec.map_value:.4f} threshold={thr}"
        )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_init(args) -> int:
    out = _data_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = make_synthetic(
        num_classes=args.classes,
        per_class=args.per_class,
        dim=args.dim,
        spread=args.spread,
        seed=args.seed,
        mixed_fraction=args.mixed_fraction,
        dup_groups=args.dup_groups,
    )
    ds = assign_splits(ds, tuple(args.splits), seed=args.seed)
    save_manifest(ds, out / "manifest.json")
    counts = {s: len(ds.split_indices(s)) for s in ("train", "val", "test")}
    print(
        f"wrote {out / 'manifest.json'}: {ds.n} items, {ds.num_classes} classes, "
        f"d0={ds.d0}, splits={counts}"
    )
    return 0


def cmd_run(args) -> int:
    dataset = load_manifest(_data_path(args.data))
    config = _loop_config(args)
    state = run_loop(dataset, config)
    tag = f"{config.strategy} seed={config.seed}"
    _print_history(tag, state.history)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps(asdict(r), sort_keys=True) for r in state.history]
        (out / "history.jsonl").write_text("\n".join(lines) + "\n")
        from .loop import state_to_doc

        (out / "state.json").write_text(
            json.dumps(state_to_doc(state), sort_keys=True) + "\n"
        )
        save_checkpoint(state.model, out / "model.json")
        print(f"wrote {out}/history.jsonl, state.json, model.json")
    return 0


def cmd_sweep(args) -> int:
    dataset = load_manifest(_data_path(args.data))
    rows = []
    for lam in args.lam:
        histories = []
        for seed in args.seeds:
            cfg = replace(_loop_config(args), lam=lam, seed=seed,
                          train=_train_config(args, seed))
            histories.append(run_loop(dataset, cfg).history)
        agg = aggregate_histories(histories)
        final = agg[-1]
        areas = [
            curve_area([r.bits_spent for r in h], [r.map_value for r in h])
            for h in histories if len(h) >= 2
        ]
        area_mean = sum(areas) / len(areas) if areas else None
        rows.append({"lam": lam, "area_mean": area_mean, "aggregate": agg})
        print(
            f"[sweep lam={lam:g}] final bits={final['bits_mean']:.1f} "
            f"map@k={final['map_mean']:.4f} (+/- {final['map_std']:.4f}, "
            f"n={final['n_runs']}) area={area_mean if area_mean is None else round(area_mean, 4)}"
        )
    best = max((r for r in rows if r["area_mean"] is not None),
               key=lambda r: r["area_mean"], default=None)
    doc = {"rows": rows, "best_lam": None if best is None else best["lam"]}
    if best is not None:
        print(f"[sweep] best lam by curve area: {best['lam']:g} "
              f"(area {best['area_mean']:.4f})")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
        print(f"wrote {args.out}")
    return 0


def cmd_ablate(args) -> int:
    dataset = load_manifest(_data_path(args.data))
    combos = [
        ("diversity+transitivity", False, False),
        ("diversity-only", False, True),
        ("transitivity-only", True, False),
        ("neither", True, True),
    ]
    rows = []
    for name, no_div, no_trans in combos:
        histories = []
        for seed in args.seeds:
            cfg = replace(
                _loop_config(args),
                use_diversity=not no_div,
                use_transitivity=not no_trans,
                seed=seed,
                train=_train_config(args, seed),
            )
            histories.append(run_loop(dataset, cfg).history)
        agg = aggregate_histories(histories)
        final = agg[-1]
        rows.append({"variant": name, "aggregate": agg})
        print(
            f"[ablate {name}] final map@k={final['map_mean']:.4f} "
            f"(+/- {final['map_std']:.4f})"
        )
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(rows, sort_keys=True, indent=1) + "\n")
        print(f"wrote {args.out}")
    return 0


def cmd_compare(args) -> int:
    dataset = load_manifest(_data_path(args.data))
    exp = ExperimentConfig(
        strategies=tuple(args.strategies),
        seeds=tuple(args.seeds),
        iterations=args.iterations,
        h=args.h,
        lam=args.lam,
        init_fraction=args.init_fraction,
        map_k=args.map_k,
        use_transitivity=not args.no_transitivity,
        head_dims=tuple(args.head_dims),
        classifier_dims=tuple(args.classifier_dims),
        train=_train_config(args, 0),
    )
    result = run_experiment(dataset, exp)
    for strategy in exp.strategies:
        final = result.aggregates[strategy][-1]
        print(
            f"[compare {strategy}] final bits={final['bits_mean']:.1f} "
            f"map@k={final['map_mean']:.4f} (+/- {final['map_std']:.4f}, "
            f"n={final['n_runs']})"
        )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_results_jsonl(out / "results.jsonl", result)
        write_summary_json(out / "summary.json", result)
        print(f"wrote {out}/results.jsonl and summary.json")
    return 0


def cmd_eval(args) -> int:
    dataset = load_manifest(_data_path(args.data))
    model = load_checkpoint(args.model)
    result = map_at_k(
        model,
        dataset,
        k=args.k,
        query_split=args.query_split,
        archive_split=args.archive_split,
    )
    print(
        f"map@{result.k}={result.value:.4f} over {result.n_included} queries "
        f"({result.n_excluded} excluded)"
    )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import RunStore, create_app

    store = RunStore(_data_path(args.store))
    app = create_app(store, sync_training=args.sync)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cmd_export(args) -> int:
    store_root = _data_path(args.store)
    run_dir = store_root / "runs" / args.run
    snapshot_path = run_dir / "snapshot.json"
    if not snapshot_path.exists():
        raise DatasetError(f"no snapshot for run {args.run!r} under {store_root}")
    snapshot = json.loads(snapshot_path.read_text())
    state = snapshot.get("state") or {}
    history = state.get("history", [])
    doc = {
        "run_id": args.run,
        "status": snapshot["status"],
        "history": history,
        "map_points": [
            {"bits": r["bits_spent"], "map": r["map_value"], "iteration": r["iteration"]}
            for r in history
        ],
        "bits_spent": state.get("bits_spent"),
        "config": state.get("config"),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anneal", description="pair-based annotation loops for image retrieval"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="build a synthetic labeled corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--spread", type=float, default=0.25)
    p.add_argument("--mixed-fraction", type=float, default=0.0,
                   help="fraction of scenes blending two classes")
    p.add_argument("--dup-groups", type=int, default=1,
                   help="near-duplicate shots per scene (must divide --per-class)")
    p.add_argument("--splits", type=float, nargs=3, default=(0.8, 0.1, 0.1))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("run", help="run one annotation loop")
    _add_loop_args(p)
    p.add_argument("--strategy", choices=("mgue", "bcgue", "random"), default="mgue")
    p.add_argument("--out", help="directory for history/state/model dumps")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep the threshold spread multiplier")
    _add_loop_args(p)
    p.add_argument("--strategy", choices=("mgue", "bcgue", "random"), default="mgue")
    p.add_argument("--lam-values", dest="lam", type=float, nargs="+",
                   default=(1, 2, 3, 4, 5, 6))
    p.add_argument("--seeds", type=int, nargs="+", default=(0, 1, 2))
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="diversity / transitivity on-off grid")
    _add_loop_args(p)
    p.add_argument("--strategy", choices=("mgue", "bcgue"), default="mgue")
    p.add_argument("--seeds", type=int, nargs="+", default=(0, 1, 2))
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("compare", help="benchmark strategies under equal bits")
    _add_loop_args(p)
    p.add_argument("--strategies", nargs="+", default=("mgue", "bcgue", "random", "cal"),
                   choices=EXPERIMENT_STRATEGIES)
    p.add_argument("--seeds", type=int, nargs="+", default=(0, 1, 2))
    p.add_argument("--out", help="directory for results.jsonl + summary.json")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("eval", help="mAP@k of a saved checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--query-split", default="val")
    p.add_argument("--archive-split", default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP annotation service")
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--sync", action="store_true",
                   help="train inside request handlers (tests, small data)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export", help="dump a service run to a single JSON file")
    p.add_argument("--store", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DatasetError, ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
