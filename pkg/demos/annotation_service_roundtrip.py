"""
Annotation service round trip, no browser required
==================================================

Drives the labeling HTTP API the way the web annotation screen does: create
a run, let it train and propose a batch, answer each pair (here scripted;
in the UI a human presses S / D), advance, and read the metrics series the
dashboard plots. Finishes by replaying the run's append-only event log and
checking it reconstructs the stored snapshot byte for byte.
"""

import json
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from anneal import assign_splits, make_synthetic, save_manifest
from anneal.service import RunStore, create_app, read_events, replay_run

workdir = Path(tempfile.mkdtemp(prefix="anneal-demo-"))

# a manifest on disk, as `anneal init` would produce
dataset = make_synthetic(num_classes=4, per_class=12, dim=8, spread=0.25, seed=3)
dataset = assign_splits(dataset, (0.7, 0.15, 0.15), seed=3)
manifest = workdir / "data" / "manifest.json"
manifest.parent.mkdir()
save_manifest(dataset, manifest)

store = RunStore(workdir / "runs")
app = create_app(store, sync_training=True)  # train inline so the demo is linear

with TestClient(app) as client:
    created = client.post("/runs", json={
        "manifest": str(manifest),
        "session_token": "demo-session",
        "config": {
            "strategy": "mgue",
            "h": 4,
            "iterations": 2,
            "init_fraction": 0.15,
            "init_same": 2,
            "init_diff": 2,
            "map_k": 3,
            "head_dims": [12, 6],
            "classifier_dims": [8, 4],
            "train": {"epochs": 3, "batch_size": 16, "learning_rate": 1e-3},
        },
    }).json()
    run_id = created["id"]
    print(f"created {run_id}: status={created['status']}")

    for round_index in range(2):
        advanced = client.post(f"/runs/{run_id}/advance").json()
        state = client.get(f"/runs/{run_id}/state").json()
        print(f"\nadvance -> {advanced['status']} "
              f"(iteration {state['iteration']}, bits {state['bits_spent']:.0f})")

        # one POST per pair, like the annotation screen: each decision is
        # durable on its own, and the round applies when the last one lands
        batch = client.get(f"/runs/{run_id}/batch").json()
        for pair in batch["pairs"]:
            # the scripted annotator: same synthetic class prefix = similar
            similar = pair["lo"].split("-")[0] == pair["hi"].split("-")[0]
            ack = client.post(f"/runs/{run_id}/labels", json={
                "session": "demo-session",
                "labels": [{"key": pair["key"], "label": int(similar)}],
            }).json()
            print(f"  {pair['lo']} ~ {pair['hi']}: "
                  f"{'S' if similar else 'D'} (score {pair['score']:.4f}) "
                  f"-> {ack['received']}/{ack['received'] + ack['remaining']}")
        print(f"  batch complete -> run {ack['status']}")

    final = client.post(f"/runs/{run_id}/advance").json()
    print(f"\nfinal advance -> {final['status']}")

    metrics = client.get(f"/runs/{run_id}/metrics").json()
    print("\ndashboard series (bits -> mAP, threshold):")
    for point in metrics["history"]:
        alpha = "None" if point["threshold"] is None else f"{point['threshold']:+.4f}"
        print(f"  {point['bits_spent']:5.0f}  mAP {point['map_value']:.4f}  "
              f"threshold {alpha}  (+{point['n_transitive']} transitive)")

# ---------------------------------------------------------------------------
# durability: the event log alone rebuilds the snapshot exactly
# ---------------------------------------------------------------------------
run_dir = store.run_dir(run_id)
events = read_events(run_dir)
print(f"\n{len(events)} events on disk: "
      + ", ".join(e["type"] for e in events))
stored = (run_dir / "snapshot.json").read_text()
replayed = json.dumps(replay_run(store, run_id), sort_keys=True) + "\n"
print("replay(event log) == snapshot.json:", replayed == stored)
