"""HTTP annotation service around the loop's prepare/apply protocol.

A run is a directory under the store root:

    runs/<run_id>/config.json      what the run was created with
    runs/<run_id>/events.jsonl     append-only event log, one JSON per line
    runs/<run_id>/snapshot.json    current state, rewritten after every event

Every state change is appended (and fsynced) to the event log before the
snapshot is rewritten and the request is acknowledged, so a crash between
the two leaves a log that is ahead of the snapshot, never behind it.
``replay_run`` folds the event log back into a snapshot without retraining:
prepared rounds carry their trained model, so replay is cheap and must
reproduce the stored snapshot byte for byte.

Status machine per run:

    idle -> (advance) -> training -> awaiting_labels -> (labels) -> idle
    idle -> (advance, once the round budget is used up) -> training -> done

Label submission requires the run's writer session token; one writer at a
time. Labels may arrive incrementally, any nonempty subset of the open
batch per POST; each accepted chunk is durable before it is acknowledged,
and the round applies once every key has a label (the training pairs carry
the provenance of the completing submission). Resubmitting a label a pair
already has is acknowledged idempotently, contradicting it is a conflict.
"""

from __future__ import annotations

import json
import os
import secrets
import threading
from dataclasses import asdict
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, RedirectResponse
from pydantic import BaseModel, Field

from .core import Dataset, DatasetError, load_manifest
from .loop import (
    ALState,
    LoopConfig,
    PendingIteration,
    _config_from_doc,
    _config_to_doc,
    apply_iteration,
    finalize,
    init_al_state,
    pending_from_doc,
    pending_to_doc,
    prepare_iteration,
    state_from_doc,
    state_to_doc,
)
from .metric import ConfigError, TrainConfig

SNAPSHOT_VERSION = 1


class CorruptRunError(ValueError):
    """A persisted run refused to load; the message names the file."""


# ---------------------------------------------------------------------------
# request/response payloads
# ---------------------------------------------------------------------------

class CreateRunRequest(BaseModel):
    manifest: str
    name: str = ""
    config: dict = Field(default_factory=dict)
    session_token: str | None = None  # pin the writer token (tests, resumption)


class PairLabel(BaseModel):
    key: str
    label: int


class LabelSubmission(BaseModel):
    session: str
    labels: list[PairLabel]
    provenance: str = "human"


def loop_config_from_doc(partial: dict) -> LoopConfig:
    """Full LoopConfig from a partial document, filling library defaults."""
    base = _config_to_doc(LoopConfig())
    train = dict(base.pop("train"))
    incoming = dict(partial)
    train.update(incoming.pop("train", {}))
    base.update(incoming)
    base["train"] = train
    return _config_from_doc(base)


# ---------------------------------------------------------------------------
# storage
# ---------------------------------------------------------------------------

class RunStore:
    """Directory-backed registry of runs plus their live engines."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "runs").mkdir(parents=True, exist_ok=True)
        self.engines: dict[str, RunEngine] = {}

    def run_dir(self, run_id: str) -> Path:
        return self.root / "runs" / run_id

    def next_run_id(self) -> str:
        existing = [p.name for p in (self.root / "runs").iterdir() if p.is_dir()]
        return f"run-{len(existing) + 1:04d}"

    def list_runs(self) -> list[str]:
        return sorted(p.name for p in (self.root / "runs").iterdir() if p.is_dir())


def _append_event(run_dir: Path, event: dict) -> None:
    line = json.dumps(event, sort_keys=True)
    with open(run_dir / "events.jsonl", "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def _write_snapshot(run_dir: Path, doc: dict) -> None:
    tmp = run_dir / "snapshot.json.tmp"
    tmp.write_text(json.dumps(doc, sort_keys=True) + "\n")
    tmp.replace(run_dir / "snapshot.json")


def read_events(run_dir: Path) -> list[dict]:
    path = run_dir / "events.jsonl"
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line]


def read_snapshot(run_dir: Path) -> dict:
    return json.loads((run_dir / "snapshot.json").read_text())


# ---------------------------------------------------------------------------
# engine: one run's state machine
# ---------------------------------------------------------------------------

class RunEngine:
    def __init__(
        self,
        run_id: str,
        run_dir: Path,
        dataset: Dataset,
        manifest_path: str,
        config: LoopConfig,
        session_token: str,
        sync_training: bool,
    ):
        self.run_id = run_id
        self.run_dir = run_dir
        self.dataset = dataset
        self.manifest_path = manifest_path
        self.config = config
        self.session_token = session_token
        self.sync_training = sync_training
        self.name = ""
        self.lock = threading.Lock()
        self.status = "idle"
        self.error: str | None = None
        self.state: ALState | None = None
        self.pending: PendingIteration | None = None
        self.received: dict[str, int] = {}  # labels for the open batch so far
        self.applied: dict | None = None  # last applied round, for idempotent reposts
        self.seq = 0
        self._thread: threading.Thread | None = None

    # -- persistence ---------------------------------------------------------

    def _snapshot_doc(self) -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "run_id": self.run_id,
            "status": self.status,
            "seq": self.seq,
            "state": state_to_doc(self.state) if self.state else None,
            "pending": pending_to_doc(self.pending) if self.pending else None,
            "received": [[k, self.received[k]] for k in sorted(self.received)],
            "applied": self.applied,
            "error": self.error,
        }

    def _commit(self, event_type: str, payload: dict) -> None:
        """Durable append, then refresh the snapshot. Callers hold the lock."""
        self.seq += 1
        _append_event(self.run_dir, {"seq": self.seq, "type": event_type, "payload": payload})
        _write_snapshot(self.run_dir, self._snapshot_doc())

    # -- lifecycle -----------------------------------------------------------

    def initialize(self) -> None:
        with self.lock:
            self.state = init_al_state(self.dataset, self.config)
            self._commit("initialized", {"state": state_to_doc(self.state)})

    def _train_step(self) -> None:
        try:
            if self.state.iteration < self.config.iterations:
                pending = prepare_iteration(self.state)
                with self.lock:
                    self.pending = pending
                    self.status = "awaiting_labels"
                    self._commit("prepared", {"pending": pending_to_doc(pending)})
            else:
                final = finalize(self.state)
                with self.lock:
                    self.state = final
                    self.status = "done"
                    self._commit("finalized", {"state": state_to_doc(final)})
        except Exception as exc:  # surface the failure instead of hanging the run
            with self.lock:
                self.status = "failed"
                self.error = f"{type(exc).__name__}: {exc}"
                self._commit("failed", {"error": self.error})

    def advance(self) -> str:
        with self.lock:
            if self.status not in ("idle",):
                raise HTTPException(409, f"cannot advance while {self.status}")
            self.status = "training"
        if self.sync_training:
            self._train_step()
            return self.status
        self._thread = threading.Thread(target=self._train_step, daemon=True)
        self._thread.start()
        return "training"  # snapshot at transition; the worker may already be done

    def submit_labels(self, submission: LabelSubmission) -> dict:
        if submission.session != self.session_token:
            raise HTTPException(403, "wrong or missing writer session token")
        offered = {l.key: l.label for l in submission.labels}
        if not offered:
            raise HTTPException(422, "empty label submission")
        if any(v not in (0, 1) for v in offered.values()):
            raise HTTPException(422, "labels must be 0 or 1")
        with self.lock:
            if self.status != "awaiting_labels":
                # a repost of labels from the just-applied round is a no-op
                if self.applied and all(
                    self.applied["labels"].get(k) == v for k, v in offered.items()
                ):
                    return {"status": self.status, "iteration": self.state.iteration,
                            "received": 0, "remaining": 0, "idempotent": True}
                raise HTTPException(409, f"run is {self.status}, not awaiting labels")
            keys = [str(p.key) for p in self.pending.batch.pairs]
            unknown = sorted(set(offered) - set(keys))
            if unknown:
                raise HTTPException(
                    422, f"keys not in the open batch: {', '.join(unknown)}"
                )
            conflicts = sorted(
                k for k, v in offered.items()
                if k in self.received and self.received[k] != v
            )
            if conflicts:
                raise HTTPException(
                    409, f"pair(s) already labeled differently: {', '.join(conflicts)}"
                )
            round_index = self.pending.iteration
            fresh = {k: v for k, v in offered.items() if k not in self.received}
            if fresh:
                self.received.update(fresh)
                if len(self.received) == len(keys):
                    try:
                        self.state = apply_iteration(
                            self.state, self.pending,
                            [self.received[k] for k in keys],
                            provenance=submission.provenance,
                        )
                    except ConfigError as exc:
                        for k in fresh:
                            del self.received[k]
                        raise HTTPException(422, str(exc)) from exc
                    self.applied = {"iteration": round_index,
                                    "labels": dict(self.received)}
                    self.received = {}
                    self.pending = None
                    self.status = "idle"
                self._commit(
                    "labels",
                    {
                        "iteration": round_index,
                        "labels": [[k, fresh[k]] for k in keys if k in fresh],
                        "provenance": submission.provenance,
                    },
                )
            n_received = (len(self.received) if self.status == "awaiting_labels"
                          else len(keys))
            return {"status": self.status, "iteration": self.state.iteration,
                    "received": n_received, "remaining": len(keys) - n_received,
                    "idempotent": not fresh}

    # -- views ---------------------------------------------------------------

    def summary(self) -> dict:
        return {
            "id": self.run_id,
            "name": self.name,
            "status": self.status,
            "iteration": self.state.iteration if self.state else 0,
            "planned_iterations": self.config.iterations,
            "bits_spent": self.state.bits_spent if self.state else 0.0,
            "n_labeled": len(self.state.labeled) if self.state else 0,
            "strategy": self.config.strategy,
            "error": self.error,
        }

    def state_view(self) -> dict:
        view = self.summary()
        view["history"] = [asdict(r) for r in self.state.history] if self.state else []
        view["pool_size"] = len(self.state.pool) if self.state else 0
        return view

    def batch_view(self) -> dict:
        with self.lock:
            if self.status != "awaiting_labels" or self.pending is None:
                raise HTTPException(409, f"no open batch, run is {self.status}")
            pending = self.pending
            received = dict(self.received)
        ds = self.dataset
        pairs = []
        for p in pending.batch.pairs:
            if str(p.key) in received:
                continue
            pairs.append(
                {
                    "key": str(p.key),
                    "lo": p.key.lo,
                    "hi": p.key.hi,
                    "score": p.score,
                    "value": p.value,
                    "cluster_id": p.cluster_id,
                    "lo_image": f"/items/{p.key.lo}/image?run={self.run_id}",
                    "hi_image": f"/items/{p.key.hi}/image?run={self.run_id}",
                }
            )
        return {
            "iteration": pending.iteration,
            "threshold": pending.stats.threshold if pending.stats else None,
            "map_value": pending.map_result.value,
            "batch_size": len(pending.batch.pairs),
            "received": len(received),
            "bits_spent": self.state.bits_spent if self.state else 0.0,
            "pairs": pairs,
        }

    def metrics_view(self) -> dict:
        history = [asdict(r) for r in self.state.history] if self.state else []
        return {
            "run_id": self.run_id,
            "status": self.status,
            "map_points": [
                {"bits": r["bits_spent"], "map": r["map_value"], "iteration": r["iteration"]}
                for r in history
            ],
            "threshold_trace": [
                {
                    "iteration": r["iteration"],
                    "threshold": r["threshold"],
                    "mu_sim": r["mu_sim"],
                    "mu_dsim": r["mu_dsim"],
                    "sigma_sim": r["sigma_sim"],
                    "sigma_dsim": r["sigma_dsim"],
                }
                for r in history
            ],
            "transitive_counts": [
                {"iteration": r["iteration"], "n_transitive": r["n_transitive"],
                 "n_pairs": r["n_pairs"], "n_conflicts": r["n_conflicts"]}
                for r in history
            ],
            "history": history,
        }


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def replay_run(store: RunStore, run_id: str, dataset: Dataset | None = None) -> dict:
    """Rebuild the snapshot document purely from the event log.

    No training happens: prepared events carry their models. The result must
    equal the stored snapshot byte for byte once both are canonically dumped.
    """
    run_dir = store.run_dir(run_id)
    if not run_dir.exists():
        raise KeyError(run_id)
    config_doc = json.loads((run_dir / "config.json").read_text())
    if dataset is None:
        dataset = load_manifest(config_doc["manifest"])
    status = "idle"
    state = pending = applied = None
    received: dict[str, int] = {}
    error = None
    seq = 0
    for event in read_events(run_dir):
        seq = event["seq"]
        etype, payload = event["type"], event["payload"]
        if etype == "initialized":
            state = state_from_doc(payload["state"], dataset)
            status = "idle"
        elif etype == "prepared":
            pending = pending_from_doc(payload["pending"])
            received = {}
            status = "awaiting_labels"
        elif etype == "labels":
            received.update(dict(payload["labels"]))
            keys = [str(p.key) for p in pending.batch.pairs]
            if len(received) == len(keys):
                # the chunk that completes the round carries its provenance
                state = apply_iteration(
                    state, pending, [received[k] for k in keys],
                    provenance=payload["provenance"],
                )
                applied = {"iteration": payload["iteration"], "labels": received}
                received = {}
                pending = None
                status = "idle"
        elif etype == "finalized":
            state = state_from_doc(payload["state"], dataset)
            status = "done"
        elif etype == "failed":
            status = "failed"
            error = payload["error"]
        else:
            raise ValueError(f"unknown event type {etype!r}")
    return {
        "version": SNAPSHOT_VERSION,
        "run_id": run_id,
        "status": status,
        "seq": seq,
        "state": state_to_doc(state) if state else None,
        "pending": pending_to_doc(pending) if pending else None,
        "received": [[k, received[k]] for k in sorted(received)],
        "applied": applied,
        "error": error,
    }


# ---------------------------------------------------------------------------
# resumption: rebuild a live engine from config.json + snapshot.json
# ---------------------------------------------------------------------------

def resume_engine(store: RunStore, run_id: str, sync_training: bool = False) -> RunEngine:
    """Load a persisted run back into memory after a service restart.

    A snapshot that does not parse, or that carries an unknown version,
    refuses to load; the error names the offending file.
    """
    run_dir = store.run_dir(run_id)
    config_path = run_dir / "config.json"
    snap_path = run_dir / "snapshot.json"
    try:
        config_doc = json.loads(config_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptRunError(f"cannot load {config_path}: {exc}") from exc
    try:
        snap = json.loads(snap_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptRunError(f"cannot load {snap_path}: {exc}") from exc
    if snap.get("version") != SNAPSHOT_VERSION:
        raise CorruptRunError(
            f"cannot load {snap_path}: unsupported snapshot version {snap.get('version')!r}"
        )
    dataset = load_manifest(config_doc["manifest"])
    config = _config_from_doc(config_doc["config"])
    engine = RunEngine(
        run_id, run_dir, dataset, config_doc["manifest"], config,
        config_doc["session_token"], sync_training=sync_training,
    )
    engine.name = config_doc.get("name", "")
    engine.seq = snap["seq"]
    # a crash mid-training loses nothing durable; the round just retrains
    engine.status = "idle" if snap["status"] == "training" else snap["status"]
    engine.error = snap["error"]
    if snap["state"] is not None:
        engine.state = state_from_doc(snap["state"], dataset)
    if snap["pending"] is not None:
        engine.pending = pending_from_doc(snap["pending"])
    engine.received = {k: v for k, v in snap.get("received", [])}
    engine.applied = snap["applied"]
    store.engines[run_id] = engine
    return engine


# ---------------------------------------------------------------------------
# app factory
# ---------------------------------------------------------------------------

def create_app(store: RunStore, sync_training: bool = False) -> FastAPI:
    app = FastAPI(title="pair annotation service")
    # the annotation page may be served from another origin; no auth by design
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.store = store
    for run_id in store.list_runs():
        if run_id not in store.engines:
            resume_engine(store, run_id, sync_training=sync_training)

    def engine_of(run_id: str) -> RunEngine:
        engine = store.engines.get(run_id)
        if engine is None:
            raise HTTPException(404, f"unknown run {run_id!r}")
        return engine

    @app.get("/runs")
    def list_runs() -> list[dict]:
        return [store.engines[rid].summary() for rid in sorted(store.engines)]

    @app.post("/runs", status_code=201)
    def create_run(req: CreateRunRequest) -> dict:
        manifest_path = Path(req.manifest)
        if not manifest_path.exists():
            raise HTTPException(400, f"manifest not found: {req.manifest}")
        try:
            dataset = load_manifest(manifest_path)
            config = loop_config_from_doc(req.config)
        except (DatasetError, ConfigError, TypeError) as exc:
            raise HTTPException(400, str(exc)) from exc
        if any(s is None for s in dataset.splits):
            raise HTTPException(400, "manifest items need split assignments")

        run_id = store.next_run_id()
        run_dir = store.run_dir(run_id)
        run_dir.mkdir(parents=True)
        token = req.session_token or secrets.token_hex(16)
        (run_dir / "config.json").write_text(
            json.dumps(
                {
                    "run_id": run_id,
                    "name": req.name,
                    "manifest": str(manifest_path),
                    "config": _config_to_doc(config),
                    "session_token": token,
                },
                sort_keys=True,
            )
            + "\n"
        )
        engine = RunEngine(
            run_id, run_dir, dataset, str(manifest_path), config, token,
            sync_training=sync_training,
        )
        engine.name = req.name
        store.engines[run_id] = engine
        engine.initialize()
        return {"id": run_id, "session_token": token, **engine.summary()}

    @app.get("/runs/{run_id}/state")
    def run_state(run_id: str) -> dict:
        return engine_of(run_id).state_view()

    @app.post("/runs/{run_id}/advance")
    def advance(run_id: str) -> dict:
        return {"id": run_id, "status": engine_of(run_id).advance()}

    @app.get("/runs/{run_id}/batch")
    def batch(run_id: str) -> dict:
        return engine_of(run_id).batch_view()

    @app.post("/runs/{run_id}/labels")
    def labels(run_id: str, submission: LabelSubmission) -> dict:
        return engine_of(run_id).submit_labels(submission)

    @app.get("/runs/{run_id}/metrics")
    def metrics(run_id: str) -> dict:
        return engine_of(run_id).metrics_view()

    @app.get("/items/{item_id}/image")
    def item_image(item_id: str, run: str | None = None):
        run_ids = [run] if run else sorted(store.engines)
        for rid in run_ids:
            engine = store.engines.get(rid)
            if engine is None:
                continue
            ds = engine.dataset
            row = ds.index_of.get(item_id)
            if row is None:
                continue
            uri = ds.image_uris[row]
            if uri is None:
                raise HTTPException(404, f"item {item_id!r} has no image")
            if uri.startswith("http://") or uri.startswith("https://"):
                return RedirectResponse(uri, status_code=307)
            base = Path(engine.manifest_path).resolve().parent
            target = (base / uri).resolve()
            if not target.is_relative_to(base):
                raise HTTPException(400, "image path escapes the dataset directory")
            if not target.exists():
                raise HTTPException(404, f"image file missing for {item_id!r}")
            return FileResponse(target)
        raise HTTPException(404, f"unknown item {item_id!r}")

    return app
