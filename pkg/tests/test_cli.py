"""End-to-end tests of the command line, run in-process via main()."""

import json

import pytest

from anneal.cli import main
from anneal.core import load_manifest

TINY = [
    "--h", "3",
    "--iterations", "1",
    "--init-fraction", "0.15",
    "--map-k", "3",
    "--head-dims", "10", "6",
    "--classifier-dims", "6", "4",
    "--epochs", "2",
    "--batch-size", "16",
    "--lr", "1e-3",
]


@pytest.fixture()
def data(tmp_path):
    out = tmp_path / "corpus"
    rc = main(["init", "--out", str(out), "--classes", "3", "--per-class", "12",
               "--dim", "6", "--splits", "0.7", "0.15", "0.15", "--seed", "0"])
    assert rc == 0
    return out / "manifest.json"


class TestInit:
    def test_writes_loadable_corpus(self, data, capsys):
        ds = load_manifest(data)
        assert ds.n == 36
        assert ds.num_classes == 3
        assert len(ds.split_indices("train")) == 25

    def test_is_deterministic_per_seed(self, tmp_path):
        a, b, c = (tmp_path / n for n in ("a", "b", "c"))
        for out, seed in ((a, "1"), (b, "1"), (c, "2")):
            assert main(["init", "--out", str(out), "--classes", "2",
                         "--per-class", "6", "--dim", "4", "--seed", seed]) == 0
        same = (a / "features.bin").read_bytes() == (b / "features.bin").read_bytes()
        diff = (a / "features.bin").read_bytes() == (c / "features.bin").read_bytes()
        assert same and not diff
        assert (a / "manifest.json").read_text() == (b / "manifest.json").read_text()

    def test_data_root_env_resolves_relative_paths(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ANNEAL_DATA_ROOT", str(tmp_path))
        assert main(["init", "--out", "envcorpus", "--classes", "2",
                     "--per-class", "6", "--dim", "4"]) == 0
        assert (tmp_path / "envcorpus" / "manifest.json").exists()


class TestRun:
    def test_prints_rounds_and_writes_artifacts(self, data, tmp_path, capsys):
        out = tmp_path / "rundir"
        rc = main(["run", "--data", str(data), "--strategy", "mgue",
                   "--seed", "0", "--out", str(out), *TINY])
        assert rc == 0
        printed = capsys.readouterr().out
        assert printed.count("iter=") == 2  # one round plus the final fit
        assert "map@k=" in printed
        history = [json.loads(l) for l in (out / "history.jsonl").read_text().splitlines()]
        assert [h["iteration"] for h in history] == [0, 1]
        assert (out / "state.json").exists()
        assert (out / "model.json").exists()

    def test_same_seed_same_bytes(self, data, tmp_path):
        outs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert main(["run", "--data", str(data), "--seed", "5",
                         "--out", str(out), *TINY]) == 0
            outs.append((out / "history.jsonl").read_text())
        assert outs[0] == outs[1]

    def test_missing_manifest_is_single_line_error(self, tmp_path, capsys):
        rc = main(["run", "--data", str(tmp_path / "nope.json"), *TINY])
        assert rc == 1
        err = capsys.readouterr().err
        assert err.startswith("error:")
        assert len(err.strip().splitlines()) == 1


class TestEval:
    def test_reports_map_of_saved_model(self, data, tmp_path, capsys):
        out = tmp_path / "rundir"
        main(["run", "--data", str(data), "--seed", "0", "--out", str(out), *TINY])
        capsys.readouterr()
        rc = main(["eval", "--data", str(data), "--model", str(out / "model.json"),
                   "--k", "3"])
        assert rc == 0
        printed = capsys.readouterr().out
        assert printed.startswith("map@3=")


class TestCompare:
    def test_writes_results_and_summary(self, data, tmp_path, capsys):
        out = tmp_path / "bench"
        rc = main(["compare", "--data", str(data),
                   "--strategies", "mgue", "random",
                   "--seeds", "0", "1", *TINY, "--out", str(out)])
        assert rc == 0
        lines = (out / "results.jsonl").read_text().splitlines()
        docs = [json.loads(l) for l in lines]
        assert {(d["strategy"], d["seed"]) for d in docs} == {
            ("mgue", 0), ("mgue", 1), ("random", 0), ("random", 1)
        }
        assert all(d["iteration"] in (0, 1) for d in docs)
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["aggregates"]) == {"mgue", "random"}
        assert "mgue" in summary["curve_area_mean"]
        printed = capsys.readouterr().out
        assert "[compare mgue]" in printed and "[compare random]" in printed


class TestSweepAndAblate:
    def test_sweep_over_lambdas(self, data, tmp_path, capsys):
        out = tmp_path / "sweep.json"
        rc = main(["sweep", "--data", str(data), "--lam-values", "1", "3",
                   "--seeds", "0", *TINY, "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        rows = doc["rows"]
        assert [r["lam"] for r in rows] == [1, 3]
        assert all(len(r["aggregate"]) == 2 for r in rows)
        assert doc["best_lam"] in (1, 3)
        assert doc["best_lam"] == max(rows, key=lambda r: r["area_mean"])["lam"]
        printed = capsys.readouterr().out
        assert printed.count("[sweep lam=") == 2
        assert "best lam by curve area" in printed

    def test_ablation_grid(self, data, tmp_path, capsys):
        out = tmp_path / "ablate.json"
        rc = main(["ablate", "--data", str(data), "--seeds", "0", *TINY,
                   "--out", str(out)])
        assert rc == 0
        rows = json.loads(out.read_text())
        assert [r["variant"] for r in rows] == [
            "diversity+transitivity", "diversity-only", "transitivity-only", "neither",
        ]


class TestServeAndExport:
    def test_serve_wires_uvicorn(self, tmp_path, monkeypatch):
        calls = {}

        def fake_run(app, host, port):
            calls["host"], calls["port"] = host, port
            calls["routes"] = {r.path for r in app.routes}

        import uvicorn

        monkeypatch.setattr(uvicorn, "run", fake_run)
        rc = main(["serve", "--store", str(tmp_path / "store"), "--port", "8123",
                   "--sync"])
        assert rc == 0
        assert calls["port"] == 8123
        assert "/runs" in calls["routes"]
        assert "/runs/{run_id}/batch" in calls["routes"]

    def test_export_round(self, data, tmp_path, capsys):
        from fastapi.testclient import TestClient

        from anneal.service import RunStore, create_app

        store = RunStore(tmp_path / "store")
        app = create_app(store, sync_training=True)
        with TestClient(app) as client:
            created = client.post(
                "/runs",
                json={
                    "manifest": str(data),
                    "session_token": "t",
                    "config": {
                        "h": 3, "iterations": 1, "init_fraction": 0.15,
                        "map_k": 3, "head_dims": [10, 6],
                        "classifier_dims": [6, 4],
                        "train": {"epochs": 1, "batch_size": 16,
                                  "learning_rate": 1e-3},
                    },
                },
            )
            run_id = created.json()["id"]
            client.post(f"/runs/{run_id}/advance")
            batch = client.get(f"/runs/{run_id}/batch").json()
            labels = [{"key": p["key"], "label": 1} for p in batch["pairs"]]
            client.post(f"/runs/{run_id}/labels",
                        json={"session": "t", "labels": labels})
            client.post(f"/runs/{run_id}/advance")

        out = tmp_path / "export.json"
        rc = main(["export", "--store", str(tmp_path / "store"), "--run", run_id,
                   "--out", str(out)])
        assert rc == 0
        doc = json.loads(out.read_text())
        assert doc["run_id"] == run_id
        assert doc["status"] == "done"
        assert len(doc["map_points"]) == 2

    def test_export_unknown_run_fails_cleanly(self, tmp_path, capsys):
        rc = main(["export", "--store", str(tmp_path / "store"), "--run", "run-9999",
                   "--out", str(tmp_path / "x.json")])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")
