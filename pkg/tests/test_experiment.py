import json
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from goal.cli import main
from goal.errors import EvalError
from goal.experiment import grid as grid_mod
from goal.experiment.data import (
    SyntheticDatasetSpec,
    generate_dataset,
    nearest_prototype_accuracy,
    split_dataset,
)
from goal.experiment.diagram import diagram_csv, emit_weight_diagram, pair_diagram, triplet_diagram
from goal.experiment.grid import GridReport, run_grid
from goal.experiment.retrieval import recall_at_k, recall_table
from goal.trainer import TrainConfig
from goal.weights import PairSigMs, TripletCir, TripletCon, TripletNca, make_objective

TINY = SyntheticDatasetSpec(concepts=5, samples_per_concept=5, d_img=6, d_txt=5, seed=1)
TINY_CFG = TrainConfig(lr=0.05, epochs=2, batch_size=8, dim=4)


class TestData:
    def test_zero_noise_gives_prototypes(self):
        spec = replace(TINY, noise_sigma=0.0)
        d = generate_dataset(spec)
        np.testing.assert_array_equal(d.images, d.image_prototypes[d.concept_ids])
        np.testing.assert_array_equal(d.texts, d.text_prototypes[d.concept_ids])

    def test_same_seed_same_data(self):
        a, b = generate_dataset(TINY), generate_dataset(TINY)
        assert a.images.tobytes() == b.images.tobytes() and a.texts.tobytes() == b.texts.tobytes()
        c = generate_dataset(replace(TINY, seed=2))
        assert a.images.tobytes() != c.images.tobytes()

    def test_prototypes_unit_and_distinct(self):
        d = generate_dataset(SyntheticDatasetSpec())
        np.testing.assert_allclose(np.linalg.norm(d.image_prototypes, axis=1), 1.0, atol=1e-12)
        assert len(np.unique(d.image_prototypes, axis=0)) == 32
        assert len(np.unique(d.text_prototypes, axis=0)) == 32

    def test_nearest_prototype_accuracy(self):
        d = generate_dataset(SyntheticDatasetSpec())
        img, txt = nearest_prototype_accuracy(d)
        assert img >= 0.99 and txt >= 0.99

    def test_split_per_concept(self):
        spec = SyntheticDatasetSpec()
        s = split_dataset(generate_dataset(spec), spec)
        assert len(s.train) == 256 and len(s.test) == 64
        for c in range(32):
            assert np.sum(s.test.concept_ids == c) == 2
        # disjoint rows
        all_rows = np.concatenate([s.train.images, s.test.images])
        assert len(np.unique(all_rows, axis=0)) == 320

    @pytest.mark.parametrize("kw", [{"concepts": 1}, {"noise_sigma": -0.1}, {"test_fraction": 1.0}])
    def test_spec_validation(self, kw):
        with pytest.raises(ValueError):
            SyntheticDatasetSpec(**kw)


def brute_recall(s, ids, k, direction):
    s = np.asarray(s)
    if direction == "t2i":
        s = s.T
    hits = 0
    for q in range(s.shape[0]):
        order = sorted(range(s.shape[1]), key=lambda j: (-s[q, j], j))
        hits += any(ids[j] == ids[q] for j in order[:k])
    return hits / s.shape[0]


class TestRecall:
    def test_identity(self):
        s = np.eye(5)
        for d in ("i2t", "t2i"):
            assert recall_at_k(s, np.arange(5), 1, d) == 1.0

    def test_anti_diagonal(self):
        s = np.fliplr(np.eye(4))
        for d in ("i2t", "t2i"):
            assert recall_at_k(s, np.arange(4), 1, d) == 0.0

    def test_ties_lowest_index(self):
        s = np.zeros((3, 3))
        ids = np.array([0, 1, 2])
        # every row ties; the lowest index (0) wins, a hit only for query 0
        assert recall_at_k(s, ids, 1) == pytest.approx(1 / 3)

    def test_exhaustive_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            s = rng.uniform(-1, 1, (32, 32))
            if trial % 2:
                s = np.round(s, 1)  # force ties
            ids = rng.integers(0, 12, size=32)
            for d in ("i2t", "t2i"):
                for k in (1, 5, 10):
                    assert recall_at_k(s, ids, k, d) == brute_recall(s, ids, k, d)

    def test_monotone_in_k(self):
        rng = np.random.default_rng(1)
        t = recall_table(rng.normal(size=(20, 20)), rng.integers(0, 5, 20))
        for d in t.values():
            assert d["r1"] <= d["r5"] <= d["r10"]

    @pytest.mark.parametrize("k, d", [(0, "i2t"), (6, "i2t"), (1, "both")])
    def test_errors(self, k, d):
        with pytest.raises(EvalError):
            recall_at_k(np.eye(5), np.arange(5), k, d)


class TestGrid:
    def test_one_seed_zero_std(self):
        objs = [make_objective("con", "con"), make_objective("nca", "sig")]
        rep = run_grid(TINY, TINY_CFG, [0], objectives=objs)
        for c in rep.cells:
            assert c.stats("i2t")[1] == 0.0 and c.stats("t2i")[1] == 0.0
        assert rep.all_completed

    def test_three_seed_mean_is_arithmetic(self):
        objs = [make_objective("cir", "lin")]
        rep = run_grid(TINY, TINY_CFG, [0, 1, 2], objectives=objs)
        c = rep.cells[0]
        vals = [r.final["i2t"]["r1"] for r in c.records]
        assert c.stats("i2t")[0] == sum(vals) / 3
        assert [r.seed for r in c.records] == [0, 1, 2]

    def test_full_registry_order_and_csv(self):
        rep = run_grid(TINY, replace(TINY_CFG, epochs=1), [0])
        assert len(rep.cells) == 15
        lines = rep.to_csv().split("\n")
        assert lines[0].startswith("triplet_weight,pair_weight,name,runs,failed")
        assert lines[1].startswith("con,con,triplet loss,1,0,")
        assert len(lines) == 17 and lines[-1] == ""
        assert "\r" not in rep.to_csv()
        pivot = rep.to_pivot_csv().splitlines()
        assert len(pivot) == 6
        assert pivot[0].split(",")[1:3] == ["T^con i2t R@1", "T^con t2i R@1"]

    def test_failures_recorded_grid_continues(self, monkeypatch):
        real = grid_mod.run_single

        def flaky(spec, config):
            if config.objective.key == ("nca", "con") and config.seed == 1:
                raise RuntimeError("boom")
            return real(spec, config)

        monkeypatch.setattr(grid_mod, "run_single", flaky)
        objs = [make_objective("con", "con"), make_objective("nca", "con")]
        rep = run_grid(TINY, TINY_CFG, [0, 1], objectives=objs)
        assert not rep.all_completed
        bad = rep.cell("nca", "con")
        assert [r.status for r in bad.records] == ["completed", "failed"]
        assert "boom" in bad.records[1].error
        row = rep.to_csv().splitlines()[2].split(",")
        assert row[3:5] == ["2", "1"]
        assert len(bad.completed) == 1

    def test_diverged_cell_reported(self):
        objs = [make_objective("con", "lin")]
        rep = run_grid(TINY, replace(TINY_CFG, lr=1e306), [0], objectives=objs)
        assert rep.records[0].status == "diverged"
        assert rep.to_csv().splitlines()[1].endswith("nan,nan,nan,nan")

    def test_needs_a_seed(self):
        with pytest.raises(ValueError):
            run_grid(TINY, TINY_CFG, [])

    def test_parallel_matches_serial(self):
        objs = [make_objective("con", "sig-ms"), make_objective("cir", "con")]
        a = run_grid(TINY, TINY_CFG, [0, 1], objectives=objs)
        b = run_grid(TINY, TINY_CFG, [0, 1], objectives=objs, workers=2)
        assert a.to_csv() == b.to_csv()
        assert [json.dumps(r.to_dict()) for r in a.records] == [json.dumps(r.to_dict()) for r in b.records]

    def test_report_is_pure(self):
        objs = [make_objective("nca", "lin-ms")]
        assert isinstance(run_grid(TINY, TINY_CFG, [3], objectives=objs), GridReport)
        a = run_grid(TINY, TINY_CFG, [3], objectives=objs).to_csv()
        b = run_grid(TINY, TINY_CFG, [3], objectives=objs).to_csv()
        assert a == b


class TestDiagram:
    def test_con_two_values_and_boundary(self):
        rows = triplet_diagram(TripletCon(0.2), 101)
        assert set(np.unique(rows[:, 2])) == {0.0, 1.0}
        sp, sn, w = rows.T
        np.testing.assert_array_equal(w, (0.2 + sn - sp > 0).astype(float))

    def test_nca_constant_on_diagonals(self):
        rows = triplet_diagram(TripletNca(10), 51)
        w = rows[:, 2].reshape(51, 51)
        for off in range(-50, 51):
            d = np.diagonal(w, offset=off)
            assert np.max(d) - np.min(d) <= 1e-12

    def test_cir_circle_relation(self):
        kind = TripletCir(10)
        rows = triplet_diagram(kind, 26)
        sp, sn, w = rows.T
        r2 = np.round((sp - 1) ** 2 + sn ** 2, 12)
        for v in np.unique(r2):
            sel = w[r2 == v]
            assert np.max(sel) - np.min(sel) <= 1e-12
        from goal.weights import triplet_weight

        a = triplet_weight(kind, 1.0, 0.0)
        b = triplet_weight(kind, 1 - np.sqrt(0.5), np.sqrt(0.5))
        assert a == pytest.approx(1 / (1 + np.exp(10)), rel=1e-12)
        assert b == pytest.approx(0.5, abs=1e-12)
        assert a != b  # radii 0 and 1 differ

    def test_pair_columns(self):
        kind = PairSigMs()
        rows = pair_diagram(kind, 11)
        np.testing.assert_allclose(rows[:, 2], rows[:, 3] * rows[:, 4], rtol=1e-15)
        assert rows.shape == (121, 5)

    def test_resolution_checked(self):
        with pytest.raises(ValueError):
            triplet_diagram(TripletCon(), 1)

    def test_emit_and_csv(self):
        header, rows = emit_weight_diagram("triplet", "nca", {"scale": 5.0}, 3)
        text = diagram_csv(header, rows)
        lines = text.split("\n")
        assert lines[0] == "s_pos,s_neg,weight"
        assert len(lines) == 11 and lines[-1] == ""
        assert lines[1] == "0.0,0.0,0.5"
        with pytest.raises(ValueError):
            emit_weight_diagram("quad", "con")


class TestCli:
    def _cfg(self, tmp_path, **extra):
        cfg = {
            "dataset": {"concepts": 4, "samples_per_concept": 5, "d_img": 6, "d_txt": 5, "seed": 2},
            "train": {"lr": 0.05, "epochs": 2, "batch_size": 8, "dim": 4},
        }
        cfg.update(extra)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        return str(path)

    def test_train(self, tmp_path, capsys):
        out = tmp_path / "out"
        rc = main(["train", "--config", self._cfg(tmp_path), "--triplet", "cir", "--pair", "sig-ms",
                   "--seed", "4", "--out-dir", str(out)])
        assert rc == 0
        rec = json.loads((out / "cir_sig-ms_seed4.json").read_text())
        assert rec["status"] == "completed" and rec["seed"] == 4
        assert rec["config"]["objective"]["pair"]["kind"] == "sig-ms"
        assert "T^cir+P^sig-ms (New)" in capsys.readouterr().out

    def test_grid(self, tmp_path):
        out = tmp_path / "g"
        rc = main(["grid", "--config", self._cfg(tmp_path), "--seeds", "0", "1",
                   "--epochs", "1", "--out-dir", str(out)])
        assert rc == 0
        assert len(list((out / "runs").glob("*.json"))) == 30
        assert (out / "grid.csv").read_text().count("\n") == 16
        assert (out / "grid_pivot.csv").exists()

    def test_grid_failure_exit_code(self, tmp_path):
        rc = main(["grid", "--config", self._cfg(tmp_path), "--seed", "0", "--lr", "1e306",
                   "--out-dir", str(tmp_path / "g")])
        assert rc == 1

    def test_diagram(self, tmp_path):
        rc = main(["diagram", "--family", "triplet", "--kind", "con", "--resolution", "5",
                   "--out-dir", str(tmp_path)])
        assert rc == 0
        text = (tmp_path / "diagram_triplet_con.csv").read_text()
        assert text.count("\n") == 26

    def test_diagram_all(self, tmp_path):
        assert main(["diagram", "--resolution", "3", "--out-dir", str(tmp_path)]) == 0
        assert len(list(tmp_path.glob("diagram_*.csv"))) == 8

    def test_check_grad(self, tmp_path, capsys):
        assert main(["check-grad", "--batches", "3", "--out-dir", str(tmp_path)]) == 0
        rows = (tmp_path / "check_grad.csv").read_text().splitlines()
        assert len(rows) == 4 and all(r.endswith("True") for r in rows[1:])
        assert capsys.readouterr().out.count("PASS") == 3

    def test_unknown_config_key(self, tmp_path):
        with pytest.raises(ValueError):
            main(["train", "--config", self._cfg(tmp_path, dataset={"bogus": 1}),
                  "--out-dir", str(tmp_path)])

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "goal", "--help"], capture_output=True, text=True)
        assert res.returncode == 0
        for sub in ("grid", "train", "diagram", "check-grad"):
            assert sub in res.stdout
