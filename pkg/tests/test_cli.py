import csv
import io
import json
import re

import numpy as np
import pytest
from click.testing import CliRunner

from moomin.cli import gradient_check, main
from moomin.dataio import bundle_paths, load_bundle, load_checkpoint, save_checkpoint

ATOM_TOKEN = re.compile(r"Cl|Br|[BCNOPSFI]")


def run(*args, ok=True):
    res = CliRunner().invoke(main, [str(a) for a in args])
    if ok:
        assert res.exit_code == 0, res.output + str(res.exception)
    return res


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def replay_rule(d):
    """Recompute every synergy label from the emitted files, without the package's parsers."""
    rule = json.loads((d / "rule.json").read_text())
    nbrs = {}
    for line in (d / "graph.tsv").read_text().splitlines():
        drug, prot = line.split("\t")
        nbrs.setdefault(drug, set()).add(prot)
    atoms = {}
    for line in (d / "molecules.smi").read_text().splitlines():
        drug, smi = line.split("\t")
        atoms[drug] = len(ATOM_TOKEN.findall(smi))
    out = []
    for r in rows((d / "synergy.csv").read_text()):
        a, b, c = r["drug_a"], r["drug_b"], r["cell"]
        shared = len(nbrs.get(a, set()) & nbrs.get(b, set()) & set(rule["active_targets"][c])) >= rule["k"]
        large = atoms[a] >= rule["large_atoms"] and atoms[b] >= rule["large_atoms"]
        pred = {"shared-protein": shared, "molecular": large, "mixed": shared and large}[rule["rule"]]
        out.append((int(pred), int(r["label"])))
    return out


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    run("synth", "--out", d, "--n-drugs", 14, "--n-proteins", 8, "--n-cells", 2, "--n-records", 80, "--seed", 2)
    return d


@pytest.fixture(scope="module")
def trained(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    run("train", "--data", data, "--epochs", 3, "--r", 1, "--out", out)
    return out


class TestSynth:
    @pytest.mark.parametrize("rule", ["shared-protein", "molecular", "mixed"])
    def test_labels_replay_exactly(self, tmp_path, rule):
        run("synth", "--out", tmp_path, "--rule", rule, "--n-records", 200, "--seed", 5)
        pairs = replay_rule(tmp_path)
        assert len(pairs) == 200
        assert all(p == y for p, y in pairs)
        assert {y for _, y in pairs} == {0, 1}

    def test_noise_flips_some_labels(self, tmp_path):
        run("synth", "--out", tmp_path, "--noise", 0.2, "--seed", 1)
        pairs = replay_rule(tmp_path)
        flipped = sum(p != y for p, y in pairs) / len(pairs)
        assert 0.1 < flipped < 0.3

    def test_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            run("synth", "--out", tmp_path / sub, "--seed", 9, "--n-records", 100)
        for name in ("graph.tsv", "molecules.smi", "proteins.csv", "cells.tsv", "synergy.csv", "rule.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_default_spec_has_both_classes(self, tmp_path):
        run("synth", "--out", tmp_path)
        labels = [int(r["label"]) for r in rows((tmp_path / "synergy.csv").read_text())]
        assert len(labels) == 800 and set(labels) == {0, 1}

    def test_invalid_spec_exit_code(self, tmp_path):
        assert run("synth", "--out", tmp_path, "--noise", 1.5, ok=False).exit_code == 1


class TestTrainScoreEval:
    def test_outputs(self, trained):
        assert (trained / "model.ckpt").exists()
        hist = rows((trained / "history.csv").read_text())
        assert [int(h["epoch"]) for h in hist] == [1, 2, 3]

    def test_zero_head_scores_half(self, data, trained, tmp_path):
        model = load_checkpoint(trained / "model.ckpt")
        for name, p in model.parameters().items():
            if name.startswith("head."):
                p.data = np.zeros_like(p.data)
        save_checkpoint(model, tmp_path / "zero.ckpt")
        out = rows(run("score", "--data", data, "--checkpoint", tmp_path / "zero.ckpt").output)
        assert len(out) == 80 and all(float(r["score"]) == 0.5 for r in out)

    def test_sampled_scoring_deterministic(self, data, trained):
        args = ("score", "--data", data, "--checkpoint", trained / "model.ckpt", "--mode", "sampled",
                "--samples", 8, "--seed", 3)
        assert run(*args).output == run(*args).output

    def test_triples(self, data, trained, tmp_path):
        (tmp_path / "t.csv").write_text("drug_a,drug_b,cell\nD000,D001,C00\n")
        out = rows(run("score", "--data", data, "--checkpoint", trained / "model.ckpt",
                       "--triples", tmp_path / "t.csv").output)
        assert len(out) == 1 and 0.0 < float(out[0]["score"]) < 1.0

    def test_eval_perfect_scores(self, data, tmp_path):
        recs = rows((data / "synergy.csv").read_text())
        with open(tmp_path / "s.csv", "w") as fh:
            fh.write("drug_a,drug_b,cell,score\n")
            for r in recs:
                fh.write(f"{r['drug_a']},{r['drug_b']},{r['cell']},{r['label']}\n")
        rep = rows(run("eval", "--data", data, "--scores", tmp_path / "s.csv").output)
        assert len(rep) == 1
        assert (float(rep[0]["roc_auc"]), float(rep[0]["pr_auc"]), float(rep[0]["f1"])) == (1.0, 1.0, 1.0)

    def test_eval_molsize_groups(self, data, tmp_path):
        bundle = load_bundle(**bundle_paths(data))
        sizes = {d: m.num_atoms for d, m in bundle.molecules.items()}
        with open(tmp_path / "s.csv", "w") as fh:
            fh.write("drug_a,drug_b,cell,score\n")
            for r in bundle.synergy:
                fh.write(f"{r.drug_a},{r.drug_b},{r.cell},0.7\n")
        rep = {r["group"]: r for r in rows(run("eval", "--data", data, "--scores", tmp_path / "s.csv",
                                                "--group-by", "molsize").output)}
        expected = {}
        for r in bundle.synergy:
            n_large = (sizes[r.drug_a] >= 50) + (sizes[r.drug_b] >= 50)
            key = ["Small-Small", "Large-Small", "Large-Large"][n_large]
            expected[key] = expected.get(key, 0) + 1
        assert {k: int(v["n_pos"]) + int(v["n_neg"]) for k, v in rep.items()} == expected

    def test_eval_checkpoint_split(self, data, trained):
        rep = rows(run("eval", "--data", data, "--checkpoint", trained / "model.ckpt").output)
        assert int(rep[0]["n_pos"]) + int(rep[0]["n_neg"]) == 16

    def test_eval_needs_one_source(self, data, trained, tmp_path):
        assert run("eval", "--data", data, ok=False).exit_code == 1

    def test_unknown_cell_exit_code(self, data, trained, tmp_path):
        (tmp_path / "t.csv").write_text("drug_a,drug_b,cell\nD000,D001,NOPE\n")
        res = run("score", "--data", data, "--checkpoint", trained / "model.ckpt",
                  "--triples", tmp_path / "t.csv", ok=False)
        assert res.exit_code == 1 and "NOPE" in res.output

    def test_missing_inputs(self, tmp_path):
        assert run("train", "--out", tmp_path, ok=False).exit_code == 1


class TestWalkcheck:
    def test_chain_zero_error(self, tmp_path):
        (tmp_path / "graph.tsv").write_text("d1\tp1\nd2\tp2\n")
        (tmp_path / "molecules.smi").write_text("d1\tCCO\nd2\tCN\n")
        (tmp_path / "proteins.csv").write_text("protein_id,f1\np1,0.3\np2,-1\n")
        (tmp_path / "cells.tsv").write_text("c1\n")
        (tmp_path / "synergy.csv").write_text("drug_a,drug_b,cell,label\nd1,d2,c1,1\n")
        out = rows(run("walkcheck", "--data", tmp_path, "--drug", "d1", "--r", 3, "--max-samples", 16).output)
        assert [int(r["samples"]) for r in out] == [2, 4, 8, 16]
        assert all(float(r["max_rel_error"]) == 0.0 for r in out)

    def test_error_shrinks(self, data):
        out = rows(run("walkcheck", "--data", data, "--drug", "D000", "--r", 2).output)
        first, last = out[0], out[-1]
        assert int(first["samples"]) == 2 and int(last["samples"]) == 128
        assert float(last["mean_rel_error"]) < float(first["mean_rel_error"])
        assert float(last["std_rel_error"]) <= float(first["std_rel_error"])


class TestGradcheck:
    def test_cli_passes(self):
        out = rows(run("gradcheck", "--r", 1).output)
        assert len(out) == 13 and all(r["status"] == "pass" for r in out)

    def test_detects_wrong_gradient(self, monkeypatch):
        import moomin.tensor as T

        original = T.relu

        def bad_relu(x):
            out = original(x)
            fn = out._backward
            if fn is not None:
                out._backward = lambda g: tuple(2.0 * v for v in fn(g))
            return out

        monkeypatch.setattr(T, "relu", bad_relu)
        errs = gradient_check(0, 0)
        assert max(errs.values()) > 1e-2


class TestBench:
    def test_row_count(self, data):
        out = rows(run("bench", "--data", data, "--batches", "4,8", "--sample-ladder", "2,4,8",
                       "--repetitions", 2).output)
        assert len(out) == 2 * (3 + 1)
        assert {r["mode"] for r in out} == {"exact", "sampled"}
        assert all(float(r["mean_seconds"]) > 0 for r in out)
