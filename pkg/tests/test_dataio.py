import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from moomin.dataio import (
    bundle_paths,
    dump_checkpoint,
    load_bundle,
    load_checkpoint,
    parse_checkpoint,
    read_graph,
    read_molecules,
    read_proteins,
    read_synergy,
    save_checkpoint,
)
from moomin.errors import CheckpointError, DataError, MoominError, ParseError
from moomin.synergy import ModelConfig, MoominModel, predict


def write_minimal(d, synergy="drug_a,drug_b,cell,label\nd1,d2,c1,1\n", proteins="protein_id,f1,f2\np1,0.5,-1\n"):
    (d / "graph.tsv").write_text("# comment\nd1\tp1\nd2\tp1\n")
    (d / "molecules.smi").write_text("d1\tCCO\nd2\tC1CC1\n")
    (d / "proteins.csv").write_text(proteins)
    (d / "cells.tsv").write_text("c1\tLung\n")
    (d / "synergy.csv").write_text(synergy)
    return bundle_paths(d)


class TestLoadBundle:
    def test_minimal(self, tmp_path):
        b = load_bundle(**write_minimal(tmp_path))
        assert b.graph.drugs == ["d1", "d2"] and b.graph.proteins == ["p1"]
        assert b.protein_dim == 2 and b.cells == ["c1"] and len(b.synergy) == 1

    def test_unknown_cell(self, tmp_path):
        paths = write_minimal(tmp_path, synergy="drug_a,drug_b,cell,label\nd1,d2,c7,1\n")
        with pytest.raises(DataError, match="c7"):
            load_bundle(**paths)

    def test_unequal_widths(self, tmp_path):
        paths = write_minimal(tmp_path, proteins="protein_id,f1,f2\np1,0.5,-1\np2,1\n")
        with pytest.raises(ParseError, match="has 1 features but the header declares 2"):
            load_bundle(**paths)

    def test_collects_all_problems(self, tmp_path):
        paths = write_minimal(tmp_path, synergy="drug_a,drug_b,cell,label\nd1,d9,c7,1\n")
        with pytest.raises(DataError) as err:
            load_bundle(**paths)
        assert "d9" in str(err.value) and "c7" in str(err.value)

    def test_bad_label(self, tmp_path):
        (tmp_path / "s.csv").write_text("drug_a,drug_b,cell,label\nd1,d2,c1,3\n")
        with pytest.raises(ParseError):
            read_synergy(tmp_path / "s.csv")

    def test_bad_smiles_names_file_and_line(self, tmp_path):
        (tmp_path / "m.smi").write_text("d1\tCCO\nd2\tc1ccccc1\n")
        with pytest.raises(ParseError) as err:
            read_molecules(tmp_path / "m.smi")
        assert err.value.line == 2

    def test_molfile_directory(self, tmp_path):
        (tmp_path / "mols").mkdir()
        (tmp_path / "mols" / "d1.mol.txt").write_text("atom 0 C\natom 1 O\nbond 0 1 2\n")
        mols = read_molecules(tmp_path / "mols")
        assert list(mols) == ["d1"] and mols["d1"].bonds == [(0, 1, 2)]

    def test_synth_output_validates(self, synth_dir):
        b = load_bundle(**bundle_paths(synth_dir))
        assert len(b.synergy) == 120

    @settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(st.binary(max_size=120))
    def test_readers_are_total(self, tmp_path, raw):
        path = tmp_path / "blob"
        path.write_bytes(raw)
        for reader in (read_graph, read_proteins, read_synergy, read_molecules):
            try:
                reader(path)
            except MoominError:
                pass


@pytest.fixture
def model(bundle):
    m = MoominModel.init(ModelConfig(r=1, protein_dim=bundle.protein_dim), bundle.cells, np.random.default_rng(0))
    for p in m.parameters().values():
        p.data = p.data + np.random.default_rng(1).normal(size=p.shape) / 3
    return m


class TestCheckpoint:
    def test_byte_round_trip(self, model, tmp_path):
        save_checkpoint(model, tmp_path / "a.ckpt")
        save_checkpoint(load_checkpoint(tmp_path / "a.ckpt"), tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_values_exact(self, model, bundle):
        back = parse_checkpoint(dump_checkpoint(model))
        for name, p in model.parameters().items():
            assert np.array_equal(p.data, back.parameters()[name].data)
        a = predict(bundle.synergy, model, bundle.graph, bundle)
        b = predict(bundle.synergy, back, bundle.graph, bundle)
        assert np.max(np.abs(a - b)) <= 1e-15
        assert back.cells == model.cells and back.config == model.config

    def test_wrong_r(self, model):
        with pytest.raises(CheckpointError, match="shape"):
            parse_checkpoint(dump_checkpoint(model), ModelConfig(r=2, protein_dim=4))

    def test_truncated(self, model):
        text = dump_checkpoint(model)
        cut = text[: text.index("param head.w1")]
        with pytest.raises(CheckpointError, match="truncated.*section"):
            parse_checkpoint(cut)

    def test_truncated_inside_matrix(self, model):
        lines = dump_checkpoint(model).split("\n")
        start = lines.index(next(l for l in lines if l.startswith("param drug.w2")))
        with pytest.raises(CheckpointError, match="drug.w2"):
            parse_checkpoint("\n".join(lines[:start + 3]))

    def test_bad_header(self, model):
        with pytest.raises(CheckpointError, match="version"):
            parse_checkpoint(dump_checkpoint(model).replace("v1", "v9", 1))

    def test_corrupted_value(self, model):
        text = dump_checkpoint(model)
        lines = text.split("\n")
        idx = lines.index(next(l for l in lines if l.startswith("param head.b2"))) + 1
        lines[idx] = "abc"
        with pytest.raises(CheckpointError):
            parse_checkpoint("\n".join(lines))

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nope.ckpt")
