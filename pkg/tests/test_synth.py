import pytest

from moomin.synth import SynthSpec, generate
from moomin.trainer import LARGE_MOLECULE_ATOMS


class TestSynthSpec:
    @pytest.mark.parametrize("field,value", [("noise_rate", -0.1), ("edge_prob", 1.5), ("n_records", 0),
                                             ("n_drugs", 1), ("planted_rule", "colour"), ("max_atoms", 40)])
    def test_rejects_invalid(self, field, value):
        with pytest.raises(ValueError):
            SynthSpec(**{field: value})

    def test_generate_is_seeded(self):
        a = generate(SynthSpec(n_records=50, seed=3))
        b = generate(SynthSpec(n_records=50, seed=3))
        assert a[0] == b[0] and a[2] == b[2]
        assert [repr(r) for r in a[1].synergy] == [repr(r) for r in b[1].synergy]

    def test_atom_counts_within_range(self):
        spec = SynthSpec(n_records=50, seed=1)
        _, bundle, rule = generate(spec)
        sizes = [m.num_atoms for m in bundle.molecules.values()]
        assert min(sizes) >= spec.min_atoms and max(sizes) <= spec.max_atoms
        assert rule["large_atoms"] == LARGE_MOLECULE_ATOMS
