import numpy as np
import pytest

from tnet.dgp import (ConfigError, DgpSpec, OutcomeOracle, generate, generate_graph, generate_outcomes,
                      generate_treatments, load_truth, population_psi, save_truth, true_effects)
from tnet.data import save_dataset, load_dataset
from tnet.estimation import EstimandSpec
from tnet.graph import Graph, compute_exposure


def test_complete_and_empty_graphs():
    assert len(generate_graph("erdos_renyi", 4, 1.0).edges) == 6
    assert len(generate_graph("erdos_renyi", 50, 0.0).edges) == 0


def test_preferential_attachment_mean_degree():
    g = generate_graph("preferential_attachment", 1000, 5, seed=1)
    assert abs(g.degrees.mean() - 10) <= 0.5


def test_graph_from_file(tmp_path):
    p = tmp_path / "e.txt"
    p.write_text("0 1\n1 2\n")
    assert generate_graph("edge_list_file", 3, p) == Graph.from_edges(3, [(0, 1), (1, 2)])


def test_graph_config_errors():
    with pytest.raises(ConfigError):
        generate_graph("lattice", 10, 1)
    with pytest.raises(ConfigError):
        generate_graph("erdos_renyi", 10, 1.5)
    with pytest.raises(ConfigError):
        generate_graph("preferential_attachment", 5, 5)


def test_tie_cases_assign_control():
    ring = Graph.from_edges(6, [(i, (i + 1) % 6) for i in range(6)])
    spec = DgpSpec(covariate_dim=3)
    np.testing.assert_array_equal(generate_treatments(ring, np.ones((6, 3)), spec), 0)
    zero_w = DgpSpec(covariate_dim=3, w1=np.zeros(3))
    x = np.random.default_rng(0).normal(size=(6, 3))
    np.testing.assert_array_equal(generate_treatments(ring, x, zero_w), 0)


def test_treated_fraction_balanced():
    g = generate(DgpSpec("homo", seed=4), 5000)
    assert 0.3 <= g.dataset.treatments.mean() <= 0.7


def test_homo_substitution():
    o = OutcomeOracle("homo", np.array([0.5]), np.array([0.5]))
    assert o(1, 0.5)[0] == pytest.approx(2.25)


@pytest.mark.parametrize("variant", ["homo", "hete", "hete_z"])
def test_oracle_reproduces_observations(variant):
    g = generate(DgpSpec(variant, seed=1), 300)
    ds = g.dataset
    np.testing.assert_allclose(ds.outcomes - g.truth(ds.treatments, ds.exposures), g.noise, atol=1e-12)


def test_effect_oracles():
    g = generate(DgpSpec("hete", seed=0), 400)
    _, ime = true_effects(g, EstimandSpec("IME", (1, 0.0), (0, 0.0)))
    np.testing.assert_allclose(ime, 1 + g.po_values + 0.5 * g.po_neigh)
    gz = generate(DgpSpec("hete_z", seed=0), 400)
    _, ise = true_effects(gz, EstimandSpec("ISE", (0, 0.4), (0, 0.0)))
    np.testing.assert_allclose(ise, 0.4 * (1 + 0.5 * gz.po_values + gz.po_neigh))
    gh = generate(DgpSpec("homo", seed=0), 400)
    assert true_effects(gh, EstimandSpec("AME", (1, 0.0), (0, 0.0)))[0] == pytest.approx(1.0, abs=1e-12)
    for t in (0, 1):
        diff = gh.truth(1, 0.3) - gh.truth(0, 0.3)
        np.testing.assert_allclose(diff, 1.0)


def test_homo_effects_do_not_depend_on_features():
    a = generate(DgpSpec("homo", seed=0), 300)
    b = generate(DgpSpec("homo", seed=9), 300)
    spec = EstimandSpec("ASE", (0, 0.2), (0, 0.0))
    assert true_effects(a, spec)[0] == pytest.approx(true_effects(b, spec)[0], abs=1e-12)


def test_reproducible_bit_for_bit():
    a = generate(DgpSpec("hete_z", seed=5), 200).dataset
    b = generate(DgpSpec("hete_z", seed=5), 200).dataset
    for name in ("features", "treatments", "outcomes", "exposures"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.graph == b.graph


def test_spec_validation():
    with pytest.raises(ConfigError, match="variant"):
        DgpSpec("linear")
    with pytest.raises(ConfigError):
        DgpSpec(noise_sd=0)
    with pytest.raises(ConfigError):
        DgpSpec(covariate_dim=3, w1=np.ones(4))


def test_unknown_variant_in_outcomes():
    g = Graph.from_edges(2, [(0, 1)])
    spec = DgpSpec()
    object.__setattr__(spec, "variant", "bogus")
    with pytest.raises(ConfigError):
        generate_outcomes(g, np.zeros((2, 10)), [0, 1], [1.0, 0.0], spec)


def test_truth_round_trip(tmp_path):
    g = generate(DgpSpec("hete_z", seed=3), 100)
    save_dataset(g.dataset, tmp_path)
    save_truth(g, tmp_path)
    back = load_truth(tmp_path, load_dataset(tmp_path))
    assert back.spec.variant == "hete_z"
    np.testing.assert_array_equal(back.truth(1, 0.3), g.truth(1, 0.3))


def test_missing_truth(tmp_path, tiny_data):
    with pytest.raises(FileNotFoundError, match="no-oracle"):
        load_truth(tmp_path, tiny_data)


def test_population_psi_homo_only():
    g = generate(DgpSpec("homo", seed=0), 100)
    assert population_psi(g, 1, 0.5) == pytest.approx(1 + 0.5 + 0.5 + 0.25)
    with pytest.raises(ConfigError):
        population_psi(generate(DgpSpec("hete", seed=0), 100), 1, 0.5)
