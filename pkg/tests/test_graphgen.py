import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from epitopo import graphgen as gg
from epitopo.errors import InvalidSpec, ParseError, RateTooLarge, SelfLoopError

SYNTHETIC = ("ER", "BA", "WS", "RGG")


def is_connected(A):
    return nx.is_connected(nx.from_numpy_array((A > 0).astype(int)))


@pytest.mark.parametrize("model", SYNTHETIC)
def test_generated_network_invariants(model):
    net = gg.generate(gg.GraphSpec(model, 40, 4.0, rng_seed=3))
    A = net.A
    assert A.shape == (40, 40)
    assert np.array_equal(A, A.T)
    assert np.all(np.diag(A) == 0)
    assert set(np.unique(A)) <= {0.0, 1.0}
    assert is_connected(A)
    assert np.all(net.P == gg.DEFAULT_POPULATION)


@pytest.mark.parametrize("model", SYNTHETIC)
def test_generation_is_deterministic(model):
    spec = gg.GraphSpec(model, 30, 4.0, rng_seed=11)
    assert np.array_equal(gg.generate(spec).A, gg.generate(spec).A)


@pytest.mark.parametrize("seed", range(5))
def test_er_edge_count_band(seed):
    net = gg.generate(gg.GraphSpec("ER", 100, 4.0, rng_seed=seed))
    assert 150 <= net.num_links <= 250


def test_ws_without_rewiring_is_ring_lattice():
    net = gg.generate(gg.GraphSpec("WS", 20, 4.0, rewire_prob=0.0))
    assert np.all(net.degree() == 4)
    net = gg.generate(gg.GraphSpec("WS", 20, 5.2, rewire_prob=0.0))
    assert np.all(net.degree() == 2 * round(5.2 / 2))


def test_ba_with_one_attachment_is_tree():
    net = gg.generate(gg.GraphSpec("BA", 5, 2.0, rng_seed=0))
    assert net.num_links == 4
    assert is_connected(net.A)


def test_ba_hubs_exceed_ws_degrees():
    ba = np.mean([gg.generate(gg.GraphSpec("BA", 60, 4.0, rng_seed=s)).degree().max() for s in range(10)])
    ws = np.mean([gg.generate(gg.GraphSpec("WS", 60, 4.0, rng_seed=s)).degree().max() for s in range(10)])
    assert ba > ws


def test_rgg_mean_degree_near_target():
    degs = [gg.generate(gg.GraphSpec("RGG", 100, 4.0, rng_seed=s)).degree().mean() for s in range(10)]
    assert 3.0 < np.mean(degs) < 4.5


@pytest.mark.parametrize("kwargs", [
    dict(model="XX"), dict(n=1), dict(n=10, avg_degree=10), dict(avg_degree=0),
    dict(rewire_prob=1.5), dict(model="FILE"), dict(file_path="x.csv"),
])
def test_invalid_specs(kwargs):
    with pytest.raises(InvalidSpec):
        gg.generate(gg.GraphSpec(**kwargs))


def test_bundled_contiguous_usa():
    net = gg.load_edge_list("contiguous_usa")
    assert net.n == 49
    assert net.num_links == 107
    assert np.array_equal(net.A, net.A.T)
    assert is_connected(net.A)
    assert "CA" in net.labels and "DC" in net.labels


def test_file_spec_loads_bundled_graph():
    net = gg.generate(gg.GraphSpec("FILE", file_path="contiguous_usa"))
    assert net.n == 49


def test_edge_list_parsing(tmp_path):
    f = tmp_path / "g.csv"
    f.write_text("# comment\nb,a\n\na,c\nc,d\n", encoding="utf-8")
    net = gg.load_edge_list(f)
    assert net.labels == ["b", "a", "c", "d"]
    assert net.num_links == 3
    assert net.A[1, 0] == net.A[0, 1] == 1.0


def test_weighted_edge_list_orientation(tmp_path):
    f = tmp_path / "w.csv"
    f.write_text("x,y,0.02\ny,z,0.03\n", encoding="utf-8")
    net = gg.load_edge_list(f, weighted=True, directed=True)
    # weight on src,dst is the fraction of src travelling to dst: A[dst, src]
    assert net.A[1, 0] == 0.02 and net.A[0, 1] == 0.0
    assert net.A[2, 1] == 0.03
    und = gg.load_edge_list(f, weighted=True)
    assert np.array_equal(und.A, und.A.T)


def test_duplicate_edges_merge_with_warning(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("a,b,0.01\nb,a,0.02\n", encoding="utf-8")
    with pytest.warns(UserWarning, match="duplicate"):
        net = gg.load_edge_list(f, weighted=True)
    assert net.A[0, 1] == pytest.approx(0.03)


@pytest.mark.parametrize("text,err,line", [
    ("", ParseError, None),
    ("# only comments\n", ParseError, None),
    ("a,b\nc\n", ParseError, 2),
    ("a,b,x\n", ParseError, 1),
    ("a,b,-1\n", ParseError, 1),
    ("a,b\nb,b\n", SelfLoopError, 2),
])
def test_edge_list_errors(tmp_path, text, err, line):
    f = tmp_path / "bad.csv"
    f.write_text(text, encoding="utf-8")
    with pytest.raises(err) as info:
        gg.load_edge_list(f)
    if line is not None:
        assert info.value.context["line"] == line


def test_missing_file_is_parse_error(tmp_path):
    with pytest.raises(ParseError):
        gg.load_edge_list(tmp_path / "missing.csv")


def ring(n):
    A = np.zeros((n, n))
    for i in range(n):
        A[i, (i + 1) % n] = A[(i + 1) % n, i] = 1.0
    return gg.MobilityNetwork(A=A, P=None)


def test_assign_mobility_uniform_rate():
    net = gg.assign_mobility(ring(4), 0.01)
    assert set(np.unique(net.A[net.A > 0])) == {0.01}
    net.check()


def test_assign_mobility_rate_too_large():
    star = np.zeros((5, 5))
    star[0, 1:] = star[1:, 0] = 1.0
    with pytest.raises(RateTooLarge):
        gg.assign_mobility(gg.MobilityNetwork(A=star, P=None), 0.3)


def test_assign_mobility_weighted_passthrough():
    net = gg.MobilityNetwork(A=np.array([[0, 0.2], [0.1, 0]]), P=None, weighted=True)
    with pytest.warns(UserWarning):
        out = gg.assign_mobility(net, 0.01)
    assert out is net


def test_default_rate():
    assert gg.DEFAULT_MOBILITY_RATE == 0.01


def test_check_rejects_bad_networks():
    with pytest.raises(InvalidSpec):
        gg.MobilityNetwork(A=np.array([[0, 1.0], [0.5, 0]]), P=None).check()
    with pytest.raises(InvalidSpec):
        gg.MobilityNetwork(A=np.array([[0.1, 0], [0, 0]]), P=None, directed=True).check()
    with pytest.raises(InvalidSpec):
        gg.MobilityNetwork(A=np.zeros((2, 2)), P=np.array([1.0, 0.0])).check()


@given(st.sampled_from(SYNTHETIC), st.integers(10, 40), st.integers(0, 10_000))
def test_generated_networks_are_valid_after_rates(model, n, seed):
    net = gg.assign_mobility(gg.generate(gg.GraphSpec(model, n, 3.0, rng_seed=seed)), 0.01)
    net.check()
    assert is_connected(net.A)
