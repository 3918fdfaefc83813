import itertools
import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from penll.core import (
    R_INF,
    BandwidthSpec,
    Dataset,
    FitConfig,
    Grid,
    as_penalty,
    default_inflation,
    grid_index,
    grid_multi_index,
    is_infinite,
    penalty_to_float,
)


@pytest.mark.parametrize("shape, idx, flat", [((3, 3), (0, 0), 0), ((3, 3), (2, 2), 8), ((2, 3), (1, 2), 5)])
def test_grid_index_examples(shape, idx, flat):
    assert grid_index(Grid(shape), idx) == flat


def test_grid_index_row_major_by_enumeration():
    g = Grid((2, 3))
    expected = list(itertools.product(range(2), range(3)))
    assert [grid_multi_index(g, j) for j in range(g.m)] == expected


@pytest.mark.parametrize("bad", [(3, 0), (-1, 0), (0, 3)])
def test_grid_index_out_of_range(bad):
    with pytest.raises(IndexError):
        grid_index(Grid((3, 3)), bad)


def test_grid_multi_index_out_of_range():
    with pytest.raises(IndexError):
        grid_multi_index(Grid((2, 2)), 4)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(2, 5), min_size=1, max_size=4))
def test_grid_index_round_trip(shape):
    g = Grid(tuple(shape))
    for t in itertools.product(*[range(mk) for mk in shape]):
        assert grid_multi_index(g, grid_index(g, t)) == t


def test_grid_nodes_endpoints_and_sizes():
    g = Grid((5, 3))
    assert g.m == 15 and g.m_star == 8 and g.d == 2
    for mk, nodes in zip(g.m_per_axis, g.nodes_per_axis):
        assert nodes[0] == 0.0 and nodes[-1] == 1.0
        assert np.allclose(np.diff(nodes), 1.0 / (mk - 1))
    c = g.coords()
    assert c.shape == (15, 2)
    assert np.array_equal(c[grid_index(g, (4, 1))], [1.0, 0.5])


def test_grid_rejects_single_node_axis():
    with pytest.raises(ValueError):
        Grid((1, 4))


def test_dataset_validation():
    Dataset(np.array([[0.0, 1.0]]), [1.0])
    with pytest.raises(ValueError):
        Dataset(np.array([[0.0, 1.2]]), [1.0])
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 5)), np.zeros(3))
    assert Dataset(np.zeros((3, 5)), np.zeros(3), allow_high_dim=True).d == 5
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.zeros(2))


def test_dataset_is_immutable():
    ds = Dataset(np.array([[0.1], [0.2]]), [1.0, 2.0])
    with pytest.raises(ValueError):
        ds.X[0, 0] = 0.5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-3, 10.0), min_size=1, max_size=4))
def test_h_geo_is_geometric_mean(hs):
    bw = BandwidthSpec(tuple(hs))
    assert math.isclose(bw.h_geo, float(np.prod(hs)) ** (1 / len(hs)), rel_tol=1e-12)


def test_bandwidth_validation():
    with pytest.raises(ValueError):
        BandwidthSpec((0.1, 0.0))
    with pytest.raises(ValueError):
        BandwidthSpec((0.1,), boundary="reflect")


def test_default_inflation_ramp():
    h = 0.117
    t = np.array([0.0, h / 2, h, 0.5, 1.0])
    loc = default_inflation(t, h)
    assert math.isclose(loc[0], 0.174, rel_tol=1e-12) and math.isclose(loc[-1], 0.174, rel_tol=1e-12)
    assert loc[2] == h and loc[3] == h
    assert h < loc[1] < 0.174


def test_penalty_normalisation():
    assert as_penalty("inf") is R_INF
    assert as_penalty(float("inf")) is R_INF
    assert as_penalty(0) == 0.0
    assert is_infinite(FitConfig("inf", BandwidthSpec((0.2,))).R)
    assert penalty_to_float(R_INF) == math.inf
    assert pickle.loads(pickle.dumps(R_INF)) is R_INF
    with pytest.raises(ValueError):
        as_penalty(-1.0)


def test_fit_config_validation():
    bw = BandwidthSpec((0.2,))
    with pytest.raises(ValueError):
        FitConfig(1.0, bw, iteration_tolerance=0.0)
    with pytest.raises(ValueError):
        FitConfig(1.0, bw, pinv_cutoff=1.0)
    with pytest.raises(ValueError):
        FitConfig(1.0, bw, solver="cg")
    cfg = FitConfig(1.0, bw).with_R(2.0)
    assert cfg.R == 2.0 and cfg.bandwidths == bw
