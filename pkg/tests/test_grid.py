import numpy as np
import pytest

from tclcoord import InvalidParameterError, OFF, ON, bin_temperature, build_grid


@pytest.fixture
def g():
    return build_grid(20.0, 22.0, q=10, m=2)


def test_table1_geometry(g):
    assert g.n_bins == 12
    assert g.delta_lambda == pytest.approx(2.0 / 9.0, abs=1e-15)
    assert g.node(2, OFF) == pytest.approx(19.8889, abs=1e-4)
    assert g.node(12, OFF) == pytest.approx(22.1111, abs=1e-4)


def test_axes_aligned(g):
    # off bin j and on bin j-(m-1) share a nodal temperature
    for j in range(g.m, g.n_bins + 1):
        assert g.node(j, OFF) == pytest.approx(g.node(j - (g.m - 1), ON), abs=1e-12)
    assert g.node(1, ON) == pytest.approx(g.node(2, OFF), abs=1e-12)


def test_boundary_bins_straddle_deadband(g):
    assert g.node(g.m, OFF) == pytest.approx(g.lambda_min - g.delta_lambda / 2)
    assert g.node(g.n_bins, OFF) == pytest.approx(g.lambda_max + g.delta_lambda / 2)


def test_minimal_grid():
    g = build_grid(0.0, 1.0, q=3, m=1)
    assert g.n_bins == 4
    assert g.delta_lambda == 0.5
    np.testing.assert_allclose(g.nodes_off, [-0.25, 0.25, 0.75, 1.25])


def test_uniform_spacing(g):
    np.testing.assert_allclose(np.diff(g.nodes_on), g.delta_lambda)
    np.testing.assert_allclose(np.diff(g.nodes_off), g.delta_lambda)


@pytest.mark.parametrize("args", [(22, 20, 10, 2), (20, 22, 2, 2), (20, 22, 10, 0)])
def test_invalid_parameters(args):
    with pytest.raises(InvalidParameterError):
        build_grid(*args)


def test_bin_lookup(g):
    assert bin_temperature(21.0, OFF, g) == 7
    assert bin_temperature(19.88, OFF, g) == 2
    assert bin_temperature(40.0, OFF, g) == 12
    assert bin_temperature(-40.0, OFF, g) == 1


def test_nodes_recover_own_bin(g):
    for j in range(1, g.n_bins + 1):
        assert bin_temperature(g.node(j, OFF), OFF, g) == j
        assert bin_temperature(g.node(j, ON), ON, g) == j


def test_partition_property(g):
    # every interior temperature lands in exactly one bin, with no gaps
    lo = g.nodes_off[0] - g.delta_lambda / 2
    hi = g.nodes_off[-1] + g.delta_lambda / 2
    thetas = np.arange(lo + 1e-9, hi - 1e-9, g.delta_lambda / 10)
    bins = bin_temperature(thetas, OFF, g)
    assert np.all((bins >= 1) & (bins <= g.n_bins))
    assert np.all(np.diff(bins) >= 0)
    for j in range(1, g.n_bins + 1):
        sel = bins == j
        inside = (thetas[sel] >= g.node(j, OFF) - g.delta_lambda / 2 - 1e-9)
        inside &= (thetas[sel] < g.node(j, OFF) + g.delta_lambda / 2 + 1e-9)
        assert inside.all()


def test_alignment_of_binning(g):
    thetas = np.linspace(g.node(g.m, OFF), g.node(g.n_bins, OFF), 200)
    off_bins = bin_temperature(thetas, OFF, g)
    on_bins = bin_temperature(thetas, ON, g)
    sel = off_bins >= g.m
    np.testing.assert_array_equal(on_bins[sel], off_bins[sel] - (g.m - 1))


def test_vector_and_scalar_agree(g):
    thetas = np.array([19.9, 21.0, 22.3])
    vec = bin_temperature(thetas, ON, g)
    assert [bin_temperature(t, ON, g) for t in thetas] == list(vec)
