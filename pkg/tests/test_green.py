import numpy as np
import pytest

from elastokernel.green import (GreenError, InsufficientRange, build_green,
                                discrete_delta_solve, doubling_check, green_bounds,
                                green_symmetry, pointwise_factor, spectral_gap,
                                static_crosscheck, write_green_csv)
from elastokernel.parabolic import CN

from conftest import square_op

Y = (0.5, 0.5)
EPS = 0.2


@pytest.fixture(scope="module")
def dir16():
    return square_op("DDDD", 16)


@pytest.fixture(scope="module")
def neu16():
    return square_op("NNNN", 16)


@pytest.fixture(scope="module")
def mixed_greens(mixed16):
    return [build_green(mixed16, y, EPS, tail_tol=1e-8, solver="direct")
            for y in [(0.4, 0.5), (0.6, 0.55), (0.5, 0.7)]]


def rel(op, a, b):
    return op.mass_norm(a - b) / op.mass_norm(b)


@pytest.mark.parametrize("scheme", ["be", CN])
def test_matches_discrete_delta_solve(dir16, scheme):
    g = build_green(dir16, Y, EPS, tail_tol=1e-10, tol=1e-13, scheme=scheme)
    for k in range(2):
        assert rel(dir16, g.column(k), discrete_delta_solve(dir16, Y, EPS, k)) < 1e-6


def test_tail_certificate_is_sound(dir16):
    g = build_green(dir16, Y, EPS, tail_tol=1e-5, solver="direct")
    chk = doubling_check(g, np.array([[0.3, 0.3], [0.5, 0.6], [0.6, 0.45]]), solver="direct")
    assert chk["ok"] and chk["T2"] >= 2 * g.truncation_T
    # the certified mass-norm tail equals ||u_T||_M / lambda_1
    assert g.tail_bound == pytest.approx(g.tail_mass_norm.max() * pointwise_factor(dir16))


def test_measured_rate_matches_lambda1(mixed16):
    g = build_green(mixed16, Y, EPS, tail_tol=1e-9, solver="direct")
    assert g.measured_rate == pytest.approx(g.rate, rel=1e-2)
    assert g.rate == pytest.approx(spectral_gap(mixed16), rel=1e-10)


def test_nonpositive_rate_is_an_error(mixed16):
    with pytest.raises(GreenError):
        build_green(mixed16, Y, EPS, lambda1=0.0)


def test_neumann_green_orthogonal_to_rigid(neu16):
    g = build_green(neu16, Y, EPS, tail_tol=1e-8, solver="direct")
    assert np.abs(g.rigid_moments()).max() < 1e-9
    assert rel(neu16, g.column(1), discrete_delta_solve(neu16, Y, EPS, 1)) < 1e-6


def test_static_crosscheck(mixed16, mixed_greens):
    f = lambda x: np.c_[np.sin(np.pi * x[:, 0]) * x[:, 1], np.cos(x[:, 0] + x[:, 1])]
    cc = static_crosscheck(mixed_greens, mixed16, f)
    assert cc["compatible"]
    assert cc["rel_error"] < 1e-6
    assert cc["rel_error_point"] < 1e-2
    zero = static_crosscheck(mixed_greens, mixed16, lambda x: np.zeros((len(x), 2)))
    assert zero["rel_error"] == 0.0


def test_static_crosscheck_rigid_load(neu16):
    gs = [build_green(neu16, y, EPS, tail_tol=1e-8, solver="direct") for y in [(0.4, 0.5)]]
    cc = static_crosscheck(gs, neu16, lambda x: np.c_[np.ones(len(x)), np.zeros(len(x))])
    assert not cc["compatible"]
    assert np.abs(cc["values"]).max() < 1e-12


def test_symmetry_mismatch_small(mixed_greens):
    assert green_symmetry(mixed_greens) < 1e-2


def test_bounds_reject_short_range(mixed_greens):
    with pytest.raises(InsufficientRange):
        green_bounds(mixed_greens, mu1=0.5)


def test_csv_export(tmp_path, mixed_greens):
    write_green_csv(mixed_greens[:1], tmp_path / "g.csv", [[0.3, 0.3], [0.7, 0.8]])
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "x1,x2,y1,y2,G11,G12,G21,G22,tail_bound"
    assert len(lines) == 3 and len(lines[1].split(",")) == 9
