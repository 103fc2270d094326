import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bilincontrol import data
from bilincontrol.core import (
    ControlSignal,
    GridSpec,
    ProblemError,
    ProblemSpec,
    block_to_complex,
    commutator,
    complex_split_rhs,
    detect_block_structure,
    frobenius_norm,
    load_problem,
    save_problem,
    validate_problem,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
mat4 = arrays(np.float64, (4, 4), elements=finite)


# --- norms and commutators --------------------------------------------------

def test_frobenius_examples():
    assert frobenius_norm(np.eye(4)) == pytest.approx(2.0, abs=1e-15)
    assert frobenius_norm(np.zeros((3, 3))) == 0.0
    # A_ref: four entries of magnitude 1 and four of magnitude 2 -> 4 + 16 = 20
    assert frobenius_norm(data.A_REF) == pytest.approx(np.sqrt(20.0), abs=1e-14)
    assert frobenius_norm(data.B_REF) == pytest.approx(np.sqrt(14.0), abs=1e-14)


@given(mat4)
def test_frobenius_zero_iff_zero(M):
    assert (frobenius_norm(M) == 0.0) == (not np.any(M))


@given(mat4, mat4)
def test_commutator_antisymmetric(M, N):
    np.testing.assert_allclose(commutator(M, N), -commutator(N, M), atol=1e-9)
    np.testing.assert_array_equal(commutator(M, M), np.zeros((4, 4)))


def test_commutator_reference_pair():
    # AB - BA = blockdiag(PB PA - PA PB) with PB PA - PA PB = [[0,4],[-4,0]], by hand
    expected = np.zeros((4, 4))
    expected[0, 1] = expected[2, 3] = 4.0
    expected[1, 0] = expected[3, 2] = -4.0
    np.testing.assert_array_equal(commutator(data.A_REF, data.B_REF), expected)


def test_commutator_shape_mismatch():
    with pytest.raises(ValueError):
        commutator(np.eye(2), np.eye(3))


# --- block structure and complex form ------------------------------------------

def test_detect_block_reference():
    s = detect_block_structure(data.A_REF, data.B_REF)
    assert s is not None and s.half_dim == 2
    np.testing.assert_array_equal(s.PA, [[1, -2], [-2, -1]])
    np.testing.assert_array_equal(s.PB, [[-1, 1], [1, 2]])
    A, B = s.reconstruct()
    np.testing.assert_array_equal(A, data.A_REF)
    np.testing.assert_array_equal(B, data.B_REF)


def test_detect_block_rejections():
    assert detect_block_structure(np.zeros((3, 3)), np.zeros((3, 3))) is None
    A = data.A_REF.copy()
    A[0, 0] = 0.5
    assert detect_block_structure(A, data.B_REF) is None
    A = data.A_REF.copy()
    A[0, 3] = 5.0  # PA no longer symmetric
    assert detect_block_structure(A, data.B_REF) is None


@given(arrays(np.float64, (3, 3), elements=finite), arrays(np.float64, (3, 3), elements=finite))
def test_block_roundtrip(P, Q):
    PA, PB = P + P.T, Q + Q.T
    Z = np.zeros((3, 3))
    A = np.block([[Z, PA], [-PA, Z]])
    B = np.block([[Z, PB], [-PB, Z]])
    s = detect_block_structure(A, B)
    assert s is not None
    A2, B2 = s.reconstruct()
    np.testing.assert_array_equal(A2, A)
    np.testing.assert_array_equal(B2, B)


def test_block_to_complex_u1():
    s = detect_block_structure(data.A_REF, data.B_REF)
    H1, H2 = block_to_complex(s, 1.0)
    np.testing.assert_array_equal(H1, [[0, -1], [-1, 1]])
    np.testing.assert_array_equal(H2, np.zeros((2, 2)))


def test_complex_split_matches_real_rk4_step():
    s = detect_block_structure(data.A_REF, data.B_REF)
    u, h = 0.7, 0.01
    H1, H2 = block_to_complex(s, u)
    M = data.A_REF + u * data.B_REF
    x = data.X0_REF

    def rk4(f, y):
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    real = rk4(lambda v: M @ v, x)
    # complex oracle: w = y - i z, w' = i H w with H = H1 + i H2
    H = H1 + 1j * H2
    w = rk4(lambda v: 1j * (H @ v), x[:2] - 1j * x[2:])
    np.testing.assert_allclose(np.concatenate([w.real, -w.imag]), real, atol=1e-13)

    def split(v):
        dy, dz = complex_split_rhs(H1, H2, v[:2], v[2:])
        return np.concatenate([dy, dz])

    np.testing.assert_allclose(rk4(split, x), real, atol=1e-13)


# --- problem validation and I/O --------------------------------------------------

def test_validate_reference():
    rep = validate_problem(data.example1())
    assert rep.valid and not rep.violations
    assert rep.block_structure
    assert rep.commuting is False
    assert rep.symmetry_defect == 0.0


def test_validate_reports_violations():
    d = data.example1().to_dict()
    d["L"] = [[1, 2, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]
    d["T"] = -1
    d["x0"] = [0, 0, 0, 0]
    rep = validate_problem(d)
    assert not rep.valid
    text = " ".join(rep.violations)
    assert "symmetric" in text and "T" in text and "x0" in text


@pytest.mark.parametrize("field,value", [("nu", 0.0), ("beta", -1.0), ("T", 0.0)])
def test_problemspec_rejects(field, value):
    with pytest.raises(ProblemError):
        data.example1().replace(**{field: value})


def test_problemspec_shape_mismatch():
    with pytest.raises(ProblemError):
        ProblemSpec(np.eye(3), np.eye(4), np.eye(4), np.ones(4), 1.0, 1.0)


def test_problem_roundtrip(tmp_path):
    p = data.example2(beta=0.1)
    save_problem(p, tmp_path / "p.json")
    q = load_problem(tmp_path / "p.json")
    for name in ("A", "B", "L", "x0"):
        np.testing.assert_array_equal(getattr(q, name), getattr(p, name))
    assert (q.T, q.nu, q.beta) == (p.T, p.nu, p.beta)


def test_load_problem_bad_json(tmp_path):
    f = tmp_path / "bad.json"
    f.write_text('{"A": [[1, 2], ')
    with pytest.raises(ProblemError, match="line 1"):
        load_problem(f)


def test_problemspec_arrays_frozen():
    p = data.example1()
    with pytest.raises(ValueError):
        p.A[0, 0] = 3.0


# --- grids and signals --------------------------------------------------------

def test_grid_from_step():
    g = GridSpec.from_step(0.5, 0.0005)
    assert g.num_nodes == 1001
    assert g.step == pytest.approx(0.0005, rel=1e-14)
    assert g.times[0] == 0.0 and g.times[-1] == 0.5
    assert g.trapezoid_weights().sum() == pytest.approx(0.5, rel=1e-14)
    with pytest.raises(ValueError):
        GridSpec.from_step(1.0, 0.3)
    with pytest.raises(ValueError):
        GridSpec(1.0, 1)


def test_control_clamps():
    g = GridSpec(1.0, 5)
    u = ControlSignal(g, [0, 2, -3, 0.5, 1], nu=1.0)
    assert u.clamped
    np.testing.assert_array_equal(u.values, [0, 1, -1, 0.5, 1])
    assert not ControlSignal.constant(g, 0.3, nu=1.0).clamped


def test_control_interpolates_linearly():
    g = GridSpec(1.0, 3)
    u = ControlSignal(g, [0.0, 1.0, -1.0])
    assert u(0.25) == pytest.approx(0.5)
    assert u(0.75) == pytest.approx(0.0)
    np.testing.assert_allclose(u.midpoints(), [0.5, 0.0])


def test_piecewise_reference_control():
    g = GridSpec.from_step(5.0, 0.5)
    u = data.example2_initial_control(g)
    np.testing.assert_array_equal(u.values, [1, 1] + [0] * 9)
