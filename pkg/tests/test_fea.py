import numpy as np
import pytest
from hypothesis import given, strategies as st

from pcfc.errors import EmptyRegion, SingularJacobian
from pcfc.fea import (
    FIBER_T800,
    MATRIX_F3900,
    BoundaryConditions,
    Material,
    RVEModel,
    StressTensor4,
    effective_modulus,
    element_stiffness,
    homogenize,
    homogenize_phase,
    phase_groups,
    principal_stresses,
    principal_stresses_array,
    solve,
    strain_energy,
)
from pcfc.mesh import pixelate, structured_grid
from pcfc.microgen import Phase

UNIT_SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def plate(d=8, phase=Phase.MATRIX, W=200.0):
    return structured_grid(W, d, phase=np.full(d * d, phase))


@pytest.fixture(scope="module")
def matrix_model():
    return RVEModel(plate(10))


# element ------------------------------------------------------------------


def test_unit_square_rigid_modes():
    K = element_stiffness(UNIT_SQUARE, MATRIX_F3900)
    assert np.allclose(K, K.T, rtol=0, atol=1e-9 * abs(K).max())
    tx = np.tile([1.0, 0.0], 4)
    assert np.allclose(K @ tx, 0, atol=1e-9 * abs(K).max())
    w = np.linalg.eigvalsh(K)
    tol = 1e-8 * w.max()
    assert np.sum(np.abs(w) < tol) == 3
    assert np.sum(w > tol) == 5


def test_stiffness_matches_energy_hessian(rng):
    coords = UNIT_SQUARE * 3.0 + rng.uniform(-0.4, 0.4, size=(4, 2))
    K = element_stiffness(coords, FIBER_T800)
    h = 1e-3
    H = np.empty((8, 8))
    eye = np.eye(8) * h
    for i in range(8):
        for j in range(8):
            H[i, j] = (
                strain_energy(coords, FIBER_T800, eye[i] + eye[j])
                - strain_energy(coords, FIBER_T800, eye[i] - eye[j])
                - strain_energy(coords, FIBER_T800, -eye[i] + eye[j])
                + strain_energy(coords, FIBER_T800, -eye[i] - eye[j])
            ) / (4 * h * h)
    assert np.abs(H - K).max() <= 1e-6 * np.abs(K).max()


def test_degenerate_quad_is_rejected():
    bowtie = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(SingularJacobian):
        element_stiffness(bowtie, MATRIX_F3900)
    with pytest.raises(SingularJacobian):
        element_stiffness(np.zeros((4, 2)), MATRIX_F3900)


@pytest.mark.parametrize("kw", [dict(E=0), dict(nu=0.5), dict(sigma_f_t=0), dict(sigma_f_c=-1)])
def test_material_validation(kw):
    base = dict(E=1.0, nu=0.3, sigma_f_t=1.0, sigma_f_c=1.0) | kw
    with pytest.raises(ValueError):
        Material(**base)


def test_bc_kinds_are_exclusive():
    with pytest.raises(ValueError):
        BoundaryConditions(sx=1.0, strain=1e-3)


# global solve -------------------------------------------------------------


def assert_uniform(stress, expected):
    scale = max(np.abs(expected).max(), 1.0)
    assert np.abs(stress - np.asarray(expected)).max() <= 1e-6 * scale


@pytest.mark.parametrize(
    "load, expected",
    [
        ((1000, 0, 0), (1000, 0, 387, 0)),
        ((0, 0, 500), (0, 0, 0, 500)),
        ((600, -400, 0), (600, -400, 0.387 * 200, 0)),
        ((-250, 800, 300), (-250, 800, 0.387 * 550, 300)),
    ],
)
def test_patch_matrix_plate(matrix_model, load, expected):
    res = matrix_model.solve(BoundaryConditions.traction(*load))
    assert_uniform(res.stress, expected)
    assert res.residual <= 1e-10


@given(
    sx=st.floats(-2000, 2000), sy=st.floats(-2000, 2000), txy=st.floats(-2000, 2000),
    fiber=st.booleans(),
)
def test_patch_any_constant_traction(sx, sy, txy, fiber):
    mat = FIBER_T800 if fiber else MATRIX_F3900
    res = solve(plate(4, Phase.FIBER if fiber else Phase.MATRIX), None, BoundaryConditions.traction(sx, sy, txy))
    mag = max(abs(sx), abs(sy), abs(txy), 1.0)
    expected = np.array([sx, sy, mat.nu * (sx + sy), txy])
    assert np.abs(res.stress - expected).max() <= 1e-6 * mag


def test_zero_load(matrix_model):
    res = matrix_model.solve(BoundaryConditions.traction())
    assert not res.displacements.any() and not res.stress.any()


@pytest.fixture(scope="module")
def composite_model(rve60):
    return RVEModel(pixelate(rve60, 40))


def test_global_stiffness_symmetric(composite_model):
    K = composite_model.K
    assert abs(K - K.T).max() <= 1e-10 * abs(K).max()


def test_linearity(composite_model):
    a, b = composite_model.solve_many(
        [BoundaryConditions.traction(300, -700, 250), BoundaryConditions.traction(900, -2100, 750)]
    )
    assert np.abs(b.stress - 3 * a.stress).max() <= 1e-10 * np.abs(b.stress).max()
    assert np.abs(b.displacements - 3 * a.displacements).max() <= 1e-10 * np.abs(b.displacements).max()


def test_superposition_of_components(composite_model):
    parts = composite_model.solve_many(
        [BoundaryConditions.traction(sx=400), BoundaryConditions.traction(sy=-300),
         BoundaryConditions.traction(txy=200), BoundaryConditions.traction(400, -300, 200)]
    )
    total = parts[0].stress + parts[1].stress + parts[2].stress
    assert np.abs(total - parts[3].stress).max() <= 1e-9 * np.abs(total).max()


@pytest.mark.parametrize("load", [(1000, 0, 0), (0, -800, 0), (500, 400, -300)])
def test_equilibrium(composite_model, load):
    bc = BoundaryConditions.traction(*load)
    res = composite_model.solve(bc)
    F = composite_model.load_vector(bc)
    applied = np.abs(F).sum()
    # reactions balance applied loads in each direction
    for comp in (0, 1):
        assert abs(F[comp::2].sum() + res.reactions[comp::2].sum()) <= 1e-8 * applied


def test_out_of_plane_stress_follows_poisson(composite_model):
    res = composite_model.solve(BoundaryConditions.traction(700, -200, 350))
    nu = np.where(composite_model.mesh.phase == Phase.FIBER, 0.25, 0.387)
    assert np.array_equal(res.stress[:, 2], nu * (res.stress[:, 0] + res.stress[:, 1]))


def test_homogenized_stress_equals_applied_traction(composite_model):
    # mean stress = boundary moment of tractions; roller reactions sit at x=0 / y=0
    # and drop out of the normal components, but not of the shear one
    combined, shear = composite_model.solve_many(
        [BoundaryConditions.traction(600, -300, 450), BoundaryConditions.traction(txy=450)]
    )
    s = homogenize(combined.stress, combined.volumes)
    assert s[0] == pytest.approx(600, rel=1e-8)
    assert s[1] == pytest.approx(-300, rel=1e-8)
    s = homogenize(shear.stress, shear.volumes)
    assert s[3] == pytest.approx(450, rel=1e-8)
    assert abs(s[0]) + abs(s[1]) <= 1e-8 * 450


def test_independent_solves_run_concurrently(composite_model):
    from concurrent.futures import ThreadPoolExecutor

    composite_model.prepare()
    bcs = [BoundaryConditions.traction(100 * i, -50 * i, 10 * i) for i in range(1, 9)]
    serial = [composite_model.solve(bc).stress for bc in bcs]
    with ThreadPoolExecutor(4) as pool:
        parallel = list(pool.map(lambda bc: composite_model.solve(bc).stress, bcs))
    for a, b in zip(serial, parallel):
        assert np.array_equal(a, b)


# post-processing ------------------------------------------------------------


def test_principal_examples():
    assert principal_stresses((0, 0, 0, 250)) == (-250, 0, 250)
    assert principal_stresses((1000, 0, 387, 0)) == (0, 387, 1000)


@given(st.lists(st.floats(-1e5, 1e5), min_size=4, max_size=4))
def test_principals_match_eigen_oracle(s):
    sx, sy, sz, txy = s
    full = np.array([[sx, txy, 0], [txy, sy, 0], [0, 0, sz]])
    ref = np.linalg.eigvalsh(full)
    got = np.array(principal_stresses(s))
    assert np.allclose(got, ref, rtol=1e-9, atol=1e-9 * max(1.0, np.abs(ref).max()))
    assert sz in got
    assert np.allclose(principal_stresses_array(np.array([s]))[0], got)


def test_homogenize_examples():
    assert homogenize([4.0, 8.0], [1.0, 3.0]) == 7.0
    assert np.allclose(homogenize(np.full((5, 4), 2.5), np.arange(1.0, 6.0)), 2.5)
    with pytest.raises(EmptyRegion):
        homogenize([1.0, 2.0], [1.0, 1.0], groups=[[0, 1], []])
    with pytest.raises(ValueError):
        homogenize([1.0, 2.0], [1.0, 1.0], groups=[[0]])
    with pytest.raises(EmptyRegion):
        homogenize_phase([1.0], [1.0], [Phase.MATRIX], Phase.FIBER)


@given(
    vals=st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=30),
    data=st.data(),
)
def test_nested_average_is_plain_weighted_mean(vals, data):
    n = len(vals)
    vols = data.draw(st.lists(st.floats(0.01, 100), min_size=n, max_size=n))
    labels = np.array(data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n)))
    v, w = np.array(vals), np.array(vols)
    plain = np.sum(v * w) / np.sum(w)
    nested = homogenize(v, w, phase_groups(labels))
    assert nested == pytest.approx(plain, rel=1e-12, abs=1e-12 * np.abs(v).max())


# effective modulus ----------------------------------------------------------


@pytest.mark.parametrize("phase, mat", [(Phase.MATRIX, MATRIX_F3900), (Phase.FIBER, FIBER_T800)])
def test_homogeneous_modulus(phase, mat):
    em = effective_modulus(plate(10, phase))
    assert em.E22 == pytest.approx(mat.E / (1 - mat.nu**2), rel=5e-3)
    assert em.nu23 == pytest.approx(mat.nu / (1 - mat.nu), rel=5e-3)


def test_composite_modulus_converges(rve60):
    E = [effective_modulus(pixelate(rve60, d)).E22 for d in (50, 100, 200)]
    assert abs(E[2] - E[1]) <= max(abs(E[1] - E[0]), 0.02 * E[1])
    assert FIBER_T800.E > E[2] > MATRIX_F3900.E
