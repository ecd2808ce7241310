import numpy as np
import pytest
from hypothesis import given, strategies as st

from nvbath.constants import CC_BOND, GAMMA_C13, TWO_PI, khz
from nvbath.lattice import (
    NV_FRAME,
    LatticeConfig,
    SpinBath,
    dumps_bath,
    filter_strong_hyperfine,
    generate_bath,
    hyperfine_norms_khz,
    lattice_positions,
    load_bath,
    loads_bath,
    make_bath,
    point_dipole_hyperfine,
    save_bath,
)

from conftest import FIELD, small_bath

unit_vectors = st.tuples(
    st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)
).filter(lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: np.array(v) / np.linalg.norm(v))


def test_candidate_sites_exclude_vacancy_and_nitrogen():
    pos = lattice_positions(10)
    # 8 atoms per cubic cell, cells -10..10 on each axis, minus vacancy and N
    assert len(pos) == 8 * 21**3 - 2
    r = np.linalg.norm(pos, axis=1)
    assert r.min() == pytest.approx(CC_BOND, rel=1e-12)
    nitrogen = np.array([0.0, 0.0, CC_BOND])
    assert np.min(np.linalg.norm(pos - nitrogen, axis=1)) > 0.1


def test_nv_frame_is_rotation_with_111_along_z():
    assert np.allclose(NV_FRAME @ NV_FRAME.T, np.eye(3), atol=1e-15)
    assert np.linalg.det(NV_FRAME) == pytest.approx(1.0)
    assert np.allclose(NV_FRAME @ (np.ones(3) / np.sqrt(3)), [0, 0, 1], atol=1e-15)


def test_site_count_near_800():
    counts = [len(generate_bath(LatticeConfig(seed=s), FIELD)) for s in range(5)]
    assert all(700 <= c <= 900 for c in counts)


def test_site_count_is_binomial_over_seeds():
    # mean over 1000 seeds within 3 sigma of abundance * candidate count
    n_sites = len(lattice_positions(10))
    p = 0.011
    counts = np.array(
        [np.count_nonzero(
            np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=s, spawn_key=(0,))))
            .random(n_sites) < p) for s in range(1000)]
    )
    mean_sigma = np.sqrt(n_sites * p * (1 - p) / 1000)
    assert abs(counts.mean() - n_sites * p) < 3 * mean_sigma
    # the package draws from the same stream
    assert len(generate_bath(LatticeConfig(seed=7), FIELD)) == counts[7]


def test_empty_bath_at_zero_abundance():
    bath = generate_bath(LatticeConfig(abundance=0.0), FIELD)
    assert len(bath) == 0
    assert filter_strong_hyperfine(bath, 300.0)[0]


def test_deterministic_for_fixed_seed():
    a = generate_bath(LatticeConfig(seed=3), FIELD)
    b = generate_bath(LatticeConfig(seed=3), FIELD)
    assert a.digest() == b.digest()
    assert np.array_equal(a.positions, b.positions)
    assert generate_bath(LatticeConfig(seed=4), FIELD).digest() != a.digest()


def test_cutoff_redraws_on_new_stream():
    cfg = LatticeConfig(seed=0, radius_sites=4, abundance=0.05, strong_hf_cutoff=300.0)
    bath = generate_bath(cfg, FIELD)
    assert np.all(hyperfine_norms_khz(bath) <= 300.0)
    again = generate_bath(cfg, FIELD)
    assert (again.attempt, again.digest()) == (bath.attempt, bath.digest())


def test_cutoff_gives_up():
    cfg = LatticeConfig(seed=0, radius_sites=2, abundance=1.0, strong_hf_cutoff=1.0, max_attempts=3)
    with pytest.raises(RuntimeError, match="3 attempts"):
        generate_bath(cfg, FIELD)


@pytest.mark.parametrize(
    "kw", [dict(radius_sites=0), dict(abundance=1.5), dict(abundance=-0.1), dict(lattice_constant=0.0)]
)
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        LatticeConfig(**kw)


def test_zero_field_rejected():
    with pytest.raises(ValueError):
        generate_bath(LatticeConfig(), [0, 0, 0])


def test_omega_l_matches_gamma_b():
    bath = generate_bath(LatticeConfig(seed=2, radius_sites=3), [0.001, 0.0, 0.004])
    assert bath.omega_L == pytest.approx(GAMMA_C13 * np.sqrt(0.001**2 + 0.004**2) * 1e-6)
    assert bath.larmor_period == pytest.approx(TWO_PI / bath.omega_L)


def test_sites_distinct_and_off_origin(paper_bath):
    pos = paper_bath.positions
    assert len(np.unique(np.round(pos, 9), axis=0)) == len(pos)
    assert np.all(np.linalg.norm(pos, axis=1) > 0)


def test_bath_arrays_read_only(paper_bath):
    with pytest.raises(ValueError):
        paper_bath.positions[0, 0] = 1.0
    with pytest.raises(ValueError):
        paper_bath.hyperfine[0, 0, 0] = 1.0


# -- hyperfine ----------------------------------------------------------------


def test_hyperfine_prefactor_matches_codata_scalar():
    # 1e-7 * (2pi 28.025e9)(2pi 10.7084e6) * 1.054571817e-34 / (5e-10)^3, times 2 for A_zz
    A = point_dipole_hyperfine([0.0, 0.0, 5.0])
    assert A[2, 2] == pytest.approx(1.9990611866638823, rel=1e-9)
    assert A[2, 2] / TWO_PI * 1e3 == pytest.approx(318.16, abs=0.01)  # kHz


def test_hyperfine_axial_symmetry():
    A = point_dipole_hyperfine([0.0, 0.0, 4.0])
    assert A[2, 2] == pytest.approx(-2 * A[0, 0], rel=1e-14)
    assert A[0, 0] == A[1, 1]
    assert np.count_nonzero(A - np.diag(np.diag(A))) == 0


@given(u=unit_vectors, r=st.floats(1.6, 40.0))
def test_hyperfine_symmetric_traceless(u, r):
    A = point_dipole_hyperfine(r * u)
    assert np.array_equal(A, A.T)
    assert abs(np.trace(A)) < 1e-12 * np.max(np.abs(A))


@given(u=unit_vectors, r=st.floats(1.6, 20.0))
def test_hyperfine_inverse_cube(u, r):
    a1 = point_dipole_hyperfine(r * u)
    a2 = point_dipole_hyperfine(2 * r * u)
    assert np.allclose(a1, 8 * a2, rtol=1e-10, atol=0)


def test_hyperfine_rejects_inside_bond():
    with pytest.raises(ValueError):
        point_dipole_hyperfine([0, 0, 0])
    with pytest.raises(ValueError):
        point_dipole_hyperfine([0, 0, 1.0])


def test_filter_strong_hyperfine():
    far = small_bath(5, seed=1, min_r=8.0)
    ok, same = filter_strong_hyperfine(far, 300.0)
    assert ok and same is far
    strong = np.zeros((1, 3, 3))
    strong[0, 2, 2] = khz(1000.0)
    synthetic = make_bath([[0, 0, 5.0]], FIELD, hyperfine=strong)
    assert hyperfine_norms_khz(synthetic)[0] == pytest.approx(1000.0)
    assert not filter_strong_hyperfine(synthetic, 300.0)[0]
    with pytest.raises(ValueError):
        filter_strong_hyperfine(far, 0.0)


# -- text format ----------------------------------------------------------------


def test_text_round_trip_is_exact(tmp_path, paper_bath):
    path = tmp_path / "bath.txt"
    save_bath(paper_bath, path)
    back = load_bath(path)
    assert np.array_equal(back.positions, paper_bath.positions)
    assert np.array_equal(back.hyperfine, paper_bath.hyperfine)
    assert np.array_equal(back.b_field, paper_bath.b_field)
    assert (back.seed_used, back.attempt) == (paper_bath.seed_used, paper_bath.attempt)
    assert back.digest() == paper_bath.digest()


def test_text_format_layout(paper_bath):
    lines = dumps_bath(paper_bath).splitlines()
    assert lines[0] == "# nvbath-bath v1"
    assert any(line.startswith("# seed: 1") for line in lines)
    body = [line for line in lines if not line.startswith("#")]
    assert len(body) == len(paper_bath)
    assert all(len(line.split()) == 9 for line in body)


def test_text_errors():
    with pytest.raises(ValueError, match="not a bath file"):
        loads_bath("hello\n")
    text = "# nvbath-bath v1\n# b_field_T: 0 0 0.005\n1 2 3\n"
    with pytest.raises(ValueError, match="line 3"):
        loads_bath(text)


def test_empty_bath_round_trip():
    empty = make_bath(np.zeros((0, 3)), FIELD)
    back = loads_bath(dumps_bath(empty))
    assert len(back) == 0 and isinstance(back, SpinBath)
