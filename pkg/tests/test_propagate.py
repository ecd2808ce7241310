import numpy as np
import pytest
from hypothesis import given, strategies as st

from nvbath.clusters import partition_bath, single_cluster
from nvbath.constants import GAMMA_C13, khz
from nvbath.hamiltonian import ClusterHamiltonians, build_cluster_hamiltonians
from nvbath.lattice import make_bath
from nvbath.propagate import (
    ClusterEngine,
    CoherenceCurve,
    PulseErrorModel,
    PulseShape,
    branch_propagators,
    coherence_finite_pulses,
    coherence_ideal,
    evolve,
)
from nvbath.sequences import cpmg, udd, with_pulses, xy_family

import oracles
from conftest import FIELD, small_bath

WL = GAMMA_C13 * 0.005 * 1e-6
TL = 2 * np.pi / WL


def _random_hermitian(rng, d):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (a + a.conj().T) / 2


# -- evolve ---------------------------------------------------------------------


def test_evolve_zero_time():
    h = _random_hermitian(np.random.default_rng(0), 4)
    assert np.allclose(evolve(h, 0.0), np.eye(4), atol=1e-15)


def test_evolve_larmor_period():
    w = 0.37
    U = evolve(w * np.diag([0.5, -0.5]), 2 * np.pi / w)
    # spin-1/2 picks up -1 after one period
    assert np.allclose(U, -np.eye(2), atol=1e-12)


@given(seed=st.integers(0, 10_000), t=st.floats(0.01, 5.0))
def test_evolve_matches_series_oracle(seed, t):
    h = _random_hermitian(np.random.default_rng(seed), 8)
    U = evolve(h, t)
    assert np.abs(U - oracles.expm_taylor(-1j * h * t)).max() < 1e-9
    assert np.abs(U.conj().T @ U - np.eye(8)).max() < 1e-10


def test_evolve_rejects_non_hermitian():
    with pytest.raises(ValueError, match="Hermitian"):
        evolve(np.array([[0, 1], [0, 0]]), 1.0)


# -- branch propagators ---------------------------------------------------------------


@pytest.fixture(scope="module")
def pair():
    bath = small_bath(2, seed=11, field=[0.001, 0, 0.005])
    return build_cluster_hamiltonians(bath, [0, 1])


def test_branches_no_pulses(pair):
    from nvbath.sequences import PulseSequence

    V0, V1 = branch_propagators(pair, PulseSequence(3.0, []))
    assert np.allclose(V0, evolve(pair.h0, 3.0), atol=1e-13)
    assert np.allclose(V1, evolve(pair.h1, 3.0), atol=1e-13)


def test_branches_hahn(pair):
    tau = 2.5
    V0, V1 = branch_propagators(pair, cpmg(1, 2 * tau))
    U0, U1 = evolve(pair.h0, tau), evolve(pair.h1, tau)
    assert np.allclose(V0, U1 @ U0, atol=1e-13)
    assert np.allclose(V1, U0 @ U1, atol=1e-13)


def test_branches_cpmg2(pair):
    tau = 1.5
    V0, _ = branch_propagators(pair, cpmg(2, 4 * tau))
    U0, U1 = evolve(pair.h0, tau), evolve(pair.h1, 2 * tau)
    assert np.allclose(V0, U0 @ U1 @ U0, atol=1e-13)


def test_branches_reject_finite(pair):
    with pytest.raises(ValueError):
        branch_propagators(pair, with_pulses(cpmg(2, 1.0), "square", 0.03))


@given(
    seed=st.integers(0, 5000),
    n=st.integers(1, 12),
    T=st.floats(0.5, 200.0),
    fam=st.sampled_from(["cpmg", "udd", "xy"]),
)
def test_engine_matches_reference_branches(seed, n, T, fam):
    if fam == "xy":
        n = 4 if n < 8 else 8
    bath = small_bath(4, seed=seed)
    chs = [build_cluster_hamiltonians(bath, c) for c in ([0, 1], [2], [3])]
    seq = {"cpmg": cpmg, "udd": udd, "xy": xy_family}[fam](n, T)
    got = ClusterEngine(chs).cluster_overlaps(seq)
    for ch, L in zip(chs, got):
        V0, V1 = branch_propagators(ch, seq)
        ref = np.trace(V1.conj().T @ V0) / ch.dim
        assert abs(L - ref) < 1e-10
        assert abs(L) <= 1 + 1e-12


@given(seed=st.integers(0, 5000), n=st.integers(1, 16), T=st.floats(0.1, 2000.0))
def test_toggle_parity_and_duration(seed, n, T):
    seq = udd(n, T)
    assert seq.intervals().sum() == pytest.approx(T, rel=1e-12)
    # even n returns both branches to their starting manifold: the overlap is
    # invariant under swapping which branch starts in m_s = 1
    bath = small_bath(2, seed=seed)
    ch = build_cluster_hamiltonians(bath, [0, 1])
    V0, V1 = branch_propagators(ch, seq)
    if n % 2 == 0:
        swapped = ClusterHamiltonians(ch.indices, ch.h1, ch.h0)
        W0, W1 = branch_propagators(swapped, seq)
        assert np.allclose(W0, V1, atol=1e-12) and np.allclose(W1, V0, atol=1e-12)


# -- coherence_ideal ------------------------------------------------------------------


def test_no_hyperfine_means_no_decay():
    bath = small_bath(5, seed=2)
    bath0 = make_bath(bath.positions, FIELD, hyperfine=np.zeros((5, 3, 3)))
    for seq in (cpmg(1), cpmg(4), udd(5), xy_family(8)):
        c = coherence_ideal(bath0, partition_bath(bath0, 6), seq, np.linspace(1, 300, 20))
        assert np.allclose(c.signal, 1.0, atol=1e-12)


def test_empty_bath_is_one():
    empty = make_bath(np.zeros((0, 3)), FIELD)
    c = coherence_ideal(empty, partition_bath(empty), cpmg(2), [1.0, 10.0])
    assert np.array_equal(c.signal, [1.0, 1.0])


def test_signal_at_zero_time_limit():
    bath = small_bath(6, seed=4)
    eng = ClusterEngine.from_bath(bath, partition_bath(bath, 6))
    assert abs(eng.signal(cpmg(2, 1e-12)) - 1.0) < 1e-12


@pytest.mark.parametrize("pos", [[0.0, 3.0, 4.0], [2.5, -2.5, 2.0], [4.0, 4.0, -3.0]])
def test_single_spin_hahn_matches_closed_form(pos):
    bath = make_bath([pos], FIELD)
    A = bath.hyperfine[0, 2]
    # rotate the transverse hyperfine onto x: the closed form only needs |A_perp|
    a_par, a_perp = A[2], np.hypot(A[0], A[1])
    taus = np.linspace(0.5, 3 * TL, 50)
    c = coherence_ideal(bath, single_cluster(bath), cpmg(1), 2 * taus)
    ref = oracles.single_spin_hahn(a_par, a_perp, WL, taus)
    assert np.abs(c.signal - ref).max() < 1e-10
    assert ref.min() < 0.999  # the modulation is really there


def test_single_spin_full_revivals():
    bath = make_bath([[0.0, 3.0, 4.0]], FIELD)
    eng = ClusterEngine.from_bath(bath, single_cluster(bath))
    for m in (1, 2, 5):
        assert eng.signal(cpmg(1, 2 * m * TL)) == pytest.approx(1.0, abs=1e-6)
    assert eng.signal(cpmg(1, 2 * 0.5 * TL)) < 0.999


def test_commuting_branches_echo_at_all_times():
    A = np.zeros((3, 3, 3))
    A[:, 2, 2] = [0.4, -0.9, 1.3]
    bath = make_bath([[0, 0, 20.0], [20, 0, 0], [0, 20, 0]], FIELD, hyperfine=A)
    c = coherence_ideal(bath, partition_bath(bath, 1, np.inf), cpmg(1), np.linspace(1, 500, 37))
    assert np.allclose(c.signal, 1.0, atol=1e-12)


@pytest.mark.parametrize("n", [2, 4, 8])
def test_commensurate_cpmg_revivals_without_dipolar(n):
    bath = small_bath(10, seed=1, radius=3)
    part = partition_bath(bath, 1, np.inf)  # singletons: H_dip = 0, H0 pure Zeeman
    times = 2 * n * TL * np.arange(1, 4)
    c = coherence_ideal(bath, part, cpmg(n), times)
    assert np.allclose(c.signal, 1.0, atol=1e-6)


def test_partition_agrees_with_single_cluster_when_weakly_coupled():
    # sparse 8-spin bath: inter-cluster couplings far below the hyperfine scale
    bath = small_bath(8, seed=8, radius=4, min_r=4.0)
    part = partition_bath(bath, 4, khz(0.3))
    assert len(part.clusters) > 1
    times = np.linspace(1.0, 60.0, 25)
    whole = coherence_ideal(bath, single_cluster(bath), cpmg(2), times)
    split = coherence_ideal(bath, part, cpmg(2), times)
    assert np.abs(whole.signal - split.signal).max() < 0.02


def test_worker_count_does_not_change_results(paper_bath):
    part = partition_bath(paper_bath, 6)
    times = np.linspace(1, 60, 16)
    one = coherence_ideal(paper_bath, part, cpmg(4), times, workers=1)
    four = coherence_ideal(paper_bath, part, cpmg(4), times, workers=4)
    assert np.array_equal(one.signal, four.signal)


def test_signal_bounds(paper_bath):
    part = partition_bath(paper_bath, 6)
    c = coherence_ideal(paper_bath, part, udd(8), np.linspace(1, 200, 30))
    assert np.all(np.abs(2 * c.signal - 1) <= 1 + 1e-9)
    eng = ClusterEngine.from_bath(paper_bath, part)
    assert np.all(np.abs(eng.cluster_overlaps(cpmg(2, 30.0))) <= 1 + 1e-12)


def test_engine_rejects_finite_pulses(paper_bath):
    eng = ClusterEngine.from_bath(paper_bath.subset([0, 1]), single_cluster(paper_bath.subset([0, 1])))
    with pytest.raises(ValueError):
        eng.signal(with_pulses(cpmg(2, 1.0), "square", 0.03))


def test_quantised_grid_in_curve(paper_bath):
    part = partition_bath(paper_bath, 6)
    a = coherence_ideal(paper_bath, part, udd(4), [10.0], grid=0.002)
    eng = ClusterEngine.from_bath(paper_bath, part)
    from nvbath.sequences import quantize_timing

    assert a.signal[0] == eng.signal(quantize_timing(udd(4, 10.0), 0.002))


def test_curve_validation():
    with pytest.raises(ValueError):
        CoherenceCurve([1.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        CoherenceCurve([1.0, 2.0], [1.0])


# -- finite pulses -------------------------------------------------------------------


def test_finite_pulse_ideal_limit(pair):
    err = PulseErrorModel()  # no detuning
    times = np.linspace(1, 40, 12)
    for seq in (cpmg(2), cpmg(4), xy_family(8), udd(3)):
        fin = coherence_finite_pulses(pair, seq, err, 0.0, times, pulse=PulseShape("square", 1e-7), step=1e-7)
        ideal = ClusterEngine([pair]).curve([seq.scaled(t) for t in times])
        assert np.abs(fin.signal - ideal.signal).max() < 1e-6


def test_finite_pulse_initial_phase_irrelevant_for_ideal_limit(pair):
    err = PulseErrorModel()
    seq = cpmg(4)
    a = coherence_finite_pulses(pair, seq, err, 0.0, [20.0], pulse=PulseShape("square", 1e-7), step=1e-7)
    b = coherence_finite_pulses(pair, seq, err, np.pi / 2, [20.0], pulse=PulseShape("square", 1e-7), step=1e-7)
    assert abs(a.signal[0] - b.signal[0]) < 1e-6


def test_finite_pulse_step_too_long(pair):
    with pytest.raises(ValueError, match="step"):
        coherence_finite_pulses(pair, cpmg(2), PulseErrorModel(), 0.0, [5.0],
                                pulse=PulseShape("gaussian", 0.046), step=0.1)


def test_finite_pulse_workers_identical(pair):
    err = PulseErrorModel.n14()
    kw = dict(times=np.linspace(1, 20, 8), pulse=PulseShape("square", 0.032))
    a = coherence_finite_pulses(pair, cpmg(8), err, np.pi / 2, workers=1, **kw)
    b = coherence_finite_pulses(pair, cpmg(8), err, np.pi / 2, workers=3, **kw)
    assert np.array_equal(a.signal, b.signal)


def test_error_model_validation():
    with pytest.raises(ValueError):
        PulseErrorModel(detunings=((0.0, 0.5),))
    with pytest.raises(ValueError):
        PulseErrorModel(detunings=())
    with pytest.raises(ValueError):
        PulseErrorModel(rabi_frequency=-1.0)
    m = PulseErrorModel.n14()
    assert [w for _, w in m.detunings] == pytest.approx([1 / 3] * 3)
    assert m.detunings[0][0] == -m.detunings[2][0]
