import numpy as np
import pytest
from scipy.signal import argrelmax

from metaqed.constants import wavenumber
from metaqed.dynamics import (DriveSpec, coherent_steady_state,
                              driven_field_at_emitter, effective_hamiltonian,
                              local_field_map, polariton_dispersion,
                              rabi_frequencies)
from metaqed.fewmode import FewModeModel, PathFitRow
from metaqed.greens import (DomainError, Environment, ScattererSpec,
                            SingularityError)
from metaqed.lattice import LatticeSpec
from metaqed.material import MaterialModel
from metaqed.spectral import EmitterSpec, _polarization_frame, transmission_orders

LAT = LatticeSpec.square(400.0)
SILICON = MaterialModel.constant_index(3.5)
CENTERED = ScattererSpec(position=(0.0, 0.0, 0.0), radius=100.0, material=SILICON)
OFFSET = ScattererSpec(position=(50.0, -30.0, 10.0), radius=100.0, material=SILICON)
ENV = Environment(lattice=LAT, scatterers=(CENTERED,))
EMPTY = Environment(lattice=LAT, scatterers=())
EMITTER = EmitterSpec(position=(0.0, 105.0, 0.0), dipole_moment=10.0,
                      orientation=(1.0, 0.0, 0.0), transition_energy=1.749)
K_SMALL = 6.4e-3 * np.pi / 400.0


def _probe(pos):
    return EmitterSpec(position=pos, dipole_moment=10.0,
                       orientation=(1.0, 0.0, 0.0), transition_energy=1.749)


def test_drive_validation():
    good = dict(omega=2.0, k_par=(0.001, 0.0), amplitude=1.0,
                polarization=(0.0, 1.0, 0.0))
    DriveSpec(**good)
    with pytest.raises(DomainError):
        DriveSpec(**{**good, "omega": -1.0})
    with pytest.raises(DomainError):
        DriveSpec(**{**good, "amplitude": 0.0})
    with pytest.raises(DomainError):
        DriveSpec(**{**good, "polarization": (0.0, 2.0, 0.0)})
    with pytest.raises(DomainError):
        DriveSpec(**{**good, "k_par": (0.5, 0.0)})  # outside the light cone
    with pytest.raises(DomainError):
        DriveSpec(**{**good, "k_par": (0.005, 0.0),
                     "polarization": (1.0, 0.0, 0.0)})  # longitudinal part


def test_bare_plane_wave():
    drive = DriveSpec(omega=2.0, k_par=(0.001, 0.0), amplitude=2.5,
                      polarization=(0.0, 1.0, 0.0))
    em = _probe((10.0, 5.0, 37.0))
    got = driven_field_at_emitter(drive, (em,), EMPTY)[0]
    expect = 2.5 * np.array([0, 1, 0]) * np.exp(1j * drive.kz * 37.0)
    assert np.max(np.abs(got - expect)) < 1e-14
    co = EmitterSpec(position=em.position, dipole_moment=10.0,
                     orientation=(0.0, 1.0, 0.0), transition_energy=1.749)
    om = rabi_frequencies(drive, (em, co), EMPTY)
    assert abs(om[0]) < 1e-15  # dipole orthogonal to the drive field
    assert abs(om[1] - co.dipole_enm * np.array([0, 1, 0]) @ got) < 1e-15


def _farfield_case(omega, pol_name, z):
    """Driven field far above/below the lattice against the order expansion."""
    kpar = np.array([0.002, 0.0011])
    k = wavenumber(omega)
    kz0 = np.sqrt(k * k - kpar @ kpar)
    shat, p_up, _, _ = _polarization_frame(kpar, k)
    pol = shat if pol_name == "s" else p_up
    _, _, orders = transmission_orders(omega, kpar, pol_name, (OFFSET,), LAT)
    rho = np.array([0.3, -0.2])
    env = Environment(lattice=LAT, scatterers=(OFFSET,))
    drive = DriveSpec(omega=omega, k_par=tuple(kpar), amplitude=1.0,
                      polarization=tuple(pol))
    got = driven_field_at_emitter(drive, (_probe((rho[0], rho[1], z)),), env)[0]
    expect = pol.astype(complex) * np.exp(1j * kz0 * z)
    for od in orders:
        g = np.asarray(od.g)
        if z > 0:
            expect = expect + od.e_up * np.exp(1j * (g @ rho + od.kz * z))
        else:
            expect = expect + od.e_down * np.exp(1j * (g @ rho - od.kz * z))
    return np.max(np.abs(got - expect)) / np.max(np.abs(expect))


def test_far_field_matches_diffraction_orders():
    # sub-diffraction: the specular order alone carries the far field
    for pol in ("s", "p"):
        assert _farfield_case(1.9, pol, +2000.0) < 1e-6
        assert _farfield_case(1.9, pol, -2000.0) < 1e-6
    # three open orders; near-grazing evanescent orders force the larger z
    assert _farfield_case(3.3, "s", +6000.0) < 1e-6
    assert _farfield_case(3.3, "s", -6000.0) < 1e-6


def test_off_resonance_field_is_order_unity():
    for pos in ((200.0, 200.0, 0.0), (0.0, 105.0, 150.0)):
        for w in (1.2, 1.5):
            drive = DriveSpec(omega=w, k_par=(0.0, K_SMALL), amplitude=1.0,
                              polarization=(1.0, 0.0, 0.0))
            E = driven_field_at_emitter(drive, (_probe(pos),), ENV)[0]
            assert 0.5 < np.linalg.norm(E) < 2.0


def test_resonant_field_enhancement():
    best = 0.0
    for w in np.arange(1.7480, 1.7505, 5e-5):
        drive = DriveSpec(omega=w, k_par=(0.0, K_SMALL), amplitude=1.0,
                          polarization=(1.0, 0.0, 0.0))
        E = driven_field_at_emitter(drive, (EMITTER,), ENV)[0]
        best = max(best, np.linalg.norm(E))
    assert best >= 5.0


def test_effective_hamiltonian_blocks():
    m = FewModeModel(np.array([[1.70, 0.0], [0.0, 1.80]]),
                     np.array([1e-3, 2e-3]), np.zeros((2, 1)))
    H = effective_hamiltonian(m, (EMITTER,), 0.3)
    assert np.all(H[:2, 2] == 0) and np.all(H[2, :2] == 0)
    assert H[2, 2] == EMITTER.transition_energy - 0.3
    assert np.allclose(np.diag(H[:2, :2]),
                       np.array([1.70, 1.80]) - 0.3 - 0.5j * m.kappa)
    Hn = effective_hamiltonian(m, (EMITTER,), 0.3, gamma_nr=4e-3)
    assert abs(Hn[2, 2] - (EMITTER.transition_energy - 0.3 - 2e-3j)) < 1e-15
    with pytest.raises(DomainError):
        effective_hamiltonian(m, (EMITTER, EMITTER), 0.3)
    with pytest.raises(DomainError):
        effective_hamiltonian(m, (EMITTER,), 0.3, gamma_nr=-1.0)


def test_zero_detuning_eigenvalues_closed_form():
    kap, g = 2e-3, 8e-3
    m = FewModeModel(np.array([[1.749]]), np.array([kap]),
                     np.array([[g]]))
    lam = np.sort_complex(np.linalg.eigvals(
        effective_hamiltonian(m, (EMITTER,), 1.749)))
    root = np.sqrt(g * g - kap * kap / 16)
    expect = np.sort_complex(np.array([-1j * kap / 4 - root,
                                       -1j * kap / 4 + root]))
    assert np.max(np.abs(lam - expect)) < 1e-14


def test_hermitian_limit_real_eigenvalues():
    m = FewModeModel(np.array([[1.70, 5e-3], [5e-3, 1.80]]),
                     np.array([1e-12, 1e-12]),
                     np.array([[4e-3], [(1 + 2j) * 1e-3]]))
    lam = np.linalg.eigvals(effective_hamiltonian(m, (EMITTER,), 0.0))
    assert np.max(np.abs(lam.imag)) < 1e-11


def test_coherent_steady_state_against_inversion():
    m = FewModeModel(np.array([[1.750, 2e-3], [2e-3, 1.760]]),
                     np.array([1e-3, 3e-3]),
                     np.array([[5e-3], [(3 + 2j) * 1e-3]]))
    H = effective_hamiltonian(m, (EMITTER,), 1.742)
    rabi = np.array([3e-4 * np.exp(0.7j)])
    st = coherent_steady_state(H, rabi)
    amps = -np.linalg.inv(H) @ np.concatenate([np.zeros(2), rabi])
    assert np.max(np.abs(np.concatenate([st.modes, st.emitters]) - amps)) < 1e-12
    assert st.residual <= 1e-12 * np.linalg.norm(rabi)
    assert abs(st.e_loc[0] - (rabi[0] + m.g.T[0] @ st.modes)) < 1e-15


def test_steady_state_zero_drive_and_interference_zero():
    kap, g = 2e-3, 8e-3
    m = FewModeModel(np.array([[1.749]]), np.array([kap]), np.array([[g]]))
    H = effective_hamiltonian(m, (EMITTER,), 1.749)
    st0 = coherent_steady_state(H, np.array([0.0]))
    assert np.all(st0.modes == 0) and np.all(st0.emitters == 0)
    # driving both mode and emitter exactly on resonance: the local field
    # interferes to zero
    st = coherent_steady_state(H, np.array([1e-4]))
    assert abs(st.e_loc[0]) < 1e-18


def test_steady_state_errors():
    with pytest.raises(SingularityError):
        coherent_steady_state(np.zeros((1, 1), complex), np.array([1e-4]))
    with pytest.raises(DomainError):
        coherent_steady_state(np.eye(2, dtype=complex), np.ones(3))


def _crossing_rows(g=8e-3, kappa=1e-3):
    rows = []
    for k in np.linspace(0.0, 1.0, 41):
        m = FewModeModel(np.array([[1.70 + 0.10 * k]]), np.array([kappa]),
                         np.array([[g]]))
        rows.append(PathFitRow((0.0, 1e-4 * (1 + k)), float(k), m, None))
    return rows


DRIVE = DriveSpec(omega=1.75, k_par=(0.0, 1e-4), amplitude=1.0,
                  polarization=(1.0, 0.0, 0.0))
POINT_EMITTER = EmitterSpec(position=(0.0, 0.0, 0.0), dipole_moment=10.0,
                            orientation=(1.0, 0.0, 0.0),
                            transition_energy=1.749)


def test_local_field_ridges_sit_on_polariton_branches():
    rows = _crossing_rows()
    om = np.linspace(1.70, 1.80, 501)
    mp = local_field_map(rows, (POINT_EMITTER,), om, DRIVE)
    disp = polariton_dispersion(rows, (POINT_EMITTER,))
    step = om[1] - om[0]
    seps = []
    for i in range(8, 33):
        col = mp.values[i, :, 0]
        pk = argrelmax(col)[0]
        pk = pk[np.argsort(col[pk])][-2:]
        ridges = np.sort(om[pk])
        assert np.max(np.abs(ridges - np.sort(disp.energies[i]))) <= step
        seps.append(ridges[1] - ridges[0])
    assert abs(min(seps) - 2 * 8e-3) <= 0.2 * 2 * 8e-3


def test_local_field_mirror_symmetry_at_zero_detuning():
    m = FewModeModel(np.array([[1.749]]), np.array([1e-3]), np.array([[8e-3]]))
    rows = [PathFitRow((0.0, 1e-4), 0.0, m, None)]
    delta = np.linspace(-0.03, 0.03, 241)
    mp = local_field_map(rows, (POINT_EMITTER,), 1.749 + delta, DRIVE)
    assert np.max(np.abs(mp.values[0, :, 0] - mp.values[0, ::-1, 0])) < 1e-10


def test_local_field_weak_coupling_marks_bare_mode():
    m = FewModeModel(np.array([[1.76]]), np.array([1e-3]), np.array([[1e-4]]))
    rows = [PathFitRow((0.0, 1e-4), 0.0, m, None)]
    om = np.linspace(1.70, 1.80, 501)
    mp = local_field_map(rows, (POINT_EMITTER,), om, DRIVE)
    dev = np.abs(mp.values[0, :, 0] - 1.0)
    # the narrow interference zero at the emitter energy is not the ridge
    dev[np.abs(om - 1.749) < 5e-3] = 0.0
    # dispersive doublet within one linewidth of the bare mode; elsewhere
    # the map stays flat at the free-space value
    assert abs(om[np.argmax(dev)] - 1.76) <= 1e-3
    assert dev.max() < 1e-2


def test_local_field_with_environment_matches_rabi_ratio():
    # negligible coupling: the map reduces to the propagated-drive strength
    m = FewModeModel(np.array([[1.60]]), np.array([1e-3]), np.array([[1e-12]]))
    rows = [PathFitRow((0.0, K_SMALL), 0.0, m, None)]
    om = np.array([1.2, 1.5])
    mp = local_field_map(rows, (EMITTER,), om, DRIVE, environment=ENV)
    for j, w in enumerate(om):
        drive = DriveSpec(omega=w, k_par=(0.0, K_SMALL), amplitude=1.0,
                          polarization=(1.0, 0.0, 0.0))
        ob = rabi_frequencies(drive, (EMITTER,), ENV)[0]
        free = EMITTER.dipole_enm * 1.0
        assert abs(mp.values[0, j, 0] - abs(ob) / free) < 1e-10


def test_polariton_dispersion_bare_limit_and_splitting():
    m0 = FewModeModel(np.array([[1.70]]), np.array([1e-3]),
                      np.array([[1e-14]]))
    rows = [PathFitRow((0.0, 1e-4), 0.0, m0, None)]
    disp = polariton_dispersion(rows, (POINT_EMITTER,))
    assert np.allclose(np.sort(disp.energies[0]), [1.70, 1.749], atol=1e-10)
    kap, g = 2e-3, 8e-3
    m = FewModeModel(np.array([[1.749]]), np.array([kap]), np.array([[g]]))
    rows = [PathFitRow((0.0, 1e-4), 0.0, m, None)]
    disp = polariton_dispersion(rows, (POINT_EMITTER,))
    split = np.ptp(disp.energies[0])
    assert abs(split - 2 * np.sqrt(g * g - kap * kap / 16)) < 1e-12
    assert np.all(disp.eigenvalues.imag <= 1e-12)
    assert disp.eigenvalues.shape[1] == 2
    assert abs(np.sum(disp.widths[0]) - kap) < 1e-12  # trace of the decay


def test_branch_connection_follows_eigenvectors():
    rows = _crossing_rows()
    disp = polariton_dispersion(rows, (POINT_EMITTER,))
    # adiabatic handoff: the branch that starts photonic ends emitter-like
    assert disp.photon_fraction[0, 0] > 0.9
    assert disp.photon_fraction[-1, 0] < 0.1
    jumps = np.abs(np.diff(disp.eigenvalues, axis=0))
    assert np.nanmax(jumps) < 10 * 0.10 / 40  # ~10x the per-step drift

    # two weakly-hybridized modes crossing: connection must track the
    # eigenvectors through the crossing, not the energy ordering
    rows = []
    for k in np.linspace(0.0, 1.0, 21):
        # crossing at k = 0.505 sits between grid points
        w = np.array([[1.70 + 0.10 * k, 0.0], [0.0, 1.801 - 0.10 * k]])
        m = FewModeModel(w, np.array([1e-3, 1e-3]),
                         np.array([[1e-4], [1e-4]]))
        rows.append(PathFitRow((0.0, 1e-4), float(k), m, None))
    em_far = EmitterSpec(position=(0.0, 0.0, 0.0), dipole_moment=10.0,
                         orientation=(1.0, 0.0, 0.0), transition_energy=3.0)
    disp = polariton_dispersion(rows, (em_far,))
    rising = disp.energies[:, 0]
    assert abs(rising[0] - 1.70) < 1e-3 and abs(rising[-1] - 1.80) < 1e-3
    assert np.all(np.diff(rising) > 0)


def test_poisoned_rows_propagate():
    rows = _crossing_rows()
    rows[5] = PathFitRow(rows[5].k_par, rows[5].arclength, None, None)
    om = np.linspace(1.70, 1.80, 51)
    mp = local_field_map(rows, (POINT_EMITTER,), om, DRIVE)
    assert np.all(np.isnan(mp.values[5]))
    assert np.all(np.isfinite(mp.values[4]))
    disp = polariton_dispersion(rows, (POINT_EMITTER,))
    assert np.all(np.isnan(disp.eigenvalues[5].real))
    assert np.all(np.isfinite(disp.eigenvalues[4].real))
    assert np.all(np.isfinite(disp.eigenvalues[6].real))
    with pytest.raises(DomainError):
        polariton_dispersion([PathFitRow((0.0, 0.0), 0.0, None, None)],
                             (POINT_EMITTER,))
