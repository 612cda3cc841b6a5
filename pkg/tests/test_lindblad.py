"""
测试Lindblad主方程积分模块
"""

import math

import numpy as np
import pytest

from cat_qubit_sim.exceptions import SignatureMismatchError
from cat_qubit_sim.hilbert import (
    Operator,
    SpaceSig,
    cat_basis_state,
    expectation,
    fidelity,
    fock_state,
    mode_operator,
)
from cat_qubit_sim.lindblad import (
    EvolutionSpec,
    Tolerances,
    evolve,
    liouvillian_apply,
    relax_to_steady,
    run_many,
    sample_grid,
)


def _zero_hamiltonian(sig: SpaceSig) -> Operator:
    return Operator(sig, np.zeros((sig.total, sig.total)), hermitian=True)


def _two_photon_loss(sig: SpaceSig, alpha: float, kappa2: float = 1.0) -> Operator:
    a = mode_operator(sig, 0, 'annihilation')
    identity = mode_operator(sig, 0, 'identity')
    return (a @ a - identity * alpha ** 2) * math.sqrt(kappa2)


class TestLiouvillian:
    """测试 dρ/dt 的计算"""

    def test_coherent_state_is_dark(self):
        ket = cat_basis_state(30, 1.0, 'coherent')
        drho = liouvillian_apply(_zero_hamiltonian(ket.sig), [_two_photon_loss(ket.sig, 1.0)],
                                 ket.to_density())
        assert np.max(np.abs(drho)) < 1e-10

    def test_single_photon_decay_rate(self):
        sig = SpaceSig((4,))
        loss = mode_operator(sig, 0, 'annihilation') * math.sqrt(0.7)
        drho = liouvillian_apply(_zero_hamiltonian(sig), [loss], fock_state(sig, [1]).to_density())
        number = mode_operator(sig, 0, 'number').data
        assert np.real(np.trace(number @ drho)) == pytest.approx(-0.7)

    def test_trace_preserving(self):
        sig = SpaceSig((8,))
        a = mode_operator(sig, 0, 'annihilation')
        hamiltonian = (a.dag() @ a.dag() @ a @ a * 0.3 + (a + a.dag()) * 0.5).hermitized()
        rho = cat_basis_state(12, 0.8, 'zero').to_density()
        rho = type(rho).from_array(sig, rho.data[:8, :8])
        drho = liouvillian_apply(hamiltonian, [a * 0.9, _two_photon_loss(sig, 0.8)], rho)
        assert abs(np.trace(drho)) < 1e-12

    def test_signature_mismatch(self):
        sig = SpaceSig((4,))
        rho = fock_state(SpaceSig((5,)), [0]).to_density()
        with pytest.raises(SignatureMismatchError):
            liouvillian_apply(_zero_hamiltonian(sig), [], rho)


class TestEvolve:
    """测试时间演化"""

    def test_exponential_decay(self):
        sig = SpaceSig((3,))
        number = mode_operator(sig, 0, 'number')
        grid = sample_grid(5.0, 26)
        spec = EvolutionSpec(_zero_hamiltonian(sig), (mode_operator(sig, 0, 'annihilation'),),
                             grid, {"n": number})
        series = evolve(spec, fock_state(sig, [1]).to_density())
        np.testing.assert_allclose(series.real("n"), np.exp(-grid), atol=1e-6)
        assert series.times[-1] == 5.0

    def test_parity_conserved_under_two_photon_loss(self):
        ket = cat_basis_state(26, 2.0, 'plus')
        sig = ket.sig
        kappa_c = 2 * 4.0 * 1.0
        spec = EvolutionSpec(_zero_hamiltonian(sig), (_two_photon_loss(sig, 2.0),),
                             sample_grid(10.0 / kappa_c, 11), {"P": mode_operator(sig, 0, 'parity')})
        series = evolve(spec, ket.to_density())
        assert np.max(np.abs(series.real("P") - 1.0)) < 1e-6

    def test_parity_conserved_for_state_set(self):
        for alpha_sq in (1.0, 2.0, 4.0):
            alpha = math.sqrt(alpha_sq)
            N = 30
            sig = SpaceSig((N,))
            parity = mode_operator(sig, 0, 'parity')
            spec = EvolutionSpec(_zero_hamiltonian(sig), (_two_photon_loss(sig, alpha),),
                                 sample_grid(2.0 / alpha_sq, 5), {"P": parity})
            for kind in ('plus', 'minus', 'coherent'):
                rho0 = cat_basis_state(N, alpha, kind).to_density()
                series = evolve(spec, rho0)
                start = expectation(rho0, parity)
                assert np.max(np.abs(series.real("P") - start)) < 1e-6

    def test_vacuum_relaxes_to_even_cat(self):
        alpha = math.sqrt(2.0)
        sig = SpaceSig((30,))
        kappa_c = 2 * 2.0 * 1.0
        spec = EvolutionSpec(_zero_hamiltonian(sig), (_two_photon_loss(sig, alpha),),
                             np.array([10.0 / kappa_c]))
        final = evolve(spec, fock_state(sig, [0]).to_density()).final_state
        assert fidelity(final, cat_basis_state(30, alpha, 'plus')) > 0.99

    def test_final_state_invariants(self):
        sig = SpaceSig((10,))
        a = mode_operator(sig, 0, 'annihilation')
        hamiltonian = (a.dag() @ a * 0.4).hermitized()
        spec = EvolutionSpec(hamiltonian, (a * 0.5, _two_photon_loss(sig, 1.0)), sample_grid(3.0, 4))
        final = evolve(spec, fock_state(sig, [3]).to_density()).final_state
        assert abs(np.trace(final.data) - 1.0) < 1e-6
        assert np.max(np.abs(final.data - final.data.conj().T)) < 1e-8
        assert final.min_eigenvalue() > -1e-6

    def test_rate_rescaling_covariance(self):
        sig = SpaceSig((12,))
        a = mode_operator(sig, 0, 'annihilation')
        observables = {"a": a}
        rho0 = cat_basis_state(12, 1.0, 'coherent')
        base = EvolutionSpec(_zero_hamiltonian(sig), (a * 0.3, _two_photon_loss(sig, 1.0, 1.0)),
                             sample_grid(2.0, 9), observables)
        s = 10.0
        fast = EvolutionSpec(_zero_hamiltonian(sig),
                             (a * (0.3 * math.sqrt(s)), _two_photon_loss(sig, 1.0, s)),
                             sample_grid(2.0 / s, 9), observables)
        slow_values = evolve(base, rho0.to_density()).values["a"]
        fast_values = evolve(fast, rho0.to_density()).values["a"]
        np.testing.assert_allclose(fast_values, slow_values, atol=1e-6)

    def test_step_tolerance_convergence(self):
        sig = SpaceSig((12,))
        a = mode_operator(sig, 0, 'annihilation')
        losses = (a * 0.3, _two_photon_loss(sig, 1.0))
        rho0 = fock_state(sig, [0]).to_density()
        grid = sample_grid(3.0, 7)
        results = []
        for tol in (1e-8, 5e-9):
            spec = EvolutionSpec(_zero_hamiltonian(sig), losses, grid, {"a2": a @ a},
                                 Tolerances(rel_step_tol=tol))
            results.append(evolve(spec, rho0).values["a2"])
        assert np.max(np.abs(results[0] - results[1])) < 1e-5

    def test_to_csv_header(self, tmp_path):
        sig = SpaceSig((3,))
        spec = EvolutionSpec(_zero_hamiltonian(sig), (mode_operator(sig, 0, 'annihilation'),),
                             sample_grid(1.0, 3), {"n": mode_operator(sig, 0, 'number')})
        path = evolve(spec, fock_state(sig, [2]).to_density()).to_csv(tmp_path / "decay.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "t,n_re,n_im"
        assert len(lines) == 4

    def test_run_many_preserves_order(self):
        sig = SpaceSig((3,))
        spec = EvolutionSpec(_zero_hamiltonian(sig), (mode_operator(sig, 0, 'annihilation'),),
                             sample_grid(1.0, 3), {"n": mode_operator(sig, 0, 'number')})
        first, second = run_many([(spec, fock_state(sig, [1]).to_density()),
                                  (spec, fock_state(sig, [2]).to_density())])
        assert first.real("n")[0] == pytest.approx(1.0)
        assert second.real("n")[0] == pytest.approx(2.0)


class TestEvolutionSpec:
    """测试演化描述的校验"""

    def test_grid_must_increase(self):
        sig = SpaceSig((3,))
        with pytest.raises(ValueError):
            EvolutionSpec(_zero_hamiltonian(sig), (), np.array([0.0, 1.0, 1.0]))

    def test_negative_start(self):
        sig = SpaceSig((3,))
        with pytest.raises(ValueError):
            EvolutionSpec(_zero_hamiltonian(sig), (), np.array([-1.0, 1.0]))

    def test_loss_signature_checked(self):
        with pytest.raises(SignatureMismatchError):
            EvolutionSpec(_zero_hamiltonian(SpaceSig((3,))),
                          (mode_operator(SpaceSig((4,)), 0, 'annihilation'),))

    def test_tolerances_validated(self):
        with pytest.raises(ValueError):
            Tolerances(rel_step_tol=0.0)
        with pytest.raises(ValueError):
            Tolerances(herm_resym_period=0)


class TestRelaxToSteady:
    """测试稳态弛豫"""

    def test_decay_to_vacuum(self):
        sig = SpaceSig((3,))
        spec = EvolutionSpec(_zero_hamiltonian(sig), (mode_operator(sig, 0, 'annihilation'),))
        steady = relax_to_steady(spec, fock_state(sig, [2]).to_density(), horizon=60.0, stall_tol=1e-8)
        assert steady.converged
        assert fidelity(steady.state, fock_state(sig, [0])) == pytest.approx(1.0, abs=1e-7)

    def test_fixed_point_returned_unchanged(self):
        ket = cat_basis_state(30, 1.0, 'plus')
        spec = EvolutionSpec(_zero_hamiltonian(ket.sig), (_two_photon_loss(ket.sig, 1.0),))
        rho0 = ket.to_density()
        steady = relax_to_steady(spec, rho0, horizon=10.0, stall_tol=1e-8)
        assert steady.converged
        assert steady.t_reached == 0.0
        np.testing.assert_array_equal(steady.state.data, rho0.data)

    def test_single_photon_loss_mixes_parity(self):
        sig = SpaceSig((22,))
        a = mode_operator(sig, 0, 'annihilation')
        spec = EvolutionSpec(_zero_hamiltonian(sig), (a * 0.5, _two_photon_loss(sig, math.sqrt(2.0))))
        steady = relax_to_steady(spec, fock_state(sig, [0]).to_density(), horizon=200.0, stall_tol=1e-7)
        assert expectation(steady.state, mode_operator(sig, 0, 'parity')) < 0.9

    def test_not_converged_is_reported(self):
        sig = SpaceSig((3,))
        spec = EvolutionSpec(_zero_hamiltonian(sig), (mode_operator(sig, 0, 'annihilation') * 0.01,))
        steady = relax_to_steady(spec, fock_state(sig, [2]).to_density(), horizon=1.0, stall_tol=1e-12)
        assert not steady.converged
        assert steady.t_reached == pytest.approx(1.0)

    def test_horizon_must_be_positive(self):
        sig = SpaceSig((3,))
        spec = EvolutionSpec(_zero_hamiltonian(sig))
        with pytest.raises(ValueError):
            relax_to_steady(spec, fock_state(sig, [0]).to_density(), horizon=0.0, stall_tol=1e-8)
