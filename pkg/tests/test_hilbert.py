"""
测试截断Fock空间算符代数模块
"""

import math

import numpy as np
import pytest

from cat_qubit_sim.exceptions import PositivityError, SignatureMismatchError, TruncationError
from cat_qubit_sim.hilbert import (
    DensityMatrix,
    Ket,
    Operator,
    SpaceSig,
    cat_basis_state,
    coherent_amplitudes,
    displacement,
    embed_operator,
    expectation,
    fidelity,
    fock_state,
    from_json,
    mode_operator,
    partial_trace,
    tensor,
    to_json,
    truncation_rule,
)


class TestSpaceSig:
    """测试空间签名"""

    def test_total_and_modes(self):
        sig = SpaceSig((5, 3, 2))
        assert sig.total == 30
        assert sig.n_modes == 3

    def test_rejects_empty_or_zero(self):
        with pytest.raises(ValueError):
            SpaceSig(())
        with pytest.raises(ValueError):
            SpaceSig((3, 0))

    def test_truncation_rule(self):
        assert truncation_rule(0.0) == 10
        assert truncation_rule(2.0) == 26
        assert truncation_rule(1.5) == 22


class TestModeOperator:
    """测试单模算符的构造与嵌入"""

    def test_annihilation_matrix(self):
        a = mode_operator(SpaceSig((3,)), 0, 'annihilation')
        expected = np.zeros((3, 3))
        expected[0, 1] = 1.0
        expected[1, 2] = math.sqrt(2.0)
        np.testing.assert_allclose(a.data, expected)

    def test_parity_on_fock_one(self):
        sig = SpaceSig((4,))
        rho = fock_state(sig, [1]).to_density()
        assert expectation(rho, mode_operator(sig, 0, 'parity')) == pytest.approx(-1.0)

    def test_embedded_number(self):
        sig = SpaceSig((3, 2))
        rho = fock_state(sig, [0, 1]).to_density()
        assert expectation(rho, mode_operator(sig, 1, 'number')) == pytest.approx(1.0)
        assert expectation(rho, mode_operator(sig, 0, 'number')) == pytest.approx(0.0)

    def test_invalid_mode_and_kind(self):
        sig = SpaceSig((3,))
        with pytest.raises(ValueError):
            mode_operator(sig, 1, 'number')
        with pytest.raises(ValueError):
            mode_operator(sig, 0, 'squeeze')

    def test_commutator_below_top_level(self):
        n = 12
        sig = SpaceSig((n,))
        a = mode_operator(sig, 0, 'annihilation')
        commutator = (a @ a.dag() - a.dag() @ a).data
        np.testing.assert_allclose(commutator[:n - 1, :n - 1], np.eye(n - 1), atol=1e-12)

    def test_parity_anticommutes_with_annihilation(self):
        sig = SpaceSig((10,))
        a = mode_operator(sig, 0, 'annihilation')
        p = mode_operator(sig, 0, 'parity')
        assert np.max(np.abs((p @ a + a @ p).data)) < 1e-12

    def test_disjoint_modes_commute(self):
        sig = SpaceSig((4, 3))
        a = mode_operator(sig, 0, 'annihilation')
        b = mode_operator(sig, 1, 'annihilation')
        assert np.max(np.abs((a @ b.dag() - b.dag() @ a).data)) == 0.0

    def test_embed_operator_shape_check(self):
        sig = SpaceSig((3, 2))
        with pytest.raises(SignatureMismatchError):
            embed_operator(sig, 1, np.eye(3))
        op = embed_operator(sig, 1, np.diag([0.0, 1.0]), hermitian=True)
        np.testing.assert_allclose(op.data, mode_operator(sig, 1, 'number').data)


class TestOperator:
    """测试算符的不变量"""

    def test_hermitian_flag_verified(self):
        sig = SpaceSig((2,))
        with pytest.raises(ValueError):
            Operator(sig, np.array([[0, 1], [0, 0]]), hermitian=True)

    def test_signature_mismatch(self):
        a = mode_operator(SpaceSig((3,)), 0, 'annihilation')
        b = mode_operator(SpaceSig((4,)), 0, 'annihilation')
        with pytest.raises(SignatureMismatchError):
            _ = a @ b

    def test_data_is_readonly(self):
        op = mode_operator(SpaceSig((3,)), 0, 'number')
        with pytest.raises(ValueError):
            op.data[0, 0] = 5.0


class TestDisplacement:
    """测试位移算符"""

    def test_zero_is_identity(self):
        sig = SpaceSig((12,))
        np.testing.assert_array_equal(displacement(sig, 0, 0.0).data, np.eye(12))

    def test_vacuum_becomes_coherent(self):
        sig = SpaceSig((25,))
        vacuum = fock_state(sig, [0]).amplitudes
        shifted = displacement(sig, 0, 1.5).data @ vacuum
        target = coherent_amplitudes(25, 1.5)
        overlap = abs(np.vdot(target / np.linalg.norm(target), shifted)) ** 2
        assert overlap > 1 - 1e-8

    def test_inverse(self):
        sig = SpaceSig((40,))
        product = displacement(sig, 0, 2.0).data @ displacement(sig, 0, -2.0).data
        # 只在低能子空间上检查
        np.testing.assert_allclose(product[:5, :5], np.eye(5), atol=1e-8)

    def test_rejects_insufficient_truncation(self):
        with pytest.raises(TruncationError):
            displacement(SpaceSig((15,)), 0, 2.0)


class TestCatStates:
    """测试猫态基矢"""

    def test_plus_at_zero_is_vacuum(self):
        ket = cat_basis_state(10, 0.0, 'plus')
        expected = np.zeros(10)
        expected[0] = 1.0
        np.testing.assert_allclose(np.abs(ket.amplitudes), expected, atol=1e-15)

    def test_even_cat_parity(self):
        ket = cat_basis_state(26, 2.0, 'plus')
        parity = mode_operator(ket.sig, 0, 'parity')
        assert expectation(ket.to_density(), parity) == pytest.approx(1.0, abs=1e-14)

    def test_odd_cat_parity(self):
        ket = cat_basis_state(26, 2.0, 'minus')
        parity = mode_operator(ket.sig, 0, 'parity')
        assert expectation(ket.to_density(), parity) == pytest.approx(-1.0, abs=1e-14)

    def test_zero_state_photon_number(self):
        ket = cat_basis_state(26, 2.0, 'zero')
        n = expectation(ket.to_density(), mode_operator(ket.sig, 0, 'number'))
        assert n == pytest.approx(4.0, rel=5e-4)

    def test_zero_one_orthonormal(self):
        for alpha in (0.5, 1.0, 2.0):
            N = truncation_rule(alpha)
            zero = cat_basis_state(N, alpha, 'zero').amplitudes
            one = cat_basis_state(N, alpha, 'one').amplitudes
            assert abs(np.vdot(zero, one)) < 1e-12
            assert np.linalg.norm(zero) == pytest.approx(1.0, abs=1e-12)

    def test_minus_at_zero_rejected(self):
        with pytest.raises(ValueError):
            cat_basis_state(10, 0.0, 'minus')

    def test_truncation_rule_enforced(self):
        with pytest.raises(TruncationError):
            cat_basis_state(20, 2.0, 'plus')


class TestDensityMatrix:
    """测试密度矩阵与期望值"""

    def test_vacuum_number(self):
        sig = SpaceSig((5,))
        rho = fock_state(sig, [0]).to_density()
        assert expectation(rho, mode_operator(sig, 0, 'number')) == pytest.approx(0.0)

    def test_coherent_annihilation(self):
        ket = cat_basis_state(22, 1.5, 'coherent')
        a = mode_operator(ket.sig, 0, 'annihilation')
        value = expectation(ket.to_density(), a)
        assert abs(value - 1.5) < 1e-8

    def test_maximally_mixed_parity(self):
        sig = SpaceSig((2,))
        rho = DensityMatrix.maximally_mixed(sig)
        assert expectation(rho, mode_operator(sig, 0, 'parity')) == pytest.approx(0.0)

    def test_trace_enforced(self):
        with pytest.raises(ValueError):
            DensityMatrix(SpaceSig((2,)), np.diag([0.6, 0.6]))

    def test_positivity_enforced(self):
        with pytest.raises(PositivityError):
            DensityMatrix(SpaceSig((2,)), np.diag([1.1, -0.1]))
        with pytest.raises(PositivityError):
            DensityMatrix.from_array(SpaceSig((2,)), np.diag([1.0, -1e-7]))

    def test_positivity_slack(self):
        loose = DensityMatrix.from_array(SpaceSig((2,)), np.diag([1.0, -1e-7]), positivity_tol=1e-6)
        assert loose.min_eigenvalue() < 0
        with pytest.raises(PositivityError):
            loose.check_positivity()
        unchecked = DensityMatrix(SpaceSig((2,)), np.diag([1.1, -0.1]), positivity_tol=None)
        assert unchecked.min_eigenvalue() == pytest.approx(-0.1)

    def test_partial_trace_keeps_slack(self):
        data = np.diag([0.5, 0.5 + 1e-7, 0.0, -1e-7]).astype(complex)
        rho = DensityMatrix(SpaceSig((2, 2)), data, positivity_tol=1e-6)
        assert partial_trace(rho, 0).positivity_tol == 1e-6

    def test_from_array_normalizes(self):
        rho = DensityMatrix.from_array(SpaceSig((2,)), np.diag([2.0, 2.0]))
        np.testing.assert_allclose(rho.data, 0.5 * np.eye(2))
        assert rho.purity() == pytest.approx(0.5)

    def test_partial_trace_of_product(self):
        cat = cat_basis_state(12, 1.0, 'plus')
        buffer = fock_state(SpaceSig((3,)), [1])
        rho = tensor(cat, buffer).to_density()
        reduced = partial_trace(rho, 0)
        np.testing.assert_allclose(reduced.data, cat.to_density().data, atol=1e-14)
        assert fidelity(partial_trace(rho, 1), buffer) == pytest.approx(1.0)


class TestSerialization:
    """测试JSON序列化"""

    def test_density_matrix_json(self):
        rho = cat_basis_state(12, 1.0, 'one').to_density()
        text = to_json(rho)
        restored = from_json(text)
        assert isinstance(restored, DensityMatrix)
        assert restored.sig == rho.sig
        np.testing.assert_array_equal(restored.data, rho.data)

    def test_interleaved_layout(self):
        ket = Ket(SpaceSig((2,)), np.array([1j, 0.0]))
        payload = ket.to_json_dict()
        assert payload["kind"] == "ket"
        assert payload["data"] == [0.0, 1.0, 0.0, 0.0]

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            from_json({"kind": "tensor", "dims": [2]})
