"""
Tests for the dual active-set least-distance QP.
"""

import itertools

import numpy as np
import pytest
from scipy import optimize

from shqp.errors import DimensionMismatch, ValidationError
from shqp.model import FarkasCertificate
from shqp.qp import (
    BudgetExhausted,
    GiState,
    Optimal,
    Progressed,
    QpInfeasible,
    QpProblem,
    Solved,
    check_farkas,
    gi_solve,
    gi_step,
    gi_warm_start,
)


CONE = QpProblem(np.array([1.0, 1.0]), np.array([[2.0, -1.0], [-1.0, 2.0]]), np.zeros(2))


def enumerate_projection(problem, tol=1e-9):
    """Nearest feasible KKT point over every independent active subset, or None"""
    y, C, b = problem.anchor, problem.normals, problem.offsets
    best = None
    for k in range(0, min(problem.m, problem.dim) + 1):
        for subset in itertools.combinations(range(problem.m), k):
            S = list(subset)
            if k:
                Cs = C[S]
                if np.linalg.matrix_rank(Cs, tol=1e-10) < k:
                    continue
                lam = np.linalg.solve(Cs @ Cs.T, Cs @ y - b[S])
                if np.any(lam < -1e-10):
                    continue
                x = y - Cs.T @ lam
            else:
                x = y.copy()
            if np.all(problem.violations(x) <= tol):
                if best is None or np.linalg.norm(x - y) < np.linalg.norm(best - y):
                    best = x
    return best


def random_qp(rng, infeasible):
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 9))
    z0 = rng.standard_normal(n)
    C = rng.standard_normal((m, n))
    b = C @ z0 + rng.uniform(0.0, 1.0, m)
    if infeasible:
        b[0] = C[0] @ z0
        gap = rng.uniform(0.1, 1.0) * np.linalg.norm(C[0])
        C = np.vstack([C, -C[0]])
        b = np.append(b, -C[0] @ z0 - gap)
    y = z0 + 3.0 * rng.standard_normal(n)
    return QpProblem(y, C, b), z0


def feasible_samples(rng, problem, z0, count=20):
    out = [z0]
    for _ in range(400):
        if len(out) >= count:
            break
        c = z0 + 0.5 * rng.standard_normal(problem.dim)
        if np.all(problem.normals @ c <= problem.offsets):
            out.append(c)
    return out


class TestExamples:
    """Test the small worked examples"""

    def test_unconstrained(self):
        """No constraints: the anchor is optimal"""
        result = gi_solve(QpProblem(np.array([5.0, 5.0]), np.zeros((0, 2)), np.zeros(0)))
        assert isinstance(result, Solved)
        np.testing.assert_array_equal(result.point, [5, 5])
        assert result.active == []

    def test_single_halfspace(self):
        """Projection of (2,0) onto x1 <= 1 with dual 1"""
        result = gi_solve(QpProblem(np.array([2.0, 0.0]), np.array([[1.0, 0.0]]), np.array([1.0])))
        np.testing.assert_allclose(result.point, [1, 0])
        np.testing.assert_allclose(result.duals, [1.0])

    def test_cone(self):
        """Projection of (1,1) onto the cone pair is the origin with duals (1,1)"""
        result = gi_solve(CONE)
        assert isinstance(result, Solved)
        np.testing.assert_allclose(result.point, [0, 0], atol=1e-14)
        duals = np.zeros(2)
        duals[result.active] = result.duals
        np.testing.assert_allclose(duals, [1, 1])

    def test_contradictory_bounds(self):
        """x <= -1 and x >= 1 yields r=(1,1), gap -2"""
        problem = QpProblem(np.array([0.0]), np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))
        result = gi_solve(problem)
        assert isinstance(result, QpInfeasible)
        np.testing.assert_allclose(result.certificate.multipliers, [1, 1])
        assert result.certificate.gap == pytest.approx(-2.0)
        assert check_farkas(result.certificate, problem)

    def test_first_step(self):
        """One step activates (2,-1) and lands on (3/5, 6/5)"""
        state = GiState.initial(CONE)
        outcome = gi_step(state, CONE)
        assert isinstance(outcome, Progressed)
        assert state.active == [0]
        np.testing.assert_allclose(state.primal, [0.6, 1.2])

    def test_step_at_optimum(self):
        """An optimal state stays put"""
        state = gi_solve(CONE).state
        before = state.primal.copy()
        assert isinstance(gi_step(state, CONE), Optimal)
        np.testing.assert_array_equal(state.primal, before)

    def test_invalid_problem(self):
        """Zero normals and mismatched lengths are rejected"""
        with pytest.raises(ValidationError):
            QpProblem(np.zeros(2), np.array([[0.0, 0.0]]), np.array([1.0]))
        with pytest.raises(ValidationError):
            QpProblem(np.zeros(2), np.array([[1.0, 0.0]]), np.array([1.0, 2.0]))
        with pytest.raises(DimensionMismatch):
            QpProblem(np.zeros(2), np.array([[1.0, 0.0, 0.0]]), np.array([1.0]))


class TestOracleEquivalence:
    """Test gi_solve against exhaustive active-set enumeration"""

    def test_random_qps(self, rng):
        """500 random instances, feasible and infeasible"""
        for k in range(500):
            problem, _ = random_qp(rng, infeasible=(k % 3 == 0))
            result = gi_solve(problem)
            expected = enumerate_projection(problem)
            if isinstance(result, QpInfeasible):
                assert expected is None
                assert check_farkas(result.certificate, problem, 1e-8)
                lp = optimize.linprog(np.zeros(problem.dim), A_ub=problem.normals, b_ub=problem.offsets,
                                      bounds=[(None, None)] * problem.dim, method="highs")
                assert lp.status == 2
            else:
                assert isinstance(result, Solved)
                assert expected is not None
                np.testing.assert_allclose(result.point, expected, atol=1e-8)

    def test_kkt_stationarity(self, rng):
        """point - y + sum u_j c_j vanishes with nonnegative duals"""
        for _ in range(100):
            problem, _ = random_qp(rng, infeasible=False)
            result = gi_solve(problem)
            stationarity = result.point - problem.anchor
            if result.active:
                stationarity = stationarity + result.duals @ problem.normals[result.active]
            assert np.linalg.norm(stationarity) <= 1e-8 * (1.0 + np.linalg.norm(problem.anchor))
            assert np.all(result.duals >= -1e-12)


class TestPartialSolves:
    """Test properties of every intermediate state"""

    def test_monotone_distance_and_fejer(self, rng):
        """||x_j - y|| never decreases and ||x_j - c||^2 <= ||y - c||^2 - ||y - x_j||^2"""
        for _ in range(200):
            problem, z0 = random_qp(rng, infeasible=False)
            samples = feasible_samples(rng, problem, z0)
            state = GiState.initial(problem)
            previous = 0.0
            while True:
                outcome = gi_step(state, problem)
                x = state.primal
                distance = float(np.linalg.norm(x - problem.anchor))
                assert distance >= previous - 1e-12
                previous = distance
                for c in samples:
                    lhs = float(np.sum((x - c) ** 2))
                    rhs = float(np.sum((problem.anchor - c) ** 2)) - distance**2
                    assert lhs <= rhs + 1e-8
                if isinstance(outcome, Optimal):
                    break

    def test_active_constraints_tight(self, rng):
        """Active constraints hold with equality after every step"""
        for _ in range(50):
            problem, _ = random_qp(rng, infeasible=False)
            state = GiState.initial(problem)
            while isinstance(gi_step(state, problem), Progressed):
                residual = problem.normals[state.active] @ state.primal - problem.offsets[state.active]
                assert np.all(np.abs(residual) <= 1e-8 * (1.0 + np.abs(problem.offsets).max()))
                assert np.all(state.duals >= -1e-12)

    def test_primal_is_projection_on_active_set(self, rng):
        """The partial primal equals a from-scratch equality-constrained solve"""
        for _ in range(50):
            problem, _ = random_qp(rng, infeasible=False)
            state = GiState.initial(problem)
            while isinstance(gi_step(state, problem), Progressed):
                Cs = problem.normals[state.active]
                lam = np.linalg.solve(Cs @ Cs.T, Cs @ problem.anchor - problem.offsets[state.active])
                np.testing.assert_allclose(state.primal, problem.anchor - Cs.T @ lam, atol=1e-8)

    def test_budget(self):
        """A budget of one step returns a partial state"""
        result = gi_solve(CONE, step_budget=1)
        assert isinstance(result, BudgetExhausted)
        assert result.steps == 1
        np.testing.assert_allclose(result.state.primal, [0.6, 1.2])
        finished = gi_solve(CONE, state=result.state)
        np.testing.assert_allclose(finished.point, [0, 0], atol=1e-14)


class TestWarmStart:
    """Test warm starts on appended constraints"""

    def test_satisfied_constraint(self):
        """Appending a satisfied constraint leaves the state as it was"""
        result = gi_solve(CONE)
        warm = gi_warm_start(result.state, CONE, [([1.0, 1.0], 5.0)])
        np.testing.assert_array_equal(warm.primal, result.state.primal)
        assert warm.active == result.state.active
        again = gi_solve(CONE.extended([([1.0, 1.0], 5.0)]), state=warm)
        assert again.steps == 0

    def test_matches_cold_solve(self, rng):
        """Warm and cold solves of the extended problem agree"""
        for _ in range(100):
            problem, z0 = random_qp(rng, infeasible=False)
            first = gi_solve(problem)
            a = rng.standard_normal(problem.dim)
            added = [(a, float(a @ z0) + 0.1)]
            extended = problem.extended(added)
            warm = gi_solve(extended, state=gi_warm_start(first.state, problem, added))
            cold = gi_solve(extended)
            np.testing.assert_allclose(warm.point, cold.point, atol=1e-8)

    def test_becomes_infeasible(self):
        """x1 <= 0 followed by -x1 <= -1 cannot be satisfied"""
        problem = QpProblem(np.array([0.5, 0.0]), np.array([[1.0, 0.0]]), np.array([0.0]))
        first = gi_solve(problem)
        added = [([-1.0, 0.0], -1.0)]
        result = gi_solve(problem.extended(added), state=gi_warm_start(first.state, problem, added))
        assert isinstance(result, QpInfeasible)
        assert check_farkas(result.certificate, problem.extended(added))

    def test_dimension_mismatch(self):
        """Added normals must match the dimension"""
        with pytest.raises(DimensionMismatch):
            gi_warm_start(gi_solve(CONE).state, CONE, [([1.0, 0.0, 0.0], 1.0)])


class TestCheckFarkas:
    """Test certificate verification"""

    PAIR = QpProblem(np.array([0.0]), np.array([[1.0], [-1.0]]), np.array([-1.0, -1.0]))

    def test_valid(self):
        """r=(1,1) certifies the contradictory pair"""
        assert check_farkas(FarkasCertificate(np.array([1.0, 1.0]), 0.0, -2.0), self.PAIR)

    def test_zero(self):
        """r=0 is not a certificate"""
        assert not check_farkas(FarkasCertificate(np.zeros(2), 0.0, 0.0), self.PAIR)

    def test_negative_and_unbalanced(self):
        """Negative entries and nonzero residuals are rejected"""
        assert not check_farkas(FarkasCertificate(np.array([1.0, -1.0]), 0.0, 0.0), self.PAIR)
        assert not check_farkas(FarkasCertificate(np.array([1.0, 2.0]), 1.0, -3.0), self.PAIR)

    def test_wrong_length(self):
        """Malformed multipliers return False"""
        assert not check_farkas(FarkasCertificate(np.array([1.0]), 0.0, -1.0), self.PAIR)

    def test_recomputes_from_problem(self):
        """Claimed residual and gap are ignored"""
        feasible = QpProblem(np.array([0.0]), np.array([[1.0], [-1.0]]), np.array([1.0, 1.0]))
        assert not check_farkas(FarkasCertificate(np.array([1.0, 1.0]), 0.0, -2.0), feasible)


class TestShallowContradiction:
    """Test contradictions too shallow to certify"""

    NEAR_PAIR = QpProblem(np.array([0.0]), np.array([[1.0], [-1.0]]), np.array([0.0, -5e-9]))

    def test_tolerated_at_default_cert_tol(self):
        """x <= 0 and x >= 5e-9 solve instead of returning an unverifiable certificate"""
        result = gi_solve(self.NEAR_PAIR)
        assert isinstance(result, Solved)
        assert result.active == [1]
        assert result.state.tolerated == {0}
        np.testing.assert_allclose(result.point, [5e-9], rtol=1e-12)

    def test_certified_at_tighter_cert_tol(self):
        """The same pair is infeasible once the gap clears cert_tol"""
        result = gi_solve(self.NEAR_PAIR, cert_tol=1e-9)
        assert isinstance(result, QpInfeasible)
        np.testing.assert_allclose(result.certificate.multipliers, [1, 1])
        assert check_farkas(result.certificate, self.NEAR_PAIR, 1e-9)

    def test_next_violated_row_still_added(self):
        """Skipping a tolerated row does not stop the solve"""
        problem = QpProblem(
            np.zeros(2),
            np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]),
            np.array([0.0, -5e-9, -3e-9]),
        )
        result = gi_solve(problem)
        assert isinstance(result, Solved)
        assert sorted(result.active) == [1, 2]
        assert result.state.tolerated == {0}
        np.testing.assert_allclose(result.point, [5e-9, -3e-9], rtol=1e-12)

    def test_step_restores_state(self):
        """A tolerated contradiction leaves primal, duals and active set untouched"""
        state = GiState.initial(self.NEAR_PAIR)
        assert isinstance(gi_step(state, self.NEAR_PAIR), Progressed)
        primal, duals = state.primal.copy(), state.duals.copy()
        assert isinstance(gi_step(state, self.NEAR_PAIR), Optimal)
        assert state.active == [1]
        np.testing.assert_array_equal(state.primal, primal)
        np.testing.assert_array_equal(state.duals, duals)

    def test_infeasible_results_always_verify(self, rng):
        """Contradictory pairs with gaps around cert_tol never return a failing certificate"""
        for gap in np.geomspace(1e-10, 1e-6, 25):
            a = rng.standard_normal(3)
            offsets = np.array([0.0, -gap * np.linalg.norm(a)])
            problem = QpProblem(rng.standard_normal(3), np.array([a, -a]), offsets)
            result = gi_solve(problem)
            if isinstance(result, QpInfeasible):
                assert check_farkas(result.certificate, problem)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
