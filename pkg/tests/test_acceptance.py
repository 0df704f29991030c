"""
End-to-end behaviour on the worked examples and a random feasible corpus.
"""

import numpy as np
import pytest

from shqp import solvers
from shqp.cli import diagnose_report, main
from shqp.diagnostics import Linear, Quadratic, Superlinear, estimate_rates, recession_report
from shqp.functions import GluedExponential, MaxAffine, MaxOfFunctions, NormMinusRadius
from shqp.geometry import Ball, Box, Ellipsoid, ExponentialRegion, Halfspace
from shqp.halfspaces import CurrentRoundOnly, LastRounds
from shqp.model import Diverging, Feasible, Infeasible
from shqp.problem_io import read_trace, write_trace
from shqp.qp import Solved, check_farkas, gi_solve
from shqp.solvers import (
    BapProblem,
    CipProblem,
    SipProblem,
    SolverConfig,
    cone_residual,
    solve_bap,
    solve_cip,
    solve_map,
    solve_sip,
)

CORPUS_SIZE = 50


# ============================================================================
# Random feasible corpus
# ============================================================================

def _random_set(rng, kind, z):
    n = z.size
    if kind == "ball":
        v = rng.standard_normal(n)
        return Ball(z + v, float(np.linalg.norm(v)) + rng.uniform(0.1, 1.0))
    if kind == "box":
        return Box(z - rng.uniform(0.1, 1.0, n), z + rng.uniform(0.1, 1.0, n))
    if kind == "halfspace":
        a = rng.standard_normal(n)
        return Halfspace(a, float(a @ z) + rng.uniform(0.0, 0.5))
    A = rng.standard_normal((n, n))
    Q = A @ A.T + 0.5 * np.eye(n)
    center = z + 0.3 * rng.standard_normal(n)
    q = float((z - center) @ Q @ (z - center))
    if q > 0.5:
        Q = Q * (0.5 / q)
    return Ellipsoid(Q, center)


def random_feasible_instance(rng, kinds=("ball", "box", "halfspace", "ellipsoid")):
    """Sets sharing the point z, a distant start and up to 10 common points"""
    n = int(rng.integers(2, 4))
    r = int(rng.integers(2, 4))
    z = rng.standard_normal(n)
    sets = tuple(_random_set(rng, kinds[int(rng.integers(len(kinds)))], z) for _ in range(r))
    start = z + 4.0 * rng.standard_normal(n)
    samples = [z]
    for _ in range(200):
        if len(samples) >= 10:
            break
        c = z + 0.05 * rng.standard_normal(n)
        if all(s.project(c).distance == 0.0 for s in sets):
            samples.append(c)
    return sets, start, samples


def random_inequality(rng):
    """f = max of ball and halfspace constraints that all hold at z"""
    n = int(rng.integers(2, 4))
    z = rng.standard_normal(n)
    parts = []
    for _ in range(int(rng.integers(2, 4))):
        if rng.uniform() < 0.5:
            v = rng.standard_normal(n)
            parts.append(NormMinusRadius(z + v, float(np.linalg.norm(v)) + rng.uniform(0.1, 1.0)))
        else:
            a = rng.standard_normal(n)
            parts.append(MaxAffine([(a, float(a @ z) + rng.uniform(0.0, 0.5))]))
    f = MaxOfFunctions(parts)
    samples = [z] + [c for c in z + 0.05 * rng.standard_normal((40, n)) if f(c) <= 0.0][:9]
    return f, z + 4.0 * rng.standard_normal(n), samples


def assert_fejer(trace, samples, tol=1e-8):
    xs = trace.iterates
    for c in samples:
        d = np.linalg.norm(xs - c, axis=1)
        assert np.all(d[1:] <= d[:-1] + tol)


def assert_steps_in_normal_cones(trace, accumulate):
    """x_i - x_{i+1} is a nonnegative combination of the working normals"""
    seen = []
    xs = trace.iterates
    for i in range(min(len(trace) - 1, 30)):
        normals = list(trace[i].normals)
        seen = seen + normals if accumulate else normals
        step = xs[i] - xs[i + 1]
        if np.linalg.norm(step) < 1e-6 * (1.0 + np.linalg.norm(xs[i])):
            continue
        assert cone_residual(step, seen) <= 1e-6


def kkt_residuals(system, solved):
    """Primal violation, complementarity and stationarity of a solved least-distance QP"""
    duals = np.zeros(system.m)
    duals[solved.active] = solved.duals
    slack = system.normals @ solved.point - system.offsets
    primal = float(np.max(slack, initial=0.0))
    complementarity = float(np.max(np.abs(duals * slack), initial=0.0))
    stationarity = float(np.linalg.norm(system.anchor - solved.point - duals @ system.normals))
    return primal, complementarity, stationarity, float(duals.min(initial=0.0))


def record_bap_rounds(monkeypatch):
    """KKT residuals of every exact QP solved inside solve_bap"""
    rounds = []

    def recording(system, **kwargs):
        result = gi_solve(system, **kwargs)
        if isinstance(result, Solved):
            rounds.append((system.anchor.copy(), result.point.copy(), kkt_residuals(system, result)))
        return result

    monkeypatch.setattr(solvers, "gi_solve", recording)
    return rounds


# ============================================================================
# Worked examples
# ============================================================================

class TestGluedExponential:
    """x -> x - x^2 and no linear rate"""

    def test_iterates(self):
        """30 iterations track the recurrence to 1e-12 relative"""
        config = SolverConfig(policy=CurrentRoundOnly(), tol_feas=1e-300, max_outer=30)
        _, trace = solve_cip(CipProblem(GluedExponential(), [0.5]), config)
        xs = trace.iterates[:, 0]
        expected = [0.5]
        for _ in range(30):
            expected.append(expected[-1] - expected[-1] ** 2)
        np.testing.assert_allclose(xs, expected, rtol=1e-12)

    def test_q_ratios_approach_one(self):
        """q-ratios are 1 - x_i: increasing, above 0.97 at 30, above 0.99 by 200"""
        config = SolverConfig(policy=CurrentRoundOnly(), tol_feas=1e-300, max_outer=200)
        _, trace = solve_cip(CipProblem(GluedExponential(), [0.5]), config)
        report = estimate_rates(trace, [0.0])
        q = report.q_ratios
        assert np.all(np.diff(q) > 0.0)
        assert q[29] > 0.97
        assert q[-1] > 0.99
        assert not isinstance(report.classification, Linear)


class TestZigzag:
    """Subgradient zigzag versus two-round working sets"""

    def test_current_round_is_linear(self):
        """At least 25 iterations and a Linear classification"""
        outcome, trace = solve_cip(CipProblem(MaxAffine.zigzag(), [1, 1]), SolverConfig(policy=CurrentRoundOnly()))
        assert isinstance(outcome, Feasible)
        assert outcome.iterations >= 25
        assert isinstance(estimate_rates(trace, [0, 0]).classification, Linear)

    def test_two_rounds_finite(self):
        """LastRounds{1} reaches f <= 0 within three iterations"""
        f = MaxAffine.zigzag()
        outcome, _ = solve_cip(CipProblem(f, [1, 1]), SolverConfig(policy=LastRounds(1)))
        assert isinstance(outcome, Feasible)
        assert outcome.iterations <= 3


class TestSmoothIntersection:
    """Fast local convergence on transversal balls"""

    CORNER = np.array([0.75, np.sqrt(1.0 - 0.75**2)])

    def test_sip_quadratic(self):
        """Quadratic ratios stay bounded on the way into the lens corner"""
        problem = SipProblem((Ball([0, 0], 1), Ball([1.5, 0], 1)), [0.75, 2.5])
        outcome, trace = solve_sip(problem, SolverConfig(policy=CurrentRoundOnly(), tol_feas=1e-14))
        assert isinstance(outcome, Feasible)
        report = estimate_rates(trace, self.CORNER)
        ratios = report.quadratic_ratios[1]
        assert ratios.max() <= 10.0 * np.median(ratios)
        assert isinstance(report.classification, (Quadratic, Superlinear))

    def test_projection_baseline_linear(self):
        """Cyclic projections on the cone pair contract by a fixed factor"""
        outcome, trace = solve_map(SipProblem((Halfspace([2, -1], 0), Halfspace([-1, 2], 0)), [1, 1]))
        assert isinstance(outcome, Feasible)
        classification = estimate_rates(trace, [0, 0]).classification
        assert isinstance(classification, Linear)
        assert classification.factor == pytest.approx(0.64, rel=1e-6)


# ============================================================================
# Fejer sweep
# ============================================================================

class TestFejerSweep:
    """Every solver on the random feasible corpus"""

    def test_sip(self, rng):
        """Exact and budgeted SIP steps are Fejer and lie in the normal cone"""
        for k in range(CORPUS_SIZE):
            sets, start, samples = random_feasible_instance(rng)
            budget = None if k % 2 == 0 else 1
            config = SolverConfig(max_outer=100, gi_step_budget=budget)
            outcome, trace = solve_sip(SipProblem(sets, start), config)
            assert not isinstance(outcome, Infeasible)
            assert_fejer(trace, samples)
            assert_steps_in_normal_cones(trace, accumulate=True)

    def test_sip_current_round(self, rng):
        """CurrentRoundOnly cones hold only the latest normals"""
        for _ in range(CORPUS_SIZE):
            sets, start, samples = random_feasible_instance(rng)
            _, trace = solve_sip(SipProblem(sets, start), SolverConfig(policy=CurrentRoundOnly(), max_outer=100))
            assert_fejer(trace, samples)
            assert_steps_in_normal_cones(trace, accumulate=False)

    def test_cip(self, rng):
        """Subgradient cuts keep the iterates Fejer"""
        for k in range(CORPUS_SIZE):
            f, start, samples = random_inequality(rng)
            policy = CurrentRoundOnly() if k % 2 == 0 else LastRounds(3)
            outcome, trace = solve_cip(CipProblem(f, start), SolverConfig(policy=policy, max_outer=100))
            assert not isinstance(outcome, Infeasible)
            assert_fejer(trace, samples)
            if isinstance(policy, CurrentRoundOnly):
                assert_steps_in_normal_cones(trace, accumulate=False)

    def test_bap(self, rng):
        """||x_i - c||^2 <= ||x0 - c||^2 - ||x0 - x_i||^2 for every round"""
        for _ in range(CORPUS_SIZE):
            sets, anchor, samples = random_feasible_instance(rng)
            _, trace = solve_bap(BapProblem(anchor, sets), SolverConfig(max_outer=100))
            for x in trace.iterates:
                shift = float(np.sum((x - anchor) ** 2))
                for c in samples:
                    assert np.sum((x - c) ** 2) <= np.sum((anchor - c) ** 2) - shift + 1e-8


# ============================================================================
# Infeasibility
# ============================================================================

class TestCertification:
    """Finite certificates for bounded disjoint sets"""

    PAIRS = {
        "balls": (Ball([-2, 0], 1), Ball([2, 0], 1)),
        "boxes": (Box([-3, -1], [-1, 1]), Box([1, -1], [3, 1])),
    }

    @pytest.mark.parametrize("pair", ["balls", "boxes"])
    def test_sip(self, pair, rng):
        """SIP certifies from several starts"""
        for _ in range(5):
            start = rng.uniform(-3.0, 3.0, 2) + np.array([0.0, 4.0])
            outcome, _ = solve_sip(SipProblem(self.PAIRS[pair], start))
            assert isinstance(outcome, Infeasible)
            assert outcome.iterations <= 50
            assert check_farkas(outcome.certificate, outcome.system)

    @pytest.mark.parametrize("pair", ["balls", "boxes"])
    def test_bap(self, pair, rng):
        """BAP certifies from several anchors"""
        for _ in range(5):
            anchor = rng.uniform(-3.0, 3.0, 2) + np.array([0.0, 4.0])
            outcome, _ = solve_bap(BapProblem(anchor, self.PAIRS[pair]))
            assert isinstance(outcome, Infeasible)
            assert outcome.iterations <= 50
            assert check_farkas(outcome.certificate, outcome.system)

    def test_regression_counts(self):
        """Symmetric starts certify on the second round"""
        balls, _ = solve_sip(SipProblem(self.PAIRS["balls"], [0, 1]))
        boxes, _ = solve_sip(SipProblem(self.PAIRS["boxes"], [0, 5]))
        assert balls.iterations == 1
        assert boxes.iterations == 1

    def test_asymptotic_separation(self):
        """Exponential strips diverge along (1,0) instead"""
        problem = SipProblem((ExponentialRegion(1), ExponentialRegion(-1)), [0, 0])
        outcome, _ = solve_sip(problem, SolverConfig(tol_feas=1e-12, divergence_norm_cap=15.0))
        assert isinstance(outcome, Diverging)
        d = outcome.recession_estimate
        assert abs(np.arctan2(d[1], d[0])) <= 0.05
        assert recession_report(outcome, problem).max_residual <= 1e-6


# ============================================================================
# Best approximation
# ============================================================================

class TestBapCorpus:
    """Anchor monotonicity and aggregation on the random corpus"""

    def test_monotone_and_aggregation(self, rng, monkeypatch):
        """Same answer with aggregation; every iterate is the projection of the anchor onto its working system"""
        rounds = record_bap_rounds(monkeypatch)
        compared = 0
        for _ in range(CORPUS_SIZE):
            sets, anchor, _ = random_feasible_instance(rng)
            rounds.clear()
            config = SolverConfig(max_outer=200, tol_feas=1e-11)
            plain, plain_trace = solve_bap(BapProblem(anchor, sets), config)
            squeezed, trace = solve_bap(BapProblem(anchor, sets), SolverConfig(
                max_outer=200, tol_feas=1e-11, aggregation_enabled=True))
            for t in (plain_trace, trace):
                distances = [r.anchor_distance for r in t]
                assert all(b >= a - 1e-10 for a, b in zip(distances, distances[1:]))
            assert rounds
            scale = 1.0 + float(np.linalg.norm(anchor))
            for y, point, (primal, complementarity, stationarity, lowest_dual) in rounds:
                np.testing.assert_array_equal(y, anchor)
                assert primal <= 1e-8 * scale
                assert complementarity <= 1e-8 * scale
                assert stationarity <= 1e-8 * scale
                assert lowest_dual >= -1e-12
            iterates = {tuple(point) for _, point, _ in rounds}
            for record in list(plain_trace)[1:] + list(trace)[1:]:
                assert tuple(record.iterate) in iterates
            if isinstance(plain, Feasible) and isinstance(squeezed, Feasible):
                np.testing.assert_allclose(squeezed.point, plain.point, atol=1e-7)
                compared += 1
        assert compared >= 10


# ============================================================================
# Determinism
# ============================================================================

class TestRoundTrip:
    """Repeat runs and re-read traces"""

    def test_cli_repeat(self, problem_path, tmp_path):
        """Identical invocations write identical CSVs"""
        paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for path in paths:
            main(["solve", "--problem", problem_path("ellipsoid_box"), "--trace-out", str(path), "--quiet"])
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_report_from_csv(self, tmp_path):
        """Diagnostics of a re-read trace equal those of the in-memory trace"""
        _, trace = solve_cip(CipProblem(MaxAffine.zigzag(), [1, 1]), SolverConfig(policy=CurrentRoundOnly()))
        path = tmp_path / "zigzag.csv"
        write_trace(trace, path)
        reference = np.zeros(2)
        assert diagnose_report(read_trace(path), reference) == diagnose_report(trace, reference)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
