import numpy as np
import pytest

from phytaylor.editing import LayerPlan, build_model
from phytaylor.errors import (
    DegenerateQuadratic,
    InvalidArgument,
    ModelNotPolynomial,
    Unrevisable,
    UnsupportedDimension,
)
from phytaylor.knowledge import KnowledgeSpec
from phytaylor.network import predict
from phytaylor.selfcorrect import (
    CommandBox,
    CorrectionProblem,
    SafetyQuadratic,
    correct_commands,
    extract_quadratics,
    revise,
    revision_scale,
    solve_candidates,
    sym_eig2,
    target_metrics,
    verify_nonneg,
)

from oracles import quad_value, random_correction_problem

BOX = CommandBox((-0.156, -0.6), (0.156, 0.6))
CHOO1 = SafetyQuadratic("plus", 0.00111007, [[-0.04581441, 0.00100625], [0.00100625, 0.00342825]])
CHOO2 = SafetyQuadratic("minus", 0.14376973, [[6.06750536, 0.02701398], [0.02701398, 0.00601609]])
RCHOO1 = SafetyQuadratic("plus", 0.00021007, [[0.00181441, 0.00100625], [0.00100625, 0.00342825]])
RCHOO2 = SafetyQuadratic("minus", 0.14376973, [[5.90769724, 0.01201398], [0.01201398, 0.00601609]])
Q1_ROUNDED = np.array([[-0.934, -0.3572], [-0.3572, 0.934]])


def _safety_layer(rows):
    model = build_model(KnowledgeSpec.unknown(len(rows), 2, 2), [LayerPlan(len(rows), 2, "identity")])
    model.layers[0].W[:] = rows
    return model


def test_extract_choo1():
    P = CHOO1.P
    model = _safety_layer([[CHOO1.b, 0, 0, P[0, 0], 2 * P[0, 1], P[1, 1]]])
    (q,) = extract_quadratics(model, signs=["plus"])
    assert q.b == pytest.approx(0.00111007, abs=1e-15)
    assert q.P[0, 0] == pytest.approx(-0.04581441, abs=1e-15)
    assert q.P[0, 1] == pytest.approx(0.00100625, abs=1e-15)


def test_extract_minus_sign():
    P = CHOO2.P
    model = _safety_layer([[CHOO2.b, 0, 0, -P[0, 0], -2 * P[0, 1], -P[1, 1]]])
    (q,) = extract_quadratics(model)  # default sign keeps trace(P) >= 0
    assert q.sign == "minus"
    np.testing.assert_allclose(q.P, P, rtol=1e-15)


def test_extract_zero_model():
    model = _safety_layer(np.zeros((2, 6)))
    for q in extract_quadratics(model):
        assert q.b == 0.0
        assert not q.P.any()


@pytest.mark.parametrize("plan", [
    [LayerPlan(2, 2, "identity")],
    [LayerPlan(3, 2, "identity"), LayerPlan(2, 1, "identity")],
])
def test_extracted_matches_forward(rng, plan):
    model = build_model(KnowledgeSpec.unknown(2, 2, 2), plan, seed=3)
    for layer in model.layers:
        layer.W = rng.normal(size=layer.W.shape)
    qs = extract_quadratics(model)
    u = rng.uniform(-1, 1, (100, 2))
    y = predict(model, u)
    for i, q in enumerate(qs):
        np.testing.assert_allclose(q(u), y[:, i], atol=1e-10)


def test_extract_rejects_nonpolynomial():
    with pytest.raises(ModelNotPolynomial):
        extract_quadratics(build_model(KnowledgeSpec.unknown(1, 2, 2), [LayerPlan(1, 2, "tanh")]))
    quartic = build_model(KnowledgeSpec.unknown(1, 2, 2),
                          [LayerPlan(2, 2, "identity"), LayerPlan(1, 2, "identity")], seed=1)
    with pytest.raises(ModelNotPolynomial):
        extract_quadratics(quartic)
    with pytest.raises(UnsupportedDimension):
        extract_quadratics(build_model(KnowledgeSpec.unknown(1, 3, 2), [LayerPlan(1, 2, "identity")]))


def test_quadratic_validation():
    with pytest.raises(InvalidArgument):
        SafetyQuadratic("plus", 0.0, [[1.0, 0.5], [0.4, 1.0]])
    with pytest.raises(InvalidArgument):
        SafetyQuadratic("up", 0.0, np.eye(2))
    with pytest.raises(UnsupportedDimension):
        SafetyQuadratic("plus", 0.0, np.eye(3))
    with pytest.raises(InvalidArgument):
        CommandBox((1.0, 0.0), (0.0, 1.0))


def test_choo1_counterexample_point():
    # 0.00111007 - 0.04581441 * 0.156^2
    assert CHOO1([0.156, 0.0]) == pytest.approx(-4.8695e-6, abs=1e-9)
    assert quad_value(CHOO1.b, 1, CHOO1.P, (0.156, 0.0)) < 0


def test_verify_examples():
    res = verify_nonneg(CHOO1, BOX)
    assert not res.ok and CHOO1(res.witness) < 0
    assert verify_nonneg(RCHOO1, BOX).ok
    assert verify_nonneg(SafetyQuadratic("plus", 1.0, np.zeros((2, 2))), BOX).ok


def test_verify_matches_dense_grid(rng):
    grid = np.stack(np.meshgrid(np.linspace(-1, 1, 401), np.linspace(-2, 2, 401)), -1).reshape(-1, 2)
    box = CommandBox((-1.0, -2.0), (1.0, 2.0))
    for _ in range(20):
        B = rng.normal(size=(2, 2))
        q = SafetyQuadratic(rng.choice(["plus", "minus"]), rng.normal(), (B + B.T) / 2,
                            rng.normal(size=2))
        res = verify_nonneg(q, box)
        # the exact minimum is never above the grid minimum
        assert res.minimum <= q(grid).min() + 1e-12
        assert res.minimum >= q(grid).min() - 0.05


def test_revise_plus():
    fixed = revise(CHOO1, BOX)
    assert np.linalg.eigvalsh(fixed.P).min() > 0
    assert verify_nonneg(fixed, BOX).ok
    assert revise(fixed, BOX) is fixed


def test_revise_unchanged_when_ok():
    assert revise(RCHOO1, BOX) is RCHOO1


def test_revise_minus_scale():
    fixed = revise(CHOO2, BOX)
    assert verify_nonneg(fixed, BOX).ok
    # corner oracle: u^T P u is convex, so its box maximum sits on a corner
    corner_max = max(quad_value(0.0, 1, CHOO2.P, c) for c in BOX.corners())
    assert revision_scale(CHOO2, fixed) == pytest.approx(CHOO2.b / corner_max, abs=1e-9)
    assert revision_scale(CHOO2, fixed) == pytest.approx(0.9282556, abs=1e-7)


def test_reference_revision_of_second_relation_is_negative_at_corner():
    assert RCHOO2([-0.156, -0.6]) == pytest.approx(-0.0044148, abs=1e-7)
    assert not verify_nonneg(RCHOO2, BOX).ok


def test_revise_minus_negative_offset():
    with pytest.raises(Unrevisable):
        revise(SafetyQuadratic("minus", -0.1, np.eye(2)), BOX)


def test_sym_eig2_reconstruction(rng):
    for _ in range(200):
        B = rng.normal(size=(2, 2))
        P = (B + B.T) / 2
        lam, Q = sym_eig2(P)
        np.testing.assert_allclose(lam, np.linalg.eigvalsh(P), rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(Q @ Q.T, np.eye(2), atol=1e-14)
        np.testing.assert_array_equal(Q, Q.T)
        assert np.abs(Q @ np.diag(lam) @ Q.T - P).max() <= 1e-12


def test_sym_eig2_diagonal():
    lam, Q = sym_eig2(np.diag([3.0, 1.0]))
    np.testing.assert_array_equal(lam, [1.0, 3.0])
    np.testing.assert_array_equal(np.abs(Q), [[0, 1], [1, 0]])


def test_rounded_q1_nearly_orthogonal():
    assert np.abs(Q1_ROUNDED @ Q1_ROUNDED.T - np.eye(2)).max() <= 1e-3


def test_revised_p1_eigenpairs():
    lam, Q = sym_eig2(RCHOO1.P)
    np.testing.assert_allclose(lam, np.linalg.eigvalsh(RCHOO1.P), rtol=1e-12)
    assert np.abs(Q @ np.diag(lam) @ Q.T - RCHOO1.P).max() <= 1e-12


def _problem(bounds):
    return CorrectionProblem((RCHOO1, RCHOO2), bounds, BOX)


def test_safe_command_unchanged():
    u = np.array([0.01, 0.02])
    out = correct_commands(_problem((1.0, 1.0)), u)
    np.testing.assert_array_equal(out, u)
    assert out is not u


def test_target_metrics_rule():
    u = np.array([0.05, 0.3])
    s = np.array([RCHOO1(u), RCHOO2(u)])
    np.testing.assert_array_equal(target_metrics(_problem((s[0] - 1e-4, 1.0)), u), [s[0] - 1e-4, s[1]])


def test_reference_quadratics_correction():
    u = np.array([0.12, 0.4])
    c = (RCHOO1(u) - 2e-4, RCHOO2(u) - 1e-3)
    out = correct_commands(_problem(c), u)
    for q, ci in zip((RCHOO1, RCHOO2), c):
        assert abs(quad_value(q.b, q.sigma, q.P, out) - ci) <= 1e-8
    assert BOX.contains(out)


def test_random_problems_valid(rng):
    for _ in range(50):
        problem, u = random_correction_problem(rng)
        out = correct_commands(problem, u)
        for q, c in zip(problem.quadratics, problem.bounds):
            assert abs(quad_value(q.b, q.sigma, q.P, out) - c) <= 1e-8


def test_all_sign_candidates_valid_without_cross_term():
    q1 = SafetyQuadratic("plus", 0.1, np.diag([1.0, 2.0]))
    q2 = SafetyQuadratic("minus", 3.0, np.diag([0.5, 1.5]))
    c = (q1([0.5, 0.3]), q2([0.5, 0.3]))  # metrics of a known solution
    problem = CorrectionProblem((q1, q2), c, CommandBox.symmetric([2.0, 2.0]))
    cands = solve_candidates(problem, c)
    assert cands
    for root in {cand.root for cand in cands}:
        group = [cand for cand in cands if cand.root == root]
        assert len(group) == 4 and all(cand.valid for cand in group)
    assert any(np.allclose(np.abs(cand.u), [0.5, 0.3]) for cand in cands)


@pytest.mark.xfail(strict=True, reason="with a cross term in Q1 P2 Q1 only two of the four "
                                       "sign patterns solve both equalities")
def test_all_sign_candidates_valid_with_cross_term():
    problem, u = random_correction_problem(np.random.default_rng(5))
    cands = [c for c in solve_candidates(problem, target_metrics(problem, u)) if c.root == 0]
    assert all(c.valid for c in cands)


def test_correction_errors():
    with pytest.raises(UnsupportedDimension):
        correct_commands(_problem((0.0, 0.0)), np.zeros(3))
    bad = CorrectionProblem((SafetyQuadratic("plus", 0.0, np.diag([0.0, 1.0])), RCHOO2),
                            (0.0, 0.0), BOX)
    with pytest.raises(DegenerateQuadratic):
        correct_commands(bad, np.array([0.1, 0.5]))
    with pytest.raises(InvalidArgument):
        CorrectionProblem((RCHOO1, RCHOO2), (np.inf, 0.0), BOX)
