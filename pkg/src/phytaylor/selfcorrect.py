"""Quadratic safety relations over two commands: read-off, box check, revision
and the closed-form correction of unsafe commands.

A relation is ``s(u) = b + sign * u^T P u`` (plus a linear part that a trained
model may leave behind).  Correction rotates into the eigenbasis of ``P1``,
reduces the two equalities to a quadratic in ``u_hat_2^2`` and rotates back.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .editing import PhyTaylorModel
from .errors import (
    DegenerateQuadratic,
    InvalidArgument,
    ModelNotPolynomial,
    NoRealSolution,
    Unrevisable,
    UnsupportedDimension,
)
from .monomial import build_basis, evaluate
from .network import predict

log = logging.getLogger(__name__)

SIGNS = {"plus": 1.0, "minus": -1.0}
RESIDUAL_TOL = 1e-8
CLAMP_TOL = 1e-6
ROOT_TOL = 1e-12


@dataclass(frozen=True)
class SafetyQuadratic:
    sign: str
    b: float
    P: np.ndarray
    linear: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if self.sign not in SIGNS:
            raise InvalidArgument(f"sign must be 'plus' or 'minus', got {self.sign!r}")
        P = np.array(self.P, dtype=float)
        if P.shape != (2, 2):
            raise UnsupportedDimension(f"only 2 commands are supported, P is {P.shape}")
        if abs(P[0, 1] - P[1, 0]) > 1e-12:
            raise InvalidArgument("P must be symmetric")
        P.setflags(write=False)
        lin = np.array(self.linear, dtype=float)
        lin.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "b", float(self.b))

    @property
    def sigma(self) -> float:
        return SIGNS[self.sign]

    def __call__(self, u) -> np.ndarray | float:
        u = np.asarray(u, dtype=float)
        quad = np.einsum("...i,ij,...j->...", u, self.P, u)
        return self.b + self.sigma * quad + u @ self.linear


@dataclass(frozen=True)
class CommandBox:
    lower: tuple[float, float]
    upper: tuple[float, float]

    def __post_init__(self):
        if len(self.lower) != 2 or len(self.upper) != 2:
            raise UnsupportedDimension("the command box must be two-dimensional")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise InvalidArgument(f"box lower {self.lower} exceeds upper {self.upper}")

    @classmethod
    def symmetric(cls, half_widths: Sequence[float]) -> "CommandBox":
        return cls(tuple(-float(h) for h in half_widths), tuple(float(h) for h in half_widths))

    def contains(self, u, tol: float = 0.0) -> bool:
        u = np.asarray(u)
        return bool(np.all(u >= np.array(self.lower) - tol) and np.all(u <= np.array(self.upper) + tol))

    def clamp(self, u) -> np.ndarray:
        return np.clip(u, self.lower, self.upper)

    def corners(self) -> np.ndarray:
        (a, c), (b, d) = self.lower, self.upper
        return np.array([[a, c], [a, d], [b, c], [b, d]], dtype=float)


@dataclass(frozen=True)
class CorrectionProblem:
    quadratics: tuple[SafetyQuadratic, SafetyQuadratic]
    bounds: tuple[float, float]
    box: CommandBox

    def __post_init__(self):
        if len(self.quadratics) != 2 or len(self.bounds) != 2:
            raise UnsupportedDimension("correction needs exactly two safety relations")
        if not np.all(np.isfinite(self.bounds)):
            raise InvalidArgument("safety bounds must be finite")


# ----------------------------------------------------------------- read-off

def _check_polynomial(model: PhyTaylorModel):
    for t, layer in enumerate(model.layers, start=1):
        if layer.suppressor.any_active:
            raise ModelNotPolynomial(f"layer {t} has an active suppressor")
        if layer.activation != "identity" and np.any(layer.a != 0):
            raise ModelNotPolynomial(f"layer {t} applies a {layer.activation} activation")


def _coefficients(model: PhyTaylorModel) -> np.ndarray:
    """Rows of [1, u1, u2, u1^2, u1 u2, u2^2] coefficients, one per output."""
    basis = build_basis(2, 2)
    if len(model.layers) == 1 and model.first_order == 2:
        layer = model.layers[0]
        return layer.K + layer.a[:, None] * layer.U
    # a cascade is a polynomial of higher nominal degree: fit, then confirm
    rng = np.random.default_rng(0)
    probe = rng.uniform(-1.0, 1.0, size=(40, 2))
    coef, *_ = np.linalg.lstsq(evaluate(basis, probe), predict(model, probe), rcond=None)
    check = rng.uniform(-2.0, 2.0, size=(40, 2))
    y = predict(model, check)
    err = np.max(np.abs(evaluate(basis, check) @ coef - y))
    if err > 1e-9 * max(1.0, float(np.max(np.abs(y)))):
        raise ModelNotPolynomial(f"safety model is not quadratic in u (fit error {err:.3g})")
    return coef.T


def extract_quadratics(model: PhyTaylorModel, signs: Sequence[str] | None = None
                       ) -> list[SafetyQuadratic]:
    """Read ``s_i(u) = b_i + sign_i u^T P_i u + l_i^T u`` off a safety model.

    Without ``signs`` each relation takes the sign that makes trace(P) >= 0.
    """
    if model.input_dim != 2:
        raise UnsupportedDimension(f"safety model must take 2 commands, takes {model.input_dim}")
    _check_polynomial(model)
    C = _coefficients(model)
    out = []
    for i, c in enumerate(C):
        Q = np.array([[c[3], c[4] / 2.0], [c[4] / 2.0, c[5]]])
        sign = signs[i] if signs is not None else ("plus" if np.trace(Q) >= 0 else "minus")
        lin = np.array([c[1], c[2]])
        if np.any(np.abs(lin) > 1e-12):
            log.warning("relation %d has linear terms %s", i + 1, lin)
        out.append(SafetyQuadratic(sign, c[0], SIGNS[sign] * Q, lin))
    return out


# --------------------------------------------------------------- box check

def box_candidates(q: SafetyQuadratic, box: CommandBox) -> np.ndarray:
    """Points where a 2-D quadratic can reach its extrema on ``box``."""
    Q = q.sigma * q.P
    lin = q.linear
    pts = list(box.corners())
    lo, hi = np.array(box.lower), np.array(box.upper)
    if abs(np.linalg.det(Q)) > 1e-300:
        u = np.linalg.solve(2.0 * Q, -lin)
        if box.contains(u):
            pts.append(u)
    for k in range(2):
        j = 1 - k
        for fixed in (lo[k], hi[k]):
            # restricted to u_k = fixed: Q_jj u_j^2 + (l_j + 2 Q_jk fixed) u_j + const
            if Q[j, j] != 0:
                uj = -(lin[j] + 2.0 * Q[j, k] * fixed) / (2.0 * Q[j, j])
                if lo[j] <= uj <= hi[j]:
                    p = np.empty(2)
                    p[k], p[j] = fixed, uj
                    pts.append(p)
    return np.array(pts)


@dataclass(frozen=True)
class VerifyResult:
    ok: bool
    minimum: float
    witness: np.ndarray | None


def verify_nonneg(q: SafetyQuadratic, box: CommandBox) -> VerifyResult:
    pts = box_candidates(q, box)
    vals = q(pts)
    k = int(np.argmin(vals))
    if vals[k] < 0:
        return VerifyResult(False, float(vals[k]), pts[k])
    return VerifyResult(True, float(vals[k]), None)


def box_max_quadratic_form(P: np.ndarray, box: CommandBox) -> float:
    """max over the box of u^T P u."""
    probe = SafetyQuadratic("plus", 0.0, P)
    return float(np.max(probe(box_candidates(probe, box))))


def revise(q: SafetyQuadratic, box: CommandBox) -> SafetyQuadratic:
    """Smallest-change fix that makes ``q`` non-negative on ``box``.

    plus:  clip P's eigenvalues up to a small positive floor and lift b to 0.
    minus: shrink P uniformly (bisection on the scale) until b - u^T P u >= 0.
    """
    if verify_nonneg(q, box).ok:
        return q
    if q.sign == "plus":
        lam, V = np.linalg.eigh(q.P)
        floor = max(1e-4 * float(lam.max()), 1e-8)
        lam = np.where(lam < floor, floor, lam)
        P = V @ np.diag(lam) @ V.T
        P = (P + P.T) / 2.0
        fixed = replace(q, b=max(q.b, 0.0), P=P)
    else:
        if q.b < 0:
            raise Unrevisable(f"b = {q.b} < 0: no scaling of P makes b - u^T P u >= 0")
        if not verify_nonneg(replace(q, P=np.zeros((2, 2))), box).ok:
            raise Unrevisable("the linear part alone is negative on the box")
        lo, hi = 0.0, 1.0
        while hi - lo > 1e-10:
            mid = 0.5 * (lo + hi)
            if verify_nonneg(replace(q, P=mid * q.P), box).ok:
                lo = mid
            else:
                hi = mid
        fixed = replace(q, P=lo * q.P)
    if not verify_nonneg(fixed, box).ok:
        raise Unrevisable("revision did not restore non-negativity")
    return fixed


def revision_scale(original: SafetyQuadratic, revised: SafetyQuadratic) -> float:
    """Uniform factor applied to P by a sign-minus revision."""
    k = np.unravel_index(np.argmax(np.abs(original.P)), (2, 2))
    return float(revised.P[k] / original.P[k]) if original.P[k] else 1.0


# ----------------------------------------------------------- correction

def sym_eig2(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigenpairs of a symmetric 2x2 matrix, ascending.

    Q = [[c, s], [s, -c]] is symmetric and orthogonal, so Q = Q^T = Q^-1 and
    P = Q diag(lam) Q.
    """
    a, b, d = float(P[0, 0]), float(P[0, 1]), float(P[1, 1])
    mean = 0.5 * (a + d)
    rad = np.hypot(0.5 * (a - d), b)
    lam = np.array([mean - rad, mean + rad])
    if b == 0.0:
        c, s = (1.0, 0.0) if a <= d else (0.0, 1.0)
    else:
        v1 = np.array([b, lam[0] - a])
        v2 = np.array([lam[0] - d, b])
        v = v1 if np.linalg.norm(v1) >= np.linalg.norm(v2) else v2
        c, s = v / np.linalg.norm(v)
    Q = np.array([[c, s], [s, -c]])
    return lam, Q


def target_metrics(problem: CorrectionProblem, u) -> np.ndarray:
    """c_hat_i = c_i where s_i(u) >= c_i, else s_i(u)."""
    s = np.array([q(u) for q in problem.quadratics])
    return np.minimum(s, np.array(problem.bounds, dtype=float))


@dataclass(frozen=True)
class Candidate:
    u: np.ndarray
    residual: float
    valid: bool
    root: int
    signs: tuple[int, int]


def _residual(problem: CorrectionProblem, u, c_hat) -> float:
    return float(max(abs(q(u) - c) for q, c in zip(problem.quadratics, c_hat)))


def _newton(problem: CorrectionProblem, u, c_hat, steps: int = 3) -> np.ndarray:
    q1, q2 = problem.quadratics
    for _ in range(steps):
        F = np.array([q1(u) - c_hat[0], q2(u) - c_hat[1]])
        if np.max(np.abs(F)) <= 1e-15:
            break
        J = np.array([2.0 * q.sigma * q.P @ u + q.linear for q in (q1, q2)])
        if abs(np.linalg.det(J)) < 1e-300:
            break
        u = u - np.linalg.solve(J, F)
    return u


def solve_candidates(problem: CorrectionProblem, c_hat) -> list[Candidate]:
    """Every root / sign combination of the closed-form solution, checked by
    substitution into both equalities."""
    q1, q2 = problem.quadratics
    for q in (q1, q2):
        if np.any(q.linear != 0):
            raise InvalidArgument("closed-form correction needs relations without linear terms")
    lam, Q = sym_eig2(q1.P)
    if lam[0] <= 0:
        raise DegenerateQuadratic(f"P1 must be positive definite, eigenvalues {lam}")
    S = Q @ q2.P @ Q
    s11, s12, s22 = S[0, 0], S[0, 1], S[1, 1]
    mu = q1.sigma * (c_hat[0] - q1.b) / lam[0]
    lam_bar = lam[1] / lam[0]
    b_bar = q2.sigma * (c_hat[1] - q2.b)
    w1 = s11**2 * lam_bar**2 + s22**2 - 2 * s11 * s22 * lam_bar + 4 * s12**2 * lam_bar
    w2 = (2 * b_bar * s11 * lam_bar - 2 * s11**2 * mu * lam_bar - 2 * b_bar * s22
          + 2 * s11 * s22 * mu - 4 * s12**2 * mu)
    w3 = b_bar**2 + s11**2 * mu**2 - 2 * b_bar * s11 * mu
    if abs(w1) < 1e-14 * max(1.0, abs(w2), abs(w3)):
        raise DegenerateQuadratic(f"leading coefficient {w1:.3g} vanishes")
    disc = w2**2 - 4 * w1 * w3
    if disc < -ROOT_TOL * max(1.0, w2**2):
        raise NoRealSolution(f"discriminant {disc:.3g} < 0")
    root = np.sqrt(max(disc, 0.0))
    scale = max(1.0, *map(abs, c_hat))
    out = []
    # the first root is the one the derivation keeps; the second is also tried
    for r, z in enumerate(((root - w2) / (2 * w1), (-root - w2) / (2 * w1))):
        u1sq = mu - lam_bar * z
        if z < -ROOT_TOL or u1sq < -ROOT_TOL:
            continue
        a, b = np.sqrt(max(u1sq, 0.0)), np.sqrt(max(z, 0.0))
        for sa in (1, -1):
            for sb in (1, -1):
                u = Q @ np.array([sa * a, sb * b])
                res = _residual(problem, u, c_hat)
                if RESIDUAL_TOL * scale < res <= CLAMP_TOL * scale:
                    u = _newton(problem, u, c_hat)
                    res = _residual(problem, u, c_hat)
                out.append(Candidate(u, res, res <= RESIDUAL_TOL * scale, r, (sa, sb)))
    return out


def correct_commands(problem: CorrectionProblem, u) -> np.ndarray:
    """Return ``u`` if both relations are within bounds, else the closest command
    that puts each relation exactly at its target metric."""
    u = np.asarray(u, dtype=float)
    if u.shape != (2,):
        raise UnsupportedDimension(f"expected 2 commands, got shape {u.shape}")
    s = np.array([q(u) for q in problem.quadratics])
    if np.all(s <= np.array(problem.bounds)):
        return u.copy()
    c_hat = target_metrics(problem, u)
    valid = [c for c in solve_candidates(problem, c_hat) if c.valid]
    if not valid:
        raise NoRealSolution("no candidate satisfies both safety equalities")
    inside = [c for c in valid if problem.box.contains(c.u, 1e-12)] or valid
    best = min(inside, key=lambda c: float(np.sum(np.abs(c.u - u))))
    fixed = problem.box.clamp(best.u)
    if _residual(problem, fixed, c_hat) > CLAMP_TOL:
        raise NoRealSolution("the corrected command leaves the box and clamping breaks the equalities")
    return fixed
