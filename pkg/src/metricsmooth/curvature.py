"""Curvature of the embedded chart image in L2 via projector calculus.

The tangent projector P(p) onto span{d_1 F, ..., d_n F} is differentiated
along the submanifold with an exact rank-structure formula built from
secant frame derivatives:

    dP = (1 - P) Edot G^{-1} E^T + E G^{-1} Edot^T (1 - P),

which satisfies (dP)P + P(dP) = dP identically.  Sectional curvature is
computed three ways: the projector-commutator formula, the Gauss
equation with II = (1 - P) Hess F, and a direct finite-difference
curvature of the sampled pull-back metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingError, EmbeddingKernel, L2Vector
from .grid import brioschi_curvature

# commutator sign fixed once against the direct curvature of the round
# sphere (positive there); see curvature_commutator
_R_SIGN = 1.0


class CurvatureError(ValueError):
    pass


# ---------------------------------------------------------------------------
# tangent frames and projection


@dataclass
class TangentFrame:
    """Orthogonal-projection data onto the embedded tangent space at p."""

    base: tuple[int, int]
    basis: list[L2Vector]         # d_i F, i = 1..n
    gram: np.ndarray              # <basis_i, basis_j>, equals gtilde(p)

    def coords(self, u: L2Vector) -> np.ndarray:
        """Coefficients of the tangential part of u in the basis."""
        rhs = np.array([b.dot(u) for b in self.basis])
        try:
            return np.linalg.solve(self.gram, rhs)
        except np.linalg.LinAlgError as exc:
            raise CurvatureError(f"degenerate frame at {self.base}") from exc

    def combine(self, c: np.ndarray) -> L2Vector:
        out = self.basis[0] * float(c[0])
        for k in range(1, len(self.basis)):
            out = out + self.basis[k] * float(c[k])
        return out


def build_frame(kernel: EmbeddingKernel, p: tuple[int, int]) -> TangentFrame:
    n = kernel.n
    basis = [
        kernel.embedding_differential(p, np.eye(n)[i]) for i in range(n)
    ]
    gram = np.array([[a.dot(b) for b in basis] for a in basis])
    if np.linalg.cond(gram) > 1e12:
        raise CurvatureError(f"degenerate frame at {p}")
    return TangentFrame(p, basis, gram)


def tangent_projection(frame: TangentFrame, u: L2Vector) -> L2Vector:
    """Orthogonal L2 projection of u onto the tangent space."""
    return frame.combine(frame.coords(u))


def normal_part(frame: TangentFrame, u: L2Vector) -> L2Vector:
    return u - tangent_projection(frame, u)


# ---------------------------------------------------------------------------
# projector derivative


@dataclass
class ProjectorDerivative:
    """Derivative of the tangent projector along one chart direction.

    direction is a grid step (di, dj); the frame derivative Edot is the
    central secant over +/- delta steps.  apply() realizes the exact
    formula quoted in the module docstring, so the projector identity
    (dP)P + P(dP) = dP holds to round-off on any vector.
    """

    frame: TangentFrame
    direction: tuple[int, int]
    delta: int
    edot: list[L2Vector]
    ydot: L2Vector                # dF along the unit coordinate direction
    step_length: float

    def apply(self, u: L2Vector) -> L2Vector:
        c = self.frame.coords(u)
        t1 = self.edot[0] * float(c[0])
        for k in range(1, len(self.edot)):
            t1 = t1 + self.edot[k] * float(c[k])
        t1 = normal_part(self.frame, t1)
        w = normal_part(self.frame, u)
        rhs = np.array([ed.dot(w) for ed in self.edot])
        d = np.linalg.solve(self.frame.gram, rhs)
        return t1 + self.frame.combine(d)

    def op_norm_on(self, dictionary: list[L2Vector]) -> float:
        worst = 0.0
        for u in dictionary:
            nu = u.norm()
            if nu > 0:
                worst = max(worst, self.apply(u).norm() / nu)
        return worst

    def p2_residual_on(self, dictionary: list[L2Vector]) -> float:
        """Relative residual of (dP)P + P(dP) = dP on the dictionary."""
        worst = 0.0
        for u in dictionary:
            dpu = self.apply(u)
            lhs = self.apply(tangent_projection(self.frame, u)) \
                + tangent_projection(self.frame, dpu)
            scale = max(dpu.norm(), 1e-30)
            worst = max(worst, (lhs - dpu).norm() / scale)
        return worst


def _shifted(p, direction, steps):
    return (p[0] + steps * direction[0], p[1] + steps * direction[1])


def projection_derivative(
    kernel: EmbeddingKernel,
    p: tuple[int, int],
    direction: tuple[int, int] = (1, 0),
    delta: int = 2,
    frame: TangentFrame | None = None,
) -> ProjectorDerivative:
    """Differentiate the tangent projector at p along a grid direction.

    delta is the secant half-step in nodes (default 2).
    """
    h = kernel.metric.domain.spacing
    if frame is None:
        frame = build_frame(kernel, p)
    plus, minus = _shifted(p, direction, delta), _shifted(p, direction, -delta)
    for q in (plus, minus):
        if not kernel.eval_region[q]:
            raise CurvatureError(
                f"secant step {q} leaves the evaluation region"
            )
    step = delta * h * math.hypot(*direction)
    n = kernel.n
    eye = np.eye(n)
    edot = []
    for i in range(n):
        a = kernel.embedding_differential(plus, eye[i])
        b = kernel.embedding_differential(minus, eye[i])
        edot.append((a - b) * (0.5 / step))
    unit = np.asarray(direction, float) / math.hypot(*direction)
    ydot = kernel.embedding_differential(p, unit)
    return ProjectorDerivative(frame, direction, delta, edot, ydot, step)


def hessian_dictionary(
    kernel: EmbeddingKernel, p: tuple[int, int], frame: TangentFrame
) -> list[L2Vector]:
    """Probe dictionary: tangent basis plus embedding Hessian vectors."""
    n = kernel.n
    eye = np.eye(n)
    out = list(frame.basis)
    for i in range(n):
        for j in range(i, n):
            out.append(kernel.embedding_hessian(p, eye[i], eye[j]))
    return out


# ---------------------------------------------------------------------------
# sectional curvature, three ways


def _area_term(frame: TangentFrame, cu: np.ndarray, cv: np.ndarray) -> float:
    g = frame.gram
    uu = float(cu @ g @ cu)
    vv = float(cv @ g @ cv)
    uv = float(cu @ g @ cv)
    area = uu * vv - uv * uv
    if area < 1e-8 * max(uu * vv, 1e-30):
        raise CurvatureError("probe directions nearly parallel")
    return area


def curvature_commutator(
    kernel: EmbeddingKernel,
    p: tuple[int, int],
    du: tuple[int, int] = (1, 0),
    dv: tuple[int, int] = (0, 1),
    delta: int = 2,
    frame: TangentFrame | None = None,
    dPu: ProjectorDerivative | None = None,
    dPv: ProjectorDerivative | None = None,
) -> float:
    """Sectional curvature from the projector-commutator formula.

    K = <[dP_u, dP_v] vhat, uhat> / (|uhat|^2 |vhat|^2 - <uhat, vhat>^2),
    sign fixed by the round-sphere calibration.
    """
    if frame is None:
        frame = build_frame(kernel, p)
    if dPu is None:
        dPu = projection_derivative(kernel, p, du, delta, frame)
    if dPv is None:
        dPv = projection_derivative(kernel, p, dv, delta, frame)
    cu = np.asarray(du, float) / math.hypot(*du)
    cv = np.asarray(dv, float) / math.hypot(*dv)
    uhat = frame.combine(cu)
    vhat = frame.combine(cv)
    rv = dPu.apply(dPv.apply(vhat)) - dPv.apply(dPu.apply(vhat))
    return _R_SIGN * rv.dot(uhat) / _area_term(frame, cu, cv)


def second_fundamental_form(
    kernel: EmbeddingKernel,
    p: tuple[int, int],
    v: np.ndarray,
    w: np.ndarray,
    frame: TangentFrame,
) -> L2Vector:
    """II(v, w) = (1 - P) Hess_{v,w} F.

    The coordinate-vs-covariant Hessian ambiguity is tangential
    (Christoffel terms recombine the d_i F) and is annihilated here.
    """
    return normal_part(frame, kernel.embedding_hessian(p, v, w))


def curvature_gauss(
    kernel: EmbeddingKernel,
    p: tuple[int, int],
    du: tuple[int, int] = (1, 0),
    dv: tuple[int, int] = (0, 1),
    delta: int = 2,
    frame: TangentFrame | None = None,
    dPu: ProjectorDerivative | None = None,
    dPv: ProjectorDerivative | None = None,
) -> float:
    """Sectional curvature via the Gauss equation.

    II(u, w) = (1-P) dP_u (d_w F), which equals (1-P) Hess_{u,w} F by the
    projector-derivative identity.  The mixed term is the polarization
    <II(u,v), II(v,u)>; on the discrete level the two mixed evaluations
    need not coincide and this polarization is the one for which the
    Gauss combination reproduces the intrinsic curvature of the discrete
    surface itself (a directly assembled Hessian is cross-checked
    separately by projector_consistency).
    """
    if frame is None:
        frame = build_frame(kernel, p)
    if dPu is None:
        dPu = projection_derivative(kernel, p, du, delta, frame)
    if dPv is None:
        dPv = projection_derivative(kernel, p, dv, delta, frame)
    cu = np.asarray(du, float) / math.hypot(*du)
    cv = np.asarray(dv, float) / math.hypot(*dv)
    uhat = frame.combine(cu)
    vhat = frame.combine(cv)
    ii_uu = normal_part(frame, dPu.apply(uhat))
    ii_vv = normal_part(frame, dPv.apply(vhat))
    ii_uv = normal_part(frame, dPu.apply(vhat))
    ii_vu = normal_part(frame, dPv.apply(uhat))
    num = ii_uu.dot(ii_vv) - ii_uv.dot(ii_vu)
    return num / _area_term(frame, cu, cv)


def curvature_direct(
    kernel: EmbeddingKernel,
    p: tuple[int, int],
    half: int = 2,
    step: int = 2,
) -> float:
    """Gauss curvature of the sampled pull-back metric around p.

    Evaluates gtilde on a (2*half+1)^2 node patch with the given node
    step and applies the intrinsic curvature formula at the center.
    """
    if kernel.n != 2:
        raise CurvatureError("direct curvature supports n=2 only")
    size = 2 * half + 1
    E = np.empty((size, size))
    F = np.empty((size, size))
    G = np.empty((size, size))
    for a in range(-half, half + 1):
        for b in range(-half, half + 1):
            q = (p[0] + a * step, p[1] + b * step)
            if not kernel.eval_region[q]:
                raise CurvatureError(
                    f"direct-curvature patch node {q} outside evaluation region"
                )
            gt = kernel.gtilde(q)
            E[a + half, b + half] = gt[0, 0]
            F[a + half, b + half] = gt[0, 1]
            G[a + half, b + half] = gt[1, 1]
    K = brioschi_curvature(E, F, G, step * kernel.metric.domain.spacing)
    return float(K[half, half])


def projector_consistency(
    kernel: EmbeddingKernel,
    p: tuple[int, int],
    delta: int = 2,
    frame: TangentFrame | None = None,
    dPs: list[ProjectorDerivative] | None = None,
) -> float:
    """Max relative mismatch of (1-P) dP_v (d_w F) vs (1-P) Hess_{v,w} F."""
    if frame is None:
        frame = build_frame(kernel, p)
    n = kernel.n
    eye = np.eye(n)
    worst = 0.0
    for i in range(n):
        if dPs is not None:
            dP = dPs[i]
        else:
            dP = projection_derivative(
                kernel, p, tuple(int(t) for t in eye[i]), delta, frame
            )
        for j in range(n):
            a = normal_part(frame, dP.apply(frame.basis[j]))
            b = second_fundamental_form(kernel, p, eye[i], eye[j], frame)
            scale = max(b.norm(), 1e-30)
            worst = max(worst, (a - b).norm() / scale)
    return worst


# ---------------------------------------------------------------------------
# aggregate report


@dataclass
class CurvatureReport:
    points: list[tuple[int, int]]
    K_commutator: list[float]
    K_gauss: list[float]
    K_direct: list[float]
    dP_bound: float               # max ||dP|| * i0 / ||ydot|| on dictionaries
    p2_residual: float
    consistency: float            # worst (1-P)dP dF vs II mismatch

    def sup_abs(self, column: str) -> float:
        return max(abs(v) for v in getattr(self, column))

    def as_dict(self) -> dict:
        return {
            "points": [list(p) for p in self.points],
            "K_commutator": self.K_commutator,
            "K_gauss": self.K_gauss,
            "K_direct": self.K_direct,
            "dP_bound": self.dP_bound,
            "p2_residual": self.p2_residual,
            "consistency": self.consistency,
        }


def curvature_report(
    kernel: EmbeddingKernel,
    points,
    delta: int = 2,
    direct_half: int = 2,
    direct_step: int = 2,
) -> CurvatureReport:
    """All three curvature estimates plus projector diagnostics."""
    pts = [tuple(p) for p in points]
    kc, kg, kd = [], [], []
    dp_bound = 0.0
    p2 = 0.0
    cons = 0.0
    for p in pts:
        frame = build_frame(kernel, p)
        dPu = projection_derivative(kernel, p, (1, 0), delta, frame)
        dPv = projection_derivative(kernel, p, (0, 1), delta, frame)
        dictionary = hessian_dictionary(kernel, p, frame)
        for dP in (dPu, dPv):
            nydot = dP.ydot.norm()
            dp_bound = max(
                dp_bound, dP.op_norm_on(dictionary) * kernel.i0 / nydot
            )
            p2 = max(p2, dP.p2_residual_on(dictionary))
        cons = max(cons, projector_consistency(kernel, p, delta, frame,
                                               dPs=[dPu, dPv]))
        kc.append(curvature_commutator(kernel, p, frame=frame, dPu=dPu, dPv=dPv))
        kg.append(curvature_gauss(kernel, p, frame=frame, dPu=dPu, dPv=dPv))
        kd.append(curvature_direct(kernel, p, direct_half, direct_step))
    return CurvatureReport(pts, kc, kg, kd, dp_bound, p2, cons)
