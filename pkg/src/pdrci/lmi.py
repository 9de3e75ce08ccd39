"""Block matrices and Polya-relaxed LMI families for PD-RCI synthesis.

Stage 1 keeps the face matrix fixed (``P = P0 = P_init``) and optimizes the
shaping matrix ``W``; stage 2 keeps ``W`` fixed and optimizes the vertex
face matrices ``P[k]``. Both stages share the block builders below; the
stage only changes which symbols are variables.

Stage-2 reparameterization (linear in every decision variable)::

    psi_i      = 1 / phi_i
    LamT_i     = inv(Lambda_i)
    GamB_i     = Gamma_i / phi_i**2
    PiT_j     >= inv(Pi_j)      via [[Pi_j, I], [I, PiT_j]] >= 0
    UpsT      >= inv(Upsilon)   likewise
"""
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .polya import n_exponents, polya_combine

INVARIANCE = "invariance"
SYSTEM = "system"
PERFORMANCE = "performance"
COUPLING = "coupling"
VOLUME = "volume"
DET_INCREASE = "det-increase"


def He(X):
    return X + X.T


def _diag(v):
    """Diagonal matrix from a numpy or cvxpy vector."""
    if isinstance(v, np.ndarray):
        return np.diag(v)
    return cp.diag(v)


def _sum1(v):
    """``1' v`` for a numpy or cvxpy vector, as a 1x1 block."""
    if isinstance(v, np.ndarray):
        return np.array([[v.sum()]])
    return cp.reshape(cp.sum(v), (1, 1), order="C")


def _scalar_block(s):
    if isinstance(s, (int, float, np.floating)):
        return np.array([[float(s)]])
    return cp.reshape(s, (1, 1), order="C")


@dataclass
class FixedPoint:
    """Linearization data held constant while one SDP is solved.

    ``W`` is the previous shaping matrix (stage 1) or the fixed one (stage 2).
    ``Lam0``/``Pi0``/``Ups0`` hold diagonals as vectors.
    """

    P0: list
    W: np.ndarray
    Y: list
    Lam0: list = None
    Pi0: list = None
    Ups0: np.ndarray = None
    X0: list = None


@dataclass
class DecisionLayout:
    """Handles of every decision symbol for one stage.

    Symbols a stage does not optimize hold constants (numpy arrays).
    """

    stage: int
    n_x: int
    n_u: int
    n_w: int
    n_z: int
    n_p: int
    n_xi: int
    n_h: int
    n_g: int
    W: object = None
    P: list = field(default_factory=list)
    Kbar: list = field(default_factory=list)
    V: list = field(default_factory=list)      # V[i][k]
    X: list = field(default_factory=list)
    Z: object = None
    phi: list = field(default_factory=list)    # stage 1
    psi: list = field(default_factory=list)    # stage 2
    Lam: list = field(default_factory=list)    # stage 1
    LamT: list = field(default_factory=list)   # stage 2
    Gam: list = field(default_factory=list)    # stage 1 Gamma, stage 2 GammaBar
    Pi: list = field(default_factory=list)
    PiT: list = field(default_factory=list)    # stage 2
    Ups: object = None
    UpsT: object = None                        # stage 2
    Q: list = field(default_factory=list)
    S: list = field(default_factory=list)
    F: list = field(default_factory=list)
    performance: bool = False
    gamma: float = 0.0


def _inverse_scale(values):
    """Solver scaling for a variable standing in for ``inv(diag(values))``."""
    if values is None:
        return None
    return 1.0 / np.maximum(np.asarray(values, dtype=float), 1e-12)


def build_layout(program, problem, n_p, stage, *, P_init=None, W_fixed=None, eps=1e-7,
                 det_increase=False, shared_Q=True, fixed=None):
    """Register the decision variables of one stage on ``program``.

    In stage 2, ``fixed`` (the linearization point) sets the scaling of the
    inverse-multiplier variables so that they are of order one at that point.
    """
    sys, con = problem.system, problem.constraints
    nx, nu, nw, nz, nxi = sys.n_x, sys.n_u, sys.n_w, sys.n_z, sys.n_xi
    perf = problem.performance.enabled
    lay = DecisionLayout(stage, nx, nu, nw, nz, n_p, nxi, con.n_h, con.n_g,
                         performance=perf, gamma=problem.performance.gamma)
    if stage == 1:
        if P_init is None:
            raise ValueError("stage 1 needs P_init")
        lay.W = program.matrix("W", (nx, nx))
        lay.P = [np.asarray(P_init, dtype=float)] * nxi
        if det_increase:
            lay.Z = program.symmetric("Z", nx)
    elif stage == 2:
        if W_fixed is None:
            raise ValueError("stage 2 needs a fixed W")
        lay.W = np.asarray(W_fixed, dtype=float)
        lay.P = [program.matrix(f"P[{k}]", (n_p, nx)) for k in range(nxi)]
    else:
        raise ValueError(f"unknown stage {stage}")
    lay.Kbar = [program.matrix(f"Kbar[{k}]", (nu, nx)) for k in range(nxi)]
    lay.V = [[program.matrix(f"V[{i}][{k}]", (nx, nx)) for k in range(nxi)] for i in range(n_p)]
    lay.X = [program.symmetric(f"X[{i}]", nx) for i in range(n_p)]
    for i in range(n_p):
        if stage == 1:
            lay.phi.append(program.scalar(f"phi[{i}]", lower=eps))
            lay.Lam.append(program.diag_positive(f"Lambda[{i}]", n_p, eps))
            lay.Gam.append(program.diag_positive(f"Gamma[{i}]", con.n_g, eps))
        else:
            lay.psi.append(program.scalar(f"psi[{i}]", lower=eps))
            scale = _inverse_scale(fixed.Lam0[i]) if fixed is not None else None
            lay.LamT.append(program.diag_positive(f"LambdaT[{i}]", n_p, eps, scale=scale))
            lay.Gam.append(program.diag_positive(f"GammaBar[{i}]", con.n_g, eps))
    for j in range(con.n_h):
        lay.Pi.append(program.diag_positive(f"Pi[{j}]", n_p, eps))
        if stage == 2:
            scale = _inverse_scale(fixed.Pi0[j]) if fixed is not None else None
            lay.PiT.append(program.diag_positive(f"PiT[{j}]", n_p, eps, scale=scale))
    if perf:
        lay.Ups = program.diag_positive("Upsilon", n_p, eps)
        if stage == 2:
            scale = _inverse_scale(fixed.Ups0) if fixed is not None else None
            lay.UpsT = program.diag_positive("UpsilonT", n_p, eps, scale=scale)
        if shared_Q:
            Q = program.symmetric("Q", nx)
            lay.Q = [Q] * nxi
        else:
            lay.Q = [program.symmetric(f"Q[{k}]", nx) for k in range(nxi)]
        lay.S = [program.matrix(f"S[{k}]", (nx, nx)) for k in range(nxi)]
        lay.F = [program.matrix(f"F[{k}]", (nz, nz)) for k in range(nxi)]
    return lay


# -- blocks --------------------------------------------------------------------

def build_Pkl(P_k, P0_l, P0_k, weight_bar, weight_mid, stage):
    """``He(P_k' Lbar P0_l) - P0_k' Lbar inv(L) Lbar P0_l`` with linear stand-ins.

    Stage 1: ``P_k = P0_k = P0_l = P_init`` and ``weight_bar = weight_mid = L``
    (a variable); the expression collapses to ``P_init' L P_init``.
    Stage 2: ``weight_bar`` is the fixed diagonal, ``weight_mid`` is the
    variable standing in for ``inv(L)``.
    """
    if stage == 1:
        P = np.asarray(P_k, dtype=float)
        return P.T @ _diag(weight_bar) @ P
    bar = np.asarray(weight_bar, dtype=float)
    BP0l = bar[:, None] * P0_l
    BP0k = bar[:, None] * P0_k
    lin = P_k.T @ BP0l
    lin = lin + lin.T
    return lin - BP0k.T @ _diag(weight_mid) @ BP0l


def _weights(lay, fixed, i):
    """(Lambda_bar, Lambda middle) pair for face i."""
    if lay.stage == 1:
        return lay.Lam[i], lay.Lam[i]
    return fixed.Lam0[i], lay.LamT[i]


def build_M_block(k, l, i, lay, fixed, problem):
    """Invariance block ``M_i^{k,l}`` (stage 1) or ``Mbar_i^{k,l}`` (stage 2)."""
    sys, con = problem.system, problem.constraints
    nx, nw = lay.n_x, lay.n_w
    bar, mid = _weights(lay, fixed, i)
    P0 = fixed.P0 if fixed is not None else lay.P
    Pkl = build_Pkl(lay.P[k], P0[l], P0[k], bar, mid, lay.stage)
    GG = con.G.T @ _diag(lay.Gam[i]) @ con.G
    dyn = sys.A[k] @ lay.W + sys.B[k] @ lay.Kbar[l]
    Ek = sys.E[k] if lay.stage == 1 else lay.psi[i] * sys.E[k]
    V, X = lay.V[i][k], lay.X[i]
    Zxw, Zxx = np.zeros((nx, nw)), np.zeros((nx, nx))
    return cp.bmat([
        [Pkl, Zxw, dyn.T, Zxx],
        [Zxw.T, GG, Ek.T, Zxw.T],
        [dyn, Ek, He(V), V.T],
        [Zxx, Zxw, V, X],
    ])


def build_R_block(k, l, j, lay, fixed, problem):
    """System-constraint block ``R_j^{k,l}``."""
    con = problem.constraints
    if lay.stage == 1:
        bar, mid = lay.Pi[j], lay.Pi[j]
    else:
        bar, mid = fixed.Pi0[j], lay.PiT[j]
    P0 = fixed.P0 if fixed is not None else lay.P
    Pkl = build_Pkl(lay.P[k], P0[l], P0[k], bar, mid, lay.stage)
    corner = 2.0 - _sum1(lay.Pi[j])
    row = con.H_x[j:j + 1] @ lay.W + con.H_u[j:j + 1] @ lay.Kbar[l]
    return cp.bmat([[corner, row], [row.T, Pkl]])


def build_N_block(k, l, lay, problem):
    """Performance decay block ``N^{k,l}``."""
    if not lay.performance:
        raise ValueError("performance is not enabled")
    sys = problem.system
    nx, nz = lay.n_x, lay.n_z
    W, Q, S, F = lay.W, lay.Q[k], lay.S[k], lay.F[k]
    dyn = sys.A[k] @ W + sys.B[k] @ lay.Kbar[l]
    out = sys.C[k] @ W + sys.D[k] @ lay.Kbar[l]
    Zxx, Zxz, Zzz = np.zeros((nx, nx)), np.zeros((nx, nz)), np.zeros((nz, nz))
    return cp.bmat([
        [He(W) - Q, dyn.T, Zxx, out.T, Zxz],
        [dyn, He(S), S.T, Zxz, Zxz],
        [Zxx, S, Q, Zxz, Zxz],
        [out, Zxz.T, Zxz.T, He(F), F.T],
        [Zxz.T, Zxz.T, Zxz.T, F, np.eye(nz)],
    ])


def build_L_block(k, l, lay, fixed):
    """Performance level-set block ``L^{k,l}``."""
    if not lay.performance:
        raise ValueError("performance is not enabled")
    nx = lay.n_x
    if lay.stage == 1:
        bar, mid = lay.Ups, lay.Ups
    else:
        bar, mid = fixed.Ups0, lay.UpsT
    P0 = fixed.P0 if fixed is not None else lay.P
    Pkl = build_Pkl(lay.P[k], P0[l], P0[k], bar, mid, lay.stage)
    corner = lay.gamma - _sum1(lay.Ups)
    W = lay.W
    z1 = np.zeros((1, nx))
    return cp.bmat([
        [corner, z1, z1],
        [z1.T, Pkl, W.T],
        [z1.T, W, lay.Q[k]],
    ])


def build_face_block(i, k, lay, fixed):
    """Successor-face condition (33a) / (38a) for face ``i`` at vertex ``k``."""
    W, Y, X = lay.W, fixed.Y[i], lay.X[i]
    corner = He(W.T @ Y) - Y.T @ X @ Y
    row = lay.P[k][i:i + 1, :]
    if lay.stage == 1:
        phi = lay.phi[i]
        return cp.bmat([[corner, (phi * row).T], [phi * row, _scalar_block(phi)]])
    return cp.bmat([[corner, row.T], [row, _scalar_block(lay.psi[i])]])


def build_multiplier_block(i, lay):
    """Stage-2 Schur form of ``phi - 1'Lambda 1 - 1'Gamma 1 >= 0``."""
    psi = lay.psi[i]
    ones = np.ones((lay.n_p, 1))
    return cp.bmat([
        [_scalar_block(psi) - _sum1(lay.Gam[i]), psi * ones.T],
        [psi * ones, _diag(lay.LamT[i])],
    ])


# -- Polya-relaxed families ----------------------------------------------------

@dataclass
class AssembledCondition:
    label: str
    family: str
    expr: object
    margin: float
    kind: str = "psd"


def _polya(label, family, block, d, nxi, eps):
    return [AssembledCondition(f"{label}[q={q}]", family, expr, eps)
            for q, expr in enumerate(polya_combine(block, d, nxi))]


def assemble_stage1_conditions(lay, fixed, problem, d, eps=1e-7):
    """Stage-1 conditions: faces, multipliers, invariance, constraints, performance."""
    if lay.stage != 1:
        raise ValueError("stage-1 conditions need a stage-1 layout")
    out = []
    nxi = lay.n_xi
    for i in range(lay.n_p):
        out.append(AssembledCondition(f"inv-face[i={i}]", INVARIANCE,
                                      build_face_block(i, 0, lay, fixed), eps))
        r = lay.phi[i] - cp.sum(lay.Lam[i]) - cp.sum(lay.Gam[i])
        out.append(AssembledCondition(f"inv-mult[i={i}]", INVARIANCE, r, eps, kind="geq"))
        out += _polya(f"inv-M[i={i}]", INVARIANCE,
                      lambda k, l, i=i: build_M_block(k, l, i, lay, fixed, problem), d, nxi, eps)
    for j in range(lay.n_h):
        out += _polya(f"sys-R[j={j}]", SYSTEM,
                      lambda k, l, j=j: build_R_block(k, l, j, lay, fixed, problem), d, nxi, eps)
    if lay.performance:
        out += _polya("perf-N", PERFORMANCE, lambda k, l: build_N_block(k, l, lay, problem),
                      d, nxi, eps)
        out += _polya("perf-L", PERFORMANCE, lambda k, l: build_L_block(k, l, lay, fixed),
                      d, nxi, eps)
    return out


def assemble_stage2_conditions(lay, fixed, problem, d, eps=1e-7):
    """Stage-2 conditions including the inverse-pair coupling LMIs."""
    if lay.stage != 2:
        raise ValueError("stage-2 conditions need a stage-2 layout")
    out = []
    nxi, n_p = lay.n_xi, lay.n_p
    eye = np.eye(n_p)
    for i in range(n_p):
        for k in range(nxi):
            out.append(AssembledCondition(f"inv-face[i={i},k={k}]", INVARIANCE,
                                          build_face_block(i, k, lay, fixed), eps))
        out.append(AssembledCondition(f"inv-mult[i={i}]", INVARIANCE,
                                      build_multiplier_block(i, lay), 0.0))
        out += _polya(f"inv-M[i={i}]", INVARIANCE,
                      lambda k, l, i=i: build_M_block(k, l, i, lay, fixed, problem), d, nxi, eps)
    for j in range(lay.n_h):
        out += _polya(f"sys-R[j={j}]", SYSTEM,
                      lambda k, l, j=j: build_R_block(k, l, j, lay, fixed, problem), d, nxi, eps)
        out.append(AssembledCondition(
            f"pair-Pi[j={j}]", COUPLING,
            cp.bmat([[_diag(lay.Pi[j]), eye], [eye, _diag(lay.PiT[j])]]), 0.0))
    if lay.performance:
        out += _polya("perf-N", PERFORMANCE, lambda k, l: build_N_block(k, l, lay, problem),
                      d, nxi, eps)
        out += _polya("perf-L", PERFORMANCE, lambda k, l: build_L_block(k, l, lay, fixed),
                      d, nxi, eps)
        out.append(AssembledCondition(
            "pair-Ups", COUPLING,
            cp.bmat([[_diag(lay.Ups), eye], [eye, _diag(lay.UpsT)]]), 0.0))
    return out


def add_conditions(program, conditions):
    for c in conditions:
        if c.kind == "psd":
            program.psd(c.label, c.expr, c.margin, family=c.family)
        else:
            program.geq(c.label, c.expr, c.margin, family=c.family)


def expected_counts(stage, n_p, n_xi, n_h, d, performance):
    """Condition counts per family as tabulated for the relaxed programs."""
    L = n_exponents(d + 2, n_xi)
    face = 1 if stage == 1 else n_xi
    out = {
        INVARIANCE: n_p * (face + 1 + L),
        SYSTEM: n_h * L,
        PERFORMANCE: 2 * L if performance else 0,
    }
    if stage == 2:
        out[COUPLING] = n_h + (1 if performance else 0)
    return out


def count_conditions(conditions):
    out = {}
    for c in conditions:
        out[c.family] = out.get(c.family, 0) + 1
    return out
