"""Assembly of the Legendre-projection LMIs for the PI-controlled drill pipe.

State ordering used throughout:

* ``Z_N = (z1, z2, X_0, ..., X_N)`` with ``X_k`` the 2-vector projection of the
  Riemann coordinates on the k-th Legendre polynomial, length ``2 + 2(N+1)``;
* ``xi_N = (Z_N, phi_t(0), phi_x(1))``, length ``4 + 2(N+1)``;
* ``xi_bar = (xi_N, T_nl, 1)``, length ``6 + 2(N+1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .legendre import ell_matrix
from .params import NormalizedParams, PiGains
from .sdp import Affine, LmiProblem, He, blkdiag, bmat, kron


@dataclass(frozen=True)
class StructuralMatrices:
    N: int
    c: float
    Lambda: np.ndarray
    ones_N: np.ndarray
    bar_ones_N: np.ndarray
    L_N: np.ndarray
    F_N: np.ndarray
    J_N: np.ndarray
    M_N: np.ndarray
    D_N: np.ndarray
    G_N: np.ndarray
    H_N: np.ndarray
    G: np.ndarray
    H: np.ndarray
    A: np.ndarray
    B: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray

    @property
    def n_proj(self) -> int:
        return 2 * (self.N + 1)

    @property
    def n_z(self) -> int:
        return 2 + self.n_proj

    @property
    def n_xi(self) -> int:
        return 4 + self.n_proj


def build_structural(N: int, np_: NormalizedParams, gains: PiGains, c_b: float = 0.03) -> StructuralMatrices:
    if N < 0:
        raise ValueError("order N must be nonnegative")
    c = np_.c
    n = 2 * (N + 1)
    Lam = np.diag([c, -c])
    ones_N = np.vstack([Lam] * (N + 1))
    bar_ones_N = np.vstack([(-1) ** k * Lam for k in range(N + 1)])
    # Projection dynamics: dX/dt = ones_N chi(1) - bar_ones_N chi(0) - L_N X, with the
    # transport term entering as ell (x) Lambda and distributed damping as +gamma/2 [1 1; 1 1].
    L_N = np.kron(ell_matrix(N), Lam) + 0.5 * np_.gamma_t * np.kron(np.eye(N + 1), np.ones((2, 2)))

    A = np.array([[-c_b / np_.I_B, 0.0], [0.0, 0.0]])
    B = np.array([[0.0, -np_.alpha1], [1.0, 0.0]])
    B2 = np.array([[0.0, -np_.alpha2], [-1.0, 0.0]])
    C1 = np.array([[1.0, 0.0]])
    C2 = np.array([[0.0, 1.0]])

    a = c * (np_.g_tilde + gains.kp)
    G = np.array([[1.0 + a, 0.0], [1.0 - a, 0.0]])
    H = np.array([[0.0, c], [0.0, -c]])
    G_N = np.hstack([np.vstack([c * gains.ki * C2, -c * gains.ki * C2]), np.zeros((2, n)), G])
    H_N = np.hstack([np.vstack([C1, C1]), np.zeros((2, n)), H])

    F_N = np.hstack([np.eye(2 + n), np.zeros((2 + n, 2))])
    J_N = np.hstack([A, np.zeros((2, n)), B])
    M_N = ones_N @ H_N - bar_ones_N @ G_N - np.hstack([np.zeros((n, 2)), L_N, np.zeros((n, 2))])
    D_N = np.vstack([J_N, M_N])
    return StructuralMatrices(
        N=N, c=c, Lambda=Lam, ones_N=ones_N, bar_ones_N=bar_ones_N, L_N=L_N, F_N=F_N, J_N=J_N,
        M_N=M_N, D_N=D_N, G_N=G_N, H_N=H_N, G=G, H=H, A=A, B=B, B2=B2, C1=C1, C2=C2,
    )  # fmt: skip


def legendre_weights(N: int) -> np.ndarray:
    """``diag(1, 3, ..., 2N+1)``."""
    return np.diag(2.0 * np.arange(N + 1) + 1.0)


@dataclass
class LyapunovVariables:
    """Affine handles of the decision variables shared by every theorem."""

    P: Affine
    R: Affine
    S: Affine
    Q: Affine
    S_N: Affine
    Q_N: Affine
    Theta: Affine


# Scale bound for the homogeneous stability LMIs; together with the strictness
# margin it sets the smallest relative eigenvalue margin accepted as feasible.
HOMOGENEOUS_BOUND = 1.0

E00 = np.diag([1.0, 0.0])
E11 = np.diag([0.0, 1.0])


def _declare_lyapunov(prob: LmiProblem, sm: StructuralMatrices, np_: NormalizedParams) -> LyapunovVariables:
    N, c = sm.N, sm.c
    P = prob.symmetric("P", sm.n_z)
    R = prob.diagonal("R", 2)
    S = prob.diagonal("S", 2)
    Q = prob.symmetric("Q", 2)
    W = legendre_weights(N)
    S_N = blkdiag(np.zeros((2, 2)), kron(W, S))
    Q_N = blkdiag(np.zeros((2, 2)), kron(W, Q), np.zeros((2, 2)))

    top = S @ E00 + R @ E00 - S @ E11  # diag(S1 + R1, -S2)
    bottom = S @ E00 - S @ E11 - R @ E11  # diag(S1, -S2 - R2)
    theta1 = sm.H_N.T @ top @ sm.H_N - sm.G_N.T @ bottom @ sm.G_N
    theta2 = He(sm.D_N.T @ P @ sm.F_N)
    Theta = (theta1 * c + theta2 - Q_N).sym()
    return LyapunovVariables(P=P, R=R, S=S, Q=Q, S_N=S_N, Q_N=Q_N, Theta=Theta)


def _add_common(prob: LmiProblem, v: LyapunovVariables, np_: NormalizedParams, c: float) -> None:
    S1, S2 = v.S[0, 0], v.S[1, 1]
    R1, R2 = v.R[0, 0], v.R[1, 1]
    U0 = bmat([[S1 * 2, S1 + S2 + R2], [S1 + S2 + R2, (S2 + R2) * 2]])
    U1 = bmat([[(S1 + R1) * 2, S1 + S2 + R1], [S1 + S2 + R1, S2 * 2]])
    g2 = 0.5 * np_.gamma_t
    prob.add("PS", (v.P + v.S_N).sym(), ">>", strict=True)
    prob.add("Gamma0", (v.R * c + U0 * g2 - v.Q).sym(), ">>", strict=False)
    prob.add("Gamma1", (v.R * c + U1 * g2 - v.Q).sym(), ">>", strict=False)
    prob.add("R1", R1, ">>", strict=False)
    prob.add("R2", R2, ">>", strict=False)
    prob.add("S1", S1, ">>", strict=True)
    prob.add("S2", S2, ">>", strict=True)
    prob.add("Q", v.Q, ">>", strict=True)


def build_theorem1(N: int, np_: NormalizedParams, gains: PiGains, c_b: float = 0.03) -> LmiProblem:
    """Exponential stability LMIs of the linearized closed loop at order ``N``."""
    return build_corollary1(N, np_, gains, 0.0, c_b=c_b)


def build_corollary1(N: int, np_: NormalizedParams, gains: PiGains, mu: float, c_b: float = 0.03) -> LmiProblem:
    """Same as :func:`build_theorem1` with the decay-rate term ``2 mu F^T (P + S_N) F``."""
    if mu < 0:
        raise ValueError("decay rate must be nonnegative")
    sm = build_structural(N, np_, gains, c_b)
    prob = LmiProblem(meta={"kind": "corollary1" if mu else "theorem1", "N": N, "mu": mu}, entry_bound=HOMOGENEOUS_BOUND)
    v = _declare_lyapunov(prob, sm, np_)
    theta = v.Theta
    if mu:
        theta = (theta + sm.F_N.T @ (v.P + v.S_N) @ sm.F_N * (2.0 * mu)).sym()
    prob.add("Theta", theta, "<<", strict=True)
    _add_common(prob, v, np_, sm.c)
    return prob


@dataclass(frozen=True)
class Theorem2Scaling:
    """Congruence applied to the extended vector ``(xi_N, T_nl, 1)``.

    The last two entries are replaced by ``alpha2 * T_nl`` and
    ``alpha2 * T_max``; the multipliers ``tau1, tau2, tau3`` of the scaled
    problem relate to the unscaled ones through :meth:`unscale_taus`.
    """

    alpha2: float
    T_max: float

    @property
    def K(self) -> float:
        return self.alpha2 * self.T_max

    def unscale_taus(self, tau1: float, tau2: float, tau3: float) -> tuple[float, float, float]:
        a = self.alpha2
        return tau1 * a**2, tau2 * a**2, tau3 * a


def theorem2_selectors(N: int) -> dict[str, np.ndarray]:
    n_xi = 4 + 2 * (N + 1)
    m = n_xi + 2
    n_z = 2 + 2 * (N + 1)
    row = lambda i: np.eye(m)[i : i + 1]  # noqa: E731
    F_tilde = np.hstack([np.eye(n_z), np.zeros((n_z, m - n_z))])
    E = np.hstack([np.eye(n_xi), np.zeros((n_xi, 2))])
    e1 = np.eye(n_z)[:, :1]
    return {"F_m1": row(m - 2), "F_m2": row(m - 1), "pi1": row(0), "pi2": row(m - 2), "pi3": row(m - 1),
            "F_tilde": F_tilde, "E": E, "e1": e1}  # fmt: skip


def build_theorem2(
    N: int,
    np_: NormalizedParams,
    gains: PiGains,
    omega0: float,
    T0: float,
    T_min: float,
    T_max: float,
    tau0: float,
    V_max: float | None = None,
    c_b: float = 0.03,
    scaled: bool = True,
) -> LmiProblem:
    """Practical-stability LMI with ``tau0`` frozen.

    With ``V_max=None`` the level is a decision variable ``V_hat = V_max / K**2``
    (``K = alpha2 * T_max`` when scaled, else 1); see :func:`theorem2_vmax`.  When
    ``scaled`` is true the extended vector is rescaled by an exact congruence
    (see :class:`Theorem2Scaling`) so the torque entries are O(1); feasibility
    is unchanged.
    """
    if tau0 < 0:
        raise ValueError("tau0 must be nonnegative")
    if not 0 < T_min <= T_max:
        raise ValueError("sector bounds must satisfy 0 < T_min <= T_max")
    sm = build_structural(N, np_, gains, c_b)
    sel = theorem2_selectors(N)
    prob = LmiProblem(meta={"kind": "theorem2", "N": N, "tau0": tau0, "omega0": omega0, "T0": T0,
                            "T_min": T_min, "T_max": T_max, "V_max": V_max, "scaled": scaled},
                      entry_bound=HOMOGENEOUS_BOUND if V_max is None else None)  # fmt: skip
    v = _declare_lyapunov(prob, sm, np_)
    tau1 = prob.scalar("tau1")
    tau2 = prob.scalar("tau2")
    tau3 = prob.scalar("tau3")
    sc = np_.alpha2 * T_max if scaled else 1.0
    if V_max is None:
        # free level, declared as V_max / sc**2 so that it is O(1) in the scaled problem
        Vm = prob.scalar("V_hat")
    else:
        Vm = Affine(np.array([[float(V_max) / sc**2]]))

    F_m1, F_m2, pi1, pi2, pi3 = (sel[k] for k in ("F_m1", "F_m2", "pi1", "pi2", "pi3"))
    Ft, E, e1 = sel["F_tilde"], sel["E"], sel["e1"]
    PS = v.P + v.S_N

    if scaled:
        coupling = He((F_m1 - (T0 / T_max) * F_m2).T @ (e1.T @ v.P @ Ft))
        Pi0 = F_m2.T @ Vm @ F_m2 - Ft.T @ PS @ Ft
        Pi1 = pi2.T @ pi2 - pi3.T @ pi3
        Pi2 = (T_min / T_max) ** 2 * (pi3.T @ pi3) - pi2.T @ pi2
        Pi3 = -He((pi1 + (omega0 / sc) * pi3).T @ pi2)
        prob.meta["scaling"] = {"alpha2": np_.alpha2, "T_max": T_max}
    else:
        coupling = He((F_m1 - T0 * F_m2).T @ (e1.T @ v.P @ Ft)) * np_.alpha2
        Pi0 = F_m2.T @ Vm @ F_m2 - Ft.T @ PS @ Ft
        Pi1 = pi2.T @ pi2 - T_max**2 * (pi3.T @ pi3)
        Pi2 = T_min**2 * (pi3.T @ pi3) - pi2.T @ pi2
        Pi3 = -He((pi1 + omega0 * pi3).T @ pi2)

    theta_bar = E.T @ v.Theta @ E - coupling
    Xi = theta_bar - Pi0 * tau0 - _scalar_times(tau1, Pi1) - _scalar_times(tau2, Pi2) - _scalar_times(tau3, Pi3)
    prob.add("Xi", Xi.sym(), "<<", strict=True)
    _add_common(prob, v, np_, sm.c)
    prob.add("tau1", tau1, ">>", strict=False)
    prob.add("tau2", tau2, ">>", strict=False)
    prob.add("tau3", tau3, ">>", strict=False)
    if V_max is None:
        prob.add("V_hat", Vm, ">>", strict=True)
    return prob


def theorem2_vmax(prob: LmiProblem, values: dict) -> float:
    """Level ``V_max`` of a Theorem-2 problem (fixed or solved for)."""
    if prob.meta["V_max"] is not None:
        return float(prob.meta["V_max"])
    s = prob.meta.get("scaling")
    sc = s["alpha2"] * s["T_max"] if s else 1.0
    return float(values["V_hat"]) * sc**2


def _scalar_times(s: Affine, M: np.ndarray) -> Affine:
    """``s * M`` for a 1x1 affine ``s`` and constant matrix ``M``."""
    M = np.asarray(M, dtype=float)
    return Affine(s.const[0, 0] * M, {k: c[:, 0, 0][:, None, None] * M[None] for k, c in s.terms.items()})


def theorem2_matrix(prob: LmiProblem, values: dict, scaled_to_raw: bool = True) -> np.ndarray:
    """Evaluate ``Xi`` at ``values``; optionally undo the congruence scaling."""
    from .sdp import evaluate

    Xi = evaluate(prob.constraint("Xi").expr, prob, values)
    if scaled_to_raw and prob.meta.get("scaled"):
        s = prob.meta["scaling"]
        k = np.ones(Xi.shape[0])
        k[-2] = s["alpha2"]
        k[-1] = s["alpha2"] * s["T_max"]
        Xi = Xi * np.outer(k, k)
    return Xi
