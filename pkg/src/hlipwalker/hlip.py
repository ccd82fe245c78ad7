"""Hybrid linear inverted pendulum: closed-form flow, step-to-step dynamics,
deadbeat step-length feedback, fixed points and reference orbits.

The model is a point mass m at constant height z0 pivoting about the current
stance foot.  During single support the state r = (p, v) (mass position and
velocity relative to the stance foot) obeys rdot = A_ssp r with
A_ssp = [[0, 1], [g/z0, 0]].  Steps occur every T_ssp seconds; choosing the
step length ell moves the stance foot, shifting p by -ell, which gives the
linear step-to-step dynamics r_{k+1} = A_R r_k + B_R ell_k.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class HlipError(ValueError):
    """Invalid pendulum parameters or policy."""


@dataclass(frozen=True)
class HlipParams:
    """Point-mass pendulum parameters: mass [kg], height [m], step period [s]."""

    m: float
    z0: float
    t_ssp: float
    g: float = 9.81

    def __post_init__(self):
        if min(self.m, self.z0, self.t_ssp, self.g) <= 0:
            raise HlipError("all pendulum parameters must be positive")

    @property
    def lam(self) -> float:
        """Natural frequency sqrt(g / z0)."""
        return float(np.sqrt(self.g / self.z0))

    @property
    def a_ssp(self) -> np.ndarray:
        return np.array([[0.0, 1.0], [self.g / self.z0, 0.0]])


@dataclass(frozen=True)
class HlipState:
    """Mass position and velocity relative to the current stance foot."""

    p: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.v])

    @classmethod
    def from_array(cls, r) -> "HlipState":
        r = np.asarray(r, dtype=float).reshape(2)
        return cls(float(r[0]), float(r[1]))


def ssp_flow(params: HlipParams, r, t: float) -> np.ndarray:
    """Closed-form single-support flow of r = (p, v) over time t."""
    r = np.asarray(r, dtype=float).reshape(2)
    lam = params.lam
    ch, sh = np.cosh(lam * t), np.sinh(lam * t)
    return np.array([r[0] * ch + r[1] * sh / lam, r[0] * lam * sh + r[1] * ch])


def s2s_matrices(params: HlipParams) -> tuple[np.ndarray, np.ndarray]:
    """Step-to-step pair (A_R, B_R) with A_R = exp(A_ssp * T_ssp) in closed
    form and B_R = A_R @ [-1, 0]^T (the step length shifts p before the flow)."""
    lam, T = params.lam, params.t_ssp
    ch, sh = np.cosh(lam * T), np.sinh(lam * T)
    A = np.array([[ch, sh / lam], [lam * sh, ch]])
    B = A @ np.array([-1.0, 0.0])
    return A, B.reshape(2, 1)


def deadbeat_gain(params: HlipParams) -> np.ndarray:
    """Feedback gain K (1x2) placing both eigenvalues of A_R + B_R K at zero,
    via Ackermann's formula; the closed loop is 2-step nilpotent."""
    A, B = s2s_matrices(params)
    ctrb = np.hstack([B, A @ B])
    # ell = +K r, so this is pole placement for A + B K.
    last_row = np.linalg.solve(ctrb.T, np.array([0.0, 1.0]))
    K = -(last_row @ (A @ A)).reshape(1, 2)
    return K


def fixed_point(params: HlipParams, c: float) -> tuple[np.ndarray, float]:
    """Period-1 gait for mean velocity command c.

    The feedforward step length is ell* = c * T_ssp: over one steady step the
    mass must travel exactly one step length.  The pre-impact state r* solves
    r* = A_R r* + B_R ell* (I - A_R is invertible for T_ssp > 0).
    """
    A, B = s2s_matrices(params)
    ell_star = c * params.t_ssp
    r_star = np.linalg.solve(np.eye(2) - A, B.ravel() * ell_star)
    return r_star, ell_star


@dataclass(frozen=True)
class StepPolicy:
    """Linear step-length feedback ell = ell* + K (r - r*)."""

    K: np.ndarray
    ell_star: float
    r_star: np.ndarray
    c: float
    mode: str = "deadbeat"

    def __post_init__(self):
        object.__setattr__(self, "K", np.asarray(self.K, dtype=float).reshape(1, 2))
        object.__setattr__(self, "r_star", np.asarray(self.r_star, dtype=float).reshape(2))

    def ell(self, r) -> float:
        r = np.asarray(r, dtype=float).reshape(2)
        return self.ell_star + float(self.K @ (r - self.r_star))

    def validate(self, params: HlipParams) -> None:
        A, B = s2s_matrices(params)
        rho = np.abs(np.linalg.eigvals(A + B @ self.K)).max()
        if not rho < 1.0:
            raise HlipError(f"closed-loop spectral radius {rho:.3f} >= 1")


def deadbeat_policy(params: HlipParams, c: float) -> StepPolicy:
    r_star, ell_star = fixed_point(params, c)
    return StepPolicy(K=deadbeat_gain(params), ell_star=ell_star, r_star=r_star, c=c)


def custom_policy(params: HlipParams, c: float, K) -> StepPolicy:
    r_star, ell_star = fixed_point(params, c)
    pol = StepPolicy(K=K, ell_star=ell_star, r_star=r_star, c=c, mode="custom")
    pol.validate(params)
    return pol


def s2s_step(params: HlipParams, policy: StepPolicy, r) -> tuple[np.ndarray, float]:
    """One closed-loop step-to-step iteration: returns (r_next, ell)."""
    r = np.asarray(r, dtype=float).reshape(2)
    A, B = s2s_matrices(params)
    ell = policy.ell(r)
    return A @ r + B.ravel() * ell, ell


def rom_orbit(params: HlipParams, c: float, samples: int = 100) -> dict:
    """Sampled nominal periodic orbit: the single-support arc from the
    post-step state r+ = r* + (-ell*, 0) back to the pre-impact state r*."""
    if samples < 2:
        raise HlipError("need at least 2 samples")
    r_star, ell_star = fixed_point(params, c)
    r_plus = r_star + np.array([-ell_star, 0.0])
    t = np.linspace(0.0, params.t_ssp, samples)
    arc = np.array([ssp_flow(params, r_plus, ti) for ti in t])
    return {"t": t, "r": arc, "r_star": r_star, "r_plus": r_plus, "ell_star": ell_star}
