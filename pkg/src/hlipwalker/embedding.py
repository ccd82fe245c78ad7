"""Pendulum-to-biped embedding: coordinate splits, phase, foot placement,
inverse-kinematics output map and the joint-space controllers.

Two coordinate changes connect the layers:

* phi splits the full-order state into actuated coordinates
  eta = (q2..q5, qd2..qd5) and unactuated coordinates z = (q1, sigma) where
  sigma = (D(q) qd)[0] is the momentum conjugate to the pivot angle (the
  robot's angular momentum about the stance foot, CCW positive).

* xi identifies the pendulum state r = (p, v) with z.  With the CCW-positive
  pivot angle and walking in +x, a mass ahead of the foot (p > 0) tips the
  stance shin clockwise and carries negative angular momentum, so
  z1 = atan2(-p, z0) and z2 = -m z0 v, inverted in closed form.

The output map psi produces desired actuated positions/velocities from z by
damped-Newton IK on four tasks: swing-foot x (blend toward the commanded
step length), swing-foot height (clearance bump), hip or COM height, and
absolute torso angle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import biped
from .biped import B_ACT, FomState, RobotModel
from .hlip import HlipParams, StepPolicy, ssp_flow


class OutOfChartError(ValueError):
    """Pendulum state outside the |z1| < pi/2 chart of xi."""


class IkFailure(RuntimeError):
    """Inverse kinematics did not converge to the task targets."""


class SingularityWarning(RuntimeWarning):
    """Task Jacobian close to singular during IK."""


class ConfigError(ValueError):
    """Invalid embedding or controller configuration."""


@dataclass(frozen=True)
class EtaZ:
    """Actuated/unactuated split of the full-order state."""

    eta1: np.ndarray
    eta2: np.ndarray
    z1: float
    z2: float

    def __post_init__(self):
        object.__setattr__(self, "eta1", np.asarray(self.eta1, dtype=float).reshape(4))
        object.__setattr__(self, "eta2", np.asarray(self.eta2, dtype=float).reshape(4))

    @property
    def z(self) -> np.ndarray:
        return np.array([self.z1, self.z2])

    @property
    def eta(self) -> np.ndarray:
        return np.concatenate([self.eta1, self.eta2])


def phi(model: RobotModel, x) -> EtaZ:
    """Split x = (q, qd) into (eta, z); z2 is the unactuated momentum."""
    x = biped.state_vector(x)
    q, qd = x[:5], x[5:]
    D = biped.mass_matrix(model, q)
    return EtaZ(eta1=q[1:], eta2=qd[1:], z1=float(q[0]), z2=float(D[0] @ qd))


def phi_inv(model: RobotModel, etaz: EtaZ) -> FomState:
    """Invert phi, recovering qd1 from the momentum row of D."""
    q = np.concatenate([[etaz.z1], etaz.eta1])
    D = biped.mass_matrix(model, q)
    if D[0, 0] <= 0:
        raise biped.ModelError("mass matrix row degenerate")
    qd1 = (etaz.z2 - D[0, 1:] @ etaz.eta2) / D[0, 0]
    return FomState(q, np.concatenate([[qd1], etaz.eta2]))


def unactuated_rates(model: RobotModel, etaz: EtaZ) -> np.ndarray:
    """(z1dot, z2dot) of the unactuated block; z2dot = -dU/dq1 regardless of
    the input because the actuation does not enter the momentum row."""
    st = phi_inv(model, etaz)
    return np.array([st.qdot[0], -biped.gravity_gradient(model, st.q)[0]])


def bend_offset(model: RobotModel, z0: float) -> float:
    """Constant angle between the stance shin and the pivot-to-hip line when
    the bent two-link leg spans length z0 (knee-forward branch)."""
    return _bend_offset(model.stance_shin.length, model.stance_thigh.length, z0)


@lru_cache(maxsize=32)
def _bend_offset(ls: float, lt: float, z0: float) -> float:
    if not abs(ls - lt) < z0 < ls + lt:
        raise ConfigError(f"virtual leg length {z0:.3f} outside [{abs(ls-lt)}, {ls+lt}]")
    cos_bend = (ls * ls + z0 * z0 - lt * lt) / (2 * ls * z0)
    return float(np.arccos(np.clip(cos_bend, -1.0, 1.0)))


def ik_base(model: RobotModel, p: float, z0: float) -> float:
    """Stance-shin angle q1 placing the hip at horizontal offset p on the
    constant-length virtual leg of length z0 (knee-forward branch).

    The pivot-to-hip line has up-angle -asin(p / z0) and the shin deviates
    from it by the constant two-link bend, so the map is a closed-form
    diffeomorphism for |p| < z0.
    """
    if abs(p) >= z0:
        raise OutOfChartError(f"|p| = {abs(p):.3f} outside the virtual leg radius {z0:.3f}")
    return float(-np.arcsin(p / z0) - bend_offset(model, z0))


def ik_base_inv(model: RobotModel, z1: float, z0: float) -> float:
    """Hip horizontal offset p for shin angle z1 (inverse of ik_base)."""
    theta = z1 + bend_offset(model, z0)
    if abs(theta) >= np.pi / 2:
        raise OutOfChartError(f"shin angle {z1:.3f} outside the monotone branch")
    return float(-z0 * np.sin(theta))


def _ik_base_inv_slope(model: RobotModel, z1: float, z0: float) -> float:
    """dp/dz1 of ik_base_inv."""
    return float(-z0 * np.cos(z1 + bend_offset(model, z0)))


def xi(params: HlipParams, model: RobotModel, r) -> np.ndarray:
    """Map pendulum state (p, v) to unactuated coordinates (z1, z2).

    z1 is the shin angle that places the hip at (p, z0); z2 = -m z0 v is the
    pendulum's angular momentum about the stance foot in the CCW-positive
    convention (forward motion carries negative momentum).
    """
    r = np.asarray(r, dtype=float).reshape(2)
    return np.array([ik_base(model, r[0], params.z0), -params.m * params.z0 * r[1]])


def xi_inv(params: HlipParams, model: RobotModel, z) -> np.ndarray:
    """Inverse of xi; raises OutOfChartError outside the leg workspace."""
    z = np.asarray(z, dtype=float).reshape(2)
    p = ik_base_inv(model, z[0], params.z0)
    return np.array([p, -z[1] / (params.m * params.z0)])


@dataclass(frozen=True)
class EmbeddingConfig:
    """Geometry targets and scheduling of the output map.

    hip_height is the stance-height task target (applied to the hip point by
    default, or to the COM when rom_point = "com"); torso_angle is the
    absolute torso task; swing_apex the mid-step foot clearance.  phase_mode
    selects how the step phase tau is measured; replan_mode selects whether
    the step-length command uses the frozen post-impact state or the live
    one (replan_interval = 0 replans continuously).
    """

    z0: float = 0.7
    hip_height: float = 0.7
    torso_angle: float = 0.0
    swing_apex: float = 0.07
    phase_mode: str = "state"
    replan_mode: str = "replan"
    replan_interval: float = 0.0
    rom_point: str = "hip"

    def validate(self, model: RobotModel) -> None:
        if not self.hip_height < model.leg_length:
            raise ConfigError("hip_height must be below total leg length")
        if self.swing_apex <= 0:
            raise ConfigError("swing_apex must be positive")
        if self.phase_mode not in ("state", "time"):
            raise ConfigError(f"unknown phase_mode {self.phase_mode!r}")
        if self.replan_mode not in ("openloop", "replan"):
            raise ConfigError(f"unknown replan_mode {self.replan_mode!r}")
        if self.rom_point not in ("hip", "com"):
            raise ConfigError(f"unknown rom_point {self.rom_point!r}")
        if self.replan_interval < 0:
            raise ConfigError("replan_interval must be nonnegative")


@dataclass(frozen=True)
class ControllerConfig:
    """Joint-space tracking law: plain PD (default), input-output
    linearization with 1/eps gain scaling, or the exact invariance law."""

    mode: str = "pd"
    kp: np.ndarray | float = 400.0
    kd: np.ndarray | float = 40.0
    eps: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kp", np.broadcast_to(np.asarray(self.kp, dtype=float), (4,)).copy())
        object.__setattr__(self, "kd", np.broadcast_to(np.asarray(self.kd, dtype=float), (4,)).copy())

    def validate(self) -> None:
        if self.mode not in ("pd", "io_linearization", "invariance"):
            raise ConfigError(f"unknown controller mode {self.mode!r}")
        if np.any(self.kp < 0) or np.any(self.kd < 0):
            raise ConfigError("gains must be nonnegative")
        if not 0 < self.eps <= 1:
            raise ConfigError("eps must lie in (0, 1]")


@dataclass(frozen=True)
class StepContext:
    """Per-step data frozen at impact (plus optional replan refresh)."""

    z_plus: np.ndarray
    x_sw_plus: float
    z1_pred_minus: float
    r_pred_minus: np.ndarray
    use_time_tau: bool = False
    z_ref: np.ndarray | None = None  # replaces z_plus in kappa when set

    def __post_init__(self):
        object.__setattr__(self, "z_plus", np.asarray(self.z_plus, dtype=float).reshape(2))
        object.__setattr__(self, "r_pred_minus", np.asarray(self.r_pred_minus, dtype=float).reshape(2))


# ----------------------------------------------------------------------
# Phase and step-length interface
# ----------------------------------------------------------------------


def _smoothstep(tau):
    return tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau))


def _smoothstep_rate(tau):
    return 30.0 * tau * tau * (1.0 - tau) ** 2


def _bump(tau):
    return 16.0 * tau * tau * (1.0 - tau) ** 2


def _bump_rate(tau):
    return 32.0 * tau * (1.0 - tau) * (1.0 - 2.0 * tau)


def tau_phase(config: EmbeddingConfig, ctx: StepContext, params: HlipParams,
              z1: float, t: float, z1dot: float = 0.0) -> tuple[float, float]:
    """Normalized step phase tau in [0, 1] and its time derivative.

    State mode interpolates z1 between its post-impact value and the
    pendulum-predicted pre-impact value; time mode uses t / T_ssp.
    """
    if config.phase_mode == "time" or ctx.use_time_tau:
        raw = t / params.t_ssp
        rate = 1.0 / params.t_ssp
    else:
        span = ctx.z1_pred_minus - ctx.z_plus[0]
        raw = (z1 - ctx.z_plus[0]) / span
        rate = z1dot / span
    if raw <= 0.0:
        return 0.0, 0.0
    if raw >= 1.0:
        return 1.0, 0.0
    return raw, rate


def kappa(model: RobotModel, params: HlipParams, policy: StepPolicy,
          config: EmbeddingConfig, ctx: StepContext, z, tau: float) -> float:
    """Commanded step length: feedforward plus gain on the predicted
    pre-impact pendulum state."""
    if config.replan_mode == "openloop":
        r_hat = ctx.r_pred_minus if ctx.z_ref is None else ssp_flow(
            params, xi_inv(params, model, ctx.z_ref), params.t_ssp)
    else:
        z_ref = np.asarray(z, dtype=float) if ctx.z_ref is None else ctx.z_ref
        r_hat = ssp_flow(params, xi_inv(params, model, z_ref), (1.0 - tau) * params.t_ssp)
    return policy.ell_star + float(policy.K @ (r_hat - policy.r_star))


def _kappa_rate(model, params, policy, config, ctx, z, tau, tau_rate,
                z1dot, z2dot):
    """Time derivative of kappa (zero in openloop or frozen-reference mode)."""
    if config.replan_mode == "openloop" or ctx.z_ref is not None:
        return 0.0
    z = np.asarray(z, dtype=float).reshape(2)
    r0 = xi_inv(params, model, z)
    s = (1.0 - tau) * params.t_ssp
    lam = params.lam
    ch, sh = np.cosh(lam * s), np.sinh(lam * s)
    Phi = np.array([[ch, sh / lam], [lam * sh, ch]])
    r0_dot = np.array([_ik_base_inv_slope(model, z[0], params.z0) * z1dot,
                       -z2dot / (params.m * params.z0)])
    r_hat = Phi @ r0
    r_hat_dot = params.a_ssp @ r_hat * (-tau_rate * params.t_ssp) + Phi @ r0_dot
    return float(policy.K @ r_hat_dot)


# ----------------------------------------------------------------------
# Tasks and inverse kinematics
# ----------------------------------------------------------------------


def _task_map(model: RobotModel, q, config: EmbeddingConfig):
    """Task values [swing x, swing z, height, torso angle] and their (4, 5)
    Jacobian at configuration q."""
    q = np.asarray(q, dtype=float)
    a = np.cumsum(q)
    sa, ca = np.sin(a), np.cos(a)
    ls, lt = model.stance_shin.length, model.stance_thigh.length
    lsw, lss = model.swing_thigh.length, model.swing_shin.length

    sw_x = -ls * sa[0] - lt * sa[1] + lsw * sa[3] + lss * sa[4]
    sw_z = ls * ca[0] + lt * ca[1] - lsw * ca[3] - lss * ca[4]
    hip_z = ls * ca[0] + lt * ca[1]

    # per-joint contributions indexed by cumulative angle; joint j affects
    # every contribution with index >= j, hence the reversed cumsum
    cx = np.array([-ls * ca[0], -lt * ca[1], 0.0, lsw * ca[3], lss * ca[4]])
    cz = np.array([-ls * sa[0], -lt * sa[1], 0.0, lsw * sa[3], lss * sa[4]])
    ch = np.array([-ls * sa[0], -lt * sa[1], 0.0, 0.0, 0.0])
    J = np.empty((4, 5))
    J[0] = np.cumsum(cx[::-1])[::-1]
    J[1] = np.cumsum(cz[::-1])[::-1]
    J[3] = (1.0, 1.0, 1.0, 0.0, 0.0)

    if config.rom_point == "com":
        t = model._tables
        beta = t["beta"]
        kg = t["kg"]
        height = float((beta * ca[kg]).sum()) / model.total_mass
        J[2] = -np.einsum("t,tj->j", beta * sa[kg], t["gind"]) / model.total_mass
    else:
        height = hip_z
        J[2] = np.cumsum(ch[::-1])[::-1]

    vals = np.array([sw_x, sw_z, height, a[2]])
    return vals, J


def geometric_seed(model: RobotModel, config: EmbeddingConfig, z1: float,
                   targets) -> np.ndarray:
    """Closed-form pose for the task targets assuming the height task acts at
    the hip: exact there (knee-forward branch), an approximation otherwise."""
    ls, lt = model.stance_shin.length, model.stance_thigh.length
    lsw, lss = model.swing_thigh.length, model.swing_shin.length
    fx, fz, height, torso = np.asarray(targets, dtype=float)
    a2 = np.arccos(np.clip((height - ls * np.cos(z1)) / lt, -1.0, 1.0))
    q2 = a2 - z1
    q3 = torso - a2
    hip = np.array([-ls * np.sin(z1) - lt * np.sin(a2), ls * np.cos(z1) + lt * np.cos(a2)])
    w = np.array([fx, fz]) - hip
    d = min(np.linalg.norm(w), lsw + lss - 1e-9)
    phi_line = np.arctan2(w[0], -w[1])
    alpha = np.arccos(np.clip((lsw**2 + d**2 - lss**2) / (2 * lsw * d), -1.0, 1.0))
    beta = np.arccos(np.clip((lss**2 + d**2 - lsw**2) / (2 * lss * d), -1.0, 1.0))
    a4 = phi_line + alpha
    a5 = phi_line - beta
    return np.array([q2, q3, a4 - torso, a5 - a4])


def _newton_ik(model, config, z1, targets, qa, tol, max_iter):
    """Newton with full steps while converging; backtracks when a step makes
    the residual worse and regularizes near-singular Jacobians."""
    best = (np.inf, qa)
    prev = np.inf
    for _ in range(max_iter):
        vals, J = _task_map(model, np.concatenate([[z1], qa]), config)
        res = vals - targets
        nr = float(np.linalg.norm(res))
        if nr < best[0]:
            best = (nr, qa.copy())
        if nr < tol:
            return qa, nr
        Ja = J[:, 1:]
        try:
            step = np.linalg.solve(Ja, -res)
        except np.linalg.LinAlgError:
            warnings.warn("task Jacobian nearly singular", SingularityWarning)
            step = np.linalg.solve(Ja.T @ Ja + 1e-8 * np.eye(4), -Ja.T @ res)
        if not np.all(np.isfinite(step)) or np.linalg.norm(step) > 1e6:
            warnings.warn("task Jacobian nearly singular", SingularityWarning)
            step = np.linalg.solve(Ja.T @ Ja + 1e-8 * np.eye(4), -Ja.T @ res)
        if nr > 2.0 * prev:
            # overshoot: restart from the best iterate with a damped step
            qa = best[1]
            vals, J = _task_map(model, np.concatenate([[z1], qa]), config)
            res = vals - targets
            Ja = J[:, 1:]
            step = 0.5 * np.linalg.solve(Ja, -res)
        qa = qa + step
        prev = nr
    return best[1], best[0]


def solve_ik(model: RobotModel, config: EmbeddingConfig, z1: float, targets,
             seed_qa=None, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    """Damped Newton on the four stance/swing tasks for q2..q5 with q1 fixed.

    Falls back to the closed-form geometric seed if the supplied warm start
    stalls; raises IkFailure when the residual stays above 1e-8.
    """
    targets = np.asarray(targets, dtype=float).reshape(4)
    if seed_qa is not None:
        seed = np.asarray(seed_qa, dtype=float).reshape(4).copy()
        qa, final = _newton_ik(model, config, z1, targets, seed, tol, max_iter)
        if final < 1e-9:
            return qa
    qa, final = _newton_ik(model, config, z1, targets,
                           geometric_seed(model, config, z1, targets),
                           tol, max_iter)
    if final > 1e-8:
        raise IkFailure(f"IK residual {final:.2e} after {max_iter} iterations")
    return qa


# ----------------------------------------------------------------------
# Output map psi
# ----------------------------------------------------------------------


def psi(model: RobotModel, params: HlipParams, policy: StepPolicy,
        config: EmbeddingConfig, ctx: StepContext, z, qd1: float,
        t: float = 0.0, seed_qa=None) -> tuple[np.ndarray, np.ndarray]:
    """Desired actuated positions and velocities (psi1, psi2) at unactuated
    state z.  qd1 enters the task rates (the phase advances with the pivot);
    psi2 is affine in qd1.  t is only used in time phase mode."""
    z = np.asarray(z, dtype=float).reshape(2)
    tau, tau_rate = tau_phase(config, ctx, params, z[0], t, qd1)
    # the step-length rate needs z2dot, which needs the manifold pose; the
    # commanded length itself does not, so split value and rate
    ell = kappa(model, params, policy, config, ctx, z, tau)

    x0 = ctx.x_sw_plus
    targets = np.array([
        x0 + (ell - x0) * _smoothstep(tau),
        config.swing_apex * _bump(tau),
        config.hip_height,
        config.torso_angle,
    ])
    psi1 = solve_ik(model, config, z[0], targets, seed_qa)

    q = np.concatenate([[z[0]], psi1])
    z2dot = -biped.gravity_gradient(model, q)[0]
    ell_rate = _kappa_rate(model, params, policy, config, ctx, z, tau,
                           tau_rate, qd1, z2dot)

    target_rates = np.array([
        (ell - x0) * _smoothstep_rate(tau) * tau_rate + _smoothstep(tau) * ell_rate,
        config.swing_apex * _bump_rate(tau) * tau_rate,
        0.0,
        0.0,
    ])
    _, J = _task_map(model, q, config)
    psi2 = np.linalg.solve(J[:, 1:], target_rates - J[:, 0] * qd1)
    return psi1, psi2


def manifold_residual(etaz: EtaZ, psi_pair) -> tuple[np.ndarray, float]:
    """Tracking output h = eta - psi(z) and its norm."""
    psi1, psi2 = psi_pair
    h = np.concatenate([etaz.eta1 - psi1, etaz.eta2 - psi2])
    return h, float(np.linalg.norm(h))


# ----------------------------------------------------------------------
# Step controller
# ----------------------------------------------------------------------


class HlipStepController:
    """Walking controller: pendulum foot placement through the output map,
    tracked by the configured joint-space law.

    Instances are immutable; all per-step data lives in the StepContext
    produced by begin_step, so evaluations are pure functions of
    (t, state, context).
    """

    def __init__(self, model: RobotModel, params: HlipParams, policy: StepPolicy,
                 embedding: EmbeddingConfig, control: ControllerConfig):
        embedding.validate(model)
        control.validate()
        self.model = model
        self.params = params
        self.policy = policy
        self.embedding = embedding
        self.control = control

    @property
    def t_ssp(self) -> float:
        return self.params.t_ssp

    @property
    def replan_interval(self) -> float:
        if self.embedding.replan_mode == "replan":
            return self.embedding.replan_interval
        return 0.0

    def begin_step(self, x_plus) -> StepContext:
        x = biped.state_vector(x_plus)
        z_plus = phi(self.model, x).z
        r_plus = xi_inv(self.params, self.model, z_plus)
        r_pred = ssp_flow(self.params, r_plus, self.params.t_ssp)
        z1_pred = float(xi(self.params, self.model, r_pred)[0])
        x_sw = float(biped.fk(self.model, x[:5])["swing_foot"][0])
        degenerate = abs(z1_pred - z_plus[0]) < 1e-6
        # with a positive replan interval the reference is frozen between
        # ticks, starting from the post-impact state
        z_ref = z_plus.copy() if self.replan_interval > 0 else None
        return StepContext(z_plus=z_plus, x_sw_plus=x_sw, z1_pred_minus=z1_pred,
                           r_pred_minus=r_pred, use_time_tau=degenerate,
                           z_ref=z_ref)

    def refresh_context(self, ctx: StepContext, x) -> StepContext:
        """Replan tick: pin the step-length reference to the current z."""
        z = phi(self.model, biped.state_vector(x)).z
        return replace(ctx, z_ref=z)

    def _psi(self, etaz: EtaZ, ctx: StepContext, t: float, qd1: float, seed_qa):
        return psi(self.model, self.params, self.policy, self.embedding, ctx,
                   etaz.z, qd1, t=t, seed_qa=seed_qa)

    def torque(self, t: float, x, ctx: StepContext) -> np.ndarray:
        x = biped.state_vector(x)
        etaz = phi(self.model, x)
        qd1 = x[5]
        psi1, psi2 = self._psi(etaz, ctx, t, qd1, seed_qa=etaz.eta1)
        y1 = etaz.eta1 - psi1
        y2 = etaz.eta2 - psi2
        cfg = self.control
        if cfg.mode == "pd":
            return -cfg.kp * y1 - cfg.kd * y2
        if cfg.mode == "io_linearization":
            ydd = -(cfg.kp / cfg.eps**2) * y1 - (cfg.kd / cfg.eps) * y2
            return self._feedback_linearized(t, x, etaz, ctx, psi1, psi2, ydd)
        return self._feedback_linearized(t, x, etaz, ctx, psi1, psi2, np.zeros(4))

    def _feedback_linearized(self, t, x, etaz, ctx, psi1, psi2, ydd_des):
        """Solve for u with etadot2 - psidot2 = ydd_des.

        psidot2 depends on qdd1, which itself depends on u, so the torque
        solves the coupled linear system rather than a plain decoupling.
        """
        model = self.model
        q, qd = x[:5], x[5:]
        D = biped.mass_matrix(model, q)
        H = biped.bias_vector(model, q, qd)
        Dinv = np.linalg.inv(D)
        S = B_ACT.T @ Dinv @ B_ACT
        cvec = B_ACT.T @ Dinv @ H
        g_row = Dinv[0] @ B_ACT
        h0 = float(Dinv[0] @ H)

        z = etaz.z
        qd1 = x[5]
        zdot = unactuated_rates(model, etaz)
        delta = 1e-6
        seed = psi1
        _, p2_fwd = self._psi(_shift(etaz, delta * zdot), ctx, t + delta, qd1, seed)
        _, p2_bwd = self._psi(_shift(etaz, -delta * zdot), ctx, t - delta, qd1, seed)
        v = (p2_fwd - p2_bwd) / (2 * delta)
        # psi2 is affine in qd1; difference of two evaluations is exact
        _, p2_a = self._psi(etaz, ctx, t, qd1 + 1.0, seed)
        w = p2_a - psi2

        A = S - np.outer(w, g_row)
        rhs = ydd_des + cvec + v - w * h0
        try:
            return np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise IkFailure(f"decoupling matrix singular: {exc}") from exc


def _shift(etaz: EtaZ, dz) -> EtaZ:
    return EtaZ(eta1=etaz.eta1, eta2=etaz.eta2, z1=etaz.z1 + dz[0], z2=etaz.z2 + dz[1])


# ----------------------------------------------------------------------
# On-manifold state construction
# ----------------------------------------------------------------------


def embed_state(model: RobotModel, params: HlipParams, policy: StepPolicy,
                config: EmbeddingConfig, ctx: StepContext, z,
                t: float = 0.0) -> FomState:
    """Lift unactuated coordinates z to the full-order state on the tracking
    manifold: eta1 = psi1(z), eta2 = psi2(z, qd1) with qd1 chosen so that the
    momentum coordinate reproduces z2 (a scalar solve, since psi2 is affine
    in qd1)."""
    z = np.asarray(z, dtype=float).reshape(2)
    psi1, p2_zero = psi(model, params, policy, config, ctx, z, 0.0, t=t)
    _, p2_one = psi(model, params, policy, config, ctx, z, 1.0, t=t, seed_qa=psi1)
    slope = p2_one - p2_zero
    q = np.concatenate([[z[0]], psi1])
    D = biped.mass_matrix(model, q)
    qd1 = (z[1] - D[0, 1:] @ p2_zero) / (D[0, 0] + D[0, 1:] @ slope)
    eta2 = p2_zero + slope * qd1
    return FomState(q, np.concatenate([[qd1], eta2]))


def nominal_context(model: RobotModel, params: HlipParams, policy: StepPolicy,
                    config: EmbeddingConfig) -> StepContext:
    """Step context of the nominal periodic gait (post-impact)."""
    r_plus = policy.r_star + np.array([-policy.ell_star, 0.0])
    z_plus = xi(params, model, r_plus)
    r_pred = ssp_flow(params, r_plus, params.t_ssp)
    z1_pred = float(xi(params, model, r_pred)[0])
    degenerate = abs(z1_pred - z_plus[0]) < 1e-6
    return StepContext(z_plus=z_plus, x_sw_plus=-policy.ell_star,
                       z1_pred_minus=z1_pred, r_pred_minus=r_pred,
                       use_time_tau=degenerate)


def nominal_start(model: RobotModel, params: HlipParams, policy: StepPolicy,
                  config: EmbeddingConfig, dz=(0.0, 0.0)) -> FomState:
    """Post-impact full-order state embedding the (optionally perturbed)
    nominal pendulum state."""
    ctx = nominal_context(model, params, policy, config)
    z = ctx.z_plus + np.asarray(dz, dtype=float)
    return embed_state(model, params, policy, config, ctx, z)
