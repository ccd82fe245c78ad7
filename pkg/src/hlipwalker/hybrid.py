"""Event-driven execution of the closed-loop walker: guard detection,
plastic impact with leg relabeling, single-step integration with event
bisection, the step-to-step return map, and multi-step walks.

A step integrates the smooth closed-loop dynamics from a post-impact state
until the swing foot strikes the ground.  Touchdown is accepted only when
the foot is moving downward, lands ahead of the stance foot by the
configured margin, and the step phase has passed tau_min; rejected
crossings (scuffs) are integrated through.  The impact solves the
momentum-transfer equations of the unpinned chain with the impulse acting
at the landing foot (the old pivot releases), which conserves angular
momentum about the new pivot, then relabels swing and stance legs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import biped, embedding
from .biped import B_ACT, RobotModel, state_vector


class FallOrStall(RuntimeError):
    """No valid impact occurred before the step timeout."""


class Divergence(RuntimeError):
    """State left the configured bounds during integration."""


class SingularImpact(RuntimeError):
    """Impact momentum-transfer system was singular."""


# Post-impact leg relabeling: cumulative link angles reverse order
# (a1..a5 -> a5..a1), which in joint coordinates is this constant matrix.
RELABEL = np.array([
    [1.0, 1.0, 1.0, 1.0, 1.0],
    [0.0, 0.0, 0.0, 0.0, -1.0],
    [0.0, 0.0, 0.0, -1.0, 0.0],
    [0.0, 0.0, -1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0, 0.0, 0.0],
])


@dataclass(frozen=True)
class Guard:
    """Touchdown acceptance: minimum prior foot clearance [m], minimum step
    phase in [0, 1), and forward placement margin [m]."""

    clearance: float = 0.0
    tau_min: float = 0.5
    margin: float = 0.02

    def __post_init__(self):
        if self.clearance < 0 or self.margin < 0 or not 0 <= self.tau_min < 1:
            raise ValueError("guard thresholds out of range")


@dataclass(frozen=True)
class IntegratorConfig:
    """Continuous-phase integration settings.  The adaptive path is an
    embedded Runge-Kutta 5(4); fixed_step selects a deterministic classic
    RK4 with bisected event times for regression use."""

    rtol: float = 1e-9
    atol: float = 1e-11
    t_max: float = 2.0
    fixed_step: bool = False
    dt: float = 5e-4
    record_dt: float = 2e-3
    divergence_bound: float = 1e3
    method: str = "DOP853"

    def __post_init__(self):
        if min(self.rtol, self.atol, self.t_max, self.dt, self.record_dt) <= 0:
            raise ValueError("integrator tolerances and steps must be positive")


@dataclass
class StepTrace:
    """One continuous step: samples, boundary states and duration."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    x_plus: np.ndarray
    x_minus: np.ndarray
    duration: float

    def __post_init__(self):
        if self.t.size >= 2 and not np.all(np.diff(self.t) > 0):
            raise ValueError("sample times must be strictly increasing")
        if self.duration <= 0:
            raise ValueError("step duration must be positive")


@dataclass
class StepRecord:
    """Discrete per-step data of a walk."""

    index: int
    t_start: float
    duration: float
    step_length: float
    ell_cmd: float
    z_plus: np.ndarray
    z_minus: np.ndarray
    stance_x: float
    invariance_residual: float


@dataclass
class WalkTrace:
    """Chained steps with world bookkeeping; status is "completed" or the
    failure kind that ended the walk early."""

    steps: list[StepRecord] = field(default_factory=list)
    traces: list[StepTrace] = field(default_factory=list)
    status: str = "completed"
    failure: str = ""
    x_final: np.ndarray | None = None

    @property
    def n_completed(self) -> int:
        return len(self.steps)

    def mean_velocity(self, last: int | None = None) -> float:
        steps = self.steps[-last:] if last else self.steps
        if not steps:
            return 0.0
        total_t = sum(s.duration for s in steps)
        total_x = sum(s.step_length for s in steps)
        return total_x / total_t


def guard_value(model: RobotModel, x) -> float:
    """Swing-foot height; the switching surface is its zero level."""
    x = state_vector(x)
    return float(biped.fk(model, x[:5])["swing_foot"][1])


def _impact_velocity(model: RobotModel, q, qd):
    """Velocity after plastic impact at the swing foot, before relabeling.

    Solves [De -Je^T; Je 0] [qd+; impulse] = [De qd-; 0] in the unpinned
    coordinates (q, base), with the pre-impact base at rest and the impulse
    acting only at the landing foot.
    """
    De = biped.extended_mass_matrix(model, q)
    Je = np.hstack([biped.swing_foot_jacobian(model, q), np.eye(2)])
    n = 7
    kkt = np.zeros((n + 2, n + 2))
    kkt[:n, :n] = De
    kkt[:n, n:] = -Je.T
    kkt[n:, :n] = Je
    rhs = np.zeros(n + 2)
    qd_ext = np.concatenate([qd, [0.0, 0.0]])
    rhs[:n] = De @ qd_ext
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularImpact(str(exc)) from exc
    if not np.all(np.isfinite(sol)):
        raise SingularImpact("non-finite impact solution")
    return sol[:5], sol[n:]


def impact_map(model: RobotModel, x_minus) -> np.ndarray:
    """Reset map: momentum transfer at the landing foot, then relabel legs so
    the new pivot is the impact point.  The configuration is unchanged in the
    world frame; only its description changes."""
    x = state_vector(x_minus)
    q, qd = x[:5], x[5:]
    qd_mid, _ = _impact_velocity(model, q, qd)
    return np.concatenate([RELABEL @ q, RELABEL @ qd_mid])


class ZeroController:
    """No actuation; used for passive-dynamics runs."""

    t_ssp = 1.0

    def begin_step(self, x_plus):
        return None

    def torque(self, t, x, ctx):
        return np.zeros(4)


def _make_rhs(model, controller, ctx):
    def rhs(t, x):
        q, qd = x[:5], x[5:]
        u = controller.torque(t, x, ctx)
        D = biped.mass_matrix(model, q)
        H = biped.bias_vector(model, q, qd)
        qdd = np.linalg.solve(D, B_ACT @ u - H)
        return np.concatenate([qd, qdd])

    return rhs


def _rk4_step(rhs, t, x, h):
    k1 = rhs(t, x)
    k2 = rhs(t + h / 2, x + h / 2 * k1)
    k3 = rhs(t + h / 2, x + h / 2 * k2)
    k4 = rhs(t + h, x + h * k3)
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_flow(model: RobotModel, controller, x0, duration: float,
                   integ: IntegratorConfig = IntegratorConfig(), ctx=None,
                   record_dt: float | None = None):
    """Integrate the closed-loop continuous dynamics for a fixed duration
    (no guard).  Returns (t, x, u) sample arrays."""
    x0 = state_vector(x0)
    rhs = _make_rhs(model, controller, ctx)
    ts = np.arange(0.0, duration, record_dt or integ.record_dt)
    ts = np.append(ts, duration)
    if integ.fixed_step:
        out = [x0]
        t, x = 0.0, x0
        for tn in ts[1:]:
            while t < tn - 1e-12:
                h = min(integ.dt, tn - t)
                x = _rk4_step(rhs, t, x, h)
                t += h
            out.append(x)
        xs = np.array(out)
    else:
        sol = solve_ivp(rhs, (0.0, duration), x0, method=integ.method,
                        rtol=integ.rtol, atol=integ.atol, dense_output=True,
                        max_step=0.05)
        if not sol.success:
            raise Divergence(sol.message)
        xs = sol.sol(ts).T
    us = np.array([controller.torque(t, x, ctx) for t, x in zip(ts, xs)])
    return ts, xs, us


def _accept_event(model, guard, t_ev, x_ev, t_ssp, max_height):
    q, qd = x_ev[:5], x_ev[5:]
    pts = biped.fk(model, q)
    vz = float(biped.swing_foot_jacobian(model, q)[1] @ qd)
    phase = t_ev / t_ssp
    return (
        pts["swing_foot"][0] > guard.margin
        and vz < 0.0
        and phase >= guard.tau_min
        and max_height >= guard.clearance
    )


def integrate_step(model: RobotModel, controller, x_plus, ctx=None,
                   guard: Guard = Guard(),
                   integ: IntegratorConfig = IntegratorConfig()) -> StepTrace:
    """Integrate one step from a post-impact state to the next accepted
    touchdown, bisecting the event time.  Raises FallOrStall if no valid
    impact occurs within t_max and Divergence if the state blows up."""
    x0 = state_vector(x_plus)
    if ctx is None:
        ctx = controller.begin_step(x0)
    rhs = _make_rhs(model, controller, ctx)
    tick = float(getattr(controller, "replan_interval", 0.0))
    next_tick = tick if tick > 0 else np.inf

    samples_t, samples_x = [0.0], [x0]
    max_height = guard_value(model, x0)
    t0, x = 0.0, x0
    rejections = 0
    while True:
        t_end = min(integ.t_max, next_tick)
        n_before = len(samples_x)
        advance = _advance_fixed if integ.fixed_step else _advance_adaptive
        t_ev, x_ev, reached_end = advance(model, rhs, t0, x, integ,
                                          samples_t, samples_x, t_end)
        for s in samples_x[n_before:]:
            max_height = max(max_height, guard_value(model, s))
        if np.linalg.norm(x_ev[5:]) > integ.divergence_bound:
            raise Divergence(f"|qd| exceeded bound at t = {t_ev:.3f}")
        if reached_end:
            if t_end >= integ.t_max:
                raise FallOrStall(f"no touchdown within t_max = {integ.t_max} s")
            ctx = controller.refresh_context(ctx, x_ev)
            rhs = _make_rhs(model, controller, ctx)
            t0, x = t_ev, x_ev
            next_tick += tick
            continue
        max_height = max(max_height, guard_value(model, x_ev))
        if _accept_event(model, guard, t_ev, x_ev, controller.t_ssp, max_height):
            break
        rejections += 1
        if rejections > 200:
            raise FallOrStall("guard chatter: touchdown repeatedly rejected")
        # integrate a hair past the rejected crossing and continue
        x = _rk4_step(rhs, t_ev, x_ev, 1e-7)
        t0 = t_ev + 1e-7

    if samples_t[-1] < t_ev - 1e-12:
        samples_t.append(t_ev)
        samples_x.append(x_ev)
    ts = np.array(samples_t)
    xs = np.array(samples_x)
    us = np.array([controller.torque(t, s, ctx) for t, s in zip(ts, xs)])
    return StepTrace(t=ts, x=xs, u=us, x_plus=x0, x_minus=x_ev, duration=float(t_ev))


def _advance_adaptive(model, rhs, t0, x, integ, samples_t, samples_x, t_end):
    """solve_ivp until the next downward guard crossing or t_end.
    Returns (t_event, x_event, reached_end)."""

    def event(t, y):
        return guard_value(model, y)

    event.terminal = True
    event.direction = -1

    sol = solve_ivp(rhs, (t0, t_end), x, method=integ.method, rtol=integ.rtol,
                    atol=integ.atol, dense_output=True, events=event,
                    max_step=0.05)
    if not sol.success:
        raise Divergence(sol.message)
    t_last = sol.t[-1]
    grid = np.arange(samples_t[-1] + integ.record_dt, t_last, integ.record_dt)
    for tg in grid:
        samples_t.append(tg)
        samples_x.append(sol.sol(tg))
    if sol.status == 1:
        return float(sol.t_events[0][0]), sol.y_events[0][0], False
    return t_last, sol.y[:, -1], True


def _advance_fixed(model, rhs, t0, x, integ, samples_t, samples_x, t_end):
    """Fixed-step RK4 with deterministic event bisection."""
    t = t0
    g_prev = guard_value(model, x)
    next_record = samples_t[-1] + integ.record_dt
    while t < t_end - 1e-12:
        h = min(integ.dt, t_end - t)
        x_new = _rk4_step(rhs, t, x, h)
        g_new = guard_value(model, x_new)
        if g_prev > 0.0 and g_new <= 0.0:
            lo, hi = 0.0, h
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                x_mid = _rk4_step(rhs, t, x, mid)
                if guard_value(model, x_mid) > 0.0:
                    lo = mid
                else:
                    hi = mid
            t_ev = t + hi
            x_ev = _rk4_step(rhs, t, x, hi)
            return t_ev, x_ev, False
        t += h
        x, g_prev = x_new, g_new
        if t >= next_record - 1e-12:
            samples_t.append(t)
            samples_x.append(x)
            next_record += integ.record_dt
    return t, x, True


def poincare(model: RobotModel, controller, x_section,
             guard: Guard = Guard(),
             integ: IntegratorConfig = IntegratorConfig(),
             return_trace: bool = False):
    """Step-to-step return map on the touchdown section: apply the impact
    map, then integrate to the next touchdown."""
    x_plus = impact_map(model, x_section)
    trace = integrate_step(model, controller, x_plus, guard=guard, integ=integ)
    return trace if return_trace else trace.x_minus


def discrete_invariance_residual(model: RobotModel, controller, x_minus,
                                 ctx_end) -> float:
    """Mismatch between resetting the on-manifold pre-impact point and the
    output map of the reset unactuated state.  Measured, not assumed zero;
    its effect is part of the step-to-step disturbance.  ctx_end is the
    context of the step that is ending."""
    from .embedding import embed_state, manifold_residual, phi, psi

    x_minus = state_vector(x_minus)
    z_minus = phi(model, x_minus).z
    x_m = embed_state(model, controller.params, controller.policy,
                      controller.embedding, ctx_end, z_minus,
                      t=controller.t_ssp)
    x_plus = impact_map(model, x_m)
    ctx_new = controller.begin_step(x_plus)
    ez = phi(model, x_plus)
    pair = psi(model, controller.params, controller.policy,
               controller.embedding, ctx_new, ez.z, qd1=x_plus[5])
    _, norm = manifold_residual(ez, pair)
    return norm


def simulate_walk(model: RobotModel, controller, x0, n_steps: int,
                  guard: Guard = Guard(),
                  integ: IntegratorConfig = IntegratorConfig(),
                  start_on_section: bool = False,
                  record_invariance: bool = True) -> WalkTrace:
    """Chain n_steps return-map iterations, keeping continuous traces and
    per-step discrete records.  Ends early with a partial trace when the
    walker falls, stalls or diverges."""
    from .embedding import phi

    x = state_vector(x0)
    walk = WalkTrace(x_final=x.copy())
    if n_steps == 0:
        return walk
    if start_on_section:
        x = impact_map(model, x)
    t_world = 0.0
    stance_x = 0.0
    for k in range(n_steps):
        ctx = controller.begin_step(x)
        try:
            trace = integrate_step(model, controller, x, ctx=ctx,
                                   guard=guard, integ=integ)
        except (FallOrStall, Divergence, embedding.IkFailure) as exc:
            walk.status = type(exc).__name__
            walk.failure = str(exc)
            break
        x_minus = trace.x_minus
        z_plus = phi(model, trace.x_plus).z
        z_minus = phi(model, x_minus).z
        tau_end, _ = embedding.tau_phase(controller.embedding, ctx,
                                         controller.params, z_minus[0],
                                         trace.duration)
        ell_cmd = embedding.kappa(model, controller.params, controller.policy,
                                  controller.embedding, ctx, z_minus, tau_end)
        step_len = float(biped.fk(model, x_minus[:5])["swing_foot"][0])
        res = np.nan
        if record_invariance:
            try:
                res = discrete_invariance_residual(model, controller, x_minus, ctx)
            except embedding.IkFailure:
                pass
        walk.steps.append(StepRecord(
            index=k, t_start=t_world, duration=trace.duration,
            step_length=step_len, ell_cmd=ell_cmd, z_plus=z_plus,
            z_minus=z_minus, stance_x=stance_x, invariance_residual=res))
        walk.traces.append(trace)
        t_world += trace.duration
        stance_x += step_len
        x = impact_map(model, x_minus)
        walk.x_final = x.copy()
    return walk
