"""Pinned five-link planar biped: kinematics, dynamics and energies.

Joint convention (all angles in radians, counterclockwise positive, x to the
right, z up, stance foot pinned at the origin):

    q1  absolute stance-shin angle from the world vertical
    q2  stance knee, relative (0 = straight leg)
    q3  torso relative to the stance thigh
    q4  swing hip, relative to the torso
    q5  swing knee, relative

At q = 0 the chain is fully extended and vertical with the swing leg folded
down along the stance leg (swing foot at the origin). With these relative
coordinates the four joint torques (stance knee, stance hip, swing hip,
swing knee) enter the dynamics through the constant actuation matrix
B = [0_{1x4}; I_4]; q1 is unactuated.

Every position in the chain is a signed sum of unit link directions
u(a) = (-sin a, cos a) evaluated at cumulative angles a_k = q1 + ... + qk,
which makes mass matrix, Coriolis (Christoffel) and gravity terms available
in closed form from small precomputed coefficient tables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

N_JOINTS = 5
N_ACT = 4

# Actuation matrix: hips and knees actuated, pivot angle q1 unactuated.
B_ACT = np.zeros((N_JOINTS, N_ACT))
B_ACT[1:, :] = np.eye(N_ACT)

# Left annihilator of B_ACT (selects the unactuated row).
N_UNACT = np.array([[1.0, 0.0, 0.0, 0.0, 0.0]])

LINK_NAMES = ("stance_shin", "stance_thigh", "torso", "swing_thigh", "swing_shin")

# Row l gives the joint rates that sum to link l's angular rate.
_ANGULAR_ROWS = np.tril(np.ones((N_JOINTS, N_JOINTS)))


class ModelError(ValueError):
    """Invalid robot parameters."""


@dataclass(frozen=True)
class LinkParams:
    """One rigid link: mass [kg], length [m], COM offset along the link from
    the proximal joint [m], rotational inertia about the COM [kg m^2]."""

    mass: float
    length: float
    com_offset: float
    inertia: float


@dataclass(frozen=True)
class FomState:
    """Full-order state (q, qdot) of the pinned biped."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).reshape(N_JOINTS))
        object.__setattr__(self, "qdot", np.asarray(self.qdot, dtype=float).reshape(N_JOINTS))
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))):
            raise ModelError("non-finite state entries")

    @classmethod
    def from_vector(cls, x) -> "FomState":
        x = np.asarray(x, dtype=float).reshape(2 * N_JOINTS)
        return cls(x[:N_JOINTS], x[N_JOINTS:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot])


def state_vector(x) -> np.ndarray:
    """Coerce a FomState or array-like into a flat (10,) state vector."""
    if isinstance(x, FomState):
        return x.as_vector()
    return np.asarray(x, dtype=float).reshape(2 * N_JOINTS)


@dataclass(frozen=True)
class RobotModel:
    """Kinematic and inertial parameters of the pinned five-link biped.

    Leg symmetry (equal thigh parameters, equal shin parameters) is required
    so that the post-impact leg relabeling is an exact coordinate permutation.
    """

    stance_shin: LinkParams
    stance_thigh: LinkParams
    torso: LinkParams
    swing_thigh: LinkParams
    swing_shin: LinkParams
    gravity: float = 9.81

    def __post_init__(self):
        for name in LINK_NAMES:
            link = getattr(self, name)
            if link.mass <= 0 or link.length <= 0:
                raise ModelError(f"{name}: mass and length must be positive")
            if link.inertia < 0:
                raise ModelError(f"{name}: inertia must be nonnegative")
            if not 0.0 <= link.com_offset <= link.length:
                raise ModelError(f"{name}: com_offset must lie on the link")
        if self.gravity <= 0:
            raise ModelError("gravity must be positive")
        if self.stance_thigh != self.swing_thigh or self.stance_shin != self.swing_shin:
            raise ModelError("leg symmetry violated: thigh/shin pairs must match")

    @property
    def links(self) -> tuple[LinkParams, ...]:
        return tuple(getattr(self, name) for name in LINK_NAMES)

    @property
    def total_mass(self) -> float:
        return sum(l.mass for l in self.links)

    @property
    def leg_length(self) -> float:
        return self.stance_shin.length + self.stance_thigh.length

    # ------------------------------------------------------------------
    # Precomputed coefficient tables.
    #
    # The COM of link l is  p_l = sum_s  c_s * u(a_{k_s})  with signed
    # coefficients c_s (negative for the distally hanging swing links) and
    # cumulative-angle indices k_s in 1..5.  All dynamics quantities reduce
    # to trigonometric sums over pairs of such segments.
    # ------------------------------------------------------------------

    @cached_property
    def _segments(self):
        ls, lt = self.stance_shin.length, self.stance_thigh.length
        segs = [
            [(self.stance_shin.com_offset, 1)],
            [(ls, 1), (self.stance_thigh.com_offset, 2)],
            [(ls, 1), (lt, 2), (self.torso.com_offset, 3)],
            [(ls, 1), (lt, 2), (-self.swing_thigh.com_offset, 4)],
            [(ls, 1), (lt, 2), (-self.swing_thigh.length, 4), (-self.swing_shin.com_offset, 5)],
        ]
        return segs

    @cached_property
    def _tables(self):
        segs = self._segments
        masses = [l.mass for l in self.links]

        # Pair table for D(q) = D_const + sum_p g_p cos(a_{ki_p} - a_{kj_p}) E_p.
        gam, ki, kj, E = [], [], [], []
        for l, seg in enumerate(segs):
            for (ci, a) in seg:
                for (cj, b) in seg:
                    gam.append(masses[l] * ci * cj)
                    ki.append(a)
                    kj.append(b)
                    e = np.zeros((N_JOINTS, N_JOINTS))
                    e[:a, :b] = 1.0
                    E.append(e)
        gam = np.array(gam)
        ki = np.array(ki)
        kj = np.array(kj)
        E = np.array(E)
        # d(a_ki - a_kj)/dq_m indicator, shape (P, 5).
        m_idx = np.arange(1, N_JOINTS + 1)
        S = (m_idx[None, :] <= ki[:, None]).astype(float) - (
            m_idx[None, :] <= kj[:, None]
        ).astype(float)

        d_const = np.zeros((N_JOINTS, N_JOINTS))
        for l, link in enumerate(self.links):
            w = _ANGULAR_ROWS[l]
            d_const += link.inertia * np.outer(w, w)

        # Gravity table: U = g * sum_t beta_t cos(a_{kg_t}).
        beta, kg = [], []
        for l, seg in enumerate(segs):
            for (c, a) in seg:
                beta.append(masses[l] * c)
                kg.append(a)
        beta = np.array(beta)
        kg = np.array(kg)
        gind = (m_idx[None, :] <= kg[:, None]).astype(float)

        return {
            "gam": gam, "ki": ki - 1, "kj": kj - 1, "E": E, "S": S,
            "d_const": d_const, "beta": beta, "kg": kg - 1, "gind": gind,
        }

    # ------------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "links": [
                {
                    "mass": l.mass,
                    "length": l.length,
                    "com_offset": l.com_offset,
                    "inertia": l.inertia,
                }
                for l in self.links
            ],
            "gravity": self.gravity,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "RobotModel":
        try:
            links = data["links"]
            gravity = float(data.get("gravity", 9.81))
            if len(links) != N_JOINTS:
                raise ModelError(f"expected 5 links, got {len(links)}")
            parsed = [
                LinkParams(
                    mass=float(l["mass"]),
                    length=float(l["length"]),
                    com_offset=float(l["com_offset"]),
                    inertia=float(l["inertia"]),
                )
                for l in links
            ]
        except (KeyError, TypeError) as exc:
            raise ModelError(f"malformed robot document: {exc}") from exc
        return cls(*parsed, gravity=gravity)

    @classmethod
    def from_json(cls, path) -> "RobotModel":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))


def default_model() -> RobotModel:
    """Reference parameter set: 10 kg / 0.5 m torso, 5 kg / 0.4 m thighs and
    shins, COM at link midpoints, slender-rod inertia m l^2 / 12."""

    def rod(m, l):
        return LinkParams(mass=m, length=l, com_offset=l / 2, inertia=m * l * l / 12)

    thigh = rod(5.0, 0.4)
    shin = rod(5.0, 0.4)
    return RobotModel(
        stance_shin=shin,
        stance_thigh=thigh,
        torso=rod(10.0, 0.5),
        swing_thigh=thigh,
        swing_shin=shin,
        gravity=9.81,
    )


# ----------------------------------------------------------------------
# Dynamics
# ----------------------------------------------------------------------


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    """Positive-definite mass-inertia matrix D(q).

    D depends only on the shape coordinates q2..q5; q1 is cyclic for the
    pinned chain.
    """
    t = model._tables
    a = np.cumsum(np.asarray(q, dtype=float))
    diff = a[t["ki"]] - a[t["kj"]]
    D = t["d_const"] + np.einsum("p,pij->ij", t["gam"] * np.cos(diff), t["E"])
    return D


def mass_matrix_gradient(model: RobotModel, q) -> np.ndarray:
    """dD(q), shape (5, 5, 5) with dD[m] = dD/dq_m."""
    t = model._tables
    a = np.cumsum(np.asarray(q, dtype=float))
    diff = a[t["ki"]] - a[t["kj"]]
    w = -t["gam"] * np.sin(diff)
    return np.einsum("pm,p,pij->mij", t["S"], w, t["E"])


def coriolis_matrix(model: RobotModel, q, qdot) -> np.ndarray:
    """C(q, qdot) built from the Christoffel symbols of D, so that
    Ddot - 2C is skew-symmetric."""
    qd = np.asarray(qdot, dtype=float)
    dD = mass_matrix_gradient(model, q)
    term1 = np.einsum("kij,k->ij", dD, qd)
    term2 = np.einsum("jik,k->ij", dD, qd)
    term3 = np.einsum("ijk,k->ij", dD, qd)
    return 0.5 * (term1 + term2 - term3)


def potential_energy(model: RobotModel, q) -> float:
    t = model._tables
    a = np.cumsum(np.asarray(q, dtype=float))
    return model.gravity * float(np.dot(t["beta"], np.cos(a[t["kg"]])))


def gravity_gradient(model: RobotModel, q) -> np.ndarray:
    """dU/dq for the gravitational potential."""
    t = model._tables
    a = np.cumsum(np.asarray(q, dtype=float))
    return -model.gravity * np.einsum("t,tj->j", t["beta"] * np.sin(a[t["kg"]]), t["gind"])


def bias_vector(model: RobotModel, q, qdot) -> np.ndarray:
    """H(q, qdot) = C(q, qdot) qdot + dU/dq (Coriolis, centrifugal, gravity).

    The quadratic-velocity product is contracted directly from dD; the two
    symmetric Christoffel terms coincide after contraction with qdot twice.
    """
    qd = np.asarray(qdot, dtype=float)
    dD = mass_matrix_gradient(model, q)
    quad = np.einsum("kij,k,j->i", dD, qd, qd) - 0.5 * np.einsum("ijk,j,k->i", dD, qd, qd)
    return quad + gravity_gradient(model, q)


def forward_dynamics(model: RobotModel, q, qdot, u) -> np.ndarray:
    """qddot from D qddot + H = B u."""
    D = mass_matrix(model, q)
    H = bias_vector(model, q, qdot)
    return np.linalg.solve(D, B_ACT @ np.asarray(u, dtype=float) - H)


def kinetic_energy(model: RobotModel, q, qdot) -> float:
    qd = np.asarray(qdot, dtype=float)
    return 0.5 * float(qd @ mass_matrix(model, q) @ qd)


def energies(model: RobotModel, q, qdot) -> tuple[float, float]:
    """(kinetic, potential) energy in joules."""
    return kinetic_energy(model, q, qdot), potential_energy(model, q)


# ----------------------------------------------------------------------
# Kinematics
# ----------------------------------------------------------------------


def _unit(a):
    """Link direction for cumulative angle a: vertical at a = 0, CCW positive."""
    return np.array([-np.sin(a), np.cos(a)])


def fk(model: RobotModel, q) -> dict[str, np.ndarray]:
    """World-frame planar points of the chain, pivot at the origin.

    Returns pivot, stance_knee, hip, torso_tip, swing_knee, swing_foot and
    the whole-robot com, each as an (x, z) array in meters.
    """
    a = np.cumsum(np.asarray(q, dtype=float))
    sa, ca = np.sin(a), np.cos(a)
    ls, lt = model.stance_shin.length, model.stance_thigh.length
    ltor = model.torso.length
    stance_knee = ls * np.array([-sa[0], ca[0]])
    hip = stance_knee + lt * np.array([-sa[1], ca[1]])
    torso_tip = hip + ltor * np.array([-sa[2], ca[2]])
    swing_knee = hip + model.swing_thigh.length * np.array([sa[3], -ca[3]])
    swing_foot = swing_knee + model.swing_shin.length * np.array([sa[4], -ca[4]])

    t = model._tables
    beta = t["beta"]
    kg = t["kg"]
    com = np.array([-(beta * sa[kg]).sum(), (beta * ca[kg]).sum()]) / model.total_mass

    return {
        "pivot": np.zeros(2),
        "stance_knee": stance_knee,
        "hip": hip,
        "torso_tip": torso_tip,
        "swing_knee": swing_knee,
        "swing_foot": swing_foot,
        "com": com,
    }


def _segment_jacobian(segments, a) -> np.ndarray:
    """Jacobian of sum_s c_s u(a_{k_s}) with respect to q, shape (2, 5)."""
    J = np.zeros((2, N_JOINTS))
    for c, k in segments:
        du = c * np.array([-np.cos(a[k - 1]), -np.sin(a[k - 1])])
        J[:, :k] += du[:, None]
    return J


def swing_foot_jacobian(model: RobotModel, q) -> np.ndarray:
    """d(swing foot position)/dq, shape (2, 5)."""
    a = np.cumsum(np.asarray(q, dtype=float))
    ls, lt = model.stance_shin.length, model.stance_thigh.length
    segs = [(ls, 1), (lt, 2), (-model.swing_thigh.length, 4), (-model.swing_shin.length, 5)]
    return _segment_jacobian(segs, a)


def hip_jacobian(model: RobotModel, q) -> np.ndarray:
    a = np.cumsum(np.asarray(q, dtype=float))
    segs = [(model.stance_shin.length, 1), (model.stance_thigh.length, 2)]
    return _segment_jacobian(segs, a)


def com_jacobian(model: RobotModel, q) -> np.ndarray:
    """d(robot COM)/dq, shape (2, 5)."""
    a = np.cumsum(np.asarray(q, dtype=float))
    J = np.zeros((2, N_JOINTS))
    for seg, link in zip(model._segments, model.links):
        J += link.mass * _segment_jacobian(seg, a)
    return J / model.total_mass


def extended_mass_matrix(model: RobotModel, q) -> np.ndarray:
    """Mass matrix of the unpinned chain with base translation appended.

    Coordinates (q, px, pz) where (px, pz) is the stance-foot position; used
    by the impact solver, where the pre-impact pivot must be free to release.
    """
    D = mass_matrix(model, q)
    Jm = model.total_mass * com_jacobian(model, q)
    M = model.total_mass
    De = np.zeros((N_JOINTS + 2, N_JOINTS + 2))
    De[:N_JOINTS, :N_JOINTS] = D
    De[:N_JOINTS, N_JOINTS:] = Jm.T
    De[N_JOINTS:, :N_JOINTS] = Jm
    De[N_JOINTS:, N_JOINTS:] = M * np.eye(2)
    return De
