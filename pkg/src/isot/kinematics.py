"""Serial-arm forward kinematics, Jacobians, and the quaternion Cartesian task error.

The arm is described by standard DH rows (a, alpha, d, theta0), all joints
revolute. Poses carry a unit quaternion (scalar-first, canonicalized to a
non-negative scalar part) so orientation errors stay free of Euler-angle
singularities.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml

# Selector keeping the first two orientation-error rows; the third rotational
# degree of freedom is deliberately left unconstrained by the Cartesian task.
GAMMA = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])

CHAIN_SCHEMA_VERSION = "chain.v1"


def skew(v: np.ndarray) -> np.ndarray:
    """3x3 skew-symmetric matrix S(v) with S(v) @ w == cross(v, w)."""
    x, y, z = np.asarray(v, dtype=float).ravel()
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of scalar-first quaternions."""
    w1, v1 = a[0], a[1:]
    w2, v2 = b[0], b[1:]
    return np.concatenate([[w1 * w2 - v1 @ v2], w1 * v2 + w2 * v1 + np.cross(v1, v2)])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to scalar-first unit quaternion (Shepperd's method)."""
    m00, m01, m02 = R[0]
    m10, m11, m12 = R[1]
    m20, m21, m22 = R[2]
    tr = m00 + m11 + m22
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s])
    elif m00 > m11 and m00 > m22:
        s = np.sqrt(1.0 + m00 - m11 - m22) * 2.0
        q = np.array([(m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s])
    elif m11 > m22:
        s = np.sqrt(1.0 + m11 - m00 - m22) * 2.0
        q = np.array([(m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s])
    else:
        s = np.sqrt(1.0 + m22 - m00 - m11) * 2.0
        q = np.array([(m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s])
    return q / np.linalg.norm(q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def canonicalize_quat(q: np.ndarray) -> np.ndarray:
    """Normalize and resolve the q ~ -q ambiguity (scalar part >= 0)."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    if q[0] < 0.0 or (q[0] == 0.0 and _first_nonzero_negative(q[1:])):
        q = -q
    return q


def _first_nonzero_negative(v: np.ndarray) -> bool:
    for x in v:
        if x != 0.0:
            return x < 0.0
    return False


@dataclass(eq=False)
class Pose:
    """Position plus unit quaternion (scalar-first, scalar >= 0)."""

    position: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        if abs(q @ q - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {np.sqrt(q @ q):.12f} not unit")
        self.quaternion = canonicalize_quat(q)

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        return cls(T[:3, 3].copy(), quat_from_matrix(T[:3, :3]))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = quat_to_matrix(self.quaternion)
        T[:3, 3] = self.position
        return T

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quaternion)

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.quaternion.copy())


@dataclass(eq=False)
class KinematicChain:
    """Revolute serial arm from standard DH rows with joint limits.

    dh rows are (a, alpha, d, theta0) in meters/radians; q_lower < q_upper
    elementwise, reach > 0.
    """

    name: str
    dh: np.ndarray
    q_lower: np.ndarray
    q_upper: np.ndarray
    reach: float

    def __post_init__(self):
        self.dh = np.asarray(self.dh, dtype=float).reshape(-1, 4)
        self.q_lower = np.asarray(self.q_lower, dtype=float).ravel()
        self.q_upper = np.asarray(self.q_upper, dtype=float).ravel()
        n = self.dh.shape[0]
        if self.q_lower.shape != (n,) or self.q_upper.shape != (n,):
            raise ValueError("joint limit arrays must match DH row count")
        if not np.all(self.q_lower < self.q_upper):
            raise ValueError("q_lower must be < q_upper elementwise")
        if self.reach <= 0.0:
            raise ValueError("reach must be positive")

    @property
    def n(self) -> int:
        return self.dh.shape[0]

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.q_upper + self.q_lower)

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.q_lower, self.q_upper)

    @classmethod
    def from_dict(cls, cfg: dict) -> "KinematicChain":
        if cfg.get("schema", CHAIN_SCHEMA_VERSION) != CHAIN_SCHEMA_VERSION:
            raise ValueError(f"unsupported chain schema {cfg.get('schema')!r}")
        dh = np.array([[row["a"], row["alpha"], row["d"], row["theta0"]] for row in cfg["dh"]])
        return cls(
            name=cfg.get("name", "unnamed"),
            dh=dh,
            q_lower=np.array(cfg["q_lower"], dtype=float),
            q_upper=np.array(cfg["q_upper"], dtype=float),
            reach=float(cfg["reach"]),
        )

    @classmethod
    def from_config(cls, path) -> "KinematicChain":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f))

    @classmethod
    def default(cls) -> "KinematicChain":
        data = resources.files("isot.data.chains").joinpath("default_7dof.yaml").read_text()
        return cls.from_dict(yaml.safe_load(data))


@dataclass(eq=False)
class JointState:
    """Joint positions/velocities at a timestamp."""

    q: np.ndarray
    qdot: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.qdot = np.asarray(self.qdot, dtype=float).ravel()
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))):
            raise ValueError("joint state entries must be finite")


def dh_transform(a: float, alpha: float, d: float, theta: float) -> np.ndarray:
    """Homogeneous transform of one standard-DH joint."""
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def joint_transforms(chain: KinematicChain, q: np.ndarray) -> list[np.ndarray]:
    """Cumulative base-frame transforms [T_0, T_0@T_1, ...]; last is the EE."""
    q = _check_q(chain, q)
    Ts = []
    T = np.eye(4)
    for (a, alpha, d, theta0), qi in zip(chain.dh, q):
        T = T @ dh_transform(a, alpha, d, theta0 + qi)
        Ts.append(T)
    return Ts


def forward_kinematics(chain: KinematicChain, q: np.ndarray) -> Pose:
    """End-effector pose in the base frame."""
    return Pose.from_matrix(joint_transforms(chain, q)[-1])


def geometric_jacobian(
    chain: KinematicChain, q: np.ndarray, transforms: list[np.ndarray] | None = None
) -> np.ndarray:
    """6xn geometric Jacobian: rows 0-2 linear (J_p), rows 3-5 angular (J_o).

    Pass precomputed joint_transforms to avoid recomputing them.
    """
    q = _check_q(chain, q)
    Ts = transforms if transforms is not None else joint_transforms(chain, q)
    n = chain.n
    p_ee = Ts[-1][:3, 3]
    axes = np.empty((n, 3))
    origins = np.empty((n, 3))
    axes[0] = (0.0, 0.0, 1.0)
    origins[0] = 0.0
    for i in range(1, n):
        axes[i] = Ts[i - 1][:3, 2]
        origins[i] = Ts[i - 1][:3, 3]
    r = p_ee - origins
    J = np.empty((6, n))
    J[0] = axes[:, 1] * r[:, 2] - axes[:, 2] * r[:, 1]
    J[1] = axes[:, 2] * r[:, 0] - axes[:, 0] * r[:, 2]
    J[2] = axes[:, 0] * r[:, 1] - axes[:, 1] * r[:, 0]
    J[3:] = axes.T
    return J


def analytic_cartesian_jacobian(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    """5xn Cartesian-task Jacobian: J_p stacked over GAMMA @ J_o."""
    J = geometric_jacobian(chain, q)
    return np.vstack([J[:3], GAMMA @ J[3:]])


def cartesian_task_error(current: Pose, desired: Pose) -> np.ndarray:
    """5-vector Cartesian task error.

    Position rows are the plain difference desired - current. Orientation
    rows are the first two components of the base-frame error-quaternion
    vector part, psi*zeta_d - psi_d*zeta - S(zeta_d) @ zeta. The desired
    quaternion is hemisphere-corrected against the current one so the
    error always represents the geodesic rotation; without this, gaps
    beyond pi make the closed loop non-contracting.
    """
    _check_unit(current.quaternion)
    _check_unit(desired.quaternion)
    psi, zeta = current.quaternion[0], current.quaternion[1:]
    psi_d, zeta_d = desired.quaternion[0], desired.quaternion[1:]
    if psi * psi_d + zeta @ zeta_d < 0.0:
        psi_d, zeta_d = -psi_d, -zeta_d
    # S(zeta_d) @ zeta written out elementwise: plain multiplies subtract to
    # an exact zero for coincident poses (BLAS/FMA kernels would not).
    cross = np.array([
        zeta_d[1] * zeta[2] - zeta_d[2] * zeta[1],
        zeta_d[2] * zeta[0] - zeta_d[0] * zeta[2],
        zeta_d[0] * zeta[1] - zeta_d[1] * zeta[0],
    ])
    e_o = psi * zeta_d - psi_d * zeta - cross
    return np.concatenate([desired.position - current.position, e_o[:2]])


def orientation_error_full(current: Pose, desired: Pose) -> np.ndarray:
    """Full 3-vector quaternion orientation error (before the row selector)."""
    psi, zeta = current.quaternion[0], current.quaternion[1:]
    psi_d, zeta_d = desired.quaternion[0], desired.quaternion[1:]
    return psi * zeta_d - psi_d * zeta - skew(zeta_d) @ zeta


def _check_q(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float).ravel()
    if q.shape != (chain.n,):
        raise ValueError(f"expected {chain.n} joint values, got {q.shape}")
    if not np.all(np.isfinite(q)):
        raise ValueError("joint values must be finite")
    return q


def _check_unit(q: np.ndarray) -> None:
    if abs(q @ q - 1.0) > 1e-9:
        raise ValueError("orientation quaternion must be unit")
