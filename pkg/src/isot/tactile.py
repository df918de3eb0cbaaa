"""Tactile sensing: taxel interpolation, force mapping, slip detection, grip control.

Each jaw carries a 4x4 taxel grid of z-displacements (mm). A bicubic
spline turns the grid into a continuous field whose mean value and mean
gradient give the 3D deformation vector (D_x, D_y, D_z). A small
feedforward network maps deformation to contact force; a friction-cone
ratio test decides grasp stability.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import RectBivariateSpline

TAXEL_GRID = 4
SENSOR_RATE_HZ = 115200.0
MAPPER_SCHEMA_VERSION = "mapper.v1"

# Taxel grid coordinates in pitch units; the field is defined over [0, 3]^2.
_KNOTS = np.arange(TAXEL_GRID, dtype=float)
_GAUSS_X, _GAUSS_W = leggauss(4)


class TrainingFailedError(RuntimeError):
    pass


@dataclass(eq=False)
class TactileFrame:
    timestamp: float
    taxels: np.ndarray
    sensor_id: str = "left_jaw"

    def __post_init__(self):
        self.taxels = np.asarray(self.taxels, dtype=float)
        if self.taxels.shape != (TAXEL_GRID, TAXEL_GRID):
            raise ValueError(f"taxel grid must be {TAXEL_GRID}x{TAXEL_GRID}")
        if not np.all(np.isfinite(self.taxels)):
            raise ValueError("taxel values must be finite")
        if self.sensor_id not in ("left_jaw", "right_jaw"):
            raise ValueError(f"unknown sensor id {self.sensor_id!r}")

    @property
    def raw_sample_index(self) -> int:
        """Nominal raw-sample count at this frame's timestamp (decimation)."""
        return int(round(self.timestamp * SENSOR_RATE_HZ))


@dataclass(frozen=True)
class DeformationVector:
    d_x: float
    d_y: float
    d_z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.d_x, self.d_y, self.d_z])

    @classmethod
    def from_array(cls, v) -> "DeformationVector":
        v = np.asarray(v, dtype=float).ravel()
        return cls(float(v[0]), float(v[1]), float(v[2]))


@dataclass
class FrictionParams:
    mu: float = 0.75
    contact_force_threshold: float = 2.0

    def __post_init__(self):
        if self.mu <= 0.0:
            raise ValueError("friction coefficient must be positive")


def interpolate_taxels(frame: TactileFrame) -> tuple[RectBivariateSpline, DeformationVector]:
    """Bicubic spline over the taxel grid plus the derived deformation vector.

    D_z is the mean of the interpolated surface; D_x and D_y are the mean
    surface gradient components (shear proxies). The spline reproduces the
    grid values exactly at the knots.
    """
    spline = RectBivariateSpline(_KNOTS, _KNOTS, frame.taxels, kx=3, ky=3, s=0)
    span = _KNOTS[-1] - _KNOTS[0]
    area = span * span
    d_z = spline.integral(_KNOTS[0], _KNOTS[-1], _KNOTS[0], _KNOTS[-1]) / area
    # Mean gradients by tensor-product Gauss quadrature (exact for bicubics).
    nodes = 0.5 * span * (_GAUSS_X + 1.0) + _KNOTS[0]
    w2 = np.outer(_GAUSS_W, _GAUSS_W) * (0.5 * span) ** 2
    gx = spline(nodes, nodes, dx=1, dy=0)
    gy = spline(nodes, nodes, dx=0, dy=1)
    d_x = float(np.sum(w2 * gx) / area)
    d_y = float(np.sum(w2 * gy) / area)
    return spline, DeformationVector(d_x, d_y, float(d_z))


def taxels_from_deformation(
    d: DeformationVector, noise: np.ndarray | None = None
) -> np.ndarray:
    """Synthesize a taxel grid whose interpolated deformation equals `d`."""
    x = _KNOTS - _KNOTS.mean()
    grid = d.d_z + d.d_x * x[:, None] + d.d_y * x[None, :]
    if noise is not None:
        grid = grid + noise
    return grid


# ---------------------------------------------------------------------------
# Deformation -> force network


@dataclass(eq=False)
class ForceMapper:
    """3-input, 5-hidden (tanh), 3-output network with unit-range scaling."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    in_center: np.ndarray
    in_scale: np.ndarray
    out_center: np.ndarray
    out_scale: np.ndarray
    train_rmse: float = float("nan")
    test_rmse: float = float("nan")

    def __post_init__(self):
        if self.w1.shape != (5, 3) or self.w2.shape != (3, 5):
            raise ValueError("network must be 3-5-3")

    def __call__(self, d: DeformationVector | np.ndarray) -> np.ndarray:
        return self.predict(np.atleast_2d(_deformation_array(d)))[0]

    def predict(self, D: np.ndarray) -> np.ndarray:
        xn = (D - self.in_center) / self.in_scale
        h = np.tanh(xn @ self.w1.T + self.b1)
        yn = h @ self.w2.T + self.b2
        return yn * self.out_scale + self.out_center

    def input_gradient(self, d: DeformationVector | np.ndarray) -> np.ndarray:
        """3x3 Jacobian of the mapped force with respect to the deformation."""
        xn = (_deformation_array(d) - self.in_center) / self.in_scale
        pre = self.w1 @ xn + self.b1
        dh = 1.0 - np.tanh(pre) ** 2
        core = self.w2 @ (dh[:, None] * self.w1)
        return self.out_scale[:, None] * core / self.in_scale[None, :]

    def save(self, path) -> None:
        """Plain numeric layout: header, shapes implied by the 3-5-3 network."""
        blocks = [self.w1, self.b1, self.w2, self.b2,
                  self.in_center, self.in_scale, self.out_center, self.out_scale]
        with open(path, "w") as f:
            f.write(f"{MAPPER_SCHEMA_VERSION}\n")
            for blk in blocks:
                f.write(" ".join(repr(float(v)) for v in np.asarray(blk).ravel()) + "\n")

    @classmethod
    def load(cls, path) -> "ForceMapper":
        with open(path) as f:
            header = f.readline().strip()
            if header != MAPPER_SCHEMA_VERSION:
                raise ValueError(f"unsupported mapper schema {header!r}")
            rows = [np.array([float(v) for v in line.split()]) for line in f if line.strip()]
        return cls(
            w1=rows[0].reshape(5, 3), b1=rows[1], w2=rows[2].reshape(3, 5), b2=rows[3],
            in_center=rows[4], in_scale=rows[5], out_center=rows[6], out_scale=rows[7],
        )


def _deformation_array(d) -> np.ndarray:
    if isinstance(d, DeformationVector):
        return d.as_array()
    return np.asarray(d, dtype=float).ravel()


def map_force(mapper: ForceMapper, d: DeformationVector) -> np.ndarray:
    """Contact force (sensor frame, N) for one deformation vector."""
    return mapper(d)


DEFAULT_CALIBRATION_K = np.array([
    [0.50, 0.05, 0.00],
    [0.05, 0.50, 0.00],
    [0.00, 0.00, 2.00],
])  # N per mm of deformation


def synth_calibration_data(
    n_train: int = 100,
    n_test: int = 20,
    seed: int = 0,
    K: np.ndarray = DEFAULT_CALIBRATION_K,
    noise_frac: float = 0.01,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Synthetic grasp calibration set from a linear contact-stiffness model.

    Deformations are sampled over the sensor's working range, forces follow
    f = K @ D plus Gaussian noise scaled to noise_frac of each force range.
    Returns (D_train, F_train, D_test, F_test).
    """
    rng = np.random.default_rng(seed)
    total = n_train + n_test
    D = np.column_stack([
        rng.uniform(-4.0, 4.0, total),
        rng.uniform(-4.0, 4.0, total),
        rng.uniform(0.0, 5.0, total),
    ])
    F = D @ K.T
    span = np.ptp(F, axis=0)
    F = F + rng.normal(0.0, 1.0, F.shape) * (noise_frac * span)
    return D[:n_train], F[:n_train], D[n_train:], F[n_train:]


def train_force_mapper(
    train: tuple[np.ndarray, np.ndarray],
    test: tuple[np.ndarray, np.ndarray],
    seed: int = 0,
    iters: int = 4000,
    lr: float = 0.01,
    rmse_bound_frac: float = 0.05,
) -> ForceMapper:
    """Fit the 3-5-3 network with full-batch Adam; deterministic given seed.

    Raises TrainingFailedError when the held-out RMSE exceeds
    rmse_bound_frac of the force range.
    """
    D_tr, F_tr = np.asarray(train[0], dtype=float), np.asarray(train[1], dtype=float)
    D_te, F_te = np.asarray(test[0], dtype=float), np.asarray(test[1], dtype=float)
    in_center = 0.5 * (D_tr.max(axis=0) + D_tr.min(axis=0))
    in_scale = np.maximum(0.5 * np.ptp(D_tr, axis=0), 1e-9)
    out_center = 0.5 * (F_tr.max(axis=0) + F_tr.min(axis=0))
    out_scale = np.maximum(0.5 * np.ptp(F_tr, axis=0), 1e-9)
    Xn = (D_tr - in_center) / in_scale
    Yn = (F_tr - out_center) / out_scale

    rng = np.random.default_rng(seed)
    params = [
        rng.normal(0.0, 0.5, (5, 3)), np.zeros(5),
        rng.normal(0.0, 0.5, (3, 5)), np.zeros(3),
    ]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    n = Xn.shape[0]
    for it in range(1, iters + 1):
        w1, b1, w2, b2 = params
        pre = Xn @ w1.T + b1
        h = np.tanh(pre)
        out = h @ w2.T + b2
        err = out - Yn
        g_w2 = err.T @ h / n
        g_b2 = err.mean(axis=0)
        back = (err @ w2) * (1.0 - h**2)
        g_w1 = back.T @ Xn / n
        g_b1 = back.mean(axis=0)
        grads = [g_w1, g_b1, g_w2, g_b2]
        for k in range(4):
            m[k] = beta1 * m[k] + (1 - beta1) * grads[k]
            v[k] = beta2 * v[k] + (1 - beta2) * grads[k] ** 2
            mh = m[k] / (1 - beta1**it)
            vh = v[k] / (1 - beta2**it)
            params[k] = params[k] - lr * mh / (np.sqrt(vh) + eps)

    mapper = ForceMapper(
        w1=params[0], b1=params[1], w2=params[2], b2=params[3],
        in_center=in_center, in_scale=in_scale,
        out_center=out_center, out_scale=out_scale,
    )
    force_range = float(np.max(np.ptp(F_tr, axis=0)))
    mapper.train_rmse = _rmse(mapper.predict(D_tr), F_tr)
    mapper.test_rmse = _rmse(mapper.predict(D_te), F_te)
    if mapper.test_rmse > rmse_bound_frac * force_range:
        raise TrainingFailedError(
            f"held-out RMSE {mapper.test_rmse:.4f} N exceeds "
            f"{rmse_bound_frac:.0%} of the {force_range:.3f} N force range"
        )
    return mapper


def _rmse(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def save_calibration(path, D: np.ndarray, F: np.ndarray) -> None:
    """Rows of `Dx Dy Dz fx fy fz` (mm, N)."""
    with open(path, "w") as f:
        for d, force in zip(D, F):
            f.write(" ".join(repr(float(v)) for v in (*d, *force)) + "\n")


def load_calibration(path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    with open(path) as f:
        for line in f:
            if line.strip():
                rows.append([float(v) for v in line.split()])
    arr = np.array(rows)
    return arr[:, :3], arr[:, 3:]


# ---------------------------------------------------------------------------
# Frame transforms, slip test, grip modulation


def force_to_base(f_c_sensor: np.ndarray, T_s_e: np.ndarray, T_e_b: np.ndarray) -> np.ndarray:
    """Rotate a sensor-frame force into the base frame (forces are free vectors)."""
    R = np.asarray(T_e_b, dtype=float)[:3, :3] @ np.asarray(T_s_e, dtype=float)[:3, :3]
    return R @ np.asarray(f_c_sensor, dtype=float).ravel()


def check_friction_cone(
    d: DeformationVector, params: FrictionParams, convention: str = "as_written"
) -> str:
    """Friction-cone ratio test; returns 'stable' or 'slip'.

    as_written: slip when D_z / sqrt(D_x^2 + D_y^2) > mu (zero tangential
    deformation counts as an infinite ratio, hence slip).
    standard: slip when sqrt(D_x^2 + D_y^2) / D_z > mu.
    """
    tangential = float(np.hypot(d.d_x, d.d_y))
    normal = float(d.d_z)
    if tangential == 0.0 and normal == 0.0:
        raise ValueError("deformation vector must be non-zero")
    if convention == "as_written":
        ratio = np.inf if tangential == 0.0 else normal / tangential
    elif convention == "standard":
        ratio = np.inf if normal == 0.0 else tangential / normal
    else:
        raise ValueError(f"unknown convention {convention!r}")
    return "slip" if ratio > params.mu else "stable"


def modulate_grip(
    f_measured: np.ndarray,
    f_target: float,
    gain: float,
    rate_limit: float = 0.05,
) -> float:
    """Proportional jaw-speed command toward the target grip magnitude.

    Positive output closes the jaws. Clamped to the jaw rate limit.
    """
    if gain <= 0.0:
        raise ValueError("gain must be positive")
    rate = gain * (f_target - float(np.linalg.norm(f_measured)))
    return float(np.clip(rate, -rate_limit, rate_limit))


@dataclass
class ContactModel:
    """Synthetic contact between parallel jaws and a rigid-ish object.

    Squeeze (jaw interference with the object width) produces a normal
    force through a linear stiffness; each jaw's sensor sees half the
    squeeze as normal deformation (mm). Tangential deformation comes from
    the load the co-manipulating partner applies.
    """

    stiffness: float = 1000.0   # N per m of squeeze
    width: float = 0.04         # object width between jaw faces (m)
    gap_open: float = 0.10      # jaw gap with both jaws retracted (m)
    deform_split: float = 0.5   # share of squeeze each sensor absorbs

    def gap(self, jaw: np.ndarray) -> float:
        return self.gap_open - float(jaw[0] + jaw[1])

    def squeeze(self, jaw: np.ndarray) -> float:
        return max(0.0, self.width - self.gap(jaw))

    def normal_force(self, jaw: np.ndarray) -> float:
        return self.stiffness * self.squeeze(jaw)

    def normal_deformation_mm(self, jaw: np.ndarray) -> float:
        return 1000.0 * self.deform_split * self.squeeze(jaw)
