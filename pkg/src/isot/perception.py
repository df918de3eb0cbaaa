"""Synthetic visual perception: skeleton stream, depth mapping, point clouds.

Two simulated depth cameras feed the controller: a fixed tracking camera
(5 Hz) that watches an 18-joint human skeleton, and an eye-in-hand
detection camera (25 Hz) whose point clouds go through downsampling,
plane removal, Euclidean clustering, and centroid pose estimation.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .kinematics import Pose, quat_from_matrix

# OpenPose/COCO-style 18-joint skeleton.
SKELETON_JOINTS = (
    "nose", "neck",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_hip", "r_knee", "r_ankle",
    "l_hip", "l_knee", "l_ankle",
    "r_eye", "l_eye", "r_ear", "l_ear",
)


class OccludedPointError(ValueError):
    """Raised when a depth sample has no valid (positive) depth."""


@dataclass(eq=False)
class CameraIntrinsics:
    f: float = 580.0
    c_x: float = 320.0
    c_y: float = 240.0
    s_x: float = 1.0
    s_y: float = 1.0

    def __post_init__(self):
        if self.f <= 0 or self.s_x <= 0 or self.s_y <= 0:
            raise ValueError("focal length and pixel dimensions must be positive")


@dataclass(eq=False)
class CameraExtrinsics:
    """Rigid camera-to-base transform: p_base = R @ p_cam + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        R = self.rotation
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9 or np.linalg.det(R) < 0.0:
            raise ValueError("rotation must be a proper orthonormal matrix")

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "CameraExtrinsics":
        """Camera at `eye` with +z looking toward `target`."""
        eye = np.asarray(eye, dtype=float)
        z = np.asarray(target, dtype=float) - eye
        z = z / np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=float))
        if np.linalg.norm(x) < 1e-9:
            x = np.array([1.0, 0.0, 0.0])
        x = x / np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(np.column_stack([x, y, z]), eye)


@dataclass
class JointSample:
    """One tracked skeleton joint: pixel coords + depth, base-frame position."""

    name: str
    pixel: tuple
    depth: float
    position: np.ndarray
    occluded: bool = False


@dataclass
class SkeletonFrame:
    timestamp: float
    joints: dict

    def __post_init__(self):
        if len(self.joints) != len(SKELETON_JOINTS):
            raise ValueError(f"skeleton frame needs {len(SKELETON_JOINTS)} joints")

    def joint(self, name: str) -> JointSample:
        return self.joints[name]


@dataclass
class PointCloud:
    points: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if self.points.size and not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud coordinates must be finite")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class ObjectDetection:
    cluster_id: int
    point_count: int
    pose_camera: Pose
    pose_base: Pose
    shape: str
    dims: np.ndarray
    degenerate: bool = False


# ---------------------------------------------------------------------------
# Depth mapping


def depth_to_camera(pixel: tuple, intr: CameraIntrinsics) -> np.ndarray:
    """Map (I_x, I_y, depth) to camera-frame Cartesian coordinates."""
    ix, iy, p_d = pixel
    if p_d <= 0.0:
        raise OccludedPointError(f"depth {p_d} is not positive")
    x = (ix - intr.c_x) * p_d / (intr.f * intr.s_x)
    y = (iy - intr.c_y) * p_d / (intr.f * intr.s_y)
    return np.array([x, y, p_d])


def camera_to_pixel(p_cam: np.ndarray, intr: CameraIntrinsics) -> tuple:
    """Inverse of depth_to_camera; p_cam must be in front of the camera."""
    x, y, z = np.asarray(p_cam, dtype=float)
    if z <= 0.0:
        raise OccludedPointError("point behind the camera")
    return (x * intr.f * intr.s_x / z + intr.c_x, y * intr.f * intr.s_y / z + intr.c_y, z)


def camera_to_base(p_cam: np.ndarray, extr: CameraExtrinsics) -> np.ndarray:
    return extr.rotation @ np.asarray(p_cam, dtype=float) + extr.translation


def base_to_camera(p_base: np.ndarray, extr: CameraExtrinsics) -> np.ndarray:
    return extr.rotation.T @ (np.asarray(p_base, dtype=float) - extr.translation)


# ---------------------------------------------------------------------------
# Skeleton synthesis and active-arm tracking


@dataclass
class SkeletonScenario:
    """Keyframed leader motion: wrist waypoints plus gesture flags."""

    keyframes: list  # [{t, wrist: (3,), open_palm, home}]
    torso_center: np.ndarray = field(default_factory=lambda: np.array([0.85, 0.0, 0.55]))
    arm: str = "right"
    occlusion_windows: list = field(default_factory=list)  # [(start, end)]

    def __post_init__(self):
        times = [k["t"] for k in self.keyframes]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("keyframe times must be strictly increasing")

    @property
    def duration(self) -> float:
        return self.keyframes[-1]["t"]

    def sample(self, t: float) -> tuple[np.ndarray, bool, bool]:
        """Interpolated wrist position and (open_palm, home) flags at time t."""
        ks = self.keyframes
        if t <= ks[0]["t"]:
            k = ks[0]
            return np.asarray(k["wrist"], dtype=float), bool(k.get("open_palm")), bool(k.get("home"))
        for a, b in zip(ks, ks[1:]):
            if t <= b["t"]:
                u = (t - a["t"]) / (b["t"] - a["t"])
                wrist = (1 - u) * np.asarray(a["wrist"], dtype=float) + u * np.asarray(b["wrist"], dtype=float)
                # Flags hold from the keyframe being approached once reached,
                # otherwise from the previous one.
                src = b if u >= 1.0 else a
                return wrist, bool(src.get("open_palm")), bool(src.get("home"))
        k = ks[-1]
        return np.asarray(k["wrist"], dtype=float), bool(k.get("open_palm")), bool(k.get("home"))

    def occluded_at(self, t: float) -> bool:
        return any(a <= t <= b for a, b in self.occlusion_windows)


def synth_skeleton(
    scenario: SkeletonScenario,
    t: float,
    intr: CameraIntrinsics,
    extr: CameraExtrinsics,
) -> SkeletonFrame:
    """Project a plausible 18-joint frame for the scripted leader at time t.

    The wrist follows the keyframe interpolation exactly; the remaining
    joints are posed around the torso anchor so the frame stays
    kinematically plausible. All joints carry pixel + depth coordinates
    consistent with the tracking camera model.
    """
    wrist, _, _ = scenario.sample(t)
    return skeleton_from_wrist(
        wrist, scenario.torso_center, scenario.arm, t, intr, extr,
        occluded=scenario.occluded_at(t),
    )


def skeleton_from_wrist(
    wrist: np.ndarray,
    torso_center: np.ndarray,
    arm: str,
    t: float,
    intr: CameraIntrinsics,
    extr: CameraExtrinsics,
    occluded: bool = False,
) -> SkeletonFrame:
    """18-joint frame posed around a torso anchor with the given active wrist."""
    wrist = np.asarray(wrist, dtype=float)
    c = np.asarray(torso_center, dtype=float)
    side = 1.0 if arm == "right" else -1.0
    shoulder = c + np.array([0.0, -side * 0.22, 0.18])
    elbow = 0.5 * (shoulder + wrist) + np.array([0.0, 0.0, -0.06])
    other_shoulder = c + np.array([0.0, side * 0.22, 0.18])
    other_elbow = other_shoulder + np.array([0.0, side * 0.05, -0.25])
    other_wrist = other_elbow + np.array([0.0, side * 0.03, -0.22])
    neck = c + np.array([0.0, 0.0, 0.22])
    nose = neck + np.array([-0.05, 0.0, 0.12])
    positions = {
        "nose": nose, "neck": neck,
        "r_shoulder": shoulder if side > 0 else other_shoulder,
        "r_elbow": elbow if side > 0 else other_elbow,
        "r_wrist": wrist if side > 0 else other_wrist,
        "l_shoulder": other_shoulder if side > 0 else shoulder,
        "l_elbow": other_elbow if side > 0 else elbow,
        "l_wrist": other_wrist if side > 0 else wrist,
        "r_hip": c + np.array([0.0, -0.12, -0.25]),
        "r_knee": c + np.array([0.0, -0.12, -0.65]),
        "r_ankle": c + np.array([0.0, -0.12, -1.0]),
        "l_hip": c + np.array([0.0, 0.12, -0.25]),
        "l_knee": c + np.array([0.0, 0.12, -0.65]),
        "l_ankle": c + np.array([0.0, 0.12, -1.0]),
        "r_eye": nose + np.array([0.0, -0.03, 0.04]),
        "l_eye": nose + np.array([0.0, 0.03, 0.04]),
        "r_ear": neck + np.array([0.0, -0.08, 0.14]),
        "l_ear": neck + np.array([0.0, 0.08, 0.14]),
    }
    joints = {}
    for name in SKELETON_JOINTS:
        p = positions[name]
        pix = camera_to_pixel(base_to_camera(p, extr), intr)
        joints[name] = JointSample(name, (pix[0], pix[1]), pix[2], np.asarray(p, dtype=float), occluded)
    return SkeletonFrame(timestamp=t, joints=joints)


@dataclass
class TrackedArm:
    wrist: np.ndarray | None
    joints: dict
    lost: bool
    age: float


class ArmTracker:
    """Active-arm selector with moving-average smoothing and staleness hold.

    Occluded wrists hold the last value until the staleness horizon, after
    which the tracker reports a lost signal that the behavior logic can see.
    """

    def __init__(self, side: str = "right", window: int = 5, staleness_horizon: float = 0.6):
        if side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        self.side = side
        self.window = window
        self.staleness_horizon = staleness_horizon
        self._history: deque = deque(maxlen=window)
        self._last_valid: np.ndarray | None = None
        self._last_valid_t: float | None = None

    def update(self, frame: SkeletonFrame) -> TrackedArm:
        prefix = "r_" if self.side == "right" else "l_"
        names = [prefix + part for part in ("shoulder", "elbow", "wrist")]
        arm = {n: frame.joint(n) for n in names}
        wrist = arm[prefix + "wrist"]
        if not wrist.occluded:
            self._history.append(wrist.position)
            self._last_valid = np.mean(np.stack(self._history), axis=0)
            self._last_valid_t = frame.timestamp
        if self._last_valid_t is None:
            return TrackedArm(None, arm, True, np.inf)
        age = frame.timestamp - self._last_valid_t
        lost = age > self.staleness_horizon
        return TrackedArm(None if lost else self._last_valid, arm, lost, age)

    def reset(self) -> None:
        self._history.clear()
        self._last_valid = None
        self._last_valid_t = None


# ---------------------------------------------------------------------------
# Point-cloud pipeline


def downsample_and_filter(
    cloud: PointCloud, leaf: float, outlier_k: int = 8, outlier_sigma: float = 2.0
) -> PointCloud:
    """Voxel-grid downsample (centroid per voxel) + statistical outlier removal."""
    if leaf <= 0.0:
        raise ValueError("leaf size must be positive")
    pts = cloud.points
    if pts.shape[0] == 0:
        return PointCloud(pts.copy(), cloud.timestamp)
    keys = np.floor(pts / leaf).astype(np.int64)
    # Deterministic order regardless of input permutation: sort voxels.
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    keys_sorted = keys[order]
    pts_sorted = pts[order]
    uniq, starts = np.unique(keys_sorted, axis=0, return_index=True)
    centroids = np.add.reduceat(pts_sorted, starts, axis=0)
    counts = np.diff(np.append(starts, keys_sorted.shape[0]))
    centroids = centroids / counts[:, None]

    if centroids.shape[0] > outlier_k:
        tree = cKDTree(centroids)
        dists, _ = tree.query(centroids, k=outlier_k + 1)
        mean_d = dists[:, 1:].mean(axis=1)
        keep = mean_d <= mean_d.mean() + outlier_sigma * mean_d.std()
        centroids = centroids[keep]
    return PointCloud(centroids, cloud.timestamp)


def ransac_plane_removal(
    cloud: PointCloud,
    dist_thresh: float,
    iterations: int = 100,
    seed: int = 0,
    min_support: float = 0.2,
) -> tuple[PointCloud, bool]:
    """Remove the dominant plane's inliers; returns (cloud, plane_found).

    Seeded sampling makes the result bit-deterministic. If no candidate
    plane reaches the minimum support fraction the cloud comes back
    unchanged with plane_found=False.
    """
    pts = cloud.points
    if pts.shape[0] < 3:
        return PointCloud(pts.copy(), cloud.timestamp), False
    rng = np.random.default_rng(seed)
    n = pts.shape[0]
    # All candidate triplets drawn up front; scored as a batch.
    idx = np.array([rng.choice(n, size=3, replace=False) for _ in range(iterations)])
    p0 = pts[idx[:, 0]]
    normals = np.cross(pts[idx[:, 1]] - p0, pts[idx[:, 2]] - p0)
    norms = np.linalg.norm(normals, axis=1)
    valid = norms > 1e-12
    if not np.any(valid):
        return PointCloud(pts.copy(), cloud.timestamp), False
    normals[valid] /= norms[valid, None]
    dists = np.abs((pts @ normals[valid].T) - np.einsum("ij,ij->i", p0[valid], normals[valid]))
    counts = np.sum(dists <= dist_thresh, axis=0)
    best = int(np.argmax(counts))
    best_count = int(counts[best])
    if best_count < min_support * n:
        return PointCloud(pts.copy(), cloud.timestamp), False
    inliers = dists[:, best] <= dist_thresh
    return PointCloud(pts[~inliers], cloud.timestamp), True


def euclidean_cluster(cloud: PointCloud, xi: float, min_pts: int = 10) -> list[np.ndarray]:
    """Transitive closure of the pairwise distance predicate d(x, y) <= xi.

    Returns clusters (point arrays) with at least min_pts members, ordered
    by descending size then centroid for determinism under permutation.
    """
    if xi <= 0.0:
        raise ValueError("cluster distance must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be at least 1")
    pts = cloud.points
    n = pts.shape[0]
    if n == 0:
        return []
    parent = np.arange(n)

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    tree = cKDTree(pts)
    for i, j in tree.query_pairs(xi):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    roots = np.array([find(i) for i in range(n)])
    clusters = []
    for root in np.unique(roots):
        members = pts[roots == root]
        if members.shape[0] >= min_pts:
            clusters.append(members)
    clusters.sort(key=lambda c: (-c.shape[0], tuple(np.round(c.mean(axis=0), 9))))
    return clusters


def cluster_centroid_pose(cluster: np.ndarray) -> tuple[Pose, np.ndarray, bool]:
    """Centroid + principal-axes pose of a cluster (camera frame).

    Returns (pose, extents along principal axes, degenerate flag). The
    rotation is right-handed with axes ordered by decreasing variance.
    """
    cluster = np.asarray(cluster, dtype=float).reshape(-1, 3)
    if cluster.shape[0] == 0:
        raise ValueError("cluster must be non-empty")
    centroid = cluster.mean(axis=0)
    centered = cluster - centroid
    cov = centered.T @ centered / cluster.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    degenerate = evals[0] < 1e-12 or cluster.shape[0] < 3
    if degenerate:
        R = np.eye(3)
    else:
        # Canonical sign: each axis points toward its positive octant lead.
        for k in range(3):
            lead = np.argmax(np.abs(evecs[:, k]))
            if evecs[lead, k] < 0:
                evecs[:, k] = -evecs[:, k]
        if np.linalg.det(evecs) < 0:
            evecs[:, 2] = -evecs[:, 2]
        R = evecs
    dims = np.ptp(centered @ R, axis=0) if cluster.shape[0] > 1 else np.zeros(3)
    return Pose(centroid, quat_from_matrix(R)), dims, degenerate


def object_pose_to_base(pose_cam: Pose, T_c_e: np.ndarray, T_e_b: np.ndarray) -> Pose:
    """Compose camera-frame pose through hand and base transforms."""
    T = np.asarray(T_e_b, dtype=float) @ np.asarray(T_c_e, dtype=float) @ pose_cam.matrix()
    return Pose.from_matrix(T)


def classify_shape(dims: np.ndarray) -> str:
    """Rule-based label from bounding dims: rod, cap, or block."""
    d = np.sort(np.asarray(dims, dtype=float).ravel())[::-1]
    if np.any(d <= 0.0):
        raise ValueError("dims must be positive")
    r12 = d[0] / d[1]
    r13 = d[0] / d[2]
    if r12 >= 3.0:
        return "rod"
    if r13 <= 2.0:
        return "block"
    return "cap"


def detect_objects(
    cloud: PointCloud,
    T_c_e: np.ndarray,
    T_e_b: np.ndarray,
    leaf: float = 0.005,
    plane_thresh: float = 0.005,
    xi: float = 0.02,
    min_pts: int = 10,
    seed: int = 0,
    ransac_iterations: int = 100,
) -> list[ObjectDetection]:
    """Full detection pipeline: filter, remove plane, cluster, pose, label."""
    filtered = downsample_and_filter(cloud, leaf)
    if len(filtered) == 0:
        return []
    remaining, _ = ransac_plane_removal(filtered, plane_thresh, seed=seed,
                                        iterations=ransac_iterations)
    detections = []
    for cid, cluster in enumerate(euclidean_cluster(remaining, xi, min_pts)):
        pose_cam, dims, degenerate = cluster_centroid_pose(cluster)
        pose_base = object_pose_to_base(pose_cam, T_c_e, T_e_b)
        detections.append(ObjectDetection(
            cluster_id=cid,
            point_count=cluster.shape[0],
            pose_camera=pose_cam,
            pose_base=pose_base,
            shape=classify_shape(np.maximum(dims, 1e-4)),
            dims=dims,
            degenerate=degenerate,
        ))
    return detections


def save_cloud(path, cloud: PointCloud) -> None:
    """One `x y z` triple per line, meters."""
    with open(path, "w") as f:
        for p in cloud.points:
            f.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")


def load_cloud(path, timestamp: float = 0.0) -> PointCloud:
    pts = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                pts.append([float(v) for v in line.split()])
    return PointCloud(np.array(pts).reshape(-1, 3), timestamp)
