"""Camera intrinsics/extrinsics, first-frame-relative poses, Plücker ray
fields, and closed-form similarity alignment of trajectories.

Pose convention: a Pose maps camera coordinates of some frame into the
reference (frame-1) camera frame, so the optical center expressed in the
reference frame is the translation itself. The per-pixel ray direction is
d = R K^-1 [u, v, 1]^T + t with the translation added to the direction;
the unusual "+ t" is kept deliberately and is isolated inside
``ray_direction`` so the choice can be toggled in one place.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ORTHONORMAL_TOL = 1e-6


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError(f"focal lengths must be positive: {self}")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def inverse(self) -> np.ndarray:
        # closed form for the upper-triangular calibration matrix
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


def _check_rotation(r: np.ndarray, what: str) -> None:
    if r.shape != (3, 3):
        raise GeometryError(f"{what}: rotation must be 3x3, got {r.shape}")
    if not np.allclose(r.T @ r, np.eye(3), atol=ORTHONORMAL_TOL):
        raise GeometryError(f"{what}: rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
        raise GeometryError(f"{what}: rotation determinant is not +1")


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-reference map: X_ref = R @ X_cam + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3)
        )
        _check_rotation(self.rotation, "Pose")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        """self after other: maps other's source frame through self."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def is_identity(self, tol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, np.eye(3), atol=tol)
            and np.allclose(self.translation, 0.0, atol=tol)
        )


class Trajectory:
    """Ordered per-frame poses relative to frame 1 (pose[0] is identity)."""

    def __init__(self, poses: list[Pose], require_anchored: bool = True):
        if not poses:
            raise GeometryError("a trajectory needs at least one pose")
        if require_anchored and not poses[0].is_identity(tol=1e-9):
            raise GeometryError("trajectory pose[0] must be the identity")
        self.poses = list(poses)

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i: int) -> Pose:
        return self.poses[i]

    def positions(self) -> np.ndarray:
        return np.stack([p.translation for p in self.poses])

    @staticmethod
    def from_world_poses(world_poses: list[Pose]) -> "Trajectory":
        """Re-express camera-to-world poses relative to the first frame."""
        rel = [relative_pose(p, world_poses[0]) for p in world_poses]
        rel[0] = Pose.identity()  # exact identity rather than float residue
        return Trajectory(rel)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["frame", "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33", "tx", "ty", "tz"]
            )
            for i, p in enumerate(self.poses):
                values = list(p.rotation.reshape(-1)) + list(p.translation)
                writer.writerow([i] + [repr(float(v)) for v in values])

    @staticmethod
    def load_csv(path) -> "Trajectory":
        poses = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                r = np.array([float(row[f"r{i}{j}"]) for i in (1, 2, 3) for j in (1, 2, 3)]).reshape(3, 3)
                t = np.array([float(row["tx"]), float(row["ty"]), float(row["tz"])])
                poses.append(Pose(r, t))
        return Trajectory(poses)


def save_intrinsics_csv(path, k: Intrinsics) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fx", "fy", "cx", "cy"])
        writer.writerow([repr(float(v)) for v in (k.fx, k.fy, k.cx, k.cy)])


def load_intrinsics_csv(path) -> Intrinsics:
    with open(path, newline="") as fh:
        row = next(csv.DictReader(fh))
    return Intrinsics(float(row["fx"]), float(row["fy"]), float(row["cx"]), float(row["cy"]))


def relative_pose(pose_t: Pose, pose_1: Pose) -> Pose:
    """Map frame-t camera coordinates into the frame-1 camera frame.

    Both inputs live in one shared (world) frame; the result is
    pose_1^-1 composed with pose_t and is invariant to that shared frame.
    """
    r1t = pose_1.rotation.T
    return Pose(r1t @ pose_t.rotation, r1t @ (pose_t.translation - pose_1.translation))


def ray_direction(k: Intrinsics, pose: Pose, u: float, v: float) -> np.ndarray:
    """Per-pixel ray term d = R K^-1 [u, v, 1]^T + t, written exactly so."""
    pix = np.array([u, v, 1.0])
    return pose.rotation @ (k.inverse() @ pix) + pose.translation


def plucker_field(k: Intrinsics, pose: Pose, height: int, width: int) -> np.ndarray:
    """(6, H, W) per-pixel field (o x d, d) with o the frame-1 optical center.

    Pixel coordinates are zero-indexed at pixel centers. The moment channels
    are orthogonal to the direction channels by construction.
    """
    kinv = k.inverse()
    us, vs = np.meshgrid(np.arange(width, dtype=np.float64), np.arange(height, dtype=np.float64))
    pix = np.stack([us, vs, np.ones_like(us)])  # (3, H, W)
    d = np.einsum("ij,jhw->ihw", pose.rotation @ kinv, pix) + pose.translation[:, None, None]
    o = pose.translation
    moment = np.stack(
        [
            o[1] * d[2] - o[2] * d[1],
            o[2] * d[0] - o[0] * d[2],
            o[0] * d[1] - o[1] * d[0],
        ]
    )
    return np.concatenate([moment, d], axis=0)


def plucker_volume(k: Intrinsics, trajectory: Trajectory, height: int, width: int) -> np.ndarray:
    """Stack per-frame fields into a (6, L, H, W) trajectory volume."""
    fields = [plucker_field(k, p, height, width) for p in trajectory.poses]
    return np.stack(fields, axis=1)


def umeyama_align(points_src: np.ndarray, points_dst: np.ndarray):
    """Closed-form similarity (s, R, t) minimizing ||s R p_src + t - p_dst||^2.

    Returns (scale, rotation, translation, degenerate). Collinear or
    coincident point sets are flagged degenerate and get the identity.
    """
    src = np.asarray(points_src, dtype=np.float64)
    dst = np.asarray(points_dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise GeometryError(f"point sets must both be (N, 3), got {src.shape} vs {dst.shape}")
    n = src.shape[0]
    if n < 3:
        return 1.0, np.eye(3), np.zeros(3), True
    if np.array_equal(src, dst):
        # the identity is the exact optimum; skip the SVD's float noise
        return 1.0, np.eye(3), np.zeros(3), False

    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    xs = src - mu_src
    xd = dst - mu_dst
    var_src = (xs**2).sum() / n
    cov = xd.T @ xs / n
    u, s, vt = np.linalg.svd(cov)
    # rank < 2 means the points do not span a plane: no unique rotation
    if var_src < 1e-12 or s[1] < 1e-12 * max(s[0], 1e-30):
        return 1.0, np.eye(3), np.zeros(3), True
    sign = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[2, 2] = -1.0
    rotation = u @ sign @ vt
    scale = float(np.trace(np.diag(s) @ sign) / var_src)
    translation = mu_dst - scale * rotation @ mu_src
    return scale, rotation, translation, False


def apply_similarity(scale: float, rotation: np.ndarray, translation: np.ndarray, points: np.ndarray) -> np.ndarray:
    return scale * points @ rotation.T + translation
