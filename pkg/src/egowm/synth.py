"""Procedural egocentric clip generator.

A flat-shaded software rasterizer draws a desk scene (table plane, one
textured rigid object, a three-segment arm) under scripted head motion.
All per-frame streams (RGB, hand silhouette map, object mask) come from a
single rasterization pass via a layer-id buffer, so they stay pixel aligned
by construction. Clip generation is a pure function of (seed, L, S).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Intrinsics, Pose, Trajectory, load_intrinsics_csv, save_intrinsics_csv
from .tensor import read_tns, write_tns

# exact flat-shading colors; pairwise distances are large enough that the
# metric suite can recover masks from rendered frames by nearest color
BACKGROUND_COLOR = np.array([0.32, 0.34, 0.40], dtype=np.float32)
TABLE_COLOR = np.array([0.52, 0.36, 0.20], dtype=np.float32)
OBJECT_COLOR_A = np.array([0.92, 0.56, 0.08], dtype=np.float32)
OBJECT_COLOR_B = np.array([0.10, 0.62, 0.58], dtype=np.float32)
HAND_COLOR = np.array([0.94, 0.08, 0.86], dtype=np.float32)

LAYER_BACKGROUND, LAYER_TABLE, LAYER_OBJECT, LAYER_HAND = 0, 1, 2, 3

GRASP_RADIUS = 0.02  # meters from end effector to object surface
WINDOW_STRIDE = 5

TABLE_X = (-0.9, 0.9)
TABLE_Y = (0.12, 1.6)
NEAR_PLANE = 0.05

SHOULDER = np.array([0.30, 0.05, 0.30])
SEGMENT_LENGTHS = (0.28, 0.26, 0.20)
ARM_RADIUS = 0.022
AZIMUTH_LIMIT = (-np.pi, np.pi)
ELEVATION_LIMIT = (-1.45, 1.45)


class SynthError(ValueError):
    pass


# ---------------------------------------------------------------------------
# scene and hand specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SceneSpec:
    kind: str  # "box" | "cylinder"
    center: np.ndarray  # initial object center, resting on the table plane
    half_extents: np.ndarray  # (hx, hy, hz) for boxes; (r, r, hz) for cylinders
    yaw: float  # rotation about the vertical axis


@dataclass(frozen=True)
class HandSpec:
    shoulder: np.ndarray
    lengths: tuple[float, float, float]
    radius: float = ARM_RADIUS


@dataclass
class Clip:
    rgb: np.ndarray  # (L, 3, S, S) float32 in [0, 1]
    hand_maps: np.ndarray  # (L, 1, S, S) {0, 1}
    object_masks: np.ndarray  # (L, 1, S, S) {0, 1}
    trajectory: Trajectory
    intrinsics: Intrinsics
    grasp_events: list[tuple[int, str]]
    seed: int
    script: "ClipScript | None" = field(default=None, repr=False)

    @property
    def frames(self) -> int:
        return self.rgb.shape[0]

    @property
    def size(self) -> int:
        return self.rgb.shape[-1]


@dataclass
class ClipScript:
    """Full simulation state needed to re-render any frame."""

    scene: SceneSpec
    hand: HandSpec
    world_poses: list[Pose]
    joint_angles: np.ndarray  # (L, 3, 2) per-frame (azimuth, elevation)
    object_centers: np.ndarray  # (L, 3)
    end_effectors: np.ndarray  # (L, 3)


# ---------------------------------------------------------------------------
# arm kinematics
# ---------------------------------------------------------------------------


def _direction(azimuth: float, elevation: float) -> np.ndarray:
    ce = np.cos(elevation)
    return np.array([ce * np.cos(azimuth), ce * np.sin(azimuth), np.sin(elevation)])


def clamp_angles(angles: np.ndarray) -> np.ndarray:
    out = np.array(angles, dtype=np.float64)
    out[..., 0] = np.clip(out[..., 0], *AZIMUTH_LIMIT)
    out[..., 1] = np.clip(out[..., 1], *ELEVATION_LIMIT)
    return out


def arm_points(hand: HandSpec, angles: np.ndarray) -> np.ndarray:
    """Joint positions (4, 3): shoulder, elbow, wrist, end effector."""
    angles = clamp_angles(angles)
    pts = [np.asarray(hand.shoulder, dtype=np.float64)]
    for i in range(3):
        pts.append(pts[-1] + hand.lengths[i] * _direction(*angles[i]))
    return np.stack(pts)


def end_effector(hand: HandSpec, angles: np.ndarray) -> np.ndarray:
    return arm_points(hand, angles)[-1]


def solve_arm_angles(hand: HandSpec, target: np.ndarray, start: np.ndarray, iters: int = 40) -> np.ndarray:
    """Greedy per-segment aiming toward ``target``; deterministic."""
    angles = clamp_angles(start)
    for _ in range(iters):
        for i in range(3):
            pts = arm_points(hand, angles)
            move = target - pts[-1]
            seg = pts[i + 1] - pts[i]
            aim = seg + move
            norm = np.linalg.norm(aim)
            if norm < 1e-9:
                continue
            aim /= norm
            azimuth = np.arctan2(aim[1], aim[0])
            elevation = np.arcsin(np.clip(aim[2], -1.0, 1.0))
            angles[i] = [azimuth, elevation]
            angles = clamp_angles(angles)
    return angles


# ---------------------------------------------------------------------------
# grasping
# ---------------------------------------------------------------------------


def object_surface_distance(scene: SceneSpec, center: np.ndarray, point: np.ndarray) -> float:
    """Distance from a point to the object's surface (0 inside)."""
    rel = np.asarray(point, dtype=np.float64) - center
    c, s = np.cos(-scene.yaw), np.sin(-scene.yaw)
    local = np.array([c * rel[0] - s * rel[1], s * rel[0] + c * rel[1], rel[2]])
    hx, hy, hz = scene.half_extents
    if scene.kind == "box":
        excess = np.maximum(np.abs(local) - scene.half_extents, 0.0)
        return float(np.linalg.norm(excess))
    radial = max(np.hypot(local[0], local[1]) - hx, 0.0)
    vertical = max(abs(local[2]) - hz, 0.0)
    return float(np.hypot(radial, vertical))


def simulate_grasp(
    scene: SceneSpec,
    end_effector_pos: np.ndarray,
    object_center: np.ndarray,
    attached: bool,
    attach_offset: np.ndarray | None,
    release: bool = False,
):
    """One contact step: proximity attaches, scripted release drops to the table.

    Returns (attached, attach_offset, new_center). While attached the object
    translates rigidly with the end effector.
    """
    ee = np.asarray(end_effector_pos, dtype=np.float64)
    center = np.asarray(object_center, dtype=np.float64)
    if attached:
        if release:
            dropped = center.copy()
            dropped[2] = scene.half_extents[2]  # rest on the table plane
            return False, None, dropped
        return True, attach_offset, ee + attach_offset
    if object_surface_distance(scene, center, ee) <= GRASP_RADIUS:
        offset = center - ee
        return True, offset, center.copy()
    return False, None, center.copy()


# ---------------------------------------------------------------------------
# rasterizer
# ---------------------------------------------------------------------------


class FrameRaster:
    """Painter's-algorithm canvas with an id buffer for derived masks."""

    def __init__(self, size: int, intrinsics: Intrinsics, cam_pose_world: Pose):
        self.size = size
        self.k = intrinsics
        self.cam = cam_pose_world
        self.rgb = np.tile(BACKGROUND_COLOR.reshape(3, 1, 1), (1, size, size)).astype(np.float32)
        self.layers = np.zeros((size, size), dtype=np.int8)
        self._us, self._vs = np.meshgrid(np.arange(size), np.arange(size))

    def project(self, points: np.ndarray):
        """World points -> (pixel uv, camera depth)."""
        rel = (np.atleast_2d(points) - self.cam.translation) @ self.cam.rotation
        z = rel[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.k.fx * rel[:, 0] / z + self.k.cx
            v = self.k.fy * rel[:, 1] / z + self.k.cy
        return np.stack([u, v], axis=1), z

    def fill_convex(self, uv: np.ndarray, color: np.ndarray, layer: int) -> None:
        """Rasterize a convex polygon given projected (k, 2) vertices."""
        if len(uv) < 3:
            return
        u_min = max(int(np.floor(uv[:, 0].min())), 0)
        u_max = min(int(np.ceil(uv[:, 0].max())), self.size - 1)
        v_min = max(int(np.floor(uv[:, 1].min())), 0)
        v_max = min(int(np.ceil(uv[:, 1].max())), self.size - 1)
        if u_min > u_max or v_min > v_max:
            return
        px = self._us[v_min : v_max + 1, u_min : u_max + 1]
        py = self._vs[v_min : v_max + 1, u_min : u_max + 1]
        inside_pos = np.ones(px.shape, dtype=bool)
        inside_neg = np.ones(px.shape, dtype=bool)
        for i in range(len(uv)):
            x1, y1 = uv[i]
            x2, y2 = uv[(i + 1) % len(uv)]
            cross = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
            inside_pos &= cross >= 0
            inside_neg &= cross <= 0
        inside = inside_pos | inside_neg
        if not inside.any():
            return
        region = (slice(v_min, v_max + 1), slice(u_min, u_max + 1))
        self.layers[region][inside] = layer
        for c in range(3):
            self.rgb[c][region][inside] = color[c]

    def fill_disk(self, center_uv: np.ndarray, radius: float, color: np.ndarray, layer: int) -> None:
        if radius <= 0:
            return
        dist2 = (self._us - center_uv[0]) ** 2 + (self._vs - center_uv[1]) ** 2
        inside = dist2 <= radius * radius
        if not inside.any():
            return
        self.layers[inside] = layer
        for c in range(3):
            self.rgb[c][inside] = color[c]

    def draw_world_polygon(self, corners: np.ndarray, color: np.ndarray, layer: int) -> None:
        uv, z = self.project(corners)
        if (z < NEAR_PLANE).any():
            return
        self.fill_convex(uv, color, layer)

    def draw_thick_segment(self, a: np.ndarray, b: np.ndarray, radius: float, color: np.ndarray, layer: int) -> None:
        uv, z = self.project(np.stack([a, b]))
        if (z < NEAR_PLANE).any():
            return
        ra = self.k.fx * radius / z[0]
        rb = self.k.fx * radius / z[1]
        d = uv[1] - uv[0]
        norm = np.linalg.norm(d)
        if norm < 1e-9:
            self.fill_disk(uv[0], ra, color, layer)
            return
        perp = np.array([-d[1], d[0]]) / norm
        quad = np.stack([uv[0] + perp * ra, uv[1] + perp * rb, uv[1] - perp * rb, uv[0] - perp * ra])
        self.fill_convex(quad, color, layer)
        self.fill_disk(uv[0], ra, color, layer)
        self.fill_disk(uv[1], rb, color, layer)


def _object_faces(scene: SceneSpec, center: np.ndarray):
    """World-space faces as (corners, color) tuples."""
    c, s = np.cos(scene.yaw), np.sin(scene.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    hx, hy, hz = scene.half_extents
    faces = []
    if scene.kind == "box":
        corners = np.array(
            [[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
        )
        world = corners @ rot.T + center
        quads = [
            (0, 1, 3, 2), (4, 5, 7, 6),  # -x, +x
            (0, 1, 5, 4), (2, 3, 7, 6),  # -y, +y
            (0, 2, 6, 4), (1, 3, 7, 5),  # -z, +z
        ]
        for i, quad in enumerate(quads):
            color = OBJECT_COLOR_A if i % 2 == 0 else OBJECT_COLOR_B
            faces.append((world[list(quad)], color))
        return faces
    n_side = 8
    angles = 2 * np.pi * np.arange(n_side) / n_side
    ring = np.stack([hx * np.cos(angles), hx * np.sin(angles), np.zeros(n_side)], axis=1)
    bottom = (ring + [0, 0, -hz]) @ rot.T + center
    top = (ring + [0, 0, hz]) @ rot.T + center
    for i in range(n_side):
        j = (i + 1) % n_side
        color = OBJECT_COLOR_A if i % 2 == 0 else OBJECT_COLOR_B
        faces.append((np.stack([bottom[i], bottom[j], top[j], top[i]]), color))
    faces.append((top, OBJECT_COLOR_A))
    faces.append((bottom, OBJECT_COLOR_B))
    return faces


def render_frame(
    scene: SceneSpec,
    cam_pose_world: Pose,
    intrinsics: Intrinsics,
    size: int,
    hand: HandSpec | None = None,
    hand_angles: np.ndarray | None = None,
    object_center: np.ndarray | None = None,
):
    """Rasterize one frame; returns (rgb (3,S,S), layer ids (S,S))."""
    raster = FrameRaster(size, intrinsics, cam_pose_world)
    table = np.array(
        [
            [TABLE_X[0], TABLE_Y[0], 0.0],
            [TABLE_X[1], TABLE_Y[0], 0.0],
            [TABLE_X[1], TABLE_Y[1], 0.0],
            [TABLE_X[0], TABLE_Y[1], 0.0],
        ]
    )
    raster.draw_world_polygon(table, TABLE_COLOR, LAYER_TABLE)

    center = scene.center if object_center is None else np.asarray(object_center)
    faces = _object_faces(scene, center)
    depths = []
    for corners, _ in faces:
        _, z = raster.project(corners)
        depths.append(z.mean())
    for idx in np.argsort(depths)[::-1]:  # far faces first
        corners, color = faces[idx]
        raster.draw_world_polygon(corners, color, LAYER_OBJECT)

    if hand is not None and hand_angles is not None:
        pts = arm_points(hand, hand_angles)
        segs = [(pts[i], pts[i + 1]) for i in range(3)]
        seg_depth = [raster.project(np.stack(s))[1].mean() for s in segs]
        for idx in np.argsort(seg_depth)[::-1]:
            a, b = segs[idx]
            raster.draw_thick_segment(a, b, hand.radius, HAND_COLOR, LAYER_HAND)
    return raster.rgb, raster.layers


def render_hand_map(
    hand: HandSpec,
    hand_angles: np.ndarray,
    cam_pose_world: Pose,
    intrinsics: Intrinsics,
    size: int,
) -> np.ndarray:
    """White arm silhouette on black, pixel-aligned with render_frame."""
    raster = FrameRaster(size, intrinsics, cam_pose_world)
    pts = arm_points(hand, hand_angles)
    for i in range(3):
        raster.draw_thick_segment(pts[i], pts[i + 1], hand.radius, HAND_COLOR, LAYER_HAND)
    return (raster.layers == LAYER_HAND).astype(np.float32)


# ---------------------------------------------------------------------------
# scripted generation
# ---------------------------------------------------------------------------


def default_intrinsics(size: int) -> Intrinsics:
    f = 1.1 * size
    c = (size - 1) / 2.0
    return Intrinsics(f, f, c, c)


def _look_at(position: np.ndarray, target: np.ndarray) -> Pose:
    forward = target - position
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return Pose(np.stack([right, down, forward], axis=1), position)


def _bezier(p0, p1, p2, tau):
    return (1 - tau) ** 2 * p0 + 2 * (1 - tau) * tau * p1 + tau**2 * p2


def _smoothstep(tau: float) -> float:
    return tau * tau * (3.0 - 2.0 * tau)


def generate_scene(seed: int, size: int = 32) -> SceneSpec:
    """Deterministic scene; the object rests on the table inside the frame-1 view."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 101]))
    kind = "box" if rng.random() < 0.7 else "cylinder"
    intrinsics = default_intrinsics(size)
    base_cam = _look_at(np.array([0.0, -0.40, 0.55]), np.array([0.0, 0.55, 0.0]))
    for _ in range(64):
        if kind == "box":
            hx = rng.uniform(0.06, 0.095)
            half = np.array([hx, hx * rng.uniform(1.6, 2.3), rng.uniform(0.035, 0.055)])
        else:
            r = rng.uniform(0.055, 0.08)
            half = np.array([r, r, rng.uniform(0.04, 0.06)])
        center = np.array([rng.uniform(-0.22, 0.22), rng.uniform(0.40, 0.62), half[2]])
        yaw = rng.uniform(-np.pi, np.pi)
        rel = (center - base_cam.translation) @ base_cam.rotation
        u = intrinsics.fx * rel[0] / rel[2] + intrinsics.cx
        v = intrinsics.fy * rel[1] / rel[2] + intrinsics.cy
        if 0.18 * size < u < 0.82 * size and 0.18 * size < v < 0.82 * size:
            return SceneSpec(kind, center, half, float(yaw))
    raise SynthError(f"seed {seed}: no visible object placement found")


def _head_poses(rng: np.random.Generator, frames: int, focus: np.ndarray) -> list[Pose]:
    base = np.array([0.0, -0.40, 0.55])
    p1 = base + rng.uniform(-0.05, 0.05, 3) * [1.0, 0.6, 0.5]
    p2 = base + rng.uniform(-0.07, 0.07, 3) * [1.0, 0.8, 0.5]
    t1 = focus + rng.uniform(-0.06, 0.06, 3) * [1.0, 1.0, 0.3]
    t2 = focus + rng.uniform(-0.09, 0.09, 3) * [1.0, 1.0, 0.3]
    poses = []
    for i in range(frames):
        tau = i / max(frames - 1, 1)
        position = _bezier(base, p1, p2, tau)
        target = _bezier(focus, t1, t2, tau)
        poses.append(_look_at(position, target))
    return poses


def generate_clip(seed: int, frames: int, size: int) -> Clip:
    """Full synthetic clip: reach, grasp, carry, release, retreat."""
    if frames < 2:
        raise SynthError("a clip needs at least 2 frames")
    scene = generate_scene(seed, size)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 202]))
    hand = HandSpec(SHOULDER, SEGMENT_LENGTHS)
    intrinsics = default_intrinsics(size)
    focus = np.array([scene.center[0] * 0.5, scene.center[1], 0.05])
    world_poses = _head_poses(rng, frames, focus)

    rest_angles = np.array([[1.35, -0.45], [1.10, -0.55], [0.95, -0.35]])
    grasp_point = scene.center + np.array([0.0, 0.0, scene.half_extents[2]])
    carry_delta = np.array(
        [
            rng.uniform(0.07, 0.16) * rng.choice([-1.0, 1.0]),
            rng.uniform(-0.10, 0.10),
            rng.uniform(0.03, 0.07),
        ]
    )
    carry_point = grasp_point + carry_delta
    carry_point[0] = np.clip(carry_point[0], -0.20, 0.20)
    carry_point[1] = np.clip(carry_point[1], 0.38, 0.60)
    carry_point[2] = np.clip(carry_point[2], 0.06, 0.16)

    angles_grasp = solve_arm_angles(hand, grasp_point, rest_angles)
    angles_carry = solve_arm_angles(hand, carry_point, angles_grasp)
    angles_end = 0.5 * (angles_carry + rest_angles)

    last = frames - 1
    reach_frame = max(1, round(0.30 * last))
    release_frame = min(last - 1, max(reach_frame + 2, round(0.75 * last)))

    # approach and retreat interpolate joint angles; the carry segment tracks
    # a straight end-effector line so the held object stays inside the view
    # frustum (it is convex and both endpoints are chosen inside it)
    joint_angles = np.zeros((frames, 3, 2))
    prev = rest_angles
    carry_exit = angles_carry
    for t in range(frames):
        if t <= reach_frame:
            tau = t / reach_frame if reach_frame else 1.0
            prev = rest_angles + _smoothstep(tau) * (angles_grasp - rest_angles)
        elif t <= release_frame:
            tau = (t - reach_frame) / (release_frame - reach_frame)
            target = grasp_point + _smoothstep(tau) * (carry_point - grasp_point)
            prev = solve_arm_angles(hand, target, prev, iters=25)
            carry_exit = prev
        else:
            tau = (t - release_frame) / max(last - release_frame, 1)
            prev = carry_exit + _smoothstep(tau) * (angles_end - carry_exit)
        joint_angles[t] = clamp_angles(prev)
    end_effectors = np.stack([end_effector(hand, joint_angles[t]) for t in range(frames)])

    centers = np.zeros((frames, 3))
    centers[0] = scene.center
    attached, offset = False, None
    released = False
    events: list[tuple[int, str]] = []
    for t in range(1, frames):
        if released:  # the script grabs once; afterwards the object rests
            centers[t] = centers[t - 1]
            continue
        release = attached and t >= release_frame
        was_attached = attached
        attached, offset, centers[t] = simulate_grasp(
            scene, end_effectors[t], centers[t - 1], attached, offset, release
        )
        if attached and not was_attached:
            events.append((t, "attach"))
        if was_attached and not attached:
            events.append((t, "release"))
            released = True

    rgb = np.zeros((frames, 3, size, size), dtype=np.float32)
    hands = np.zeros((frames, 1, size, size), dtype=np.float32)
    masks = np.zeros((frames, 1, size, size), dtype=np.float32)
    for t in range(frames):
        frame_rgb, layers = render_frame(
            scene, world_poses[t], intrinsics, size, hand, joint_angles[t], centers[t]
        )
        rgb[t] = frame_rgb
        hands[t, 0] = (layers == LAYER_HAND).astype(np.float32)
        masks[t, 0] = (layers == LAYER_OBJECT).astype(np.float32)

    clip = Clip(
        rgb=rgb,
        hand_maps=hands,
        object_masks=masks,
        trajectory=Trajectory.from_world_poses(world_poses),
        intrinsics=intrinsics,
        grasp_events=events,
        seed=int(seed),
        script=ClipScript(scene, hand, world_poses, joint_angles, centers, end_effectors),
    )
    return clip


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------


def window_starts(total: int, window: int, stride: int = WINDOW_STRIDE) -> list[int]:
    """Start indices of sliding windows; the last one is clamped to fit."""
    if window > total:
        raise SynthError(f"window {window} longer than clip {total}")
    starts = list(range(0, total - window + 1, stride))
    if starts[-1] != total - window:
        starts.append(total - window)
    return starts


def clip_window(clip: Clip, start: int, window: int) -> Clip:
    """Sub-clip with the trajectory re-anchored to its own first frame."""
    if start < 0 or start + window > clip.frames:
        raise SynthError(f"window [{start}, {start + window}) outside clip of {clip.frames}")
    anchor = clip.trajectory[start]
    inv = anchor.inverse()
    poses = [inv.compose(clip.trajectory[start + i]) for i in range(window)]
    poses[0] = Pose.identity()
    events = [
        (t - start, kind) for t, kind in clip.grasp_events if start <= t < start + window
    ]
    return Clip(
        rgb=clip.rgb[start : start + window].copy(),
        hand_maps=clip.hand_maps[start : start + window].copy(),
        object_masks=clip.object_masks[start : start + window].copy(),
        trajectory=Trajectory(poses),
        intrinsics=clip.intrinsics,
        grasp_events=events,
        seed=clip.seed,
        script=None,
    )


# ---------------------------------------------------------------------------
# clip directory IO
# ---------------------------------------------------------------------------


def save_clip(clip: Clip, directory, window: int | None = None) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_tns(out / "rgb.tns", clip.rgb)
    write_tns(out / "hands.tns", clip.hand_maps)
    write_tns(out / "masks.tns", clip.object_masks)
    clip.trajectory.save_csv(out / "trajectory.csv")
    save_intrinsics_csv(out / "intrinsics.csv", clip.intrinsics)
    lines = [
        f"seed={clip.seed}",
        f"frames={clip.frames}",
        f"size={clip.size}",
        "grasp_events=" + ";".join(f"{t}:{kind}" for t, kind in clip.grasp_events),
    ]
    if window is not None:
        starts = window_starts(clip.frames, window)
        lines.append(f"window={window}")
        lines.append(f"window_stride={WINDOW_STRIDE}")
        lines.append("window_starts=" + ";".join(str(s) for s in starts))
    (out / "meta").write_text("\n".join(lines) + "\n")


def read_meta(directory) -> dict[str, str]:
    meta = {}
    for line in (Path(directory) / "meta").read_text().splitlines():
        line = line.strip()
        if line and "=" in line:
            key, value = line.split("=", 1)
            meta[key] = value
    return meta


def load_clip(directory) -> Clip:
    directory = Path(directory)
    for name in ("rgb.tns", "hands.tns", "masks.tns", "trajectory.csv", "intrinsics.csv", "meta"):
        if not (directory / name).exists():
            raise SynthError(f"{directory} is missing {name}")
    meta = read_meta(directory)
    events = []
    if meta.get("grasp_events"):
        for item in meta["grasp_events"].split(";"):
            if item:
                t, kind = item.split(":")
                events.append((int(t), kind))
    return Clip(
        rgb=read_tns(directory / "rgb.tns"),
        hand_maps=read_tns(directory / "hands.tns"),
        object_masks=read_tns(directory / "masks.tns"),
        trajectory=Trajectory.load_csv(directory / "trajectory.csv"),
        intrinsics=load_intrinsics_csv(directory / "intrinsics.csv"),
        grasp_events=events,
        seed=int(meta.get("seed", "0")),
    )


def rebuild_script(clip: Clip) -> ClipScript:
    """Re-simulate the deterministic script for a clip loaded from disk."""
    if clip.script is not None:
        return clip.script
    regenerated = generate_clip(clip.seed, clip.frames, clip.size)
    if not np.array_equal(regenerated.rgb, clip.rgb):
        raise SynthError("clip content does not match its seed; cannot rebuild script")
    clip.script = regenerated.script
    return clip.script


def list_clip_dirs(root) -> list[Path]:
    root = Path(root)
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "meta").exists())
    if not dirs:
        raise SynthError(f"no clip directories under {root}")
    return dirs


def clip_name(index: int) -> str:
    return f"clip_{index:04d}"
