"""Planar tabletop world with an analytic feature/depth renderer.

The object is a rigid pair of congruent oriented boxes ("handle" and
"head") on a table plane; geometry alone cannot tell the parts apart,
which is the point of the task family. A synthetic descriptor renderer
stands in for a 2D foundation-model feature extractor: every part carries
a category-level descriptor direction (shared across instances, plus a
small per-instance perturbation), the table a fixed background
descriptor, and pixels add i.i.d. noise.

Rays are parameterized by camera-frame z, so a rendered depth value is
exactly the projective depth the fusion stage compares against; surface
points reproject with zero range difference up to float round-off.

The expert is a waypoint controller that approaches the handle from a
side chosen per episode (left or right of the tool axis with equal
probability), closes within the grasp radius, and for the orient task
rotates the tool until the handle points along +x, then releases.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .geometry import CameraModel, DepthImage, FeatureImage, WorkspaceBounds

__all__ = [
    "PartBox",
    "ObjectInstance",
    "CategoryConfig",
    "TaskSpec",
    "SceneState",
    "GRASP_RADIUS",
    "STEP_CAP_XY",
    "STEP_CAP_YAW",
    "WORKSPACE_XY",
    "CLOUD_BOUNDS",
    "category_bases",
    "sample_instance",
    "reset_scene",
    "proprio",
    "part_world_center",
    "handle_angle",
    "make_ring_cameras",
    "render_views",
    "render_part_ids",
    "cast_ray",
    "step",
    "Expert",
    "expert_action",
    "check_success",
    "wrap_angle",
]

GRASP_RADIUS = 0.01
STEP_CAP_XY = 0.01
STEP_CAP_YAW = 0.1
WORKSPACE_XY = 0.15
FLANK_DIST = 0.04
# Cropping the cloud slightly above the table keeps the table plane out
# of the descriptor field while keeping every part surface.
CLOUD_BOUNDS = WorkspaceBounds(
    np.array([-WORKSPACE_XY, -WORKSPACE_XY, 0.004]),
    np.array([WORKSPACE_XY, WORKSPACE_XY, 0.2]),
)


@dataclass(frozen=True)
class PartBox:
    """One oriented box of an object, in the object frame."""

    name: str
    center: np.ndarray  # (2,) object-frame xy, meters
    half_extents: np.ndarray  # (2,)
    yaw: float
    height: float
    seed: np.ndarray  # (F,) descriptor direction

    def __post_init__(self) -> None:
        c = np.asarray(self.center, dtype=np.float64)
        he = np.asarray(self.half_extents, dtype=np.float64)
        s = np.asarray(self.seed, dtype=np.float64)
        if c.shape != (2,) or he.shape != (2,) or s.ndim != 1:
            raise ValueError("bad part geometry shapes")
        if np.any(he <= 0.0) or self.height <= 0.0:
            raise ValueError("part extents must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_extents", he)
        object.__setattr__(self, "seed", s)


@dataclass(frozen=True)
class ObjectInstance:
    parts: tuple[PartBox, ...]
    instance_id: str
    split: str
    background_seed: np.ndarray

    def __post_init__(self) -> None:
        if self.split not in ("train", "test"):
            raise ValueError("split must be train or test")
        object.__setattr__(
            self, "background_seed", np.asarray(self.background_seed, dtype=np.float64)
        )
        # Conservative separation check: circumscribed circles must not
        # intersect, which suffices for the default straight tool.
        for i, a in enumerate(self.parts):
            for b in self.parts[i + 1 :]:
                ra = float(np.linalg.norm(a.half_extents))
                rb = float(np.linalg.norm(b.half_extents))
                if float(np.linalg.norm(a.center - b.center)) < ra + rb:
                    raise ValueError(f"parts {a.name!r} and {b.name!r} overlap")


@dataclass(frozen=True)
class CategoryConfig:
    """Procedural category; train and test sizes come from disjoint bands."""

    name: str = "tool"
    f_dim: int = 16
    sigma_inst: float = 0.04
    train_hx: tuple[float, float] = (0.020, 0.026)
    test_hx: tuple[float, float] = (0.028, 0.034)
    train_hy: tuple[float, float] = (0.010, 0.013)
    test_hy: tuple[float, float] = (0.014, 0.017)
    train_height: tuple[float, float] = (0.020, 0.024)
    test_height: tuple[float, float] = (0.026, 0.030)

    def __post_init__(self) -> None:
        if self.f_dim < 4:
            raise ValueError("need at least 4 descriptor dimensions")
        if self.sigma_inst < 0.0:
            raise ValueError("sigma_inst must be >= 0")
        for lo, hi in (
            self.train_hx, self.test_hx, self.train_hy, self.test_hy,
            self.train_height, self.test_height,
        ):
            if not 0.0 < lo <= hi:
                raise ValueError("size intervals must be positive and ordered")


def category_bases(config: CategoryConfig) -> dict[str, np.ndarray]:
    """Orthonormal descriptor directions for handle, head, and table.

    Derived from the category name alone, so every instance of a category
    shares the same base directions.
    """
    rng = np.random.default_rng(zlib.crc32(config.name.encode("utf-8")))
    q, _ = np.linalg.qr(rng.normal(size=(config.f_dim, 3)))
    return {"handle": q[:, 0], "head": q[:, 1], "table": q[:, 2]}


def sample_instance(
    config: CategoryConfig, split: str, rng: np.random.Generator, index: int = 0
) -> ObjectInstance:
    """Draw one tool instance; sizes from the split's bands."""
    if split == "train":
        hx = rng.uniform(*config.train_hx)
        hy = rng.uniform(*config.train_hy)
        h = rng.uniform(*config.train_height)
    elif split == "test":
        hx = rng.uniform(*config.test_hx)
        hy = rng.uniform(*config.test_hy)
        h = rng.uniform(*config.test_height)
    else:
        raise ValueError("split must be train or test")
    bases = category_bases(config)
    offset = 1.5 * hx  # gap of one half-length between congruent boxes
    parts = []
    for name, cx in (("handle", -offset), ("head", offset)):
        seed = bases[name] + config.sigma_inst * rng.normal(size=config.f_dim)
        parts.append(
            PartBox(
                name=name,
                center=np.array([cx, 0.0]),
                half_extents=np.array([hx, hy]),
                yaw=0.0,
                height=h,
                seed=seed,
            )
        )
    return ObjectInstance(
        parts=tuple(parts),
        instance_id=f"{config.name}-{split}-{index}",
        split=split,
        background_seed=bases["table"],
    )


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    eps_pos: float = 0.01
    eps_yaw: float = 0.2
    step_cap: int = 120

    def __post_init__(self) -> None:
        if self.kind not in ("grasp-handle", "orient-handle-+x"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.eps_pos <= 0.0 or self.eps_yaw <= 0.0:
            raise ValueError("tolerances must be positive")
        if self.step_cap < 0:
            raise ValueError("step cap must be >= 0")

    @property
    def action_dim(self) -> int:
        return 4 if self.kind == "orient-handle-+x" else 3


@dataclass(frozen=True)
class SceneState:
    """Object pose, gripper, and attachment bookkeeping."""

    instance: ObjectInstance
    pose: np.ndarray  # (3,) object x, y, yaw
    gripper: np.ndarray  # (2,)
    grip_closed: bool
    attached_part: str | None
    attach_dist: float  # gripper-to-part-center distance frozen at attach
    ever_attached: bool
    ever_attached_head: bool
    steps: int


def reset_scene(instance: ObjectInstance, rng: np.random.Generator) -> SceneState:
    """Spawn with uniform yaw; the handle may end up on either side."""
    pose = np.array(
        [
            rng.uniform(-0.06, 0.06),
            rng.uniform(-0.06, 0.06),
            rng.uniform(-math.pi, math.pi),
        ]
    )
    return SceneState(
        instance=instance,
        pose=pose,
        gripper=np.array([0.0, -0.12]),
        grip_closed=False,
        attached_part=None,
        attach_dist=math.inf,
        ever_attached=False,
        ever_attached_head=False,
        steps=0,
    )


def proprio(state: SceneState) -> np.ndarray:
    return np.array(
        [state.gripper[0], state.gripper[1], 1.0 if state.grip_closed else -1.0]
    )


def wrap_angle(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


def _rot(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s], [s, c]])


def part_world_center(state: SceneState, name: str) -> np.ndarray:
    for part in state.instance.parts:
        if part.name == name:
            return state.pose[:2] + _rot(state.pose[2]) @ part.center
    raise KeyError(name)


def handle_angle(state: SceneState) -> float:
    """Angle of the object-center-to-handle direction, wrapped."""
    d = part_world_center(state, "handle") - state.pose[:2]
    return math.atan2(d[1], d[0])


def make_ring_cameras(
    n: int = 4,
    radius: float = 0.45,
    height: float = 0.45,
    size: int = 64,
    focal: float = 128.0,
) -> list[CameraModel]:
    """Cameras on a ring looking at the table center, 45 degrees down."""
    cams = []
    for i in range(n):
        ang = 2.0 * math.pi * i / n
        pos = np.array([radius * math.cos(ang), radius * math.sin(ang), height])
        fwd = -pos / np.linalg.norm(pos)
        right = np.cross(fwd, np.array([0.0, 0.0, 1.0]))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd])
        cams.append(
            CameraModel(
                fx=focal,
                fy=focal,
                cx=(size - 1) / 2.0,
                cy=(size - 1) / 2.0,
                rotation=rot,
                translation=-rot @ pos,
                width=size,
                height=size,
            )
        )
    return cams


def _ray_origin_dirs(cam: CameraModel, size: int):
    """World-frame origin and per-pixel directions scaled to unit camera z.

    With that scaling the ray parameter t is the camera-frame depth of the
    point, matching the projective-depth convention everywhere else.
    """
    us, vs = np.meshgrid(np.arange(size), np.arange(size))
    d_cam = np.stack(
        [(us - cam.cx) / cam.fx, (vs - cam.cy) / cam.fy, np.ones_like(us, dtype=np.float64)],
        axis=-1,
    )
    origin = -cam.rotation.T @ cam.translation
    return origin, d_cam @ cam.rotation


def _box_hits(origin, dirs, center2, yaw, half, height):
    """Slab test of every ray against one upright oriented box."""
    rot = _rot(-yaw)
    o_xy = rot @ (origin[:2] - center2)
    d_xy = dirs[..., :2] @ rot.T
    o = np.array([o_xy[0], o_xy[1], origin[2]])
    d = np.concatenate([d_xy, dirs[..., 2:3]], axis=-1)
    lo = np.array([-half[0], -half[1], 0.0])
    hi = np.array([half[0], half[1], height])
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    tn = np.nanmax(np.minimum(t1, t2), axis=-1)
    tf = np.nanmin(np.maximum(t1, t2), axis=-1)
    hit = (tn <= tf) & (tn > 1e-9)
    return np.where(hit, tn, np.inf)


def _trace(state: SceneState, cam: CameraModel, size: int):
    """Nearest-hit depth and part id per pixel.

    Part ids: 0..P-1 for object parts, -1 table, -2 miss.
    """
    origin, dirs = _ray_origin_dirs(cam, size)
    d_z = dirs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_table = -origin[2] / d_z
    t_table = np.where((t_table > 1e-9) & np.isfinite(t_table), t_table, np.inf)
    candidates = [t_table]
    rot_obj = _rot(state.pose[2])
    for part in state.instance.parts:
        center2 = state.pose[:2] + rot_obj @ part.center
        yaw = state.pose[2] + part.yaw
        candidates.append(
            _box_hits(origin, dirs, center2, yaw, part.half_extents, part.height)
        )
    stack = np.stack(candidates)
    best = np.argmin(stack, axis=0)
    depth = np.take_along_axis(stack, best[None], axis=0)[0]
    part_id = np.where(best == 0, -1, best - 1)
    part_id = np.where(np.isinf(depth), -2, part_id)
    return depth, part_id


def render_part_ids(
    state: SceneState, cams: Sequence[CameraModel], size: int = 64
) -> list[np.ndarray]:
    return [_trace(state, cam, size)[1] for cam in cams]


def render_views(
    state: SceneState,
    cams: Sequence[CameraModel],
    size: int = 64,
    sigma_pix: float = 0.02,
    rng: np.random.Generator | None = None,
) -> list[tuple[FeatureImage, DepthImage]]:
    """Per-view synthetic feature and depth images.

    sigma_pix > 0 requires an rng; sigma_pix == 0 draws nothing, so the
    rng state is untouched and pixels carry exact descriptors.
    """
    if sigma_pix > 0.0 and rng is None:
        raise ValueError("pixel noise needs an rng")
    f_dim = state.instance.background_seed.shape[0]
    seed_rows = np.stack(
        [p.seed for p in state.instance.parts] + [state.instance.background_seed]
    )
    out = []
    for cam in cams:
        depth, part_id = _trace(state, cam, size)
        valid = part_id != -2
        row = np.where(part_id >= 0, part_id, len(state.instance.parts))
        feats = seed_rows[row]
        if sigma_pix > 0.0:
            feats = feats + rng.normal(0.0, sigma_pix, size=(size, size, f_dim))
        out.append(
            (
                FeatureImage(feats.astype(np.float32)),
                DepthImage(
                    np.where(valid, depth, 0.0).astype(np.float32), valid
                ),
            )
        )
    return out


def cast_ray(
    state: SceneState, cam: CameraModel, u: float, v: float
) -> tuple[float, int, np.ndarray] | None:
    """Analytic hit for one subpixel ray; None on miss.

    Returns (camera-frame depth, part id with -1 for table, world point).
    """
    origin = -cam.rotation.T @ cam.translation
    d_cam = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    d = cam.rotation.T @ d_cam
    best_t, best_id = math.inf, -2
    if d[2] != 0.0:
        t = -origin[2] / d[2]
        if t > 1e-9:
            best_t, best_id = t, -1
    rot_obj = _rot(state.pose[2])
    for i, part in enumerate(state.instance.parts):
        center2 = state.pose[:2] + rot_obj @ part.center
        t = float(
            _box_hits(
                origin,
                d[None, None, :],
                center2,
                state.pose[2] + part.yaw,
                part.half_extents,
                part.height,
            )[0, 0]
        )
        if t < best_t:
            best_t, best_id = t, i
    if not math.isfinite(best_t):
        return None
    return best_t, best_id, origin + best_t * d


def step(state: SceneState, action: np.ndarray) -> SceneState:
    """Kinematic gripper step; attachment is level-triggered.

    Actions are (dx, dy, grip) or (dx, dy, dyaw, grip); grip > 0 means
    closed. Closing while within the grasp radius of a part center
    attaches that part; the object then follows gripper translation and
    rotates with dyaw about the gripper. Opening detaches.
    """
    a = np.asarray(action, dtype=np.float64)
    if a.shape == (3,):
        dxy, dyaw, grip = a[:2], 0.0, a[2]
    elif a.shape == (4,):
        dxy, dyaw, grip = a[:2], float(a[2]), a[3]
    else:
        raise ValueError("action must be (dx, dy, grip) or (dx, dy, dyaw, grip)")
    dxy = np.clip(dxy, -STEP_CAP_XY, STEP_CAP_XY)
    dyaw = float(np.clip(dyaw, -STEP_CAP_YAW, STEP_CAP_YAW))
    closed = bool(grip > 0.0)

    new_grip = np.clip(state.gripper + dxy, -WORKSPACE_XY, WORKSPACE_XY)
    moved = new_grip - state.gripper
    pose = state.pose.copy()
    # Opening releases before any motion: a detached object stays put.
    attached = state.attached_part if closed else None
    attach_dist = state.attach_dist if closed else math.inf
    ever_attached = state.ever_attached
    ever_head = state.ever_attached_head

    if attached is not None:
        pose[:2] = pose[:2] + moved
        if dyaw != 0.0:
            pose[:2] = new_grip + _rot(dyaw) @ (pose[:2] - new_grip)
            pose[2] = wrap_angle(pose[2] + dyaw)

    mid = replace(state, pose=pose, gripper=new_grip, grip_closed=closed)
    if closed and attached is None:
        best_name, best_d = None, GRASP_RADIUS
        for part in state.instance.parts:
            d = float(np.linalg.norm(part_world_center(mid, part.name) - new_grip))
            if d <= best_d:
                best_name, best_d = part.name, d
        if best_name is not None:
            attached = best_name
            attach_dist = best_d
            ever_attached = True
            if best_name == "head":
                ever_head = True

    return replace(
        mid,
        attached_part=attached,
        attach_dist=attach_dist,
        ever_attached=ever_attached,
        ever_attached_head=ever_head,
        steps=state.steps + 1,
    )


class Expert:
    """Scripted demonstrator; the approach side is fixed per episode."""

    def __init__(self, task: TaskSpec, rng: np.random.Generator):
        self.task = task
        self.side = 1.0 if rng.uniform() < 0.5 else -1.0
        self.reached_flank = False

    def action(self, state: SceneState) -> np.ndarray:
        if state.attached_part == "head" or state.ever_attached_head:
            raise ValueError("expert cannot solve from this state")
        orient = self.task.kind == "orient-handle-+x"

        def act(dxy, dyaw, grip):
            move = np.clip(dxy, -STEP_CAP_XY, STEP_CAP_XY)
            if orient:
                return np.array([move[0], move[1], dyaw, grip])
            return np.array([move[0], move[1], grip])

        if state.attached_part == "handle":
            if not orient:
                return act(np.zeros(2), 0.0, 1.0)
            off = wrap_angle(-handle_angle(state))
            if abs(off) > 0.5 * self.task.eps_yaw:
                return act(np.zeros(2), np.clip(off, -STEP_CAP_YAW, STEP_CAP_YAW), 1.0)
            return act(np.zeros(2), 0.0, -1.0)

        hc = part_world_center(state, "handle")
        lateral = _rot(state.pose[2]) @ np.array([0.0, 1.0])
        flank = hc + self.side * FLANK_DIST * lateral
        if not self.reached_flank:
            if float(np.linalg.norm(flank - state.gripper)) > 0.004:
                return act(flank - state.gripper, 0.0, -1.0)
            self.reached_flank = True
        if float(np.linalg.norm(hc - state.gripper)) > 0.6 * GRASP_RADIUS:
            return act(hc - state.gripper, 0.0, -1.0)
        return act(np.zeros(2), 0.0, 1.0)


def expert_action(
    state: SceneState, task: TaskSpec, rng: np.random.Generator
) -> np.ndarray:
    """One-shot wrapper; episode rollouts should hold an Expert instead."""
    return Expert(task, rng).action(state)


def check_success(state: SceneState, task: TaskSpec) -> bool:
    if task.kind == "grasp-handle":
        return (
            state.attached_part == "handle"
            and state.attach_dist <= task.eps_pos
            and not state.ever_attached_head
        )
    aligned = abs(wrap_angle(handle_angle(state))) <= task.eps_yaw
    return (
        aligned
        and state.attached_part is None
        and state.ever_attached
        and not state.ever_attached_head
    )
