"""Synthetic robot-motion videos with exact masks and pose-delta logs.

A scene is a static background plus a rigid two-part sprite (rectangular body
and a thin forward arm) driven by a list of planar pose deltas. Image axes are
the reference frame: +dx moves right, +dy moves down, +dpsi turns clockwise on
screen. One frame corresponds to one second of motion.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .embeddings import POSE_FIELDS, PoseDelta

TRAJECTORY_KINDS = ("line", "arc", "piecewise", "shuttle")
ROBOT_INDEX = 1  # palette index of robot pixels in mask PNGs
MASK_PALETTE = [0, 0, 0, 255, 255, 255]


@dataclass(frozen=True)
class RobotSprite:
    """Sprite geometry in pixels (independent of the metric scale)."""

    body_length: float = 6.0
    body_width: float = 4.0
    arm_length: float = 5.0
    arm_width: float = 2.0
    body_color: tuple = (0.86, 0.22, 0.16)
    arm_color: tuple = (0.97, 0.84, 0.12)

    def scaled(self, k: float) -> "RobotSprite":
        if not k > 0:
            raise ValueError(f"sprite scale must be positive, got {k}")
        return replace(self, body_length=k * self.body_length, body_width=k * self.body_width,
                       arm_length=k * self.arm_length, arm_width=k * self.arm_width)

    @property
    def centroid_offset(self) -> float:
        """Distance of the area centroid ahead of the body centre, along the heading."""
        body = self.body_length * self.body_width
        arm = self.arm_length * self.arm_width
        return arm * (self.body_length / 2 + self.arm_length / 2) / (body + arm)

    def rectangles(self):
        """(u0, u1, v0, v1, colour) in centroid-centred local coordinates; u points forward."""
        c = self.centroid_offset
        hb, wb, wa = self.body_length / 2, self.body_width / 2, self.arm_width / 2
        return [
            (-hb - c, hb - c, -wb, wb, self.body_color),
            (hb - c, hb + self.arm_length - c, -wa, wa, self.arm_color),
        ]


@dataclass
class SceneSpec:
    width: int
    height: int
    trajectory: list
    start: tuple = (0.0, 0.0, 0.0)  # x px, y px, heading rad
    background: int = 0
    pixels_per_metre: float = 2.5
    mask_classes: int = 1
    sprite: RobotSprite = field(default_factory=RobotSprite)

    def __post_init__(self):
        if self.mask_classes not in (1, 2):
            raise ValueError("mask_classes must be 1 (robot) or 2 (robot + background)")

    @property
    def n_frames(self) -> int:
        return len(self.trajectory) + 1

    def pose(self, frame_index: int) -> tuple[float, float, float]:
        if not 0 <= frame_index < self.n_frames:
            raise IndexError(f"frame {frame_index} outside [0, {self.n_frames})")
        x, y, psi = self.start
        for d in self.trajectory[:frame_index]:
            x += d.dx * self.pixels_per_metre
            y += d.dy * self.pixels_per_metre
            psi += d.dpsi
        return x, y, psi


@dataclass
class DatasetRecord:
    """Frames (3, H, W) in [-1, 1], one-hot masks (S, H, W) and the transitions between frames."""

    frames: list
    masks: list
    pose_deltas: list
    background: np.ndarray | None = None
    fps: float = 1.0
    pixels_per_metre: float | None = None

    def __post_init__(self):
        if len(self.frames) != len(self.masks):
            raise ValueError(f"{len(self.frames)} frames but {len(self.masks)} masks")
        if self.frames and len(self.pose_deltas) != len(self.frames) - 1:
            raise ValueError(f"{len(self.frames)} frames need {len(self.frames) - 1} pose deltas, "
                             f"got {len(self.pose_deltas)}")
        for f, m in zip(self.frames, self.masks):
            if f.shape[1:] != m.shape[1:]:
                raise ValueError("mask and frame sizes differ")

    def __len__(self):
        return len(self.frames)

    @property
    def mask_classes(self) -> int:
        return int(self.masks[0].shape[0])

    def robot_mask(self, i: int) -> np.ndarray:
        return self.masks[i][-1] > 0.5

    def slice(self, start: int, stop: int) -> "DatasetRecord":
        return DatasetRecord(self.frames[start:stop], self.masks[start:stop],
                             self.pose_deltas[start:max(start, stop - 1)],
                             self.background, self.fps, self.pixels_per_metre)


def gen_trajectory(kind: str, n_frames: int, speed: float = 1.0, turn_rate: float = 0.0,
                   rng: np.random.Generator | None = None, heading: float = 0.0) -> list[PoseDelta]:
    """Planar pose deltas for ``n_frames - 1`` transitions.

    ``line`` keeps the heading; ``arc`` turns by ``turn_rate`` rad each frame and
    moves ``speed`` metres along the new heading; ``piecewise`` draws segments of
    3-6 frames with random speed (sometimes reversing) and turn in
    {-turn_rate, 0, +turn_rate}; ``shuttle`` drives back and forth along the
    heading in legs of 3-6 frames, so the same view recurs with opposite motion.
    """
    if kind not in TRAJECTORY_KINDS:
        raise ValueError(f"unknown trajectory kind {kind!r}")
    if n_frames < 2:
        raise ValueError("a trajectory needs at least 2 frames")
    rng = rng if rng is not None else np.random.default_rng(0)
    n = n_frames - 1
    if kind == "line":
        speeds, turns = np.full(n, speed), np.zeros(n)
    elif kind == "arc":
        speeds, turns = np.full(n, speed), np.full(n, turn_rate)
    elif kind == "shuttle":
        speeds, turns = np.empty(n), np.zeros(n)
        i, sign = 0, 1.0
        while i < n:
            seg = int(rng.integers(3, 7))
            speeds[i:i + seg] = sign * speed
            sign = -sign
            i += seg
    else:
        speeds, turns = np.empty(n), np.empty(n)
        i = 0
        while i < n:
            seg = int(rng.integers(3, 7))
            v = speed * rng.choice([-1.0, 0.5, 1.0, 1.5, 2.0])
            w = turn_rate * rng.choice([-1.0, 0.0, 1.0])
            speeds[i:i + seg] = v
            turns[i:i + seg] = w
            i += seg
    out = []
    psi = heading
    for v, w in zip(speeds, turns):
        psi_new = psi + w
        dx = v * math.cos(psi_new)
        dy = v * math.sin(psi_new)
        # drop floating dust so axis-aligned motion is exact
        dx = 0.0 if abs(dx) < 1e-12 else dx
        dy = 0.0 if abs(dy) < 1e-12 else dy
        out.append(PoseDelta(dx, dy, 0.0, 0.0, 0.0, float(w)))
        psi = psi_new
    return out


def _background_rgb(style: int, height: int, width: int) -> np.ndarray:
    """Static background in [0, 1], (H, W, 3). Colours stay far from the sprite colours."""
    yy, xx = np.mgrid[0:height, 0:width]
    img = np.empty((height, width, 3))
    if style == 0:
        shade = 0.36 + 0.14 * yy / max(height - 1, 1)
        img[...] = shade[..., None]
        img[: max(height // 6, 1)] = (0.22, 0.25, 0.30)  # wall band
        img[2:height // 3, width - width // 5 - 2:width - 2] = (0.20, 0.30, 0.55)  # cabinet
    elif style == 1:
        tiles = ((yy // 8 + xx // 8) % 2).astype(float)
        img[...] = (0.40 + 0.12 * tiles)[..., None]
        img[1:height // 4, 2:width // 6] = (0.18, 0.52, 0.28)
        img[height - height // 4:height - 1, width - width // 6:width - 2] = (0.25, 0.30, 0.60)
    else:
        raise ValueError(f"unknown background style {style}")
    return img


def _sprite_layers(spec: SceneSpec, frame_index: int):
    x, y, psi = spec.pose(frame_index)
    H, W = spec.height, spec.width
    c, s = math.cos(psi), math.sin(psi)
    for u0, u1, v0, v1, _ in spec.sprite.rectangles():
        for u in (u0, u1):
            for v in (v0, v1):
                px, py = x + c * u - s * v, y + s * u + c * v
                if not (0 <= px <= W - 1 and 0 <= py <= H - 1):
                    raise ValueError(f"robot leaves the {W}x{H} canvas at frame {frame_index}")
    yy, xx = np.mgrid[0:H, 0:W].astype(float)
    u = c * (xx - x) + s * (yy - y)
    v = -s * (xx - x) + c * (yy - y)
    for u0, u1, v0, v1, colour in spec.sprite.rectangles():
        yield (u >= u0) & (u < u1) & (v >= v0) & (v < v1), colour


def render(spec: SceneSpec, frame_index: int) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize one frame. Returns (frame (3, H, W) in [-1, 1], one-hot mask (S, H, W))."""
    img = _background_rgb(spec.background, spec.height, spec.width)
    robot = np.zeros((spec.height, spec.width), dtype=bool)
    for inside, colour in _sprite_layers(spec, frame_index):
        img[inside] = colour
        robot |= inside
    frame = (2.0 * img - 1.0).transpose(2, 0, 1).astype(np.float32)
    if spec.mask_classes == 1:
        mask = robot[None].astype(np.float32)
    else:
        mask = np.stack([~robot, robot]).astype(np.float32)
    return frame, mask


def render_background(spec: SceneSpec) -> np.ndarray:
    img = _background_rgb(spec.background, spec.height, spec.width)
    return (2.0 * img - 1.0).transpose(2, 0, 1).astype(np.float32)


def _path_extent(spec: SceneSpec):
    xs, ys = [], []
    reach = max(abs(u) for r in spec.sprite.rectangles() for u in r[:2])
    reach = math.hypot(reach, spec.sprite.body_width / 2)
    for i in range(spec.n_frames):
        x, y, _ = spec.pose(i)
        xs.append(x)
        ys.append(y)
    return min(xs) - reach, max(xs) + reach, min(ys) - reach, max(ys) + reach


def make_scene(n_frames: int = 21, width: int = 64, height: int = 36, trajectory: str = "arc",
               seed: int = 0, mask_classes: int = 1, background: int = 0,
               pixels_per_metre: float = 2.5, speed: float = 1.0, turn_rate: float = 0.251,
               max_tries: int = 200, sprite: RobotSprite | None = None) -> SceneSpec:
    """Draw a trajectory and place it so the whole motion stays on the canvas.

    Piecewise trajectories are redrawn (deterministically, from ``seed``) until
    one fits.
    """
    rng = np.random.default_rng(seed)
    sprite = RobotSprite() if sprite is None else sprite
    for _ in range(max_tries):
        heading = float(rng.uniform(0, 2 * math.pi)) if trajectory not in ("line", "shuttle") else 0.0
        deltas = gen_trajectory(trajectory, n_frames, speed, turn_rate, rng, heading)
        spec = SceneSpec(width, height, deltas, (0.0, 0.0, heading), background,
                         pixels_per_metre, mask_classes, sprite)
        x0, x1, y0, y1 = _path_extent(spec)
        if x1 - x0 <= width - 2 and y1 - y0 <= height - 2:
            sx = (width - 1) / 2 - (x0 + x1) / 2
            sy = (height - 1) / 2 - (y0 + y1) / 2
            spec.start = (sx, sy, heading)
            return spec
    raise ValueError(f"could not fit a {trajectory} trajectory of {n_frames} frames in {width}x{height}")


def build_record(spec: SceneSpec) -> DatasetRecord:
    frames, masks = [], []
    for i in range(spec.n_frames):
        f, m = render(spec, i)
        frames.append(f)
        masks.append(m)
    return DatasetRecord(frames, masks, list(spec.trajectory), render_background(spec),
                         fps=1.0, pixels_per_metre=spec.pixels_per_metre)


# --- on-disk format -------------------------------------------------------

def frame_to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.round((np.asarray(frame) + 1.0) * 127.5), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def uint8_to_frame(rgb: np.ndarray) -> np.ndarray:
    return (rgb.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1)


def save_frame_png(frame: np.ndarray, path) -> None:
    Image.fromarray(frame_to_uint8(frame)).save(path)


def load_frame_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return uint8_to_frame(np.asarray(im.convert("RGB")))


def save_mask_png(mask: np.ndarray, path) -> None:
    """One-hot (S, H, W) -> palette PNG; index 1 = robot, 0 = background / unlabeled."""
    idx = (mask[-1] > 0.5).astype(np.uint8) * ROBOT_INDEX
    im = Image.frombytes("P", (idx.shape[1], idx.shape[0]), idx.tobytes())
    im.putpalette(MASK_PALETTE)
    im.save(path)


def load_mask_png(path, mask_classes: int) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "P":
            raise ValueError(f"{path}: mask PNGs must be palette images")
        idx = np.asarray(im)
    robot = idx == ROBOT_INDEX
    if mask_classes == 1:
        return robot[None].astype(np.float32)
    return np.stack([~robot, robot]).astype(np.float32)


def _fmt(v: float) -> str:
    return f"{v + 0.0:.6f}"


def write_poses_csv(deltas, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POSE_FIELDS)
        for d in deltas:
            w.writerow([_fmt(v) for v in d.as_array()])


def read_poses_csv(path) -> list[PoseDelta]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip() for c in rows[0]) != POSE_FIELDS:
        raise ValueError(f"{path}: header must be {','.join(POSE_FIELDS)}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 6:
            raise ValueError(f"{path}:{lineno}: expected 6 columns, got {len(row)}")
        try:
            out.append(PoseDelta(*(float(c) for c in row)))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return out


def export_dataset(rec: DatasetRecord, directory) -> Path:
    d = Path(directory)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    (d / "masks").mkdir(parents=True, exist_ok=True)
    for i, (f, m) in enumerate(zip(rec.frames, rec.masks)):
        save_frame_png(f, d / "frames" / f"{i:05d}.png")
        save_mask_png(m, d / "masks" / f"{i:05d}.png")
    write_poses_csv(rec.pose_deltas, d / "poses.csv")
    if rec.background is not None:
        save_frame_png(rec.background, d / "background.png")
    meta = [f"fps={rec.fps:g}", f"mask_classes={rec.mask_classes}"]
    if rec.pixels_per_metre is not None:
        meta.append(f"pixels_per_metre={rec.pixels_per_metre:g}")
    (d / "meta.txt").write_text("\n".join(meta) + "\n")
    return d


def load_dataset(directory) -> DatasetRecord:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"dataset directory {d} does not exist")
    meta = {}
    if (d / "meta.txt").exists():
        for line in (d / "meta.txt").read_text().splitlines():
            if line.strip():
                k, _, v = line.partition("=")
                meta[k.strip()] = v.strip()
    classes = int(meta.get("mask_classes", 1))
    frame_files = sorted((d / "frames").glob("*.png"))
    mask_files = sorted((d / "masks").glob("*.png"))
    if not frame_files:
        raise FileNotFoundError(f"no frames under {d / 'frames'}")
    if [p.name for p in frame_files] != [p.name for p in mask_files]:
        raise FileNotFoundError("frames/ and masks/ do not contain the same file names")
    if not (d / "poses.csv").exists():
        raise FileNotFoundError(f"missing {d / 'poses.csv'}")
    deltas = read_poses_csv(d / "poses.csv")
    if len(deltas) != len(frame_files) - 1:
        raise ValueError(f"poses.csv has {len(deltas)} rows for {len(frame_files)} frames")
    frames = [load_frame_png(p) for p in frame_files]
    masks = [load_mask_png(p, classes) for p in mask_files]
    bg = load_frame_png(d / "background.png") if (d / "background.png").exists() else None
    ppm = float(meta["pixels_per_metre"]) if "pixels_per_metre" in meta else None
    return DatasetRecord(frames, masks, deltas, bg, float(meta.get("fps", 1.0)), ppm)
