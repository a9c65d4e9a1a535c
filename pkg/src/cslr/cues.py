"""Landmark streams -> model inputs.

Three per-hand sign characteristics are extracted from tracked 2D
landmarks: a binary skeleton image of the hand shape, the palm-center
displacement between consecutive frames, and a one-hot of the nearest
head/torso region.  A full-scene renderer produces binary frames for the
raw-frame architecture.  Everything here is deterministic arithmetic so
outputs are reproducible bit for bit.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, SchemaError

POSE_KEYS = (
    "left_eye",
    "right_eye",
    "mouth_left",
    "mouth_right",
    "left_shoulder",
    "right_shoulder",
)

# standard 21-landmark hand graph: wrist, thumb chain, four finger chains,
# finger-base webbing, and the wrist-to-pinky-base palm edge
HAND_EDGES = (
    (0, 1), (1, 2), (2, 3), (3, 4),
    (0, 5), (5, 6), (6, 7), (7, 8),
    (5, 9), (9, 10), (10, 11), (11, 12),
    (9, 13), (13, 14), (14, 15), (15, 16),
    (13, 17), (17, 18), (18, 19), (19, 20),
    (0, 17),
)

PALM_LANDMARKS = (0, 5, 9, 13, 17)  # wrist + four finger bases

DEFAULT_IMAGE_SIDE = 32
DEFAULT_FRAME_SIDE = 96


@dataclass
class LandmarkFrame:
    """One tracked time step; hands may be absent, pose never is."""

    index: int
    left: np.ndarray | None   # (21, 2) in [0,1] image coordinates
    right: np.ndarray | None
    pose: dict  # POSE_KEYS -> (2,) arrays

    def hand(self, side):
        return self.left if side == "left" else self.right


@dataclass
class CueSequences:
    """The six per-sentence input streams, all sharing length T."""

    left_images: np.ndarray   # (T, 1, S, S) uint8 in {0,1}
    right_images: np.ndarray
    left_disp: np.ndarray     # (T, 2) float32
    right_disp: np.ndarray
    left_loc: np.ndarray      # (T, 3) float32 one-hot or zero rows
    right_loc: np.ndarray

    def __len__(self):
        return self.left_images.shape[0]


def _parse_hand(value, name, line_number):
    if value is None:
        return None
    pts = np.asarray(value, dtype=np.float64)
    if pts.shape != (21, 2):
        raise SchemaError(
            f"line {line_number}: hand {name!r} must have 21 [x, y] points, got shape {pts.shape}"
        )
    if not np.isfinite(pts).all():
        raise SchemaError(f"line {line_number}: hand {name!r} has non-finite coordinates")
    return pts


def parse_landmark_stream(stream):
    """Parse JSON-lines landmark data into LandmarkFrames ordered by index.

    stream: iterable of lines (str or bytes) or an open file object.
    """
    frames = []
    for line_number, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line_number) from None
        if not isinstance(obj, dict) or "t" not in obj:
            raise SchemaError(f"line {line_number}: frame object needs a 't' index")
        pose_obj = obj.get("pose")
        if not isinstance(pose_obj, dict):
            raise SchemaError(f"line {line_number}: missing pose object")
        pose = {}
        for key in POSE_KEYS:
            if key not in pose_obj:
                raise SchemaError(f"line {line_number}: missing pose key {key!r}")
            pt = np.asarray(pose_obj[key], dtype=np.float64)
            if pt.shape != (2,) or not np.isfinite(pt).all():
                raise SchemaError(f"line {line_number}: pose key {key!r} must be a finite [x, y]")
            pose[key] = pt
        frames.append(
            LandmarkFrame(
                index=int(obj["t"]),
                left=_parse_hand(obj.get("left"), "left", line_number),
                right=_parse_hand(obj.get("right"), "right", line_number),
                pose=pose,
            )
        )
    frames.sort(key=lambda f: f.index)
    return frames


def load_landmarks(path):
    with open(path, "r", encoding="utf-8") as fp:
        return parse_landmark_stream(fp)


def frame_to_json(frame: LandmarkFrame) -> str:
    """Inverse of the parser, with coordinates rounded to 6 decimals so
    regenerated corpora are byte-stable."""

    def points(arr):
        return None if arr is None else [[round(float(x), 6), round(float(y), 6)] for x, y in arr]

    obj = {
        "t": frame.index,
        "left": points(frame.left),
        "right": points(frame.right),
        "pose": {k: [round(float(v[0]), 6), round(float(v[1]), 6)] for k, v in frame.pose.items()},
    }
    return json.dumps(obj, separators=(",", ":"))


def bresenham(p0, p1):
    """Integer line pixels from p0 to p1 inclusive, classic midpoint walk."""
    x0, y0 = p0
    x1, y1 = p1
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    pixels = []
    while True:
        pixels.append((x0, y0))
        if x0 == x1 and y0 == y1:
            break
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy
    return pixels


def _axis_span(lo, hi, margin):
    """Expanded [lo, hi]; a collapsed axis becomes a unit span centered on it."""
    size = hi - lo
    if size <= 0.0:
        center = 0.5 * (lo + hi)
        return center - 0.5, 1.0
    pad = margin * size
    return lo - pad, size + 2.0 * pad


def _to_pixel(value, origin, span, side):
    scaled = (value - origin) / span * side
    idx = int(np.floor(scaled))
    return min(max(idx, 0), side - 1)


def rasterize_hand(points, side=DEFAULT_IMAGE_SIDE):
    """21 landmarks -> side x side binary skeleton image.

    The landmark bounding box, expanded by 10% per side, maps onto the
    full image, which makes the result invariant to global translation
    and uniform scaling of the hand.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (21, 2):
        raise ValueError(f"expected (21, 2) landmarks, got {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("non-finite hand coordinates")
    x0, w = _axis_span(pts[:, 0].min(), pts[:, 0].max(), 0.1)
    y0, h = _axis_span(pts[:, 1].min(), pts[:, 1].max(), 0.1)
    image = np.zeros((side, side), dtype=np.uint8)
    pix = [
        (_to_pixel(x, x0, w, side), _to_pixel(y, y0, h, side))
        for x, y in pts
    ]
    for a, b in HAND_EDGES:
        for px, py in bresenham(pix[a], pix[b]):
            image[py, px] = 1
    return image


def palm_center(points):
    return np.asarray(points, dtype=np.float64)[list(PALM_LANDMARKS)].mean(axis=0)


def _shoulder_width(pose):
    width = float(np.linalg.norm(pose["left_shoulder"] - pose["right_shoulder"]))
    return max(width, 1e-3)


def palm_displacement_seq(frames, hand):
    """Per-frame palm-center displacement, normalized by shoulder width.

    Row 0 is (0, 0) by convention; a missing hand at either end of a step
    yields (0, 0) for that row.
    """
    out = np.zeros((len(frames), 2), dtype=np.float32)
    for t in range(1, len(frames)):
        cur = frames[t].hand(hand)
        prev = frames[t - 1].hand(hand)
        if cur is None or prev is None:
            continue
        delta = palm_center(cur) - palm_center(prev)
        out[t] = (delta / _shoulder_width(frames[t].pose)).astype(np.float32)
    return out


def _region_points(pose):
    eyes = 0.5 * (pose["left_eye"] + pose["right_eye"])
    mouth = 0.5 * (pose["mouth_left"] + pose["mouth_right"])
    chest = 0.5 * (pose["left_shoulder"] + pose["right_shoulder"])
    return eyes, mouth, chest


def location_onehot_seq(frames, hand):
    """One-hot of the reference region (eyes, mouth, chest) nearest the
    palm center; distance ties resolve in that order; missing hand rows
    stay all-zero."""
    out = np.zeros((len(frames), 3), dtype=np.float32)
    for t, frame in enumerate(frames):
        pts = frame.hand(hand)
        if pts is None:
            continue
        center = palm_center(pts)
        distances = [np.linalg.norm(center - ref) for ref in _region_points(frame.pose)]
        out[t, int(np.argmin(distances))] = 1.0
    return out


def build_cue_sequences(frames, side=DEFAULT_IMAGE_SIDE):
    """All six input streams for a sentence; missing hands contribute
    all-zero images and rows."""
    if not frames:
        raise ValueError("cannot build cues from an empty frame sequence")
    t_len = len(frames)
    images = {
        "left": np.zeros((t_len, 1, side, side), dtype=np.uint8),
        "right": np.zeros((t_len, 1, side, side), dtype=np.uint8),
    }
    for t, frame in enumerate(frames):
        for hand in ("left", "right"):
            pts = frame.hand(hand)
            if pts is not None:
                images[hand][t, 0] = rasterize_hand(pts, side)
    return CueSequences(
        left_images=images["left"],
        right_images=images["right"],
        left_disp=palm_displacement_seq(frames, "left"),
        right_disp=palm_displacement_seq(frames, "right"),
        left_loc=location_onehot_seq(frames, "left"),
        right_loc=location_onehot_seq(frames, "right"),
    )


def _abs_pixel(point, side):
    px = min(max(int(np.floor(point[0] * side)), 0), side - 1)
    py = min(max(int(np.floor(point[1] * side)), 0), side - 1)
    return px, py


def _circle_pixels(cx, cy, radius):
    """Midpoint circle; radius 0 degenerates to the center pixel."""
    if radius <= 0:
        return [(cx, cy)]
    pixels = []
    x, y = radius, 0
    err = 1 - radius
    while x >= y:
        for dx, dy in (
            (x, y), (y, x), (-y, x), (-x, y),
            (-x, -y), (-y, -x), (y, -x), (x, -y),
        ):
            pixels.append((cx + dx, cy + dy))
        y += 1
        if err < 0:
            err += 2 * y + 1
        else:
            x -= 1
            err += 2 * (y - x) + 1
    return pixels


def render_scene_frame(frame: LandmarkFrame, side=DEFAULT_FRAME_SIDE):
    """Whole-scene binary frame in absolute coordinates: hand skeletons,
    the shoulder segment, and a head circle of radius half the eye gap."""
    image = np.zeros((side, side), dtype=np.uint8)

    def draw_line(p0, p1):
        for px, py in bresenham(_abs_pixel(p0, side), _abs_pixel(p1, side)):
            image[py, px] = 1

    for hand in ("left", "right"):
        pts = frame.hand(hand)
        if pts is None:
            continue
        pix = [_abs_pixel(p, side) for p in pts]
        for a, b in HAND_EDGES:
            for px, py in bresenham(pix[a], pix[b]):
                image[py, px] = 1
    draw_line(frame.pose["left_shoulder"], frame.pose["right_shoulder"])
    eye_mid = 0.5 * (frame.pose["left_eye"] + frame.pose["right_eye"])
    eye_gap = float(np.linalg.norm(frame.pose["left_eye"] - frame.pose["right_eye"]))
    cx, cy = _abs_pixel(eye_mid, side)
    radius = int(eye_gap / 2.0 * side + 0.5)
    for px, py in _circle_pixels(cx, cy, radius):
        if 0 <= px < side and 0 <= py < side:
            image[py, px] = 1
    return image


def write_pgm(image, path):
    """Binary image {0,1} -> binary PGM (P5), maxval 255."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise ValueError(f"PGM writer expects a 2D image, got shape {image.shape}")
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fp:
        fp.write(header)
        fp.write((image * 255).astype(np.uint8).tobytes())


def read_pgm(path):
    """P5 PGM -> binary {0,1} uint8 image (values > 127 count as set)."""
    with open(path, "rb") as fp:
        data = fp.read()
    fields = []
    idx = 0
    while len(fields) < 4:
        while idx < len(data) and data[idx:idx + 1].isspace():
            idx += 1
        if data[idx:idx + 1] == b"#":  # comment line
            while idx < len(data) and data[idx] != 0x0A:
                idx += 1
            continue
        start = idx
        while idx < len(data) and not data[idx:idx + 1].isspace():
            idx += 1
        fields.append(data[start:idx])
    idx += 1  # single whitespace after maxval
    if fields[0] != b"P5":
        raise ParseError(f"not a binary PGM: magic {fields[0]!r}")
    width, height, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ParseError(f"unsupported PGM maxval {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=idx)
    if pixels.size != width * height:
        raise ParseError("truncated PGM payload")
    return (pixels.reshape(height, width) > 127).astype(np.uint8)
