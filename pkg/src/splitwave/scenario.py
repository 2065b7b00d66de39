"""Synthetic two-viewpoint depth-video and received-power scenarios.

A blocker walks across the link between the user equipment and the base
station on a piecewise-linear path. Two orthographic depth cameras with
orthogonal viewing axes watch complementary halves of the corridor: camera A
looks down the approach side, camera B along the link from the other side, so
each blockage event's onset is visible to exactly one camera well before the
link is hit. Received power follows the LoS level minus a blockage dip
proportional to the occlusion fraction, plus measurement noise.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

DATASET_VERSION = 1


class DatasetFormatError(Exception):
    """Base class for on-disk dataset problems."""


class DatasetHeaderError(DatasetFormatError):
    """Malformed or incomplete meta.txt / power.csv header."""


class DatasetTruncatedError(DatasetFormatError):
    """Binary payload shorter or longer than the header promises."""


class DatasetVersionError(DatasetFormatError):
    """Unsupported dataset format version."""


@dataclass(frozen=True)
class CameraPose:
    """Orthographic depth camera: position, orthogonal view/image axes, clip planes."""

    position: tuple
    view_axis: tuple        # unit vector, depth measured along it
    u_axis: tuple           # unit vector, image horizontal axis
    fov_width_m: float
    fov_height_m: float
    near_m: float
    far_m: float
    resolution: int = 40


@dataclass
class ScenePath:
    """Blocker trajectory (timestamped waypoints), link geometry and cameras."""

    waypoints: list                      # [(t_s, x_m, y_m)], nondecreasing t
    link_a: tuple = (0.0, 0.0)           # UE / camera-A end
    link_b: tuple = (6.0, 0.0)           # base-station end
    blocker_size_m: float = 0.6
    blocker_height_m: float = 1.8
    camera_a: CameraPose = field(default_factory=lambda: CameraPose(
        position=(3.0, 4.5), view_axis=(0.0, -1.0), u_axis=(1.0, 0.0),
        fov_width_m=6.5, fov_height_m=2.5, near_m=0.5, far_m=4.3))
    camera_b: CameraPose = field(default_factory=lambda: CameraPose(
        position=(-1.5, -1.8), view_axis=(1.0, 0.0), u_axis=(0.0, 1.0),
        fov_width_m=4.4, fov_height_m=2.5, near_m=0.5, far_m=6.5))

    def position_at(self, t: float):
        """Piecewise-linear blocker position, clamped to the first/last waypoint."""
        wp = self.waypoints
        if not wp:
            raise ValueError("scene has no waypoints")
        if t <= wp[0][0]:
            return np.array(wp[0][1:])
        for (t0, x0, y0), (t1, x1, y1) in zip(wp, wp[1:]):
            if t0 <= t <= t1:
                if t1 == t0:
                    return np.array([x1, y1])
                a = (t - t0) / (t1 - t0)
                return np.array([x0 + a * (x1 - x0), y0 + a * (y1 - y0)])
        return np.array(wp[-1][1:])

    def occlusion_fraction(self, t: float) -> float:
        """Blocker overlap with the link: a unit triangle across the link line.

        1 when the blocker centre sits on the link segment, falling linearly
        to 0 once the centre is half a blocker size away from the line; 0
        whenever its projection lies outside the segment span.
        """
        pos = self.position_at(t)
        a = np.asarray(self.link_a)
        b = np.asarray(self.link_b)
        d = b - a
        length = np.hypot(*d)
        dn = d / length
        rel = pos - a
        along = rel @ dn
        if along < 0.0 or along > length:
            return 0.0
        perp = abs(rel[0] * dn[1] - rel[1] * dn[0])
        half = self.blocker_size_m / 2.0
        return float(max(0.0, 1.0 - perp / half))


def default_scene(seed: int, duration_s: float,
                  speed_range=(1.2, 1.8), gap_range=(0.8, 1.6),
                  cross_x_range=(1.5, 4.5), start_y_range=(2.4, 3.0)) -> ScenePath:
    """Random crossing pattern: idle, walk straight across, park on the far side.

    Crossing sides alternate, so consecutive blockage onsets approach from
    opposite corridor halves. The path starts parked on the camera-A side,
    guaranteeing an initial LoS stretch.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5CE0E)))
    side = 1.0
    x = rng.uniform(*cross_x_range)
    y = side * rng.uniform(*start_y_range)
    t = 0.0
    waypoints = [(t, x, y)]
    while t < duration_s + 1.0:
        # idle drift to the next crossing x on the current side
        x_next = rng.uniform(*cross_x_range)
        t += rng.uniform(*gap_range)
        waypoints.append((t, x_next, y))
        # straight crossing to the opposite side
        y_end = -side * rng.uniform(*start_y_range)
        speed = rng.uniform(*speed_range)
        t += abs(y_end - y) / speed
        waypoints.append((t, x_next, y_end))
        side = -side
        x, y = x_next, y_end
    return ScenePath(waypoints=waypoints)


def render_depth(scene: ScenePath, pose: CameraPose, t: float,
                 noise_sigma: float = 0.0, rng: np.random.Generator = None) -> np.ndarray:
    """Orthographic silhouette render: background 1.0, blocker at normalized depth.

    The blocker appears as an axis-aligned rectangle whose pixel value is its
    distance along the viewing axis divided by the far plane; out-of-frustum
    blockers leave a clean background frame. Optional additive Gaussian noise
    is clipped so values stay in [0, 1]. Returns float32 (sensor resolution).
    """
    res = pose.resolution
    frame = np.ones((res, res))
    rel = scene.position_at(t) - np.asarray(pose.position)
    depth_m = float(rel @ np.asarray(pose.view_axis))
    u_m = float(rel @ np.asarray(pose.u_axis))
    if pose.near_m <= depth_m <= pose.far_m:
        half_w_px = scene.blocker_size_m / 2.0 / pose.fov_width_m * res
        u_px = (u_m / pose.fov_width_m + 0.5) * res
        left = int(np.floor(u_px - half_w_px))
        right = int(np.ceil(u_px + half_w_px))
        if right > 0 and left < res:
            h_px = min(res, int(round(scene.blocker_height_m
                                      / pose.fov_height_m * res)))
            depth_norm = min(1.0, depth_m / pose.far_m)
            frame[res - h_px:res, max(0, left):min(res, right)] = depth_norm
    if noise_sigma > 0.0:
        if rng is None:
            raise ValueError("noise requires a seeded generator")
        frame = np.clip(frame + rng.normal(0.0, noise_sigma, frame.shape), 0.0, 1.0)
    return frame.astype(np.float32)


def synth_power_trace(scene: ScenePath, n_samples: int, tau_s: float = 0.1,
                      los_dbm: float = -29.0, depth_db: float = 15.0,
                      noise_sigma_db: float = 0.5,
                      rng: np.random.Generator = None) -> np.ndarray:
    """Received power at t = 0, tau, ..., (n_samples-1)*tau in dBm."""
    occ = np.array([scene.occlusion_fraction(k * tau_s) for k in range(n_samples)])
    power = los_dbm - depth_db * occ
    if noise_sigma_db > 0.0:
        if rng is None:
            raise ValueError("noise requires a seeded generator")
        power = power + rng.normal(0.0, noise_sigma_db, power.shape)
    return power


def attenuation_from_power(power_dbm: np.ndarray, los_dbm: float = -29.0) -> np.ndarray:
    """Linear attenuation samples recovered from a (noisy) power trace."""
    att = 10.0 ** ((np.asarray(power_dbm) - los_dbm) / 10.0)
    return np.clip(att, 1e-6, 1.0)


@dataclass
class Sample:
    """One training/test record: frame windows, RSS pair and label power."""

    k: int
    cam_a: np.ndarray       # (4, H, W) float32 at (k-1), (k-2/3), (k-1/3), k
    cam_b: np.ndarray       # (2, H, W) float32 at (k-1), k
    rss_dbm: np.ndarray     # (2,) powers at (k-1), k
    y_dbm: float            # power at k+5


@dataclass
class Dataset:
    """Raw synchronized sequences plus the windowed samples built from them."""

    frames_a: np.ndarray    # (3K+1, H, W) float32 at t = j*tau/3
    frames_b: np.ndarray    # (K+1, H, W) float32 at t = k*tau
    power_dbm: np.ndarray   # (K+6,) at t = k*tau
    tau_s: float
    frame_ratio: float
    seed: int
    los_dbm: float = -29.0

    @property
    def k_max(self) -> int:
        return self.frames_b.shape[0] - 1

    def samples(self):
        return build_dataset(self.frames_a, self.frames_b, self.power_dbm,
                             self.frame_ratio)


def build_dataset(frames_a, frames_b, power_dbm, frame_ratio: float = 3.0,
                  look_ahead: int = 5):
    """Assemble windowed, labeled samples for k = 1..K.

    Sample k packs camera-B frames at (k-1, k), camera-A frames at
    (k-1, k-2/3, k-1/3, k), the received powers at (k-1, k) and the label
    P((k+look_ahead) tau). Requires the power trace to reach k = K+look_ahead.
    """
    if frame_ratio != 3.0:
        raise ValueError("dataset windows are defined for a frame ratio of 3")
    k_max = frames_b.shape[0] - 1
    if frames_a.shape[0] != 3 * k_max + 1:
        raise ValueError(
            f"camera-A sequence must hold 3K+1 frames, got {frames_a.shape[0]} "
            f"for K={k_max}")
    if power_dbm.shape[0] < k_max + look_ahead + 1:
        raise ValueError(
            f"power trace too short: need {k_max + look_ahead + 1} samples, "
            f"got {power_dbm.shape[0]}")
    samples = []
    for k in range(1, k_max + 1):
        ja = 3 * (k - 1)
        samples.append(Sample(
            k=k,
            cam_a=frames_a[ja:ja + 4],
            cam_b=frames_b[k - 1:k + 1],
            rss_dbm=np.asarray(power_dbm[k - 1:k + 1], dtype=np.float64),
            y_dbm=float(power_dbm[k + look_ahead]),
        ))
    return samples


def split_dataset(samples, ratio: float = 0.75):
    """Contiguous prefix/suffix split (time series; no shuffling)."""
    if not (0.0 < ratio < 1.0):
        raise ValueError("split ratio must be in (0, 1)")
    cut = int(np.floor(len(samples) * ratio))
    if cut == 0 or cut == len(samples):
        raise ValueError(f"split leaves an empty side (K={len(samples)}, ratio={ratio})")
    return samples[:cut], samples[cut:]


def generate_dataset(seed: int, k_samples: int, tau_s: float = 0.1,
                     pixel_noise_sigma: float = 0.01,
                     power_noise_sigma_db: float = 0.5,
                     los_dbm: float = -29.0, depth_db: float = 15.0,
                     scene: ScenePath = None) -> Dataset:
    """Deterministic scenario generation: scene, frames, powers from one seed."""
    duration = (k_samples + 6) * tau_s
    if scene is None:
        scene = default_scene(seed, duration)
    ss = np.random.SeedSequence((seed, DATASET_VERSION))
    rng_a, rng_b, rng_p = (np.random.default_rng(s) for s in ss.spawn(3))
    frames_a = np.stack([
        render_depth(scene, scene.camera_a, j * tau_s / 3.0,
                     pixel_noise_sigma, rng_a)
        for j in range(3 * k_samples + 1)])
    frames_b = np.stack([
        render_depth(scene, scene.camera_b, k * tau_s,
                     pixel_noise_sigma, rng_b)
        for k in range(k_samples + 1)])
    power = synth_power_trace(scene, k_samples + 6, tau_s, los_dbm, depth_db,
                              power_noise_sigma_db, rng_p)
    return Dataset(frames_a=frames_a, frames_b=frames_b, power_dbm=power,
                   tau_s=tau_s, frame_ratio=3.0, seed=seed, los_dbm=los_dbm)


# ---- on-disk container --------------------------------------------------------

_META_KEYS = ("format_version", "k", "tau_s", "frame_ratio", "seed",
              "frame_h", "frame_w", "los_dbm")


def save_dataset(ds: Dataset, path):
    """Write the documented directory container (little-endian float32 frames)."""
    os.makedirs(path, exist_ok=True)
    h, w = ds.frames_b.shape[1:]
    meta = {
        "format_version": DATASET_VERSION,
        "k": ds.k_max,
        "tau_s": repr(ds.tau_s),
        "frame_ratio": repr(ds.frame_ratio),
        "seed": ds.seed,
        "frame_h": h,
        "frame_w": w,
        "los_dbm": repr(ds.los_dbm),
    }
    with open(os.path.join(path, "meta.txt"), "w", encoding="utf-8") as f:
        for key in _META_KEYS:
            f.write(f"{key}={meta[key]}\n")
    ds.frames_a.astype("<f4").tofile(os.path.join(path, "cam_a.bin"))
    ds.frames_b.astype("<f4").tofile(os.path.join(path, "cam_b.bin"))
    with open(os.path.join(path, "power.csv"), "w", encoding="utf-8") as f:
        f.write("k,p_dbm\n")
        for k, p in enumerate(ds.power_dbm):
            f.write(f"{k},{p!r}\n")


def load_dataset(path) -> Dataset:
    """Read a dataset container; round-trips save_dataset bitwise."""
    meta_path = os.path.join(path, "meta.txt")
    if not os.path.exists(meta_path):
        raise DatasetHeaderError(f"missing meta.txt in {path}")
    meta = {}
    with open(meta_path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DatasetHeaderError(f"malformed meta line: {line!r}")
            key, value = line.split("=", 1)
            meta[key] = value
    missing = [k for k in _META_KEYS if k not in meta]
    if missing:
        raise DatasetHeaderError(f"meta.txt missing keys: {missing}")
    if int(meta["format_version"]) != DATASET_VERSION:
        raise DatasetVersionError(
            f"unsupported format version {meta['format_version']}")
    k = int(meta["k"])
    h, w = int(meta["frame_h"]), int(meta["frame_w"])

    def read_frames(name, count):
        raw = np.fromfile(os.path.join(path, name), dtype="<f4")
        if raw.size != count * h * w:
            raise DatasetTruncatedError(
                f"{name}: expected {count * h * w} float32 values, got {raw.size}")
        return raw.reshape(count, h, w)

    frames_a = read_frames("cam_a.bin", 3 * k + 1)
    frames_b = read_frames("cam_b.bin", k + 1)
    power_path = os.path.join(path, "power.csv")
    with open(power_path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "k,p_dbm":
            raise DatasetHeaderError(f"unexpected power.csv header: {header!r}")
        power = [float(line.split(",")[1]) for line in f if line.strip()]
    if len(power) < k + 6:
        raise DatasetTruncatedError(
            f"power.csv: expected at least {k + 6} rows, got {len(power)}")
    return Dataset(frames_a=frames_a, frames_b=frames_b,
                   power_dbm=np.asarray(power), tau_s=float(meta["tau_s"]),
                   frame_ratio=float(meta["frame_ratio"]),
                   seed=int(meta["seed"]), los_dbm=float(meta["los_dbm"]))
