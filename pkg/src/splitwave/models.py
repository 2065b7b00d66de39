"""Split network segments, frame-rate balancing, aggregation and protocols.

A camera segment (conv1-norm1-conv2-norm2-pool-recurrent1) turns a frame
sequence into 20x20 feature activations; the base-station segment fuses image
features with RSS features (recurrent2) through two fully connected layers
into a scalar power prediction. Training exchanges boundary activations
uplink and their gradients downlink; the federated baseline alternates
cameras and averages camera-side weights instead of fusing features.
"""

from __future__ import annotations

import enum
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .layers import (AvgPool2, BatchNorm, Conv2D, ConvLSTM, FullyConnected,
                     LayerKind, LayerSpec, Mode, count_ops)
from .optim import Adam
from .tensor import Tensor, concat, no_grad, stack


class Balance(enum.Enum):
    DISC = "disc"
    MIXINT = "mixint"
    MMIXINT = "mmixint"


class Aggregate(enum.Enum):
    CONCAGG = "concagg"
    MMIXAGG = "mmixagg"


class Protocol(enum.Enum):
    HETSLAGG = "hetslagg"
    HETSLFEDAVG = "hetslfedavg"
    CAM_A_RF = "cam_a_rf"
    CAM_B_RF = "cam_b_rf"
    RF_ONLY = "rf_only"


class ConfigError(ValueError):
    """Invalid strategy or experiment configuration."""


@dataclass(frozen=True)
class StrategyConfig:
    """Protocol plus frame-rate balancing and aggregation choices."""

    protocol: Protocol = Protocol.HETSLAGG
    balance: Balance = Balance.DISC
    aggregate: Aggregate = Aggregate.CONCAGG
    lambda_agg: float = 0.5
    frame_ratio: float = 3.0
    n_rss: int = 2
    n_cameras: int = 2
    fedavg_period: int = 1     # camera rounds between weight averagings

    def validate(self):
        if not (0.0 < self.lambda_agg < 1.0):
            raise ConfigError(f"lambda_agg must be in (0,1), got {self.lambda_agg}")
        if self.frame_ratio <= 1.0:
            raise ConfigError(f"frame_ratio must exceed 1, got {self.frame_ratio}")
        if self.n_cameras != 2:
            raise ConfigError("only the two-camera setting is supported")
        if self.n_rss < 1:
            raise ConfigError("n_rss must be >= 1")
        if self.protocol is Protocol.HETSLFEDAVG:
            if self.balance is Balance.MMIXINT:
                raise ConfigError(
                    "mmixint needs feature aggregation; unsupported with hetslfedavg")
            if self.fedavg_period < 1:
                raise ConfigError("fedavg_period must be >= 1")

    # frames PROCESSED by each camera-side stack
    @property
    def n_frames_a(self) -> int:
        return 2 if self.balance is Balance.DISC else 4

    @property
    def n_frames_b(self) -> int:
        return 4 if self.balance is Balance.MIXINT else 2

    # frames UPLOADED by each camera (mmixint camera B uploads its native 2)
    @property
    def n_upload_a(self) -> int:
        return self.n_frames_a

    @property
    def n_upload_b(self) -> int:
        return self.n_frames_b

    @property
    def n_agg(self) -> int:
        """Aggregated image-feature length fed into fc1 (two-camera fusion)."""
        if self.aggregate is Aggregate.CONCAGG:
            return 2 * self.n_frames_a
        return self.n_frames_a


@dataclass
class FeatureActivation:
    """Uploaded image-feature sequence: per-frame 20x20 maps with frame offsets."""

    camera_id: str
    offsets: tuple          # frame positions in sampling-period units
    values: object          # (T, B, features) array or Tensor

    def __post_init__(self):
        if len(self.offsets) != self.values.shape[0]:
            raise ValueError("offset count must match the sequence length")
        if any(b > a for a, b in zip(self.offsets[1:], self.offsets)):
            raise ValueError("offsets must be nondecreasing")


# ---- interpolation and aggregation ------------------------------------------

def _mix_weights(target, src_offsets):
    """Bracketing index pair and mixing weight for one target offset.

    k' is the latest source at or before the target; lambda = k'+1 - target in
    source-grid units, i.e. piecewise linear interpolation. Integer hits
    return (idx, idx, 1.0) so callers can pass sources through untouched.
    """
    eps = 1e-9
    lower = None
    for i, s in enumerate(src_offsets):
        if s <= target + eps:
            lower = i
    if lower is None:
        raise ValueError(f"target {target} precedes all sources {src_offsets}")
    if abs(src_offsets[lower] - target) < eps:
        return lower, lower, 1.0
    if lower + 1 >= len(src_offsets):
        raise ValueError(f"target {target} beyond the last source {src_offsets}")
    a, b = src_offsets[lower], src_offsets[lower + 1]
    lam = (b - target) / (b - a)
    return lower, lower + 1, lam


def interpolate_sequence(seq, src_offsets, dst_offsets):
    """Piecewise-linear interpolation of a frame-major sequence.

    Works on Tensors (gradients flow to the sources) and on raw arrays.
    Exact-offset targets return the source frame itself, bitwise.
    """
    is_tensor = isinstance(seq, Tensor)
    frames = []
    for target in dst_offsets:
        i, j, lam = _mix_weights(target, src_offsets)
        if is_tensor:
            a = seq.index((i,))
            if i == j:
                frames.append(a)
            else:
                frames.append(a * lam + seq.index((j,)) * (1.0 - lam))
        else:
            if i == j:
                frames.append(seq[i])
            else:
                frames.append(lam * seq[i] + (1.0 - lam) * seq[j])
    if is_tensor:
        return stack(frames, axis=0)
    return np.stack(frames, axis=0)


def manifold_mixup_interpolate(act: FeatureActivation, dst_offsets) -> FeatureActivation:
    """Base-station-side interpolation of uploaded feature activations."""
    values = interpolate_sequence(act.values, act.offsets, tuple(dst_offsets))
    return FeatureActivation(act.camera_id, tuple(dst_offsets), values)


def mixup_interpolate_images(frames, src_offsets, dst_offsets):
    """Camera-side interpolation of raw images (same mixing rule)."""
    return interpolate_sequence(frames, tuple(src_offsets), tuple(dst_offsets))


def discard_frames(frames, offsets):
    """Keep only frames on the integer sampling grid."""
    keep = [i for i, k in enumerate(offsets) if abs(k - round(k)) < 1e-9]
    if isinstance(frames, Tensor):
        raise TypeError("discarding happens camera-side on raw frames")
    return frames[keep], tuple(offsets[i] for i in keep)


def aggregate_features(a_cam_a, a_cam_b, cfg: StrategyConfig):
    """Fuse two feature sequences: weighted average or frame-axis concat."""
    if cfg.aggregate is Aggregate.MMIXAGG:
        if a_cam_a.shape[0] != a_cam_b.shape[0]:
            raise ValueError(
                f"mmixagg needs equal sequence lengths, got {a_cam_a.shape[0]} "
                f"and {a_cam_b.shape[0]}")
        return a_cam_a * cfg.lambda_agg + a_cam_b * (1.0 - cfg.lambda_agg)
    return concat([a_cam_a, a_cam_b], axis=0)


# ---- network segments --------------------------------------------------------

class CameraSegment:
    """Camera-side stack: conv1, norm1, conv2, norm2, pool, recurrent1."""

    def __init__(self, rng: np.random.Generator, n_frames: int,
                 image_hw: int = 40, channels: int = 64):
        self.n_frames = n_frames
        self.image_hw = image_hw
        self.channels = channels
        self.conv1 = Conv2D(rng, 1, channels)
        self.norm1 = BatchNorm(channels)
        self.conv2 = Conv2D(rng, channels, channels)
        self.norm2 = BatchNorm(channels)
        self.pool = AvgPool2(channels)
        self.recurrent1 = ConvLSTM(rng, channels, 1)
        self.feat_hw = image_hw // 2

    @property
    def feat_dim(self) -> int:
        return self.feat_hw * self.feat_hw

    def forward(self, frames: Tensor, mode: Mode) -> Tensor:
        """frames (T, B, H, W) -> feature activations (T, B, feat_dim)."""
        t, b, h, w = frames.shape
        x = frames.reshape(1, t * b, h, w)
        x = self.conv1.forward(x)
        x = self.norm1.forward(x, mode)
        x = self.conv2.forward(x)
        x = self.norm2.forward(x, mode)
        x = self.pool.forward(x)
        hseq = self.recurrent1.forward(x, t)      # (1, T*B, h/2, w/2)
        return hseq.reshape(t, b, self.feat_dim)

    def layer_specs(self):
        c = self.channels
        return [
            self.conv1.spec, self.norm1.spec, self.conv2.spec, self.norm2.spec,
            LayerSpec(LayerKind.AVG_POOL, in_channels=c, out_channels=c),
            self.recurrent1.spec,
        ]

    def input_shape(self):
        return (1, self.image_hw, self.image_hw, self.n_frames)

    def op_counts(self):
        return count_ops(self.layer_specs(), self.input_shape())

    def parameters(self):
        out = []
        for name, layer in (("conv1", self.conv1), ("norm1", self.norm1),
                            ("conv2", self.conv2), ("norm2", self.norm2),
                            ("recurrent1", self.recurrent1)):
            out.extend((f"{name}.{p}", t) for p, t in layer.parameters())
        return out

    def buffers(self):
        out = []
        for name, layer in (("norm1", self.norm1), ("norm2", self.norm2)):
            out.extend((f"{name}.{b}", arr) for b, arr in layer.buffers())
        return out


class BsSegment:
    """Base-station stack: recurrent2 over RSS maps, fc1 (ReLU), fc2 (linear)."""

    def __init__(self, rng: np.random.Generator, img_frames: int, n_rss: int,
                 feat_hw: int = 20, units: int = 96):
        self.img_frames = img_frames
        self.n_rss = n_rss
        self.feat_hw = feat_hw
        self.feat_dim = feat_hw * feat_hw
        self.recurrent2 = ConvLSTM(rng, 1, 1)
        self.fc1 = FullyConnected(
            rng, self.feat_dim * (img_frames + n_rss), units)
        self.fc2 = FullyConnected(rng, units, 1)

    def forward(self, img_feat, rss_maps: Tensor, mode: Mode) -> Tensor:
        """img_feat (N_img, B, feat) or None; rss_maps (N_rss, B, h, w) -> (B,)."""
        n_rss, b, h, w = rss_maps.shape
        r = rss_maps.reshape(1, n_rss * b, h, w)
        r = self.recurrent2.forward(r, n_rss)
        rss_flat = r.reshape(n_rss, b, self.feat_dim).transpose((1, 0, 2)) \
                    .reshape(b, n_rss * self.feat_dim)
        if img_feat is not None:
            nf = img_feat.shape[0]
            img_flat = img_feat.transpose((1, 0, 2)).reshape(b, nf * self.feat_dim)
            x = concat([img_flat, rss_flat], axis=1)
        else:
            x = rss_flat
        hidden = self.fc1.forward(x).relu()
        return self.fc2.forward(hidden).reshape(b)

    def layer_specs(self):
        return [self.recurrent2.spec, self.fc1.spec, self.fc2.spec]

    def op_counts(self):
        """Counts for one inference: RSS branch plus the FC head."""
        rss_shape = (1, self.feat_hw, self.feat_hw, self.n_rss)
        total = count_ops([self.recurrent2.spec], rss_shape)
        total = total + count_ops([self.fc1.spec], (self.fc1.spec.in_features,))
        total = total + count_ops([self.fc2.spec], (self.fc2.spec.in_features,))
        return total

    @property
    def fc1_weight_count(self) -> int:
        return self.fc1.spec.units * self.fc1.spec.in_features

    def parameters(self):
        out = []
        for name, layer in (("recurrent2", self.recurrent2),
                            ("fc1", self.fc1), ("fc2", self.fc2)):
            out.extend((f"{name}.{p}", t) for p, t in layer.parameters())
        return out

    def buffers(self):
        return []


# ---- assembled model ---------------------------------------------------------

CAM_A_OFFSETS = (-1.0, -2.0 / 3.0, -1.0 / 3.0, 0.0)
CAM_B_OFFSETS = (-1.0, 0.0)


@dataclass
class Batch:
    """Time-major training batch: frames, RSS pairs and labels."""

    cam_a: np.ndarray    # (4, B, H, W)
    cam_b: np.ndarray    # (2, B, H, W)
    rss: np.ndarray      # (n_rss, B), standardized
    y: np.ndarray        # (B,), standardized


class SplitModel:
    """Camera and base-station segments wired for one strategy configuration."""

    def __init__(self, cfg: StrategyConfig, seed: int, image_hw: int = 40,
                 channels: int = 64, units: int = 96):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        self.image_hw = image_hw
        self.channels = channels
        self.units = units
        self.feat_hw = image_hw // 2
        self.target_mean = 0.0
        self.target_std = 1.0
        ss = np.random.SeedSequence(seed)
        seed_a, seed_b, seed_bs = (s.generate_state(1)[0] for s in ss.spawn(3))

        p = cfg.protocol
        self.cam_a = self.cam_b = None
        if p in (Protocol.HETSLAGG, Protocol.CAM_A_RF):
            self.cam_a = CameraSegment(np.random.default_rng(seed_a),
                                       cfg.n_frames_a, image_hw, channels)
        if p in (Protocol.HETSLAGG, Protocol.CAM_B_RF):
            self.cam_b = CameraSegment(np.random.default_rng(seed_b),
                                       cfg.n_frames_b, image_hw, channels)
        if p is Protocol.HETSLFEDAVG:
            # replicas start identical, as federated averaging assumes
            self.cam_a = CameraSegment(np.random.default_rng(seed_a),
                                       cfg.n_frames_a, image_hw, channels)
            self.cam_b = CameraSegment(np.random.default_rng(seed_a),
                                       cfg.n_frames_b, image_hw, channels)

        if p is Protocol.HETSLAGG:
            img_frames = cfg.n_agg
        elif p is Protocol.CAM_A_RF:
            img_frames = cfg.n_frames_a
        elif p is Protocol.CAM_B_RF:
            img_frames = cfg.n_frames_b
        elif p is Protocol.HETSLFEDAVG:
            img_frames = cfg.n_frames_a
        else:
            img_frames = 0
        self.bs = BsSegment(np.random.default_rng(seed_bs), img_frames,
                            cfg.n_rss, self.feat_hw, units)

    # ---- input preparation ----

    def _camera_inputs(self, batch: Batch):
        """Apply the balance strategy to raw frames; returns per-camera arrays."""
        cfg = self.cfg
        frames_a = batch.cam_a
        offs_a = CAM_A_OFFSETS
        if cfg.balance is Balance.DISC:
            frames_a, offs_a = discard_frames(frames_a, CAM_A_OFFSETS)
        frames_b = batch.cam_b
        offs_b = CAM_B_OFFSETS
        if cfg.balance is Balance.MIXINT:
            frames_b = mixup_interpolate_images(frames_b, CAM_B_OFFSETS, CAM_A_OFFSETS)
            offs_b = CAM_A_OFFSETS
        return frames_a, offs_a, frames_b, offs_b

    def _rss_maps(self, rss: np.ndarray) -> Tensor:
        """Lift scalar powers to constant 20x20 maps (recurrent2's input shape)."""
        n_rss, b = rss.shape
        maps = np.broadcast_to(rss[:, :, None, None],
                               (n_rss, b, self.feat_hw, self.feat_hw))
        return Tensor(np.ascontiguousarray(maps))

    # ---- forward paths ----

    def forward(self, batch: Batch, mode: Mode = Mode.TRAIN, split: bool = True,
                fedavg_camera: str = "a"):
        """Run one forward pass.

        Returns (prediction Tensor (B,), boundary dict). With ``split`` the
        uploaded activations are detached leaves (the wireless boundary);
        monolithically the base station consumes the camera graphs directly.
        The boundary dict maps camera id to (camera_output, uploaded_leaf).
        """
        cfg = self.cfg
        boundary = {}
        frames_a, offs_a, frames_b, offs_b = self._camera_inputs(batch)

        def upload(seg, frames, cam_id):
            act = seg.forward(Tensor(frames), mode)
            up = act.detach() if split else act
            if split:
                up.requires_grad = True
            boundary[cam_id] = (act, up)
            return up

        img_feat = None
        if cfg.protocol is Protocol.HETSLAGG:
            up_a = upload(self.cam_a, frames_a, "a")
            up_b = upload(self.cam_b, frames_b, "b")
            if cfg.balance is Balance.MMIXINT:
                fa = FeatureActivation("b", offs_b, up_b)
                up_b = manifold_mixup_interpolate(fa, CAM_A_OFFSETS).values
            img_feat = aggregate_features(up_a, up_b, cfg)
        elif cfg.protocol is Protocol.CAM_A_RF:
            img_feat = upload(self.cam_a, frames_a, "a")
        elif cfg.protocol is Protocol.CAM_B_RF:
            img_feat = upload(self.cam_b, frames_b, "b")
        elif cfg.protocol is Protocol.HETSLFEDAVG:
            if fedavg_camera == "a":
                img_feat = upload(self.cam_a, frames_a, "a")
            else:
                img_feat = upload(self.cam_b, frames_b, "b")

        pred = self.bs.forward(img_feat, self._rss_maps(batch.rss), mode)
        return pred, boundary

    def predict(self, batch: Batch, fedavg_camera: str = "a") -> np.ndarray:
        """Evaluation-mode predictions in dBm (de-standardized)."""
        with no_grad():
            pred, _ = self.forward(batch, Mode.EVAL, split=True,
                                   fedavg_camera=fedavg_camera)
        return pred.data * self.target_std + self.target_mean

    # ---- bookkeeping ----

    def active_cameras(self):
        return [c for c in (("a", self.cam_a), ("b", self.cam_b)) if c[1] is not None]

    def parameter_items(self):
        items = []
        if self.cam_a is not None:
            items.extend((f"cam_a.{n}", t) for n, t in self.cam_a.parameters())
        if self.cam_b is not None:
            items.extend((f"cam_b.{n}", t) for n, t in self.cam_b.parameters())
        items.extend((f"bs.{n}", t) for n, t in self.bs.parameters())
        return items

    def state_items(self):
        """Parameters plus batch-norm buffers, in a fixed order."""
        items = [(n, t.data) for n, t in self.parameter_items()]
        if self.cam_a is not None:
            items.extend((f"cam_a.{n}", a) for n, a in self.cam_a.buffers())
        if self.cam_b is not None:
            items.extend((f"cam_b.{n}", a) for n, a in self.cam_b.buffers())
        return items

    def upload_elems(self, camera: str) -> int:
        n = self.cfg.n_upload_a if camera == "a" else self.cfg.n_upload_b
        return self.feat_hw * self.feat_hw * n

    def fc1_weight_count(self) -> int:
        return self.bs.fc1_weight_count

    def camera_op_counts(self, camera: str):
        seg = self.cam_a if camera == "a" else self.cam_b
        if seg is None:
            from .layers import OpCounts
            return OpCounts()
        return seg.op_counts()

    def bs_op_counts(self):
        return self.bs.op_counts()


# ---- training steps ----------------------------------------------------------

def mse_loss(pred: Tensor, y: np.ndarray) -> Tensor:
    d = pred - Tensor(y)
    return (d * d).mean()


class Trainer:
    """Owns the model, per-node optimizers and the exchange schedule."""

    def __init__(self, model: SplitModel, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999):
        self.model = model
        self.opt_cams = {
            cam_id: Adam([t for _, t in seg.parameters()], lr, beta1, beta2)
            for cam_id, seg in model.active_cameras()
        }
        self.opt_bs = Adam([t for _, t in model.bs.parameters()], lr, beta1, beta2)
        self.step_count = 0
        self._fedavg_rounds = 0

    def _zero_all(self):
        for opt in self.opt_cams.values():
            opt.zero_grad()
        self.opt_bs.zero_grad()

    def train_step(self, batch: Batch, ledger=None) -> float:
        """One forward-backward exchange; returns the batch MSE loss."""
        model = self.model
        if model.cfg.protocol is Protocol.HETSLFEDAVG:
            return self._train_step_fedavg(batch, ledger)
        self._zero_all()
        pred, boundary = model.forward(batch, Mode.TRAIN, split=True)
        loss = mse_loss(pred, batch.y)
        # base station backward + update, then gradient download to cameras
        loss.backward()
        self.opt_bs.step()
        for cam_id, (act, up) in boundary.items():
            if up.grad is not None:
                act.backward(up.grad)
            self.opt_cams[cam_id].step()
        self.step_count += 1
        if ledger is not None:
            p = model.cfg.protocol
            u_a = 1 if p in (Protocol.HETSLAGG, Protocol.CAM_A_RF) else 0
            u_b = 1 if p in (Protocol.HETSLAGG, Protocol.CAM_B_RF) else 0
            ledger.record_step(u_a, u_b)
        return float(loss.data)

    def _train_step_fedavg(self, batch: Batch, ledger=None) -> float:
        """Round-robin single-camera exchange with periodic weight averaging."""
        model = self.model
        cam_id = "a" if self.step_count % 2 == 0 else "b"
        self._zero_all()
        pred, boundary = model.forward(batch, Mode.TRAIN, split=True,
                                       fedavg_camera=cam_id)
        loss = mse_loss(pred, batch.y)
        loss.backward()
        self.opt_bs.step()
        act, up = boundary[cam_id]
        if up.grad is not None:
            act.backward(up.grad)
        self.opt_cams[cam_id].step()
        self.step_count += 1
        if ledger is not None:
            ledger.record_step(1 if cam_id == "a" else 0,
                               1 if cam_id == "b" else 0)
        if self.step_count % 2 == 0:
            self._fedavg_rounds += 1
            if self._fedavg_rounds % model.cfg.fedavg_period == 0:
                average_camera_weights(model)
        return float(loss.data)


def average_camera_weights(model: SplitModel):
    """Replace both camera replicas' weights (and BN buffers) by their mean."""
    pa = model.cam_a.parameters()
    pb = model.cam_b.parameters()
    for (_, ta), (_, tb) in zip(pa, pb):
        mean = 0.5 * (ta.data + tb.data)
        ta.data = mean.copy()
        tb.data = mean.copy()
    for (_, ba), (_, bb) in zip(model.cam_a.buffers(), model.cam_b.buffers()):
        mean = 0.5 * (ba + bb)
        ba[...] = mean
        bb[...] = mean


def predict_series(model: SplitModel, batches):
    """Ordered (ground truth dBm, prediction dBm) pairs over a test set.

    ``batches`` yields Batch objects in k-order; labels are de-standardized
    with the model's stored target statistics. The federated baseline
    alternates its camera per sample index, mirroring its training schedule
    (evaluation-mode batch norm makes the per-parity sub-batches exact).
    """
    truths, preds = [], []
    idx = 0
    for batch in batches:
        b = batch.y.shape[0]
        if model.cfg.protocol is Protocol.HETSLFEDAVG:
            p = np.empty(b)
            parity = (idx + np.arange(b)) % 2
            for cam, par in (("a", 0), ("b", 1)):
                sel = np.nonzero(parity == par)[0]
                if sel.size == 0:
                    continue
                sub = Batch(batch.cam_a[:, sel], batch.cam_b[:, sel],
                            batch.rss[:, sel], batch.y[sel])
                p[sel] = model.predict(sub, fedavg_camera=cam)
        else:
            p = model.predict(batch)
        preds.append(p)
        truths.append(batch.y * model.target_std + model.target_mean)
        idx += b
    return np.concatenate(truths), np.concatenate(preds)


# ---- checkpoints ---------------------------------------------------------------

CKPT_MAGIC = b"SWCKPT01"


def save_checkpoint(model: SplitModel, path):
    """Write a flat binary container: config text block + named float64 tensors.

    Layout (little-endian): 8-byte magic, u32 config-block length, UTF-8
    key=value lines, u32 entry count, then per entry u16 name length, name,
    u8 ndim, u32 dims, raw float64 data. Round-trips bitwise.
    """
    cfg = model.cfg
    config_lines = [
        f"protocol={cfg.protocol.value}",
        f"balance={cfg.balance.value}",
        f"aggregate={cfg.aggregate.value}",
        f"lambda_agg={cfg.lambda_agg!r}",
        f"frame_ratio={cfg.frame_ratio!r}",
        f"n_rss={cfg.n_rss}",
        f"n_cameras={cfg.n_cameras}",
        f"fedavg_period={cfg.fedavg_period}",
        f"seed={model.seed}",
        f"image_hw={model.image_hw}",
        f"channels={model.channels}",
        f"units={model.units}",
        f"target_mean={model.target_mean!r}",
        f"target_std={model.target_std!r}",
    ]
    blob = io.BytesIO()
    blob.write(CKPT_MAGIC)
    cfg_bytes = ("\n".join(config_lines) + "\n").encode("utf-8")
    blob.write(struct.pack("<I", len(cfg_bytes)))
    blob.write(cfg_bytes)
    items = model.state_items()
    blob.write(struct.pack("<I", len(items)))
    for name, arr in items:
        nb = name.encode("utf-8")
        blob.write(struct.pack("<H", len(nb)))
        blob.write(nb)
        blob.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            blob.write(struct.pack("<I", d))
        blob.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(blob.getvalue())


def load_checkpoint(path) -> SplitModel:
    """Rebuild a SplitModel from a checkpoint, bitwise-identical state."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError("not a splitwave checkpoint (bad magic)")
    off = 8
    (cfg_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    kv = {}
    for line in raw[off:off + cfg_len].decode("utf-8").splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            kv[k] = v
    off += cfg_len
    cfg = StrategyConfig(
        protocol=Protocol(kv["protocol"]),
        balance=Balance(kv["balance"]),
        aggregate=Aggregate(kv["aggregate"]),
        lambda_agg=float(kv["lambda_agg"]),
        frame_ratio=float(kv["frame_ratio"]),
        n_rss=int(kv["n_rss"]),
        n_cameras=int(kv["n_cameras"]),
        fedavg_period=int(kv["fedavg_period"]),
    )
    model = SplitModel(cfg, seed=int(kv["seed"]), image_hw=int(kv["image_hw"]),
                       channels=int(kv["channels"]), units=int(kv["units"]))
    model.target_mean = float(kv["target_mean"])
    model.target_std = float(kv["target_std"])
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    state = dict(model.state_items())
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        n_elem = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n_elem, offset=off) \
                .reshape(shape).astype(np.float64)
        off += 8 * n_elem
        if name not in state:
            raise ValueError(f"checkpoint entry {name!r} not in model state")
        if state[name].shape != arr.shape:
            raise ValueError(f"checkpoint entry {name!r} shape mismatch")
        state[name][...] = arr
    return model
