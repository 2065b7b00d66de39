"""mmWave link rate models for the camera-to-base-station channels.

The camera-A link rate varies with a measured/synthesised attenuation
staircase; the camera-B link is static and derived from the power-distance
law. All rate math happens in the linear domain at 64-bit precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def dbm_to_linear(dbm: float) -> float:
    """dBm to linear milliwatts (only ever used in ratios, so the unit cancels)."""
    return 10.0 ** (dbm / 10.0)


@dataclass(frozen=True)
class LinkParams:
    """Static link parameters; defaults reproduce the measured setup."""

    bandwidth_hz: float = 1.76e9
    noise_dbm: float = -60.0
    los_power_dbm: float = -29.0      # camera-A link LoS received power
    tx_power_dbm: float = 10.0
    gain_tx_dbi: float = 24.0         # camera-B side horn
    gain_rx_dbi: float = 8.0          # base-station side array
    path_loss_exponent: float = 1.6
    ref_path_loss_db: float = 68.0    # at 60 GHz, 1 m reference
    ref_distance_m: float = 1.0
    # calibrated so the static camera-B link lands at ~19.9 Gbit/s
    distance_m: float = 1.0

    def validate(self):
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth_hz must be positive")
        if self.distance_m <= 0:
            raise ValueError("distance_m must be positive")
        if self.path_loss_exponent <= 0:
            raise ValueError("path_loss_exponent must be positive")


class ChannelTrace:
    """Right-open attenuation staircase A(t) sampled every tau seconds.

    ``samples[k]`` is the linear power attenuation on [k*tau, (k+1)*tau);
    values must lie in (0, 1].
    """

    def __init__(self, samples, tau_s: float = 0.1):
        self.samples = np.asarray(samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("trace needs a 1-D, non-empty sample array")
        if np.any(self.samples <= 0.0) or np.any(self.samples > 1.0):
            raise ValueError("attenuation samples must lie in (0, 1]")
        if tau_s <= 0:
            raise ValueError("tau_s must be positive")
        self.tau_s = float(tau_s)

    def __len__(self):
        return self.samples.size

    def attenuation_at(self, t: float) -> float:
        if t < 0 or t >= self.samples.size * self.tau_s:
            raise ValueError(f"t={t} outside trace range [0, {self.samples.size * self.tau_s})")
        return float(self.samples[int(t / self.tau_s)])

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as f:
            f.write("k,attenuation_linear\n")
            for k, a in enumerate(self.samples):
                f.write(f"{k},{a!r}\n")

    @classmethod
    def from_csv(cls, path, tau_s: float = 0.1) -> "ChannelTrace":
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip()
            if header != "k,attenuation_linear":
                raise ValueError(f"unexpected trace header: {header!r}")
            samples = [float(line.split(",")[1]) for line in f if line.strip()]
        return cls(samples, tau_s=tau_s)


def rate_cam_a(t: float, params: LinkParams, trace: ChannelTrace) -> float:
    """Time-varying camera-A link rate in bit/s: W*log2(1 + A(t)*P_L/N)."""
    params.validate()
    snr = trace.attenuation_at(t) * dbm_to_linear(params.los_power_dbm) \
        / dbm_to_linear(params.noise_dbm)
    return params.bandwidth_hz * np.log2(1.0 + snr)


def cam_b_los_power_dbm(params: LinkParams) -> float:
    """LoS received power of the camera-B link from the power-distance law."""
    params.validate()
    return (params.tx_power_dbm + params.gain_tx_dbi + params.gain_rx_dbi
            - params.ref_path_loss_db
            - 10.0 * params.path_loss_exponent
            * np.log10(params.distance_m / params.ref_distance_m))


def rate_cam_b(params: LinkParams) -> float:
    """Static camera-B link rate in bit/s."""
    snr = dbm_to_linear(cam_b_los_power_dbm(params)) / dbm_to_linear(params.noise_dbm)
    return params.bandwidth_hz * np.log2(1.0 + snr)


def synth_attenuation_trace(blockage_schedule, k_samples: int, tau_s: float = 0.1,
                            depth_db: float = 15.0, ramp_s: float = None) -> ChannelTrace:
    """Synthesise an attenuation staircase from NLoS intervals.

    ``blockage_schedule`` is a list of (start_s, end_s) NLoS intervals inside
    [0, k_samples*tau_s]; attenuation is 1 in LoS and 10^(-depth/10) inside an
    interval, with linear-in-dB ramps of length ``ramp_s`` (default one sample
    period) on both sides of each interval. Grid-aligned interval edges sample
    cleanly (full depth strictly inside, LoS strictly outside); off-grid edges
    produce partial-depth transition samples. Overlapping intervals are
    rejected. The trace has k_samples+1 entries at t = 0, tau, ..., K*tau.
    """
    if ramp_s is None:
        ramp_s = tau_s
    intervals = sorted((float(a), float(b)) for a, b in blockage_schedule)
    for (a, b) in intervals:
        if b <= a:
            raise ValueError(f"empty or inverted NLoS interval ({a}, {b})")
    for (_, b0), (a1, _) in zip(intervals, intervals[1:]):
        if a1 < b0:
            raise ValueError("overlapping NLoS intervals")
    t = np.arange(k_samples + 1) * tau_s
    depth = np.zeros_like(t)
    for (a, b) in intervals:
        frac = ((t >= a) & (t < b)).astype(np.float64)
        if ramp_s > 0:
            pre = (t >= a - ramp_s) & (t < a)
            frac[pre] = np.maximum(frac[pre], 1.0 - (a - t[pre]) / ramp_s)
            post = (t >= b) & (t < b + ramp_s)
            frac[post] = np.maximum(
                frac[post], 1.0 - (t[post] - b + tau_s) / ramp_s)
        depth = np.maximum(depth, np.clip(frac, 0.0, 1.0) * depth_db)
    return ChannelTrace(10.0 ** (-depth / 10.0), tau_s=tau_s)
