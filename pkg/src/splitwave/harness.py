"""Experiment runner: wires data, models, channel and cost accounting.

A run is fully determined by its configuration (seed included): dataset
generation, weight init, batch order and the emitted CSV artifacts are all
reproducible bitwise. Targets and RSS inputs are standardized with the
train-split label statistics (stored in the checkpoint, applied inversely at
prediction time), which keeps desk-scale training budgets effective on
dBm-valued series.
"""

from __future__ import annotations

import os
import sys
import time
from dataclasses import dataclass, asdict, replace

import numpy as np

from .channel import ChannelTrace, LinkParams, rate_cam_a, rate_cam_b
from .costs import CostLedger, payloads, power_watts
from .models import (Aggregate, Balance, Batch, ConfigError, Protocol,
                     SplitModel, StrategyConfig, Trainer, predict_series,
                     save_checkpoint)
from .scenario import (Dataset, attenuation_from_power, generate_dataset,
                       load_dataset, split_dataset)

RESULTS_COLUMNS = ("protocol", "balance", "aggregate", "seed", "rmse_db",
                   "rmse_los_db", "rmse_nlos_db", "rmse_trans_db",
                   "ul_bytes_total", "camA_power_w", "camB_power_w",
                   "bs_power_w", "t_final_s")
CURVE_COLUMNS = ("n", "T_n_s", "test_rmse_db")


@dataclass
class ExperimentConfig:
    protocol: str = "hetslagg"
    balance: str = "disc"
    aggregate: str = "concagg"
    seed: int = 0
    dataset_path: str = ""          # empty: generate synthetically from the seed
    k_samples: int = 600
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 1e-3
    train_ratio: float = 0.75
    tau_s: float = 0.1
    eval_interval: int = 50
    lambda_agg: float = 0.5
    frame_ratio: float = 3.0
    n_rss: int = 2
    fedavg_period: int = 1
    # channel
    los_dbm: float = -29.0
    depth_db: float = 15.0
    cam_b_distance_m: float = 1.0
    # cost model
    cost_mode: str = "computed"     # computed | paper
    t_comp_mode: str = "fixed"      # fixed | measured
    t_comp_s: float = 1e-3
    # scenario noise
    pixel_noise_sigma: float = 0.01
    power_noise_sigma_db: float = 0.5
    # engine size (reduced values are for tests only; 40/64 is the real stack)
    image_hw: int = 40
    channels: int = 64
    out_dir: str = "results"

    def validate(self):
        def bad(name, why):
            raise ConfigError(f"field '{name}': {why}")

        if self.protocol not in [p.value for p in Protocol]:
            bad("protocol", f"unknown value {self.protocol!r}")
        if self.balance not in [b.value for b in Balance]:
            bad("balance", f"unknown value {self.balance!r}")
        if self.aggregate not in [a.value for a in Aggregate]:
            bad("aggregate", f"unknown value {self.aggregate!r}")
        if self.epochs < 1:
            bad("epochs", "must be >= 1")
        if self.batch_size < 1:
            bad("batch_size", "must be >= 1")
        if not (0.0 < self.train_ratio < 1.0):
            bad("train_ratio", "must be in (0, 1)")
        if self.k_samples < 8 and not self.dataset_path:
            bad("k_samples", "must be >= 8 to give both splits samples")
        if self.tau_s <= 0:
            bad("tau_s", "must be positive")
        if self.eval_interval < 1:
            bad("eval_interval", "must be >= 1")
        if self.cost_mode not in ("computed", "paper"):
            bad("cost_mode", f"unknown value {self.cost_mode!r}")
        if self.t_comp_mode not in ("fixed", "measured"):
            bad("t_comp_mode", f"unknown value {self.t_comp_mode!r}")
        if self.t_comp_s <= 0:
            bad("t_comp_s", "must be positive")
        if self.image_hw % 2:
            bad("image_hw", "must be even")
        # strategy-level coupling rules re-checked here for field-name errors
        try:
            self.strategy().validate()
        except ConfigError as e:
            raise ConfigError(f"field 'protocol/balance/aggregate': {e}") from e

    def strategy(self) -> StrategyConfig:
        return StrategyConfig(
            protocol=Protocol(self.protocol), balance=Balance(self.balance),
            aggregate=Aggregate(self.aggregate), lambda_agg=self.lambda_agg,
            frame_ratio=self.frame_ratio, n_rss=self.n_rss,
            fedavg_period=self.fedavg_period)


@dataclass
class MetricsReport:
    rmse_db: float
    rmse_los_db: float
    rmse_nlos_db: float
    rmse_trans_db: float
    curve: list                    # (n, T_n_s, test_rmse_db)
    ul_bytes_total: float
    cam_a_power_w: float
    cam_b_power_w: float
    bs_power_w: float
    t_final_s: float
    final_loss: float = float("nan")

    def results_row(self, cfg: ExperimentConfig) -> dict:
        return {
            "protocol": cfg.protocol, "balance": cfg.balance,
            "aggregate": cfg.aggregate, "seed": cfg.seed,
            "rmse_db": self.rmse_db, "rmse_los_db": self.rmse_los_db,
            "rmse_nlos_db": self.rmse_nlos_db,
            "rmse_trans_db": self.rmse_trans_db,
            "ul_bytes_total": self.ul_bytes_total,
            "camA_power_w": self.cam_a_power_w,
            "camB_power_w": self.cam_b_power_w,
            "bs_power_w": self.bs_power_w,
            "t_final_s": self.t_final_s,
        }


def rmse(predictions, truths) -> float:
    """Root mean squared error in dB."""
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.shape != truths.shape or predictions.size == 0:
        raise ValueError("rmse needs equal-length, non-empty inputs")
    d = predictions - truths
    return float(np.sqrt(np.mean(d * d)))


def condition_labels(power_dbm, los_dbm: float = -29.0, depth_db: float = 15.0,
                     delta_db: float = 3.0):
    """Per-sample channel condition from ground-truth power.

    LoS within delta of the LoS baseline, NLoS within delta of the blocked
    level, transition otherwise.
    """
    p = np.asarray(power_dbm, dtype=np.float64)
    labels = np.full(p.shape, "transition", dtype=object)
    labels[p >= los_dbm - delta_db] = "los"
    labels[p <= los_dbm - depth_db + delta_db] = "nlos"
    return labels


# ---- batching ----------------------------------------------------------------

def make_batch(samples, mean: float, std: float) -> Batch:
    """Time-major float64 arrays; RSS and labels standardized."""
    cam_a = np.stack([s.cam_a for s in samples], axis=1).astype(np.float64)
    cam_b = np.stack([s.cam_b for s in samples], axis=1).astype(np.float64)
    rss = np.stack([s.rss_dbm for s in samples], axis=1)
    y = np.array([s.y_dbm for s in samples])
    return Batch(cam_a=cam_a, cam_b=cam_b,
                 rss=(rss - mean) / std, y=(y - mean) / std)


def batches_of(samples, batch_size: int, mean: float, std: float):
    for i in range(0, len(samples), batch_size):
        yield make_batch(samples[i:i + batch_size], mean, std)


# ---- experiment --------------------------------------------------------------

def _load_or_generate(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset_path:
        return load_dataset(cfg.dataset_path)
    return generate_dataset(cfg.seed, cfg.k_samples, cfg.tau_s,
                            cfg.pixel_noise_sigma, cfg.power_noise_sigma_db,
                            cfg.los_dbm, cfg.depth_db)


def _build_ledger(cfg: ExperimentConfig, model: SplitModel, ds: Dataset) -> CostLedger:
    params = LinkParams(los_power_dbm=cfg.los_dbm,
                        distance_m=cfg.cam_b_distance_m)
    trace = ChannelTrace(attenuation_from_power(ds.power_dbm, cfg.los_dbm),
                         tau_s=cfg.tau_s)
    payload = payloads(model.upload_elems("a"), model.upload_elems("b"),
                       model.fc1_weight_count(), mode=cfg.cost_mode,
                       balance=cfg.balance, aggregate=cfg.aggregate)
    counts_a = model.camera_op_counts("a")
    counts_b = model.camera_op_counts("b")
    counts_bs = model.bs_op_counts()
    return CostLedger(
        payload,
        rate_a_at=lambda t: rate_cam_a(t, params, trace),
        rate_b_bps=rate_cam_b(params),
        tau_s=cfg.tau_s, t_comp_s=cfg.t_comp_s,
        power_cam_a_w=power_watts(counts_a.n_add, counts_a.n_mult,
                                  counts_a.n_param, cfg.tau_s),
        power_cam_b_w=power_watts(counts_b.n_add, counts_b.n_mult,
                                  counts_b.n_param, cfg.tau_s),
        power_bs_w=power_watts(counts_bs.n_add, counts_bs.n_mult,
                               counts_bs.n_param, cfg.tau_s),
    )


def run_experiment(cfg: ExperimentConfig, log=None) -> MetricsReport:
    """Train one configuration, evaluate, and write all CSV artifacts."""
    cfg.validate()
    log = log or (lambda msg: print(msg, file=sys.stderr))
    ds = _load_or_generate(cfg)
    samples = ds.samples()
    train_samples, test_samples = split_dataset(samples, cfg.train_ratio)
    y_train = np.array([s.y_dbm for s in train_samples])
    mean = float(y_train.mean())
    std = float(y_train.std())
    if std < 1e-9:
        std = 1.0

    model = SplitModel(cfg.strategy(), cfg.seed, image_hw=cfg.image_hw,
                       channels=cfg.channels)
    model.target_mean = mean
    model.target_std = std
    trainer = Trainer(model, lr=cfg.learning_rate)
    ledger = _build_ledger(cfg, model, ds)

    test_batches = lambda: batches_of(test_samples, cfg.batch_size, mean, std)
    labels_all = condition_labels(ds.power_dbm, cfg.los_dbm, cfg.depth_db)
    test_labels = np.array([labels_all[s.k + 5] for s in test_samples])

    def test_rmse() -> float:
        truths, preds = predict_series(model, test_batches())
        return rmse(preds, truths)

    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0xBA7C4)))
    n_train = len(train_samples)
    steps_per_epoch = max(1, n_train // cfg.batch_size)
    curve = []
    loss = float("nan")
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n_train)
        for b in range(steps_per_epoch):
            sel = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch = make_batch([train_samples[i] for i in sel], mean, std)
            t0 = time.perf_counter()
            loss = trainer.train_step(batch, ledger)
            if cfg.t_comp_mode == "measured":
                # next intervals get realised with the latest measured step time
                ledger.t_comp_s = time.perf_counter() - t0
            n = trainer.step_count
            if n % cfg.eval_interval == 0:
                curve.append((n, ledger.rows[-1]["T_n_s"], test_rmse()))
        log(f"epoch {epoch + 1}/{cfg.epochs} loss={loss:.6f}")

    n_final = trainer.step_count
    if not curve or curve[-1][0] != n_final:
        curve.append((n_final, ledger.rows[-1]["T_n_s"], test_rmse()))

    truths, preds = predict_series(model, test_batches())
    overall = rmse(preds, truths)
    per_cond = {}
    for cond in ("los", "nlos", "transition"):
        mask = test_labels == cond
        per_cond[cond] = rmse(preds[mask], truths[mask]) if mask.any() else float("nan")

    report = MetricsReport(
        rmse_db=overall, rmse_los_db=per_cond["los"],
        rmse_nlos_db=per_cond["nlos"], rmse_trans_db=per_cond["transition"],
        curve=curve,
        ul_bytes_total=ledger.ul_bytes_a + ledger.ul_bytes_b,
        cam_a_power_w=ledger.power_cam_a_w, cam_b_power_w=ledger.power_cam_b_w,
        bs_power_w=ledger.power_bs_w,
        t_final_s=ledger.rows[-1]["T_n_s"] if ledger.rows else 0.0,
        final_loss=loss,
    )

    os.makedirs(cfg.out_dir, exist_ok=True)
    write_results_csv(os.path.join(cfg.out_dir, "results.csv"),
                      [report.results_row(cfg)])
    write_curve_csv(os.path.join(cfg.out_dir, "curve.csv"), curve)
    ledger.write_csv(os.path.join(cfg.out_dir, "cost_report.csv"))
    save_checkpoint(model, os.path.join(cfg.out_dir, "model.ckpt"))
    with open(os.path.join(cfg.out_dir, "predictions.csv"), "w",
              encoding="utf-8") as f:
        f.write("k,truth_dbm,pred_dbm\n")
        for s, t, p in zip(test_samples, truths, preds):
            f.write(f"{s.k},{t!r},{p!r}\n")
    return report


def run_matrix(base_cfg: ExperimentConfig, combos, out_dir: str, log=None):
    """Run every (protocol, balance, aggregate) combo on a shared dataset/seed.

    Each run writes its artifacts under ``out_dir/<combo>/``; one results.csv
    with a row per combination lands in ``out_dir``. Failures produce a row of
    NaN metrics and the matrix continues.
    """
    log = log or (lambda msg: print(msg, file=sys.stderr))
    rows = []
    for protocol, balance, aggregate in combos:
        sub = replace(base_cfg, protocol=protocol, balance=balance,
                      aggregate=aggregate,
                      out_dir=os.path.join(out_dir, f"{protocol}_{balance}_{aggregate}"))
        try:
            report = run_experiment(sub, log=log)
            rows.append(report.results_row(sub))
        except Exception as exc:  # noqa: BLE001 - error rows keep the sweep alive
            log(f"run {protocol}/{balance}/{aggregate} failed: {exc}")
            row = {c: float("nan") for c in RESULTS_COLUMNS}
            row.update(protocol=protocol, balance=balance, aggregate=aggregate,
                       seed=base_cfg.seed)
            rows.append(row)
    os.makedirs(out_dir, exist_ok=True)
    write_results_csv(os.path.join(out_dir, "results.csv"), rows)
    return rows


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results_csv(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(RESULTS_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(_fmt(row[c]) for c in RESULTS_COLUMNS) + "\n")


def write_curve_csv(path, curve):
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(CURVE_COLUMNS) + "\n")
        for n, t_n, r in curve:
            f.write(f"{n},{t_n!r},{r!r}\n")


# ---- config files --------------------------------------------------------------

def parse_config_file(path) -> dict:
    """UTF-8 key=value lines; '#' starts a comment."""
    out = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = value
    return out


def config_from_sources(file_values: dict = None, overrides: dict = None) -> ExperimentConfig:
    """Defaults, overlaid with config-file values, overlaid with CLI overrides."""
    cfg = ExperimentConfig()
    fields = {f: type(v) for f, v in asdict(cfg).items()}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if key not in fields:
                raise ConfigError(f"field '{key}': unknown configuration key")
            typ = fields[key]
            try:
                if typ is bool:
                    parsed = str(value).lower() in ("1", "true", "yes")
                else:
                    parsed = typ(value)
            except (TypeError, ValueError):
                raise ConfigError(f"field '{key}': cannot parse {value!r} as {typ.__name__}")
            setattr(cfg, key, parsed)
    return cfg
