"""Command-line experiment runner.

Subcommands: ``generate`` (scene -> dataset directory), ``train`` (one
configuration), ``matrix`` (strategy sweep on a shared dataset/seed) and
``cost`` (analytic payload/latency/power report, no training). Flags mirror
the ExperimentConfig fields; a key=value config file provides defaults that
flags override. Progress goes to stderr, data artifacts to files only.

Exit codes: 0 success, 2 configuration error, 3 dataset/file error,
4 runtime failure.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
from dataclasses import asdict, fields

from . import memtune
from .channel import ChannelTrace, LinkParams, rate_cam_a, rate_cam_b
from .costs import exchanges_per_interval, latency_bp, latency_fp, payloads, power_watts
from .harness import (ExperimentConfig, config_from_sources, parse_config_file,
                      run_experiment, run_matrix)
from .models import ConfigError, Protocol, SplitModel
from .scenario import DatasetFormatError, generate_dataset, save_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

COST_COLUMNS = ("protocol", "balance", "aggregate", "d_fp_a_bytes",
                "d_fp_b_bytes", "d_bp_bytes", "t_fp_s", "t_bp_s", "t_tot_s",
                "n_per_interval", "camA_power_w", "camB_power_w", "bs_power_w")


def _log(msg: str):
    print(msg, file=sys.stderr)


def _add_config_flags(parser: argparse.ArgumentParser):
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        parser.add_argument(flag, dest=f.name, default=None, metavar=f.type.upper()
                            if isinstance(f.type, str) else "V",
                            help=f"override ExperimentConfig.{f.name}")
    parser.add_argument("--config", default=None,
                        help="key=value config file (flags override it)")


def _build_config(args) -> ExperimentConfig:
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {f.name: getattr(args, f.name) for f in fields(ExperimentConfig)
                 if getattr(args, f.name, None) is not None}
    cfg = config_from_sources(file_values, overrides)
    cfg.validate()
    return cfg


def cmd_generate(args) -> int:
    ds = generate_dataset(int(args.seed), int(args.k), float(args.tau_s),
                          float(args.pixel_noise), float(args.power_noise),
                          float(args.los_dbm), float(args.depth_db))
    save_dataset(ds, args.out)
    _log(f"wrote dataset K={ds.k_max} to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _build_config(args)
    report = run_experiment(cfg, log=_log)
    _log(f"rmse={report.rmse_db:.4f} dB, artifacts in {cfg.out_dir}")
    return EXIT_OK


def _combos(args):
    protocols = args.protocols.split(",")
    balances = args.balances.split(",")
    aggregates = args.aggregates.split(",")
    return list(itertools.product(protocols, balances, aggregates))


def cmd_matrix(args) -> int:
    cfg = _build_config(args)
    out_dir = args.matrix_out or cfg.out_dir
    rows = run_matrix(cfg, _combos(args), out_dir, log=_log)
    _log(f"{len(rows)} matrix rows in {os.path.join(out_dir, 'results.csv')}")
    return EXIT_OK


def cmd_cost(args) -> int:
    cfg = _build_config(args)
    out_dir = args.matrix_out or cfg.out_dir
    params = LinkParams(los_power_dbm=cfg.los_dbm, distance_m=cfg.cam_b_distance_m)
    # LoS rate for the analytic table (A(t) = 1)
    trace = ChannelTrace([1.0], tau_s=cfg.tau_s)
    rate_a = rate_cam_a(0.0, params, trace)
    rate_b = rate_cam_b(params)
    rows = []
    for protocol, balance, aggregate in _combos(args):
        sub = ExperimentConfig(**{**asdict(cfg), "protocol": protocol,
                                  "balance": balance, "aggregate": aggregate})
        sub.validate()
        model = SplitModel(sub.strategy(), seed=cfg.seed, image_hw=cfg.image_hw,
                           channels=cfg.channels)
        payload = payloads(model.upload_elems("a"), model.upload_elems("b"),
                           model.fc1_weight_count(), mode=cfg.cost_mode,
                           balance=balance, aggregate=aggregate)
        p = Protocol(protocol)
        u_a = 1 if p in (Protocol.HETSLAGG, Protocol.CAM_A_RF) else 0
        u_b = 1 if p in (Protocol.HETSLAGG, Protocol.CAM_B_RF) else 0
        if p is Protocol.HETSLFEDAVG:
            u_a = 1  # representative single-camera exchange
        t_fp = latency_fp(payload, rate_a, rate_b, u_a, u_b)
        t_bp = latency_bp(payload, rate_a, rate_b, u_a, u_b)
        t_tot = t_fp + t_bp + cfg.t_comp_s
        ca = model.camera_op_counts("a")
        cb = model.camera_op_counts("b")
        cbs = model.bs_op_counts()
        rows.append({
            "protocol": protocol, "balance": balance, "aggregate": aggregate,
            "d_fp_a_bytes": payload.d_fp_a_bytes,
            "d_fp_b_bytes": payload.d_fp_b_bytes,
            "d_bp_bytes": payload.d_bp_bytes,
            "t_fp_s": t_fp, "t_bp_s": t_bp, "t_tot_s": t_tot,
            "n_per_interval": exchanges_per_interval(cfg.tau_s, t_tot),
            "camA_power_w": power_watts(ca.n_add, ca.n_mult, ca.n_param, cfg.tau_s),
            "camB_power_w": power_watts(cb.n_add, cb.n_mult, cb.n_param, cfg.tau_s),
            "bs_power_w": power_watts(cbs.n_add, cbs.n_mult, cbs.n_param, cfg.tau_s),
        })
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "cost_summary.csv")
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(COST_COLUMNS) + "\n")
        for row in rows:
            f.write(",".join(repr(row[c]) if isinstance(row[c], float)
                             else str(row[c]) for c in COST_COLUMNS) + "\n")
    _log(f"{len(rows)} cost rows in {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitwave",
        description="split-learning received-power prediction simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic dataset directory")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", default=0)
    g.add_argument("--k", default=600)
    g.add_argument("--tau-s", dest="tau_s", default=0.1)
    g.add_argument("--pixel-noise", dest="pixel_noise", default=0.01)
    g.add_argument("--power-noise", dest="power_noise", default=0.5)
    g.add_argument("--los-dbm", dest="los_dbm", default=-29.0)
    g.add_argument("--depth-db", dest="depth_db", default=15.0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train one configuration")
    _add_config_flags(t)
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("matrix", help="sweep strategy combinations")
    _add_config_flags(m)
    m.add_argument("--protocols", default="hetslagg")
    m.add_argument("--balances", default="disc,mixint,mmixint")
    m.add_argument("--aggregates", default="concagg,mmixagg")
    m.add_argument("--matrix-out", dest="matrix_out", default=None)
    m.set_defaults(func=cmd_matrix)

    c = sub.add_parser("cost", help="analytic cost report, no training")
    _add_config_flags(c)
    c.add_argument("--protocols", default="hetslagg")
    c.add_argument("--balances", default="disc,mixint,mmixint")
    c.add_argument("--aggregates", default="concagg,mmixagg")
    c.add_argument("--matrix-out", dest="matrix_out", default=None)
    c.set_defaults(func=cmd_cost)
    return parser


def main(argv=None) -> int:
    memtune.enable_heap_reuse()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _log(f"configuration error: {exc}")
        return EXIT_CONFIG
    except (DatasetFormatError, FileNotFoundError, OSError) as exc:
        _log(f"data error: {exc}")
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        _log(f"runtime error: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
