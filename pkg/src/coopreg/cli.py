"""Command line entry point: ``design``, ``simulate`` and ``check``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .runner import StageError, design_all, observability_margins, simulate

log = logging.getLogger("coopreg")


def _write_csv(path, cols):
    names = list(cols)
    data = np.column_stack([np.asarray(cols[k], float) for k in names])
    np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt="%.10g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _design_outputs(bundle, out: Path):
    det_cols, gain_cols = {}, {}
    for ad in bundle.agents:
        i = ad.index
        if ad.gamma is not None:
            det_cols.setdefault("t", ad.gamma.t_fine)
            det_cols[f"det_Qo_{i}"] = ad.Qo_det
        gain_cols.setdefault("t", ad.t)
        gain_cols[f"k_1_{i}"] = ad.reg.k_1
        gain_cols[f"l_1_{i}"] = ad.obs.l_1
        for j in range(ad.reg.k_v.shape[1]):
            gain_cols[f"k_v{j + 1}_{i}"] = ad.reg.k_v[:, j]
        lv = ad.lv(ad.t)
        for j in range(lv.shape[1]):
            gain_cols[f"l_v{j + 1}_{i}"] = lv[:, j]
    if len(det_cols) > 1:
        _write_csv(out / "det_Qo.csv", det_cols)
    _write_csv(out / "gains.csv", gain_cols)


def cmd_design(args):
    cfg = RunConfig.load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle = design_all(cfg)
    _design_outputs(bundle, out)
    (out / "summary.json").write_text(json.dumps(_jsonable({"design": bundle.report}), indent=2))
    log.info("design written to %s", out)


def cmd_simulate(args):
    cfg = RunConfig.load(args.config).replace(t_final=args.t_final, dt=args.dt, nz=args.nz)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bundle = design_all(cfg)
    _design_outputs(bundle, out)
    trace = simulate(cfg, bundle)
    _write_csv(out / "trace.csv", trace.columns())
    _write_csv(out / "norms.csv", trace.norm_columns())
    summary = {"metrics": trace.metrics, "design": bundle.report, "simulation": vars(cfg.simulation)}
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2))
    m = trace.metrics
    log.info("sync time %.4g, max post-transient |e_y| %.4g (amplitude %.4g)",
             m["sync_time"], m["max_post_transient_error"], m["amplitude"])


def cmd_check(args):
    cfg = RunConfig.load(args.config)
    margins = observability_margins(cfg)
    print(json.dumps(_jsonable({"valid": True, "observability": margins}), indent=2))
    if not all(m.get("ok", True) for m in margins.values()):
        return 3
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="coopreg", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("design", help="run the design pipeline and write gains and report")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_design)
    p = sub.add_parser("simulate", help="design and simulate the closed loop")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--t-final", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--nz", type=int)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("check", help="validate a config and report observability margins")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_check)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args) or 0
    except ConfigError as exc:
        print(f"error: [config] {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: [input] {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
