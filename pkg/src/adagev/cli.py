"""Command-line surface: data generation, training, evaluation, ablations,
GEV fitting, and loss-weight sweeps.

Every run writes a config echo (config.json) holding all resolved values,
so any run can be reproduced exactly by replaying the echoed config.
Flags override values from an optional --config JSON file, which in turn
overrides the built-in defaults.

Exit codes: 0 success, 2 usage/validation error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as dt
from . import evt
from . import model as md
from . import objective as obj
from . import pipeline as pl

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

GEN_DEFAULTS = {
    "classes": 10, "dim": 2, "std": 0.35, "rotation_deg": 25.0,
    "translate": "0.3,-0.2", "source_per_class": 200, "target_per_class": 150,
    "seed": 0,
}
SPLIT_DEFAULTS = {
    "known": "0,1,2,3", "source_unknown": "4,5,6", "target_unknown": "7,8,9",
}
TRAIN_DEFAULTS = {
    "epochs": 20, "batch": 64, "lr": 1e-3, "optimizer": "adam",
    "lambda_d": 0.5, "lambda_e": 1.0, "lambda_c": 1.0,
    "weight_mode": "neg-entropy", "z_mode": "same-batch",
    "tail": "block:20", "tail_pool": "known-only",
    "hidden": "64,64", "seed": 0,
}


class UsageError(ValueError):
    pass


def _parse_int_list(text):
    try:
        return tuple(int(v) for v in str(text).split(",") if v != "")
    except ValueError as e:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from e


def _parse_float_pair(text):
    parts = str(text).split(",")
    try:
        values = tuple(float(v) for v in parts)
    except ValueError as e:
        raise UsageError(f"expected comma-separated reals, got {text!r}") from e
    if len(values) != 2:
        raise UsageError(f"expected two components, got {text!r}")
    return values


def _parse_tail(text, pool):
    if text == "none":
        return None
    kind, _, value = str(text).partition(":")
    pool = pool.replace("-", "_")
    try:
        if kind == "block":
            return evt.TailConfig(method="block_maxima", block_size=int(value), source_pool=pool)
        if kind == "top":
            return evt.TailConfig(method="top_fraction", fraction=float(value), source_pool=pool)
    except ValueError as e:
        raise UsageError(f"bad --tail value {text!r}: {e}") from e
    raise UsageError(f"--tail must be block:<size>, top:<fraction>, or none, got {text!r}")


def _resolve(args, defaults):
    """builtin defaults < --config file < explicit flags."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                file_values = json.load(f)
        except (OSError, ValueError) as e:
            raise dt.DataError(f"cannot read config {config_path}: {e}") from e
        unknown = set(file_values) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_values)
    for key in defaults:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
    return merged


def _add_config_flag(p):
    p.add_argument("--config", help="JSON file of defaults; flags override it")


def _add_split_flags(p):
    p.add_argument("--known", help="comma-separated known class ids")
    p.add_argument("--source-unknown", dest="source_unknown")
    p.add_argument("--target-unknown", dest="target_unknown")


def _add_data_flags(p):
    p.add_argument("--data", help="synthetic blobs CSV (adagev-blobs v1)")
    p.add_argument("--source-images", dest="source_images")
    p.add_argument("--source-labels", dest="source_labels")
    p.add_argument("--target-images", dest="target_images")
    p.add_argument("--target-labels", dest="target_labels")


def _add_train_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=["adam", "sgd-momentum"])
    p.add_argument("--lambda-d", dest="lambda_d", type=float)
    p.add_argument("--lambda-e", dest="lambda_e", type=float)
    p.add_argument("--lambda-c", dest="lambda_c", type=float)
    p.add_argument("--weight-mode", dest="weight_mode",
                   choices=["neg-entropy", "paper-literal", "uniform"])
    p.add_argument("--z-mode", dest="z_mode",
                   choices=["same-batch", "fresh-batch", "combined"])
    p.add_argument("--tail", help="block:<size>, top:<fraction>, or none")
    p.add_argument("--tail-pool", dest="tail_pool",
                   choices=["known-only", "known-plus-unknown"])
    p.add_argument("--hidden", help="feature extractor hidden widths, e.g. 64,64")
    p.add_argument("--seed", type=int)


def _split_from(cfg) -> dt.RoleSplit:
    return dt.RoleSplit(
        known=_parse_int_list(cfg["known"]),
        source_unknown=_parse_int_list(cfg["source_unknown"]),
        target_unknown=_parse_int_list(cfg["target_unknown"]),
    )


def _load_pool(cfg, split_cfg):
    rs = _split_from(split_cfg)
    if cfg.get("data"):
        src_x, src_y, tgt_x, tgt_y = dt.load_blobs(cfg["data"])
    else:
        idx_keys = ("source_images", "source_labels", "target_images", "target_labels")
        if not all(cfg.get(k) for k in idx_keys):
            raise UsageError("provide either --data or all four IDX paths")
        src_x, src_y = dt.load_idx(cfg["source_images"], cfg["source_labels"])
        tgt_x, tgt_y = dt.load_idx(cfg["target_images"], cfg["target_labels"])
    return dt.apply_roles(src_x, src_y, tgt_x, tgt_y, rs), rs


def _train_config(cfg) -> pl.TrainConfig:
    tail = _parse_tail(cfg["tail"], cfg["tail_pool"])
    if tail is None:
        raise UsageError("--tail none is only valid for fit-gev")
    return pl.TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch"], learning_rate=cfg["lr"],
        optimizer=cfg["optimizer"].replace("-", "_"),
        loss_weights=obj.LossWeights(cfg["lambda_d"], cfg["lambda_e"], cfg["lambda_c"]),
        weight_config=obj.WeightConfig(cfg["weight_mode"].replace("-", "_"),
                                       cfg["z_mode"].replace("-", "_")),
        tail_config=tail, seed=cfg["seed"],
    )


def _specs_from(cfg, input_dim, num_known):
    hidden = _parse_int_list(cfg["hidden"])
    spec_g = md.MlpSpec((input_dim, *hidden), activation="relu")
    feat = hidden[-1]
    spec_c = md.MlpSpec((feat, num_known), head="softmax")
    spec_d = md.MlpSpec((feat, 32, 1), activation="relu", head="sigmoid")
    return spec_g, spec_c, spec_d


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def _echo_config(outdir: Path, command: str, cfg: dict, extra: dict | None = None):
    payload = {"command": command, **cfg}
    if extra:
        payload.update(extra)
    _write_json(outdir / "config.json", payload)


def _report_payload(report: pl.EvalReport, gev, tc_cfg, label=None):
    payload = report.to_dict()
    if gev is not None:
        payload["gev"] = {"l": gev.l, "s": gev.s, "c": gev.c}
    payload["config"] = tc_cfg
    if label:
        payload["variant"] = label
    return payload


def cmd_gen_data(args) -> int:
    cfg = _resolve(args, {**GEN_DEFAULTS, **SPLIT_DEFAULTS, "out": None})
    if not cfg["out"]:
        raise UsageError("--out is required")
    rs = _split_from(cfg)
    all_role_ids = set(rs.known) | set(rs.source_unknown) | set(rs.target_unknown)
    if max(all_role_ids) >= cfg["classes"]:
        raise UsageError(
            f"role split needs {max(all_role_ids) + 1} classes, --classes is {cfg['classes']}"
        )
    bc = dt.BlobShiftConfig(
        class_count=cfg["classes"], dim=cfg["dim"], cluster_std=cfg["std"],
        rotation=np.deg2rad(cfg["rotation_deg"]),
        translation=_parse_float_pair(cfg["translate"]),
        source_per_class=cfg["source_per_class"],
        target_per_class=cfg["target_per_class"], seed=cfg["seed"],
    )
    src_x, src_y, tgt_x, tgt_y = dt.gen_shifted_blobs(bc)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    dt.save_blobs(out, src_x, src_y, tgt_x, tgt_y)
    _write_json(out.with_suffix(out.suffix + ".config.json"),
                {"command": "gen-data", **cfg})
    print(f"wrote {out}: {len(src_x)} source rows, {len(tgt_x)} target rows, "
          f"{cfg['classes']} classes, dim {cfg['dim']}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args, {**TRAIN_DEFAULTS, **SPLIT_DEFAULTS, "out": None,
                          "data": None, "source_images": None, "source_labels": None,
                          "target_images": None, "target_labels": None})
    if not cfg["out"]:
        raise UsageError("--out is required")
    pool, rs = _load_pool(cfg, cfg)
    tc = _train_config(cfg)
    specs = _specs_from(cfg, pool.feature_dim, rs.num_known)
    result = pl.train(pool, specs, tc)

    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    md.save_checkpoint(result.params, outdir / "checkpoint.bin", gev=result.gev)
    with open(outdir / "train_log.jsonl", "w", encoding="utf-8") as f:
        for record in result.log:
            f.write(json.dumps(record) + "\n")
    _echo_config(outdir, "train", cfg)
    last = result.log[-1]
    print(f"trained {tc.epochs} epochs; final L_d={last['L_d']:.4f} "
          f"L_e={last['L_e']:.4f} L_c={last['L_c']:.4f}; "
          f"GEV l={result.gev.l:.4f} s={result.gev.s:.4f} c={result.gev.c:.4f}")
    print(f"checkpoint: {outdir / 'checkpoint.bin'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve(args, {**SPLIT_DEFAULTS, "checkpoint": None, "out": None,
                          "data": None, "source_images": None, "source_labels": None,
                          "target_images": None, "target_labels": None})
    if not cfg["checkpoint"] or not cfg["out"]:
        raise UsageError("--checkpoint and --out are required")
    params, gev = md.load_checkpoint(cfg["checkpoint"])
    if gev is None:
        raise dt.DataError(f"{cfg['checkpoint']}: no GEV section; cannot evaluate")
    pool, _ = _load_pool(cfg, cfg)
    report = pl.evaluate(params, gev, pool)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, _report_payload(report, gev, cfg))
    print(f"OS={report.os_score:.4f} OS*={report.os_star:.4f} UNK={report.unk_recall}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve(args, {**TRAIN_DEFAULTS, **SPLIT_DEFAULTS, "out": None,
                          "variant": "full", "tau": None,
                          "data": None, "source_images": None, "source_labels": None,
                          "target_images": None, "target_labels": None})
    if not cfg["out"]:
        raise UsageError("--out is required")
    pool, rs = _load_pool(cfg, cfg)
    tc = _train_config(cfg)
    specs = _specs_from(cfg, pool.feature_dim, rs.num_known)
    mode = pl.AblationMode(variant=cfg["variant"].replace("-", "_"),
                           hard_threshold=cfg["tau"])
    report, result = pl.run_ablation(pool, specs, tc, mode)
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    _write_json(outdir / "report.json",
                _report_payload(report, result.gev, cfg, label=cfg["variant"]))
    _echo_config(outdir, "ablate", cfg)
    print(f"variant={cfg['variant']} OS={report.os_score:.4f} "
          f"OS*={report.os_star:.4f} UNK={report.unk_recall}")
    return 0


def cmd_fit_gev(args) -> int:
    cfg = _resolve(args, {"input": None, "out": None, "tail": "none",
                          "tail_pool": "known-only", "seed": 0})
    if not cfg["input"] or not cfg["out"]:
        raise UsageError("--input and --out are required")
    values = []
    try:
        with open(cfg["input"], "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    values.append(float(line))
                except ValueError as e:
                    raise dt.DataError(f"{cfg['input']}:{lineno}: not a real: {line!r}") from e
    except OSError as e:
        raise dt.DataError(f"cannot read {cfg['input']}: {e}") from e
    values = np.asarray(values)
    tail = _parse_tail(cfg["tail"], cfg["tail_pool"])
    if tail is not None:
        values = evt.extract_tail(values, tail, rng_seed=cfg["seed"])
    fitted = evt.fit_gev_mle(values)
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, {"l": fitted.l, "s": fitted.s, "c": fitted.c,
                      "n_fit": int(values.size), "config": cfg})
    print(f"l={fitted.l:.6f} s={fitted.s:.6f} c={fitted.c:.6f} (n={values.size})")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve(args, {**TRAIN_DEFAULTS, **SPLIT_DEFAULTS, "out": None,
                          "grid_lambda_d": None, "grid_lambda_e": None,
                          "grid_lambda_c": None,
                          "data": None, "source_images": None, "source_labels": None,
                          "target_images": None, "target_labels": None})
    if not cfg["out"]:
        raise UsageError("--out is required")

    def axis(key, fallback):
        raw = cfg[key]
        if raw is None:
            return [fallback]
        return [float(v) for v in str(raw).split(",")]

    grid_d = axis("grid_lambda_d", cfg["lambda_d"])
    grid_e = axis("grid_lambda_e", cfg["lambda_e"])
    grid_c = axis("grid_lambda_c", cfg["lambda_c"])

    pool, rs = _load_pool(cfg, cfg)
    specs = _specs_from(cfg, pool.feature_dim, rs.num_known)
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    summary = []
    idx = 0
    for ld in grid_d:
        for le in grid_e:
            for lc in grid_c:
                point = dict(cfg, lambda_d=ld, lambda_e=le, lambda_c=lc)
                tc = _train_config(point)
                result = pl.train(pool, specs, tc)
                report = pl.evaluate(result.params, result.gev, pool)
                _write_json(outdir / f"report_{idx:03d}.json",
                            _report_payload(report, result.gev, point))
                summary.append({"index": idx, "lambda_d": ld, "lambda_e": le,
                                "lambda_c": lc, "OS": report.os_score,
                                "OS_star": report.os_star, "UNK": report.unk_recall})
                idx += 1
    _write_json(outdir / "summary.json", {"points": summary})
    _echo_config(outdir, "sweep", cfg)
    print(f"{'idx':>4} {'l_d':>6} {'l_e':>6} {'l_c':>6} {'OS':>8} {'OS*':>8} {'UNK':>8}")
    for row in summary:
        unk = f"{row['UNK']:.4f}" if row["UNK"] is not None else "  n/a"
        print(f"{row['index']:>4} {row['lambda_d']:>6.2f} {row['lambda_e']:>6.2f} "
              f"{row['lambda_c']:>6.2f} {row['OS']:>8.4f} {row['OS_star']:>8.4f} {unk:>8}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adagev",
                                     description="open-set domain adaptation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic blob benchmark")
    _add_config_flag(p)
    p.add_argument("--out")
    p.add_argument("--classes", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--std", type=float)
    p.add_argument("--rotation-deg", dest="rotation_deg", type=float)
    p.add_argument("--translate")
    p.add_argument("--source-per-class", dest="source_per_class", type=int)
    p.add_argument("--target-per-class", dest="target_per_class", type=int)
    p.add_argument("--seed", type=int)
    _add_split_flags(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="run the training loop and fit the GEV rejector")
    _add_config_flag(p)
    p.add_argument("--out")
    _add_data_flags(p)
    _add_split_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a target pool")
    _add_config_flag(p)
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    _add_data_flags(p)
    _add_split_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate an ablation variant")
    _add_config_flag(p)
    p.add_argument("--out")
    p.add_argument("--variant", choices=["full", "no-reweight", "no-evt-binary",
                                         "hard-threshold"])
    p.add_argument("--tau", type=float, help="entropy threshold for hard-threshold")
    _add_data_flags(p)
    _add_split_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("fit-gev", help="fit a GEV to a file of entropy values")
    _add_config_flag(p)
    p.add_argument("--input")
    p.add_argument("--out")
    p.add_argument("--tail", help="block:<size>, top:<fraction>, or none (default)")
    p.add_argument("--tail-pool", dest="tail_pool",
                   choices=["known-only", "known-plus-unknown"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_fit_gev)

    p = sub.add_parser("sweep", help="grid sweep over the loss weights")
    _add_config_flag(p)
    p.add_argument("--out")
    p.add_argument("--grid-lambda-d", dest="grid_lambda_d")
    p.add_argument("--grid-lambda-e", dest="grid_lambda_e")
    p.add_argument("--grid-lambda-c", dest="grid_lambda_c")
    _add_data_flags(p)
    _add_split_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ValueError) as e:
        if isinstance(e, dt.DataError):
            print(f"data error: {e}", file=sys.stderr)
            return EXIT_DATA
        if isinstance(e, evt.FitError):
            print(f"numerical failure: {e}", file=sys.stderr)
            return EXIT_NUMERICAL
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (md.CheckpointError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except pl.NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
