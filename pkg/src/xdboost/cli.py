"""Experiment harness: train/evaluate runs, sub-training sweeps, cold-start
evaluation, batch scoring, and synthetic data generation.

Every experiment command follows the same pipeline: ingest (or generate) a
click log, split it chronologically, optionally carve a sub-training set,
encode against a schema fitted on that training data only, derive class
weights, then train the boosted model and its unboosted reference under
the same seed and evaluate both on the validation and test splits. Results
are written as one JSON file per run; sweeps additionally emit a plot-ready
CSV. Exit codes distinguish configuration (2), data (3), training (4) and
evaluation (5) failures; anything unexpected exits 1.
"""

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
import traceback
from dataclasses import dataclass

import numpy as np

from . import metrics, synth
from .boosting import (DEFAULT_ERROR_LR, DEFAULT_N_ITERATIONS, XDBoostModel,
                       append_placeholders, create_xdboost, predict_xdboost,
                       train_unboosted, train_xdboost)
from .data import (FieldSpec, MISSING_TOKEN, SplitSpec, InteractionRecord,
                   build_schema_and_encode, chronological_split, class_weights,
                   cold_start_filter, encode, ingest_csv, records_hash,
                   sub_training)
from .errors import (ConfigError, DataError, EvaluationError, TrainingError,
                     UsageError, XDBoostError)
from .models import BaseNetConfig

log = logging.getLogger(__name__)

DEFAULT_PERCENTAGES = (1, 5, 10, 20, 40, 60, 72)

_TOP_KEYS = {"seed", "dataset", "fields", "synthetic", "split",
             "sub_training_percent", "sub_training_percentages",
             "normalize_continuous", "model", "output_dir"}
_MODEL_KEYS = {"n_iterations", "error_lr", "cold_restart", "net"}
_MANAGED_NET_KEYS = ("head", "loss", "seed")


@dataclass
class ExperimentConfig:
    """Everything one run needs; the result file embeds it verbatim."""

    seed: int
    dataset: str | None = None
    fields: dict | None = None
    synthetic: synth.SynthConfig | None = None
    split: SplitSpec = None
    sub_training_percent: float | None = None
    sub_training_percentages: tuple = DEFAULT_PERCENTAGES
    normalize_continuous: bool = True
    n_iterations: int = DEFAULT_N_ITERATIONS
    error_lr: float = DEFAULT_ERROR_LR
    cold_restart: bool = False
    net: BaseNetConfig = None
    output_dir: str = "runs"

    def snapshot(self):
        net = {k: v for k, v in self.net.to_dict().items()
               if k not in _MANAGED_NET_KEYS}
        return {
            "seed": self.seed,
            "dataset": self.dataset,
            "fields": self.fields,
            "synthetic": self.synthetic.to_dict() if self.synthetic else None,
            "split": dataclasses.asdict(self.split),
            "sub_training_percent": self.sub_training_percent,
            "sub_training_percentages": list(self.sub_training_percentages),
            "normalize_continuous": self.normalize_continuous,
            "model": {"n_iterations": self.n_iterations, "error_lr": self.error_lr,
                      "cold_restart": self.cold_restart, "net": net},
            "output_dir": self.output_dir,
        }


def load_config(path=None, seed=None, output_dir=None, sub_training_percent=None,
                percentages=None, synthetic=False):
    """Read the JSON config file (when given) and fold in CLI overrides.

    The accepted shape is exactly what ExperimentConfig.snapshot emits, so
    a result file's embedded config can be re-run as-is.
    """
    raw = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    if seed is not None:
        raw["seed"] = seed
    if output_dir is not None:
        raw["output_dir"] = output_dir
    if sub_training_percent is not None:
        raw["sub_training_percent"] = sub_training_percent
    if percentages is not None:
        raw["sub_training_percentages"] = percentages
    if synthetic and raw.get("synthetic") is None:
        raw["synthetic"] = {}
    if "seed" not in raw or raw["seed"] is None:
        raise ConfigError("a seed is required for reproducibility "
                          "(set \"seed\" in the config or pass --seed)")

    fields = raw.get("fields")
    if isinstance(fields, str):
        if not os.path.exists(fields):
            raise ConfigError(f"field declaration file not found: {fields}")
        with open(fields) as fh:
            fields = json.load(fh)
    if fields is not None and not isinstance(fields, dict):
        raise ConfigError("fields must be a mapping of column name to type")

    synth_cfg = None
    synth_raw = raw.get("synthetic")
    if synth_raw is not None:
        if not isinstance(synth_raw, dict):
            raise ConfigError("synthetic must be a JSON object of generator settings")
        synth_raw = dict(synth_raw)
        synth_raw.setdefault("seed", raw["seed"])
        try:
            synth_cfg = synth.SynthConfig(**synth_raw)
        except TypeError as exc:
            raise ConfigError(f"bad synthetic settings: {exc}")

    try:
        split = SplitSpec(**raw.get("split") or {}) if raw.get("split") else SplitSpec()
    except TypeError as exc:
        raise ConfigError(f"bad split settings: {exc}")

    model_raw = raw.get("model") or {}
    unknown = set(model_raw) - _MODEL_KEYS
    if unknown:
        raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
    net_raw = model_raw.get("net") or {}
    managed = [k for k in _MANAGED_NET_KEYS if k in net_raw]
    if managed:
        raise ConfigError(f"net settings {managed} are managed automatically")
    try:
        net = BaseNetConfig(**net_raw)
    except TypeError as exc:
        raise ConfigError(f"bad net settings: {exc}")

    pcts = tuple(raw.get("sub_training_percentages", DEFAULT_PERCENTAGES))
    for p in pcts:
        if not 0 < p <= 72:
            raise ConfigError(f"sub-training percentage {p} outside (0, 72]")

    return ExperimentConfig(
        seed=int(raw["seed"]),
        dataset=raw.get("dataset"),
        fields=fields,
        synthetic=synth_cfg,
        split=split,
        sub_training_percent=raw.get("sub_training_percent"),
        sub_training_percentages=pcts,
        normalize_continuous=bool(raw.get("normalize_continuous", True)),
        n_iterations=int(model_raw.get("n_iterations", DEFAULT_N_ITERATIONS)),
        error_lr=float(model_raw.get("error_lr", DEFAULT_ERROR_LR)),
        cold_restart=bool(model_raw.get("cold_restart", False)),
        net=net,
        output_dir=raw.get("output_dir", "runs"),
    )


def load_records(cfg):
    """Returns (records, field_spec, source meta)."""
    if cfg.synthetic is not None:
        records, meta = synth.generate_records(cfg.synthetic)
        return records, synth.field_spec(), {"source": "synthetic", **meta}
    if cfg.dataset is None:
        raise ConfigError("config needs either a dataset path or a synthetic block")
    if not cfg.fields:
        raise ConfigError("a dataset path requires a fields mapping")
    spec = FieldSpec.from_mapping(cfg.fields)
    records = ingest_csv(cfg.dataset, spec)
    return records, spec, {"source": cfg.dataset, "n_rows": len(records)}


def run_experiment(cfg, records, field_spec, sub_percent, eval_test=None,
                   command="train"):
    """One boosted-vs-reference run; returns (result dict, trained model).

    eval_test substitutes the rows metrics are computed on (the cold-start
    command passes the filtered test set); training data is unaffected.
    """
    timings = {}
    t0 = time.perf_counter()
    train_region, val_records, test_records = chronological_split(records, cfg.split)
    sub = (sub_training(records, train_region, sub_percent)
           if sub_percent is not None else train_region)
    test_eval = eval_test if eval_test is not None else test_records
    timings["split"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    schema, encoded = build_schema_and_encode(
        sub, {"train": sub, "val": val_records, "test": test_eval},
        field_spec, cfg.normalize_continuous)
    X_train, y_train, _ = encoded["train"]
    X_val, y_val, _ = encoded["val"]
    X_test, y_test, _ = encoded["test"]
    weights = class_weights(y_train)
    timings["encode"] = time.perf_counter() - t0

    n = cfg.n_iterations
    have_val = X_val.n_rows > 0

    t0 = time.perf_counter()
    model = create_xdboost(schema, cfg.net, n, cfg.error_lr,
                           seed=cfg.seed, cold_restart=cfg.cold_restart)
    train_xdboost(model, append_placeholders(X_train, n), y_train,
                  append_placeholders(X_val, n) if have_val else None,
                  y_val if have_val else None, class_weights=weights)
    timings["train_boosted"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    reference, reference_log = train_unboosted(
        schema, cfg.net, n, append_placeholders(X_train, n), y_train,
        append_placeholders(X_val, n) if have_val else None,
        y_val if have_val else None, class_weights=weights,
        seed=cfg.seed, cold_restart=cfg.cold_restart)
    timings["train_baseline"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    result_metrics = {"boosted": {}, "baseline": {}}
    for split_name, X, y in (("val", X_val, y_val), ("test", X_test, y_test)):
        if X.n_rows == 0:
            continue
        Xp = append_placeholders(X, n)
        result_metrics["boosted"][split_name] = metrics.evaluate(
            predict_xdboost(model, Xp), y).to_dict()
        result_metrics["baseline"][split_name] = metrics.evaluate(
            reference.predict_matrix(Xp), y).to_dict()
    timings["evaluate"] = time.perf_counter() - t0

    result = {
        "command": command,
        "config": cfg.snapshot(),
        "seed": cfg.seed,
        "sub_training_percent": sub_percent,
        "n_rows_total": len(records),
        "n_train_rows": len(sub),
        "n_val_rows": len(val_records),
        "n_test_rows": len(test_eval),
        "class_weights": {"nonclick": weights.weight_nonclick,
                          "click": weights.weight_click},
        "test_set_hash": records_hash(test_eval),
        "schema_hash": schema.hash(),
        "metrics": result_metrics,
        "timings_s": {k: round(v, 6) for k, v in timings.items()},
        "boosted_training_log": model.training_log,
        "baseline_training_log": reference_log,
    }
    return result, model


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _print_metrics(result):
    for model_name in ("baseline", "boosted"):
        for split_name, report in sorted(result["metrics"][model_name].items()):
            print(f"  {model_name:<8} {split_name:<5} "
                  f"auc={report['auc']:.6f} logloss={report['log_loss']:.6f}")


def cmd_train(cfg):
    records, field_spec, source = load_records(cfg)
    result, model = run_experiment(cfg, records, field_spec,
                                   cfg.sub_training_percent)
    result["data_source"] = source
    os.makedirs(cfg.output_dir, exist_ok=True)
    result_path = os.path.join(cfg.output_dir, "train_result.json")
    bundle_path = os.path.join(cfg.output_dir, "model_bundle")
    _write_json(result_path, result)
    model.save_bundle(bundle_path)
    print(f"train: {result['n_train_rows']} train rows, seed {cfg.seed}")
    _print_metrics(result)
    print(f"result written to {result_path}, model bundle to {bundle_path}")
    return 0


def cmd_sweep(cfg):
    if not cfg.sub_training_percentages:
        raise ConfigError("sweep needs a non-empty sub-training percentage list")
    records, field_spec, source = load_records(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    rows = []
    failures = []
    results = []
    for pct in cfg.sub_training_percentages:
        try:
            result, _ = run_experiment(cfg, records, field_spec, pct,
                                       command="sweep")
        except XDBoostError as exc:
            log.warning("sweep run at %s%% failed: %s", pct, exc)
            failures.append({"percentage": pct, "type": type(exc).__name__,
                             "error": str(exc)})
            continue
        result["data_source"] = source
        _write_json(os.path.join(cfg.output_dir, f"sweep_p{pct:g}.json"), result)
        for model_name, label in (("boosted", "xdboost"), ("baseline", "base")):
            report = result["metrics"][model_name]["test"]
            rows.append([pct, label, report["auc"], report["log_loss"]])
        results.append(result)
        print(f"sweep {pct:g}%: done ({result['n_train_rows']} train rows)")

    csv_path = os.path.join(cfg.output_dir, "sweep.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["percentage", "model", "auc", "logloss"])
        writer.writerows(rows)
    summary = {
        "command": "sweep",
        "config": cfg.snapshot(),
        "percentages": list(cfg.sub_training_percentages),
        "test_set_hash": results[0]["test_set_hash"] if results else None,
        "failures": failures,
        "csv": csv_path,
    }
    _write_json(os.path.join(cfg.output_dir, "sweep_summary.json"), summary)
    print(f"sweep: {len(results)} runs ok, {len(failures)} failed; "
          f"aggregated CSV at {csv_path}")
    if not results:
        raise failures_to_error(failures)
    return 0


def failures_to_error(failures):
    kinds = {f["type"] for f in failures}
    message = f"every sweep run failed: {failures}"
    for name, exc_type in (("ConfigError", ConfigError), ("DataError", DataError),
                           ("TrainingError", TrainingError),
                           ("EvaluationError", EvaluationError)):
        if kinds == {name}:
            return exc_type(message)
    return TrainingError(message)


def cmd_coldstart(cfg):
    records, field_spec, source = load_records(cfg)
    train_region, _, test_records = chronological_split(records, cfg.split)
    sub = (sub_training(records, train_region, cfg.sub_training_percent)
           if cfg.sub_training_percent is not None else train_region)
    filtered = cold_start_filter(test_records, sub)
    os.makedirs(cfg.output_dir, exist_ok=True)
    result_path = os.path.join(cfg.output_dir, "coldstart_result.json")
    if not filtered:
        result = {
            "command": "coldstart",
            "config": cfg.snapshot(),
            "no_cold_start_items": True,
            "n_unfiltered_test_rows": len(test_records),
            "n_filtered_test_rows": 0,
        }
        _write_json(result_path, result)
        print("coldstart: no cold-start items in the test set; nothing to evaluate")
        return 0
    result, model = run_experiment(cfg, records, field_spec,
                                   cfg.sub_training_percent, eval_test=filtered,
                                   command="coldstart")
    result["data_source"] = source
    result["no_cold_start_items"] = False
    result["n_unfiltered_test_rows"] = len(test_records)
    result["n_filtered_test_rows"] = len(filtered)
    _write_json(result_path, result)
    model.save_bundle(os.path.join(cfg.output_dir, "model_bundle"))
    print(f"coldstart: {len(filtered)} of {len(test_records)} test rows kept")
    _print_metrics(result)
    print(f"result written to {result_path}")
    return 0


def _field_spec_from_schema(schema):
    context = [f for f in schema.cat_fields
               if f not in (schema.user_field, schema.item_field)]
    return FieldSpec(user_field=schema.user_field, item_field=schema.item_field,
                     categorical=context, continuous=list(schema.cont_fields))


def _read_scoring_rows(path, schema):
    """Parse a CSV for scoring; timestamp and label columns are optional."""
    if not os.path.exists(path):
        raise DataError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = list(reader.fieldnames or [])
        needed = list(schema.cat_fields) + list(schema.cont_fields)
        missing = [name for name in needed if name not in header]
        if missing:
            raise DataError(f"input is missing schema fields: {missing}")
        raw_rows = list(reader)
    records = []
    for i, row in enumerate(raw_rows):
        cat = {}
        for name in schema.cat_fields:
            if name in (schema.user_field, schema.item_field):
                continue
            cat[name] = (row[name] or "").strip() or MISSING_TOKEN
        cont = {}
        for name in schema.cont_fields:
            value = (row[name] or "").strip()
            if not value:
                cont[name] = None
            else:
                try:
                    cont[name] = float(value)
                except ValueError:
                    raise DataError(
                        f"line {i + 2}: field {name!r} is continuous but holds {value!r}")
        user = item = None
        if schema.user_field:
            user = (row[schema.user_field] or "").strip() or MISSING_TOKEN
        if schema.item_field:
            item = (row[schema.item_field] or "").strip() or MISSING_TOKEN
        try:
            ts = float(row.get("timestamp") or i)
        except ValueError:
            ts = float(i)
        label_raw = (row.get("label") or "").strip()
        label = int(label_raw) if label_raw in ("0", "1") else 0
        records.append(InteractionRecord(ts, user, item, cat, cont, label))
    return header, raw_rows, records


def cmd_predict(bundle_path, input_path, output_path):
    model = XDBoostModel.load_bundle(bundle_path)
    schema = model.schema
    base_schema = dataclasses.replace(schema, n_placeholders=0)
    header, raw_rows, records = _read_scoring_rows(input_path, schema)
    X, _, _ = encode(records, base_schema)
    probs = (predict_xdboost(model, append_placeholders(X, model.n_iterations))
             if records else np.zeros(0))
    with open(output_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header + ["predicted_ctr"])
        writer.writeheader()
        for row, p in zip(raw_rows, probs):
            row["predicted_ctr"] = repr(float(p))
            writer.writerow(row)
    print(f"predict: scored {len(raw_rows)} rows -> {output_path}")
    return 0


def cmd_synth_gen(out_dir, synth_cfg):
    records, meta = synth.generate_records(synth_cfg)
    os.makedirs(out_dir, exist_ok=True)
    data_path = os.path.join(out_dir, "data.csv")
    synth.write_csv(records, data_path)
    _write_json(os.path.join(out_dir, "fields.json"), synth.field_mapping())
    _write_json(os.path.join(out_dir, "meta.json"), meta)
    print(f"synth-gen: {meta['n_rows']} rows (ctr {meta['ctr']:.4f}, "
          f"{meta['n_novel_item_rows']} novel-item test rows) -> {data_path}")
    return 0


def _percent_list(text):
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad percentage list: {text!r}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="xdboost",
        description="Residual-boosted CTR experiments: train, sweep, coldstart, "
                    "predict, synth-gen.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_experiment_flags(p):
        p.add_argument("--config", help="JSON experiment config file")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--output-dir", help="where results are written")
        p.add_argument("--synthetic", action="store_true",
                       help="use the built-in synthetic generator")

    p_train = sub.add_parser("train", help="one boosted-vs-base run")
    add_experiment_flags(p_train)
    p_train.add_argument("--sub-training-percent", type=float,
                         help="use only the last X%% of the data for training")

    p_sweep = sub.add_parser("sweep", help="run every sub-training percentage")
    add_experiment_flags(p_sweep)
    p_sweep.add_argument("--percentages", type=_percent_list,
                         help="comma-separated list, e.g. 1,5,10")

    p_cold = sub.add_parser("coldstart", help="evaluate on never-seen items only")
    add_experiment_flags(p_cold)
    p_cold.add_argument("--sub-training-percent", type=float,
                        help="use only the last X%% of the data for training")

    p_pred = sub.add_parser("predict", help="score a CSV with a saved bundle")
    p_pred.add_argument("--bundle", required=True, help="model bundle directory")
    p_pred.add_argument("--input", required=True, help="CSV to score")
    p_pred.add_argument("--output", required=True, help="where to write scored CSV")

    p_gen = sub.add_parser("synth-gen", help="write a synthetic click log")
    p_gen.add_argument("--output-dir", required=True)
    p_gen.add_argument("--rows", type=int, default=20000)
    p_gen.add_argument("--vocab-size", type=int, default=50)
    p_gen.add_argument("--cold-start-fraction", type=float, default=0.0)
    p_gen.add_argument("--test-fraction", type=float, default=0.20)
    p_gen.add_argument("--seed", type=int, default=0)
    return parser


def _dispatch(args):
    if args.command == "train":
        cfg = load_config(args.config, seed=args.seed, output_dir=args.output_dir,
                          sub_training_percent=args.sub_training_percent,
                          synthetic=args.synthetic)
        return cmd_train(cfg)
    if args.command == "sweep":
        cfg = load_config(args.config, seed=args.seed, output_dir=args.output_dir,
                          percentages=args.percentages, synthetic=args.synthetic)
        return cmd_sweep(cfg)
    if args.command == "coldstart":
        cfg = load_config(args.config, seed=args.seed, output_dir=args.output_dir,
                          sub_training_percent=args.sub_training_percent,
                          synthetic=args.synthetic)
        return cmd_coldstart(cfg)
    if args.command == "predict":
        return cmd_predict(args.bundle, args.input, args.output)
    if args.command == "synth-gen":
        synth_cfg = synth.SynthConfig(
            n_rows=args.rows, vocab_size=args.vocab_size,
            cold_start_fraction=args.cold_start_fraction,
            test_fraction=args.test_fraction, seed=args.seed)
        return cmd_synth_gen(args.output_dir, synth_cfg)
    raise UsageError(f"unknown command {args.command!r}")


EXIT_CODES = ((ConfigError, 2), (UsageError, 2), (DataError, 3),
              (TrainingError, 4), (EvaluationError, 5))


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except XDBoostError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for exc_type, code in EXIT_CODES:
            if isinstance(exc, exc_type):
                return code
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
