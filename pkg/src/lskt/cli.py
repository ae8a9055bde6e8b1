"""Batch command-line interface.

Commands: train, evaluate, ablate, synth, gradcheck, export-embeddings.
Every command takes ``--config PATH`` (``key=value`` lines or JSON), ``--seed``,
``--out`` and per-key overrides ``--<key>=<value>``; flags win over the file.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .attention import labels_or_shared
from .data import (
    SynthSpec,
    build_sequences,
    iter_batches,
    parse_csv,
    split,
    split_hash,
    synth_generate,
    write_csv,
)
from .embeddings import IRT_LEVELS, embed_exercise
from .errors import ConfigError, ContractError, DataFormatError, DimensionError, NumericalError
from .gradcheck import run_gradcheck, tiny_config
from .metrics import MetricsReport
from .model import VARIANTS, ModelConfig
from .training import evaluate, load_checkpoint, split_seed, train

log = logging.getLogger("lskt")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
BUNDLED_TINY = "bundled:tiny"

MODEL_KEYS = ModelConfig.keys()
SYNTH_KEYS = [f.name for f in dataclasses.fields(SynthSpec)]
COMMAND_KEYS = {
    "train": MODEL_KEYS + ["data"],
    "evaluate": MODEL_KEYS + ["data", "checkpoint"],
    "ablate": MODEL_KEYS + ["data", "variants", "irt_levels", "n_sweep"],
    "synth": SYNTH_KEYS,
    "gradcheck": MODEL_KEYS,
    "export-embeddings": MODEL_KEYS + ["data", "checkpoint", "export_learners"],
}


class DataError(Exception):
    pass


# -- configuration -------------------------------------------------------------


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix == ".json":
        return {k: v for k, v in json.loads(text).items()}
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def parse_overrides(extra: list[str]) -> dict:
    out, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        if "=" in tok:
            key, value = tok[2:].split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for {tok}")
            key, value = tok[2:], extra[i + 1]
            i += 1
        out[key.replace("-", "_")] = value
        i += 1
    return out


def _coerce(value, kind):
    if kind is bool or kind == "bool":
        if isinstance(value, bool):
            return value
        low = str(value).lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    try:
        if kind in (int, "int"):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if kind in (float, "float"):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"cannot read {value!r} as {getattr(kind, '__name__', kind)}") from None
    return str(value)


def build_dataclass(cls, values: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in values:
            kwargs[f.name] = _coerce(values[f.name], f.type)
    return cls(**kwargs)


def resolve(command: str, args, extra: list[str]) -> dict:
    values = read_config_file(args.config) if args.config else {}
    values.update(parse_overrides(extra))
    if args.seed is not None:
        values["seed"] = args.seed
    allowed = set(COMMAND_KEYS[command])
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys for {command}: {', '.join(unknown)}")
    return values


def write_resolved(out: Path, resolved: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")


# -- data ------------------------------------------------------------------------


def bundled_tiny_path() -> Path:
    return Path(str(resources.files("lskt").joinpath("resources/tiny_synth.csv")))


def load_corpus(data, max_len):
    if data is None:
        raise ConfigError("no data path given (use --data=PATH or --data=bundled:tiny)")
    path = bundled_tiny_path() if data == BUNDLED_TINY else Path(data)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    try:
        records = parse_csv(path)
    except (DataFormatError, UnicodeDecodeError) as exc:
        raise DataError(str(exc)) from exc
    corpus = build_sequences(records, max_len)
    if len(corpus.learners()) < 2:
        raise DataError(f"{path}: need at least 2 learners with 2+ interactions")
    return corpus


def split_corpus(corpus, cfg: ModelConfig):
    return split(corpus.sequences, cfg.train_fraction, split_seed(cfg.seed))


def _model_config(values: dict, base: ModelConfig | None = None) -> ModelConfig:
    merged = dataclasses.asdict(base) if base is not None else {}
    merged.update({k: v for k, v in values.items() if k in MODEL_KEYS})
    return build_dataclass(ModelConfig, merged).validate()


# -- commands --------------------------------------------------------------------


def _absolute_data(values: dict) -> None:
    data = values.get("data")
    if data is not None and data != BUNDLED_TINY:
        values["data"] = str(Path(data).resolve())


def cmd_train(values: dict, out: Path) -> int:
    _absolute_data(values)
    cfg = _model_config(values)
    corpus = load_corpus(values.get("data"), cfg.max_len)
    write_resolved(out, dict(cfg.to_dict(), data=values.get("data")))
    (out / "skipped.json").write_text(corpus.skipped_report() + "\n")
    tr, te = split_corpus(corpus, cfg)
    ckpt = out / "checkpoint"
    ckpt.mkdir(parents=True, exist_ok=True)
    (ckpt / "run.json").write_text(
        json.dumps(
            {"data": values.get("data"), "split_hash": split_hash(tr, te), "n_train": len(tr), "n_test": len(te)},
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    state = train(cfg, tr, te, corpus.concepts.size, corpus.exercises.size, checkpoint_dir=ckpt)
    _copy_history(ckpt / "history.csv", out / "history.csv")
    report = MetricsReport(**_final_metrics(state), n_pairs=int(sum(len(s) - 1 for s in te)))
    text = report.to_json() + "\n"
    (out / "metrics.json").write_text(text)
    print(text, end="")
    return EXIT_OK


def _copy_history(src: Path, dst: Path) -> None:
    dst.write_bytes(src.read_bytes())


def _load_for_eval(values: dict):
    ckpt = values.get("checkpoint")
    if ckpt is None:
        raise ConfigError("--checkpoint is required")
    ckpt = Path(ckpt)
    if not (ckpt / "config.json").is_file():
        raise DataError(f"checkpoint not found: {ckpt}")
    run = json.loads((ckpt / "run.json").read_text()) if (ckpt / "run.json").is_file() else {}
    stored = json.loads((ckpt / "config.json").read_text())
    n_concepts, n_exercises = stored.pop("n_concepts"), stored.pop("n_exercises")
    cfg = _model_config(values, build_dataclass(ModelConfig, stored))
    corpus = load_corpus(values.get("data", run.get("data")), cfg.max_len)
    if (corpus.concepts.size, corpus.exercises.size) != (n_concepts, n_exercises):
        raise ConfigError(
            f"vocabulary mismatch: data gives concepts x exercises = {corpus.concepts.size} x "
            f"{corpus.exercises.size}, checkpoint has {n_concepts} x {n_exercises}"
        )
    try:
        state = load_checkpoint(ckpt, cfg)
    except DimensionError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg, corpus, state


def cmd_evaluate(values: dict, out: Path) -> int:
    cfg, corpus, state = _load_for_eval(values)
    _, te = split_corpus(corpus, cfg)
    report, _, _ = evaluate(state.model, te, state.clusters)
    out.mkdir(parents=True, exist_ok=True)
    text = report.to_json() + "\n"
    (out / "metrics.json").write_text(text)
    print(text, end="")
    return EXIT_OK


def _parse_list(value, allowed, name):
    items = [v.strip() for v in str(value).split(",") if v.strip()]
    bad = [v for v in items if v not in allowed]
    if bad or not items:
        raise ConfigError(f"{name}: unknown entries {bad}; allowed {list(allowed)}")
    return items


def _parse_range(value) -> list[int]:
    text = str(value)
    try:
        if "-" in text:
            lo, hi = (int(v) for v in text.split("-", 1))
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"n_sweep must look like 1-10 or 2,4,6, got {text!r}") from None


def cmd_ablate(values: dict, out: Path) -> int:
    cfg = _model_config(values)
    data = values.get("data", BUNDLED_TINY)
    corpus = load_corpus(data, cfg.max_len)
    tr, te = split_corpus(corpus, cfg)
    digest = split_hash(tr, te)
    irts = _parse_list(values.get("irt_levels", ",".join(IRT_LEVELS)), IRT_LEVELS, "irt_levels")
    write_resolved(out, dict(cfg.to_dict(), data=data, **{k: values[k] for k in ("variants", "irt_levels", "n_sweep") if k in values}))

    if "n_sweep" in values:
        ns = _parse_range(values["n_sweep"])
        if not ns or min(ns) < 1:
            raise ConfigError(f"n_sweep values must be >= 1, got {ns}")
        rows = []
        for irt in irts:
            for n in ns:
                run_cfg = dataclasses.replace(cfg, irt=irt, ablation="full", n_clusters=n)
                state = train(run_cfg, tr, te, corpus.concepts.size, corpus.exercises.size)
                rows.append(dict(irt=irt, n=n, **_final_metrics(state), split_hash=digest))
        _write_rows(out / "n_sweep.csv", rows)
        return EXIT_OK

    variants = _parse_list(values.get("variants", ",".join(VARIANTS)), VARIANTS, "variants")
    rows = []
    for variant in variants:
        for irt in irts:
            run_cfg = dataclasses.replace(cfg, irt=irt, ablation=variant)
            state = train(run_cfg, tr, te, corpus.concepts.size, corpus.exercises.size)
            rows.append(
                dict(
                    variant=variant,
                    irt=irt,
                    **_final_metrics(state),
                    split_hash=digest,
                    disabled_grad_max=state.disabled_grad_max,
                )
            )
            log.info("ablate %s/%s auc %.4f", variant, irt, rows[-1]["auc"])
    _write_rows(out / "ablation.csv", rows)
    return EXIT_OK


def _final_metrics(state) -> dict:
    last = state.history[-1]
    return {"auc": last["val_auc"], "acc": last["val_acc"], "rmse": last["val_rmse"], "mae": last["val_mae"]}


def _fmt(v):
    return repr(v) if isinstance(v, float) else v


def _write_rows(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})
    print(path.read_text(), end="")


def cmd_synth(values: dict, out: Path) -> int:
    spec = build_dataclass(SynthSpec, values)
    try:
        spec.validate()
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    out.mkdir(parents=True, exist_ok=True)
    write_csv(synth_generate(spec), out / "interactions.csv")
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    print(out / "interactions.csv")
    return EXIT_OK


def cmd_gradcheck(values: dict, out: Path | None) -> int:
    base = tiny_config()
    cfg = _model_config(values, base)
    result = run_gradcheck(cfg)
    for name, err in result.errors.items():
        flag = "ok" if err <= result.tolerance else "FAIL"
        print(f"{name:28s} max_rel_err={err:.3e} {flag}")
    print(f"checked {result.checked} entries in {result.seconds:.1f}s: {'PASS' if result.ok else 'FAIL'}")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.json").write_text(
            json.dumps({"ok": result.ok, "errors": result.errors, "checked": result.checked}, indent=2, sort_keys=True) + "\n"
        )
    return EXIT_OK if result.ok else 1


def _floats(arr) -> list[str]:
    return [repr(v) for v in np.asarray(arr, dtype=np.float64).tolist()]


def cmd_export_embeddings(values: dict, out: Path) -> int:
    cfg, corpus, state = _load_for_eval(values)
    model = state.model
    out.mkdir(parents=True, exist_ok=True)
    D = cfg.dim

    ex_idx = np.arange(1, corpus.exercises.size)
    concept_of = np.array([corpus.exercise_concept[int(e)] for e in ex_idx], dtype=np.int64)
    x = embed_exercise(model.params, cfg.irt, concept_of, ex_idx).data
    ex_ids, co_ids = corpus.exercises.ids(), corpus.concepts.ids()
    with (out / "exercises.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["exercise_id", "concept_id"] + [f"x{i}" for i in range(D)])
        for row, e in enumerate(ex_idx):
            w.writerow([ex_ids[e - 1], co_ids[concept_of[row] - 1]] + _floats(x[row]))

    _, te = split_corpus(corpus, cfg)
    if "export_learners" in values:
        wanted = {v.strip() for v in str(values["export_learners"]).split(",") if v.strip()}
        chosen = [s for s in corpus.sequences if s.learner_id in wanted]
        missing = wanted - {s.learner_id for s in chosen}
        if missing:
            raise DataError(f"unknown learners: {sorted(missing)}")
    else:
        chosen = te
    with (out / "states.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(
            ["learner_id", "chunk", "t", "label"]
            + [f"yhat{i}" for i in range(D)]
            + [f"h{i}" for i in range(D)]
            + [f"z{i}" for i in range(D)]
        )
        for batch in iter_batches(chosen, cfg.batch_size, cfg.max_len):
            res = model.forward(batch, state.clusters, train=False)
            valid = batch.valid()
            yhat = res.yhat.data if res.yhat is not None else np.full(res.z.shape, np.nan)
            h = res.h.data if res.h is not None else np.full(res.z.shape, np.nan)
            labels = res.labels
            if labels is None:
                labels = labels_or_shared(yhat, None, valid)
            for b in range(batch.size):
                learner, chunk = batch.learners[b]
                for t in range(batch.lengths[b]):
                    w.writerow(
                        [learner, chunk, t, int(labels[b, t])]
                        + _floats(yhat[b, t])
                        + _floats(h[b, t])
                        + _floats(res.z.data[b, t])
                    )
    print(out)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "synth": cmd_synth,
    "gradcheck": cmd_gradcheck,
    "export-embeddings": cmd_export_embeddings,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lskt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"{name} (extra --<key>=<value> overrides accepted)")
        p.add_argument("--config", help="key=value or JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress per epoch")
    return parser


def default_out(command: str, values: dict) -> Path:
    if command in ("evaluate", "export-embeddings") and "checkpoint" in values:
        suffix = "evaluation" if command == "evaluate" else "export"
        return Path(values["checkpoint"]).parent / suffix
    return Path("runs") / command


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        values = resolve(args.command, args, extra)
        if args.command == "gradcheck":
            out = Path(args.out) if args.out else None
        else:
            out = Path(args.out) if args.out else default_out(args.command, values)
        return COMMANDS[args.command](values, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ContractError, DataFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
