"""End-to-end pipeline CLI.

Subcommands wire the library into the full loop: synthesize or load data,
poison it, train the victim, then defend at inference time and measure the
damage. Every run writes a manifest with the resolved config and its hash, so
rerunning from the manifest reproduces the outputs byte for byte.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, attack, evalx, lm, onion, searchopt, victim
from .lm import ScorerProtocolError
from .textcore import (
    Dataset,
    DataError,
    make_rng,
    load_tsv,
    save_tsv,
    synth_corpus,
    with_split_tag,
)
from .victim import DEFAULT_FEATURE_DIM, TrainConfig

SCENARIOS = ("post_training", "pre_training", "fine_tune_clean")

DEFAULT_CONFIG = {
    "seed": 0,
    "scenario": "post_training",
    "data": {
        "synthetic": {
            "num_classes": 2,
            "per_class_train": 500,
            "per_class_validation": 200,
            "per_class_test": 200,
            "vocab_per_class": 30,
            "len_range": [8, 14],
        }
    },
    "attack": {
        "kind": "word_insertion",
        "tier": "rare",
        "insertions_per_sample": 1,
        "target_label": 1,
        "poison_rate": 0.1,
    },
    "train": {"epochs": 150, "learning_rate": 2.0, "l2": 0.0, "feature_dim": DEFAULT_FEATURE_DIM},
    "fine_tune": {"epochs": 5, "learning_rate": 0.05, "l2": 0.0},
    "lm": {"order": 3, "weights": [0.1, 0.3, 0.6], "unk_cutoff": 2},
    "defense": {
        "method": "onion",
        "threshold": 0.0,
        "max_cacc_drop": 0.02,
        "search": {"N": 60, "T": 20, "omega_max": 0.8, "omega_min": 0.2, "p_max": 0.8, "p_min": 0.2},
    },
    "sweep": {"points": 10},
}


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _config_sha(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()


def _write_json(doc: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_json(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _derive_seeds(master: int) -> dict[str, int]:
    rng = make_rng(master)
    names = (
        "corpus_train",
        "corpus_validation",
        "corpus_test",
        "plan",
        "train",
        "test_poison",
        "fine_tune",
        "search",
    )
    return {name: int(rng.integers(2**62)) for name in names}


def _memoized(sanitizer: evalx.Sanitizer) -> evalx.Sanitizer:
    cache: dict[tuple[str, ...], tuple] = {}

    def wrapped(sentence):
        key = sentence.tokens
        if key not in cache:
            cache[key] = sanitizer(sentence)
        return cache[key]

    return wrapped


def _load_scorer(spec: str) -> lm.PerplexityScorer:
    if spec.startswith("http://") or spec.startswith("https://"):
        return lm.RemoteScorerClient(endpoint=spec)
    return lm.load_lm(spec)


def _load_splits(data_cfg: dict, seeds: dict[str, int]) -> tuple[Dataset, Dataset, Dataset]:
    if "synthetic" in data_cfg:
        sc = data_cfg["synthetic"]
        num_classes = int(sc["num_classes"])
        lo, hi = sc["len_range"]
        kwargs = dict(
            num_classes=num_classes,
            vocab_per_class=int(sc["vocab_per_class"]),
            len_range=(int(lo), int(hi)),
        )
        train_set = synth_corpus(make_rng(seeds["corpus_train"]), per_class=int(sc["per_class_train"]), **kwargs)
        val_set = with_split_tag(
            synth_corpus(make_rng(seeds["corpus_validation"]), per_class=int(sc["per_class_validation"]), **kwargs),
            "validation",
        )
        test_set = with_split_tag(
            synth_corpus(make_rng(seeds["corpus_test"]), per_class=int(sc["per_class_test"]), **kwargs),
            "test",
        )
        return train_set, val_set, test_set
    num_classes = int(data_cfg["num_classes"])
    return (
        load_tsv(data_cfg["train"], num_classes, "train"),
        load_tsv(data_cfg["validation"], num_classes, "validation"),
        load_tsv(data_cfg["test"], num_classes, "test"),
    )


def _search_config(method: str, search_cfg: dict, default_seed: int):
    sc = dict(search_cfg)
    sc.setdefault("seed", default_seed)
    if method == "pso":
        keys = ("N", "T", "omega_max", "omega_min", "p_max", "p_min", "seed")
        return searchopt.PsoConfig(**{k: sc[k] for k in keys if k in sc})
    keys = ("N", "T", "seed")
    kwargs = {k: sc[k] for k in keys if k in sc}
    if "init_delete_probs" in sc:
        kwargs["init_delete_probs"] = tuple(sc["init_delete_probs"])
    return searchopt.GaConfig(**kwargs)


def _auto_grid(
    scorer: lm.PerplexityScorer, poisoned: Dataset, clean: Dataset, points: int
) -> list[float]:
    """Default sweep grid: from the canonical zero threshold up to the largest
    observed suspicion score (defense effectively off). Below zero the defense
    degenerates into mass deletion, which is not a useful operating range."""
    values: list[float] = []
    for dataset in (poisoned, clean):
        for ex in dataset:
            if len(ex.sentence) == 0:
                continue
            profile = onion.suspicion_profile(scorer, ex.sentence)
            values.extend(f for f in profile.scores if math.isfinite(f))
    hi = max(values, default=0.0)
    if points <= 1 or hi <= 0.0:
        return [0.0]
    return [float(v) for v in np.linspace(0.0, hi, points)]


@dataclass(frozen=True)
class ExperimentResult:
    scenario: str
    method: str
    threshold: float | None
    cacc_benign: float
    report: evalx.DefenseReport
    config: dict
    files: dict[str, Path]


def run_experiment(config: dict | None, out_dir: str | Path) -> ExperimentResult:
    """Full pipeline: data -> poison -> train -> defend -> evaluate.

    Accepts either a raw config or a previously written manifest (detected by
    its "config" key), so any run can be reproduced from its manifest.
    """
    if config and "config" in config and "config_sha256" in config:
        config = config["config"]
    resolved = _merge(DEFAULT_CONFIG, config or {})
    scenario = resolved["scenario"]
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = _derive_seeds(int(resolved["seed"]))

    train_set, val_set, test_set = _load_splits(resolved["data"], seeds)

    tc = resolved["train"]
    feature_dim = int(tc.get("feature_dim", DEFAULT_FEATURE_DIM))
    train_cfg = TrainConfig(
        epochs=int(tc["epochs"]),
        learning_rate=float(tc["learning_rate"]),
        l2=float(tc.get("l2", 0.0)),
        seed=int(tc.get("seed", seeds["train"])),
    )
    benign_model = victim.train(train_set, train_cfg, feature_dim)
    cacc_benign = evalx.cacc(benign_model, test_set)

    attack_cfg = dict(resolved["attack"])
    attack_cfg.setdefault("seed", seeds["plan"])
    plan = attack.plan_from_config(attack_cfg, train_set)
    poisoned_train = attack.poison_dataset(train_set, plan)
    model = victim.train(poisoned_train, train_cfg, feature_dim)
    if scenario == "fine_tune_clean":
        ft = resolved["fine_tune"]
        ft_cfg = TrainConfig(
            epochs=int(ft["epochs"]),
            learning_rate=float(ft["learning_rate"]),
            l2=float(ft.get("l2", 0.0)),
            seed=int(ft.get("seed", seeds["fine_tune"])),
        )
        model = victim.fine_tune(model, train_set, ft_cfg)

    lm_cfg = resolved["lm"]
    scorer = lm.train_lm(
        train_set,
        order=int(lm_cfg["order"]),
        weights=tuple(lm_cfg["weights"]),
        unk_cutoff=int(lm_cfg["unk_cutoff"]),
    )
    poisoned_test = attack.poison_test_set(test_set, plan.spec, make_rng(seeds["test_poison"]))

    defense_cfg = resolved["defense"]
    method = defense_cfg["method"]
    threshold_used: float | None = None
    if method == "onion":
        threshold = defense_cfg["threshold"]
        if threshold == "auto":
            threshold = onion.tune_threshold(
                scorer, model, val_set, float(defense_cfg["max_cacc_drop"])
            )
        threshold_used = float(threshold)
        sanitizer = onion.make_sanitizer(onion.DefenseConfig(threshold_used, scorer))
    elif method in ("pso", "ga"):
        cfg = _search_config(method, defense_cfg.get("search", {}), seeds["search"])
        sanitizer = searchopt.make_search_sanitizer(method, scorer, cfg)
    else:
        raise ValueError(f"unknown defense method {method!r}")
    sanitizer = _memoized(sanitizer)

    report = evalx.evaluate_defense(model, sanitizer, poisoned_test, test_set)
    asr_table = evalx.breakdown_asr(model, sanitizer, poisoned_test)
    cacc_table = evalx.breakdown_cacc(model, sanitizer, test_set)
    dist = evalx.score_distribution(scorer, poisoned_test)
    grid = _auto_grid(scorer, poisoned_test, test_set, int(resolved["sweep"]["points"]))
    sweep_rows = evalx.sweep_threshold(model, scorer, poisoned_test, test_set, grid)

    files: dict[str, Path] = {}

    def emit(name: str, filename: str) -> Path:
        files[name] = out_dir / filename
        return files[name]

    if "synthetic" in resolved["data"]:
        save_tsv(train_set, emit("train_tsv", "train.tsv"))
        save_tsv(val_set, emit("validation_tsv", "validation.tsv"))
        save_tsv(test_set, emit("test_tsv", "test.tsv"))
    attack.save_poisoned(
        poisoned_train, emit("poisoned_train_tsv", "poisoned_train.tsv"),
        emit("poisoned_train_truth", "poisoned_train.ground_truth.json"),
    )
    attack.save_poisoned(
        poisoned_test, emit("poisoned_test_tsv", "poisoned_test.tsv"),
        emit("poisoned_test_truth", "poisoned_test.ground_truth.json"),
    )
    victim.save_model(benign_model, emit("benign_model", "model_benign.json"))
    victim.save_model(model, emit("model", "model_backdoored.json"))
    lm.save_lm(scorer, emit("lm", "lm.json"))
    asr_table.write_csv(emit("breakdown_asr", "breakdown_asr.csv"), "asr")
    cacc_table.write_csv(emit("breakdown_cacc", "breakdown_cacc.csv"), "cacc")
    dist.write_csv(emit("score_dist", "score_dist.csv"))
    evalx.write_sweep_csv(sweep_rows, emit("sweep", "sweep.csv"))

    extra = {
        "scenario": scenario,
        "method": method,
        "threshold": threshold_used,
        "cacc_benign": cacc_benign,
        "config_sha256": _config_sha(resolved),
    }
    evalx.write_report_json(report, emit("report", "report.json"), extra)
    with open(emit("report_txt", "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(report.format_text() + "\n")
    _write_manifest(out_dir, "run-experiment", resolved, files)

    return ExperimentResult(
        scenario=scenario,
        method=method,
        threshold=threshold_used,
        cacc_benign=cacc_benign,
        report=report,
        config=resolved,
        files=files,
    )


def _write_manifest(out_dir: Path, command: str, config: dict, files: dict[str, Path]) -> Path:
    manifest = {
        "tool": "triggerlab",
        "version": __version__,
        "command": command,
        "config": config,
        "config_sha256": _config_sha(config),
        "outputs": {name: path.name for name, path in sorted(files.items())},
        "versions": {"python": sys.version.split()[0], "numpy": np.__version__},
    }
    path = out_dir / "manifest.json"
    _write_json(manifest, path)
    return path


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_common(p: argparse.ArgumentParser, config=True, seed=True, out_dir=True):
    if config:
        p.add_argument("--config", help="JSON config file")
    if seed:
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
    if out_dir:
        p.add_argument("--out-dir", help="output directory")


def cmd_synth(args) -> int:
    config = _load_json(args.config) if args.config else {}
    sc = _merge(DEFAULT_CONFIG["data"]["synthetic"], config.get("synthetic", config))
    seed = args.seed if args.seed is not None else int(sc.get("seed", 0))
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = _derive_seeds(seed)
    resolved = {
        "num_classes": int(sc["num_classes"]),
        "per_class_train": int(sc["per_class_train"]),
        "per_class_validation": int(sc["per_class_validation"]),
        "per_class_test": int(sc["per_class_test"]),
        "vocab_per_class": int(sc["vocab_per_class"]),
        "len_range": [int(sc["len_range"][0]), int(sc["len_range"][1])],
        "seed": seed,
    }
    train_set, val_set, test_set = _load_splits({"synthetic": resolved}, seeds)
    files = {}
    for name, dataset in (("train", train_set), ("validation", val_set), ("test", test_set)):
        path = out_dir / f"{name}.tsv"
        save_tsv(dataset, path)
        files[name] = path
    _write_manifest(out_dir, "synth", resolved, files)
    print(f"wrote {len(train_set)}/{len(val_set)}/{len(test_set)} examples to {out_dir}")
    return 0


def cmd_poison(args) -> int:
    plan_cfg = _load_json(args.plan)
    if args.seed is not None:
        plan_cfg["seed"] = args.seed
    dataset = load_tsv(args.input, args.num_classes, split_tag=args.split)
    plan = attack.plan_from_config(plan_cfg, dataset)
    if args.split == "train":
        poisoned = attack.poison_dataset(dataset, plan)
    else:
        poisoned = attack.poison_test_set(dataset, plan.spec, make_rng(plan.seed))
    ground_truth = args.ground_truth or str(Path(args.out).with_suffix(".ground_truth.json"))
    attack.save_poisoned(poisoned, args.out, ground_truth)
    n = sum(ex.poisoned for ex in poisoned)
    print(f"poisoned {n}/{len(poisoned)} examples -> {args.out} (+ {ground_truth})")
    return 0


def cmd_train(args) -> int:
    config = _load_json(args.config) if args.config else {}
    num_classes = args.num_classes or int(config.get("num_classes", 2))
    dataset = load_tsv(args.data, num_classes, split_tag="train")
    cfg = TrainConfig(
        epochs=int(config.get("epochs", DEFAULT_CONFIG["train"]["epochs"])),
        learning_rate=float(config.get("learning_rate", DEFAULT_CONFIG["train"]["learning_rate"])),
        l2=float(config.get("l2", 0.0)),
        seed=args.seed if args.seed is not None else int(config.get("seed", 0)),
    )
    feature_dim = int(config.get("feature_dim", DEFAULT_FEATURE_DIM))
    model = victim.train(dataset, cfg, feature_dim)
    victim.save_model(model, args.out)
    print(f"trained on {len(dataset)} examples -> {args.out}")
    return 0


def cmd_train_lm(args) -> int:
    config = _load_json(args.config) if args.config else {}
    num_classes = args.num_classes or int(config.get("num_classes", 2))
    dataset = load_tsv(args.data, num_classes, split_tag="train")
    model = lm.train_lm(
        dataset,
        order=int(config.get("order", 3)),
        weights=tuple(config.get("weights", DEFAULT_CONFIG["lm"]["weights"])),
        unk_cutoff=int(config.get("unk_cutoff", 2)),
    )
    lm.save_lm(model, args.out)
    print(f"trained {model.order}-gram model on {len(dataset)} examples -> {args.out}")
    return 0


def cmd_tune_threshold(args) -> int:
    scorer = _load_scorer(args.lm)
    model = victim.load_model(args.model)
    validation = load_tsv(args.validation, model.num_classes, split_tag="validation")
    threshold = onion.tune_threshold(scorer, model, validation, args.max_cacc_drop)
    if args.out:
        _write_json({"threshold": threshold, "max_cacc_drop": args.max_cacc_drop}, Path(args.out))
    print(f"{threshold}")
    return 0


def _build_sanitizer(args, scorer) -> evalx.Sanitizer:
    if args.method == "onion":
        threshold = args.threshold
        if threshold == "auto":
            if not (args.model and args.validation):
                raise _UsageError("--threshold auto needs --model and --validation")
            model = victim.load_model(args.model)
            validation = load_tsv(args.validation, model.num_classes, split_tag="validation")
            threshold = onion.tune_threshold(scorer, model, validation, args.max_cacc_drop)
        return onion.make_sanitizer(onion.DefenseConfig(float(threshold), scorer))
    search_cfg = _load_json(args.search_config) if args.search_config else {}
    cfg = _search_config(args.method, search_cfg, args.seed if args.seed is not None else 0)
    return searchopt.make_search_sanitizer(args.method, scorer, cfg)


def cmd_defend(args) -> int:
    scorer = _load_scorer(args.lm)
    sanitizer = _build_sanitizer(args, scorer)
    dataset = load_tsv(args.input, args.num_classes, split_tag=args.split)
    sanitized = []
    removals = []
    for i, ex in enumerate(dataset):
        if len(ex.sentence) == 0:
            cleaned, removed = ex.sentence, set()
        else:
            cleaned, removed = sanitizer(ex.sentence)
        sanitized.append((cleaned, ex.label))
        removals.append({"line": i + 1, "removed_indices": sorted(int(r) for r in removed)})
    with open(args.out, "w", encoding="utf-8") as fh:
        for sentence, label in sanitized:
            fh.write(f"{sentence.text()}\t{label}\n")
    sidecar = args.removals or str(Path(args.out).with_suffix(".removals.json"))
    _write_json({"format": "defense-removals-v1", "removals": removals}, Path(sidecar))
    total = sum(len(r["removed_indices"]) for r in removals)
    print(f"sanitized {len(sanitized)} examples, removed {total} tokens -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    scorer = _load_scorer(args.lm)
    model = victim.load_model(args.model)
    poisoned_test = attack.load_poisoned(args.poisoned, args.ground_truth)
    clean_test = load_tsv(args.clean, model.num_classes, split_tag="test")
    sanitizer = _memoized(_build_sanitizer(args, scorer))
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)

    report = evalx.evaluate_defense(model, sanitizer, poisoned_test, clean_test)
    evalx.breakdown_asr(model, sanitizer, poisoned_test).write_csv(out_dir / "breakdown_asr.csv", "asr")
    evalx.breakdown_cacc(model, sanitizer, clean_test).write_csv(out_dir / "breakdown_cacc.csv", "cacc")
    evalx.score_distribution(scorer, poisoned_test).write_csv(out_dir / "score_dist.csv")
    grid = _auto_grid(scorer, poisoned_test, clean_test, args.sweep_points)
    evalx.write_sweep_csv(
        evalx.sweep_threshold(model, scorer, poisoned_test, clean_test, grid), out_dir / "sweep.csv"
    )
    evalx.write_report_json(report, out_dir / "report.json", {"method": args.method})
    (out_dir / "report.txt").write_text(report.format_text() + "\n", encoding="utf-8")
    print(report.format_text())
    return 0


def cmd_sweep(args) -> int:
    scorer = _load_scorer(args.lm)
    model = victim.load_model(args.model)
    poisoned_test = attack.load_poisoned(args.poisoned, args.ground_truth)
    clean_test = load_tsv(args.clean, model.num_classes, split_tag="test")
    if args.grid:
        grid = [float(v) for v in args.grid.split(",")]
    else:
        grid = _auto_grid(scorer, poisoned_test, clean_test, args.points)
    rows = evalx.sweep_threshold(model, scorer, poisoned_test, clean_test, grid)
    out = args.out or "sweep.csv"
    evalx.write_sweep_csv(rows, out)
    for t, a, c in rows:
        print(f"t_s={t: .4f}  asr={a:.4f}  cacc={c:.4f}")
    return 0


def cmd_run_experiment(args) -> int:
    config = _load_json(args.config) if args.config else {}
    if args.seed is not None:
        if "config" in config and "config_sha256" in config:
            config["config"]["seed"] = args.seed
        else:
            config["seed"] = args.seed
    result = run_experiment(config, args.out_dir or ".")
    print(f"scenario={result.scenario} method={result.method} threshold={result.threshold}")
    print(result.report.format_text())
    print(f"cacc_benign={result.cacc_benign:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="triggerlab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"triggerlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus (train/validation/test TSVs)")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("poison", help="poison a TSV dataset per a JSON plan")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--plan", required=True, help="JSON poison plan")
    p.add_argument("--out", required=True)
    p.add_argument("--ground-truth", help="sidecar path (default: out with .ground_truth.json)")
    p.add_argument("--num-classes", type=int, default=2)
    p.add_argument("--split", choices=["train", "test"], default="train")
    _add_common(p, config=False, out_dir=False)
    p.set_defaults(func=cmd_poison)

    p = sub.add_parser("train", help="train the victim classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--num-classes", type=int)
    _add_common(p, out_dir=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-lm", help="train the n-gram perplexity scorer")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--num-classes", type=int)
    _add_common(p, seed=False, out_dir=False)
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("tune-threshold", help="tune the suspicion threshold on a validation set")
    p.add_argument("--model", required=True)
    p.add_argument("--lm", required=True, help="LM dump path or http(s) scorer URL")
    p.add_argument("--validation", required=True)
    p.add_argument("--max-cacc-drop", type=float, default=0.02)
    p.add_argument("--out", help="optional JSON output path")
    p.set_defaults(func=cmd_tune_threshold)

    p = sub.add_parser("defend", help="sanitize a TSV at inference time")
    p.add_argument("--lm", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["onion", "pso", "ga"], default="onion")
    p.add_argument("--threshold", default="0.0", help="suspicion threshold or 'auto'")
    p.add_argument("--model", help="victim model (needed for --threshold auto)")
    p.add_argument("--validation", help="clean TSV (needed for --threshold auto)")
    p.add_argument("--max-cacc-drop", type=float, default=0.02)
    p.add_argument("--search-config", help="JSON config for pso/ga")
    p.add_argument("--num-classes", type=int, default=2)
    p.add_argument("--split", choices=["train", "validation", "test"], default="test")
    p.add_argument("--removals", help="sidecar path (default: out with .removals.json)")
    _add_common(p, config=False, out_dir=False)
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("evaluate", help="full defense report on poisoned + clean test sets")
    p.add_argument("--model", required=True)
    p.add_argument("--lm", required=True)
    p.add_argument("--poisoned", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--method", choices=["onion", "pso", "ga"], default="onion")
    p.add_argument("--threshold", default="0.0")
    p.add_argument("--validation")
    p.add_argument("--max-cacc-drop", type=float, default=0.02)
    p.add_argument("--search-config")
    p.add_argument("--sweep-points", type=int, default=10)
    _add_common(p, config=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="ASR/CACC across a threshold grid")
    p.add_argument("--model", required=True)
    p.add_argument("--lm", required=True)
    p.add_argument("--poisoned", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--grid", help="comma-separated thresholds (default: auto grid)")
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("run-experiment", help="end-to-end pipeline from a config (or manifest)")
    _add_common(p)
    p.set_defaults(func=cmd_run_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        return int(args.func(args) or 0)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, json.JSONDecodeError, ScorerProtocolError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - safety net
        print(f"internal error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
