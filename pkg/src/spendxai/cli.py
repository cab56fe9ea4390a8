"""Command-line pipeline: one subcommand per stage, handing off through files in --out."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import counterfactuals as cf
from . import rules as rl
from ._util import VERSION, config_hash, derive_seed, read_json, sha256_file, write_json
from .features import FeatureMatrix, FeatureOptions, build_feature_matrix
from .ingest import (
    CategoryVocabulary,
    Window,
    apply_exclusion_filter,
    join_survey,
    load_survey,
    load_transactions,
    write_transactions,
)
from .learners import (
    LearnerSpec,
    choose_threshold,
    cross_validate,
    fit_learner,
    load_model,
    rank_importances,
    stratified_folds,
)
from .synth import PlantedRuleSpec, generate_dataset
from .targets import (
    CUTOFFS,
    DEFAULT_CUTOFFS,
    PERCENTILE_METHOD,
    TRAITS,
    ScaleDefinitions,
    build_all_targets,
    read_targets,
    reliability_report,
    template_scales,
    write_targets,
)

log = logging.getLogger("spendxai")

COMPARE_LEARNERS = (
    {"kind": "logistic", "penalty": "l1"},
    {"kind": "logistic", "penalty": "l2"},
    {"kind": "linear", "penalty": "l1"},
    {"kind": "linear", "penalty": "l2"},
)


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"{stage}: {message}")


@dataclass
class RunConfig:
    transactions: str | None = None
    survey: str | None = None
    out: str = "run"
    window_start: str = "2019-01-01"
    window_end: str = "2019-12-31"
    vocabulary: str | None = None
    scales: str | None = None
    trait: str = "Neuroticism"
    direction: str = "high"
    seed: int = 0
    n_trees: int = 200
    max_depth: int | None = None
    mtry: int | str = "sqrt"
    min_leaf: int = 5
    compare_learners: bool = True
    linear_lam: float | str = 1.0
    cv_folds: int = 5
    holdout: float = 0.2
    surrogate_depth: int = 3
    surrogate_min_leaf: int = 5
    baseline_repetitions: int = 1000
    max_size: int = 30
    max_evals: int = 50_000
    replacement: str = "median"
    entropy_base: str = "e"
    entropy_shares: str = "count"
    daily_days: str = "all"
    percentile_method: str = PERCENTILE_METHOD
    cutoffs: str = DEFAULT_CUTOFFS
    synth_spec: str | None = None

    def validate(self) -> None:
        Window.parse(self.window_start, self.window_end)
        FeatureOptions(self.entropy_base, self.entropy_shares, self.daily_days)
        if self.trait not in TRAITS and self.scales is None:
            raise ValueError(f"unknown trait {self.trait!r} for the built-in scale template")
        if self.direction not in ("high", "low"):
            raise ValueError("direction must be 'high' or 'low'")
        if self.replacement not in ("median", "mean", "mode"):
            raise ValueError("replacement must be median, mean or mode")
        if self.percentile_method != PERCENTILE_METHOD:
            raise ValueError(f"only the {PERCENTILE_METHOD!r} percentile method is supported")
        if self.cutoffs not in CUTOFFS:
            raise ValueError(f"cutoffs must be one of {sorted(CUTOFFS)}")
        if not 0.0 < self.holdout < 0.5:
            raise ValueError("holdout must lie in (0, 0.5)")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        for name in ("transactions", "survey", "vocabulary", "scales", "synth_spec"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ValueError(f"{name} file not found: {path}")

    @property
    def window(self) -> Window:
        return Window.parse(self.window_start, self.window_end)

    @property
    def options(self) -> FeatureOptions:
        return FeatureOptions(self.entropy_base, self.entropy_shares, self.daily_days)

    @property
    def forest_spec(self) -> LearnerSpec:
        return LearnerSpec("forest", self.n_trees, self.max_depth, self.mtry, self.min_leaf)

    def scale_definitions(self) -> ScaleDefinitions:
        return ScaleDefinitions.load(self.scales) if self.scales else template_scales()

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["seed"] = str(self.seed)
        return d

    def hash(self) -> str:
        d = self.to_json()
        d.pop("out")
        return config_hash(d)


# -- helpers ------------------------------------------------------------------


def _provenance(cfg: RunConfig, stage: str, inputs: dict[str, Path]) -> dict:
    return {
        "stage": stage,
        "version": VERSION,
        "config_hash": cfg.hash(),
        "seed": str(cfg.seed),
        "inputs": {k: sha256_file(p) for k, p in sorted(inputs.items())},
    }


def _manifest(cfg: RunConfig, stage: str, inputs: dict[str, Path], outputs: list[Path]) -> Path:
    prov = _provenance(cfg, stage, inputs)
    prov["outputs"] = {p.name: sha256_file(p) for p in outputs}
    return write_json(Path(cfg.out) / f"{stage}.provenance.json", prov)


def _require(stage: str, *paths: Path) -> None:
    for p in paths:
        if not Path(p).is_file():
            raise StageError(stage, f"missing upstream artifact {p}")


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _labels(cfg: RunConfig, fm: FeatureMatrix, targets_path: Path) -> tuple[np.ndarray, np.ndarray]:
    targets = read_targets(targets_path, cfg.cutoffs)
    if cfg.trait not in targets:
        raise StageError("train", f"trait {cfg.trait!r} not in {targets_path}")
    t = targets[cfg.trait]
    pos = {p: i for i, p in enumerate(t.person_ids)}
    missing = [p for p in fm.person_ids if p not in pos]
    if missing:
        raise StageError("train", f"{len(missing)} persons have features but no targets")
    idx = [pos[p] for p in fm.person_ids]
    return t.labels(cfg.direction)[idx], t.normalized[idx]


def _class_name(cfg: RunConfig) -> str:
    return "High" if cfg.direction == "high" else "Low"


# -- stages -------------------------------------------------------------------


def cmd_ingest(cfg: RunConfig) -> None:
    out = _out(cfg)
    for name in ("transactions", "survey"):
        path = getattr(cfg, name)
        if path is None or not Path(path).is_file():
            raise StageError("ingest", f"{name} file not found: {path}")
    vocab = CategoryVocabulary.load(cfg.vocabulary) if cfg.vocabulary else None
    loaded = load_transactions(cfg.transactions, cfg.window, vocab)
    kept, report = apply_exclusion_filter(loaded.ledgers)
    survey, ledgers, join = join_survey(load_survey(cfg.survey), kept)
    outputs = [
        write_transactions(out / "clean_transactions.csv", (r for l in ledgers for r in l.records)),
        loaded.vocabulary.save(out / "vocabulary.json"),
        survey.write(out / "survey_clean.csv"),
    ]
    inputs = {"transactions": Path(cfg.transactions), "survey": Path(cfg.survey)}
    outputs.append(
        write_json(
            out / "filter_report.json",
            {
                **report.to_json(),
                "rows": loaded.n_rows,
                "rows_outside_window": loaded.n_outside_window,
                "join": join.to_json(),
                "provenance": _provenance(cfg, "ingest", inputs),
            },
        )
    )
    _manifest(cfg, "ingest", inputs, outputs)
    log.info("ingest: %d persons retained, %d matched to survey", report.retained, join.matched)


def cmd_featurize(cfg: RunConfig) -> None:
    out = _out(cfg)
    tx, vocab_path = out / "clean_transactions.csv", out / "vocabulary.json"
    _require("featurize", tx, vocab_path)
    vocab = CategoryVocabulary.load(vocab_path)
    loaded = load_transactions(tx, cfg.window, vocab)
    fm = build_feature_matrix(loaded.ledgers, vocab, cfg.options)
    path = fm.save(out / "features.csv")
    _manifest(cfg, "featurize", {"transactions": tx, "vocabulary": vocab_path}, [path, out / "features.registry.json"])
    log.info("featurize: %d persons x %d features", *fm.shape)


def cmd_targets(cfg: RunConfig) -> None:
    out = _out(cfg)
    survey_path = out / "survey_clean.csv"
    _require("targets", survey_path)
    survey = load_survey(survey_path)
    defs = cfg.scale_definitions()
    targets = build_all_targets(survey.person_ids, survey.items, defs, cfg.cutoffs)
    inputs = {"survey": survey_path}
    outputs = [
        write_targets(out / "targets.csv", targets),
        write_json(
            out / "reliability.json",
            {
                "cronbach_alpha": reliability_report(survey.items, defs),
                "label_rates": {n: {"high": float(t.high.mean()), "low": float(t.low.mean())} for n, t in targets.items()},
                "percentile_method": PERCENTILE_METHOD,
                "cutoffs": {"name": cfg.cutoffs, "percentiles": [str(100 * q) for q in CUTOFFS[cfg.cutoffs]]},
                "provenance": _provenance(cfg, "targets", inputs),
            },
        ),
    ]
    _manifest(cfg, "targets", inputs, outputs)


def cmd_train(cfg: RunConfig) -> None:
    out = _out(cfg)
    feat, targ = out / "features.csv", out / "targets.csv"
    _require("train", feat, targ)
    fm = FeatureMatrix.load(feat)
    y, y_cont = _labels(cfg, fm, targ)
    specs = [cfg.forest_spec]
    if cfg.compare_learners:
        specs += [LearnerSpec(lam=cfg.linear_lam, **d) for d in COMPARE_LEARNERS]
    cv = {}
    for spec in specs:
        res = cross_validate(fm.X, y, spec, k=cfg.cv_folds, seed=derive_seed(cfg.seed, "cv"), y_fit=y_cont)
        cv[spec.name] = res.to_json()
        log.info("train: %s mean AUC %.4f", spec.name, res.mean_auc)

    k = round(1 / cfg.holdout)
    plan = stratified_folds(y, k, derive_seed(cfg.seed, "holdout"))
    train, test = plan.split(0)
    model = fit_learner(cfg.forest_spec, fm.X[train], y[train], seed=derive_seed(cfg.seed, "model"))
    rate = float(y[train].mean())
    model.threshold = choose_threshold(model.score(fm.X[train]), rate)
    names = fm.registry.names
    inputs = {"features": feat, "targets": targ}
    prov = _provenance(cfg, "train", inputs)
    outputs = [
        write_json(out / "cv_report.json", {"trait": cfg.trait, "direction": cfg.direction, "k": cfg.cv_folds, "learners": cv, "provenance": prov}),
        write_json(
            out / "split.json",
            {
                "train": [fm.person_ids[i] for i in train],
                "test": [fm.person_ids[i] for i in test],
                "holdout": cfg.holdout,
                "provenance": prov,
            },
        ),
        write_json(out / "model.json", {**model.to_json(), "threshold_rate": rate, "provenance": prov}),
        write_json(
            out / "importances.json",
            {
                "ranking": [
                    {"feature": n, "label": fm.registry.labels[fm.registry.index(n)], "importance": v}
                    for n, v in rank_importances(model, names, len(names))
                ],
                "provenance": prov,
            },
        ),
    ]
    _manifest(cfg, "train", inputs, outputs)


def _load_split(cfg: RunConfig, stage: str):
    out = _out(cfg)
    paths = {"features": out / "features.csv", "model": out / "model.json", "split": out / "split.json"}
    _require(stage, *paths.values())
    fm = FeatureMatrix.load(paths["features"])
    model = load_model(read_json(paths["model"]))
    split = read_json(paths["split"])
    return out, paths, fm, model, fm.rows(split["train"]), fm.rows(split["test"]), split


def cmd_explain_global(cfg: RunConfig) -> None:
    out, inputs, fm, model, X_train, X_test, _ = _load_split(cfg, "explain-global")
    prov = _provenance(cfg, "explain-global", inputs)
    ruleset = rl.extract_rules(model, X_train, cfg.surrogate_depth, cfg.surrogate_min_leaf, {"config_hash": prov["config_hash"]})
    report = rl.evaluate_fidelity(ruleset, model, X_test, "test")
    report.baseline = rl.random_baseline(model, X_test, repetitions=cfg.baseline_repetitions, seed=derive_seed(cfg.seed, "baseline"))
    text = rl.render_rules(ruleset, fm.registry.labels, positive=_class_name(cfg))
    (out / "rules.txt").write_text(text, encoding="utf-8")
    outputs = [
        write_json(out / "rules.json", {**ruleset.to_json(fm.registry.names), "provenance": prov}),
        out / "rules.txt",
        write_json(
            out / "fidelity.json",
            {
                **report.to_json(),
                "train_fidelity": rl.surrogate_fidelity_in_sample(ruleset, model, X_train),
                "provenance": prov,
            },
        ),
    ]
    _manifest(cfg, "explain-global", inputs, outputs)


def cmd_explain_local(cfg: RunConfig) -> None:
    out, inputs, fm, model, X_train, X_test, split = _load_split(cfg, "explain-local")
    targ = out / "targets.csv"
    _require("explain-local", targ)
    inputs = {**inputs, "targets": targ}
    y, _ = _labels(cfg, fm, targ)
    truth = dict(zip(fm.person_ids, y))
    refs = cf.compute_reference_values(X_train, cfg.replacement)
    results = cf.explain_positives(X_test, split["test"], model, refs, cfg.max_size, cfg.max_evals)
    expls = [r for r in results if isinstance(r, cf.CounterfactualExplanation)]
    failed = [r for r in results if isinstance(r, cf.NotExplainable)]
    analytics = cf.explanation_analytics(
        expls, [truth[e.person_id] for e in expls], len(fm.registry), len(failed), seed=derive_seed(cfg.seed, "similarity")
    )
    predicted = f"{cfg.direction} {cfg.trait}"
    lines = [f"{e.person_id}: {cf.render_counterfactual(e, fm.registry, predicted)}" for e in expls]
    (out / "explanations.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    prov = _provenance(cfg, "explain-local", inputs)
    outputs = [
        write_json(
            out / "explanations.json",
            {
                "explanations": [e.to_json(fm.registry.names) for e in expls],
                "not_explainable": [r.to_json() for r in failed],
                "references": refs.to_json(),
                "threshold": model.threshold,
                "budgets": {"max_size": cfg.max_size, "max_evals": cfg.max_evals},
                "provenance": prov,
            },
        ),
        out / "explanations.txt",
        write_json(out / "analytics.json", {**analytics.to_json(), "provenance": prov}),
    ]
    _manifest(cfg, "explain-local", inputs, outputs)


def _fmt(v, digits: int = 4) -> str:
    return "n/a" if v is None else f"{v:.{digits}f}"


def cmd_report(cfg: RunConfig) -> None:
    out = _out(cfg)
    names = ("cv_report", "fidelity", "importances", "analytics", "filter_report", "reliability")
    paths = {n: out / f"{n}.json" for n in names}
    _require("report", *paths.values())
    docs = {n: read_json(p) for n, p in paths.items()}
    for d in docs.values():
        d.pop("provenance", None)
    top = docs["importances"]["ranking"][:10]
    report = {
        "trait": cfg.trait,
        "direction": cfg.direction,
        "auc": {k: {"mean": v["mean_auc"], "folds": v["fold_auc"]} for k, v in docs["cv_report"]["learners"].items()},
        "fidelity": docs["fidelity"],
        "top_features": top,
        "explanations": docs["analytics"],
        "filter": docs["filter_report"],
        "reliability": docs["reliability"]["cronbach_alpha"],
        "provenance": _provenance(cfg, "report", paths),
    }
    fid, base = docs["fidelity"], docs["fidelity"]["baseline"]
    an = docs["analytics"]
    md = [
        f"# Report: {cfg.direction} {cfg.trait}",
        "",
        f"Persons retained: {docs['filter_report']['retained']}; matched to survey: {docs['filter_report']['join']['matched']}.",
        "",
        "## Cross-validated AUC",
        "",
        "| learner | mean AUC | folds |",
        "|---|---|---|",
        *[f"| {k} | {_fmt(v['mean'])} | {', '.join(_fmt(a, 3) for a in v['folds'])} |" for k, v in report["auc"].items()],
        "",
        "## Surrogate rules (held-out split)",
        "",
        "| explainer | Fidelity | Fscore_f | Precision_f | Recall_f |",
        "|---|---|---|---|---|",
        f"| depth-{cfg.surrogate_depth} tree | {_fmt(fid['fidelity'])} | {_fmt(fid['fscore_f'])} | {_fmt(fid['precision_f'])} | {_fmt(fid['recall_f'])} |",
        f"| random | {_fmt(base['fidelity'])} | {_fmt(base['fscore_f'])} | {_fmt(base['precision_f'])} | {_fmt(base['recall_f'])} |",
        "",
        "```",
        (out / "rules.txt").read_text(encoding="utf-8").rstrip() if (out / "rules.txt").is_file() else "",
        "```",
        "",
        "## Top features",
        "",
        "| rank | feature | importance |",
        "|---|---|---|",
        *[f"| {i + 1} | {t['label']} | {_fmt(t['importance'])} |" for i, t in enumerate(top)],
        "",
        "## Counterfactual explanations",
        "",
        f"- explained: {an['n_explained']}, not explainable: {an['n_not_explainable']}",
        f"- mean size: {_fmt(an['mean_size'], 2)} ({_fmt(an['size_fraction'] and 100 * an['size_fraction'], 2)}% of features)",
        f"- unique: {_fmt(an['uniqueness'] and 100 * an['uniqueness'], 1)}%",
        f"- Pearson r(score, size): {_fmt(an['score_size_r'], 3)}",
        f"- mean size TP / FP: {_fmt(an['mean_size_tp'], 2)} / {_fmt(an['mean_size_fp'], 2)}",
        "",
    ]
    outputs = [write_json(out / "report.json", report), out / "report.md"]
    (out / "report.md").write_text("\n".join(md), encoding="utf-8")
    _manifest(cfg, "report", paths, outputs)


def cmd_synth(cfg: RunConfig) -> None:
    if cfg.synth_spec is None:
        raise StageError("synth", "--synth-spec is required")
    if not Path(cfg.synth_spec).is_file():
        raise StageError("synth", f"spec file not found: {cfg.synth_spec}")
    spec = PlantedRuleSpec.load(cfg.synth_spec)
    paths = generate_dataset(spec).write(_out(cfg))
    log.info("synth: wrote %s", ", ".join(str(p) for p in paths.values()))


STAGES = {
    "ingest": cmd_ingest,
    "featurize": cmd_featurize,
    "targets": cmd_targets,
    "train": cmd_train,
    "explain-global": cmd_explain_global,
    "explain-local": cmd_explain_local,
    "report": cmd_report,
}


def cmd_run(cfg: RunConfig) -> None:
    for fn in STAGES.values():
        fn(cfg)


COMMANDS = {**STAGES, "synth": cmd_synth, "run": cmd_run}


# -- argument parsing ---------------------------------------------------------


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spendxai", description="Spending-based personality models and their explanations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON file with RunConfig fields")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("-v", "--verbose", action="store_true")
        for f in dataclasses.fields(RunConfig):
            if f.name in ("seed", "out"):
                continue
            p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=_parse_value)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        values.update(read_json(args.config))
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    unknown = set(values) - {f.name for f in dataclasses.fields(RunConfig)}
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    if "seed" in values:
        values["seed"] = int(values["seed"])
    for name in ("transactions", "survey", "window_start", "window_end", "entropy_base"):
        if values.get(name) is not None:
            values[name] = str(values[name])
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
    except (ValueError, TypeError, OSError) as e:
        print(f"error: invalid configuration: {e}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](cfg)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
