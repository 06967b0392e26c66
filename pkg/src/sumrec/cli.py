"""Command-line orchestrator: validate / split / run / ablate / report.

A run is configured by a single JSON file; secrets come from environment
variables only. Stage outputs land under ``<runs_dir>/<config-digest>/`` so a
changed config can never silently mix artifacts with an older run.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .artifacts import ArtifactStore
from .corpus import (
    Dataset,
    Split,
    Topic,
    compute_statistics,
    load_dataset,
    load_split,
    save_split,
    split_dataset,
)
from .errors import CorpusError, SumRecError
from .gateway import Gateway, LiveBackend, MockBackend
from .metrics import TiePolicy, aggregate
from .prompts import PromptKind, load_default_exemplars, select_exemplars
from .scoring import (
    Ablation,
    EstimatorConfig,
    EstimatorKind,
    GenerationConfig,
    PredictionStore,
    RemoteScorerClient,
    generate_recommendation_info,
    generate_summaries,
    run_estimator,
)

EXIT_VALIDATION = 2


@dataclass
class RunConfig:
    dataset_dir: str
    runs_dir: str = "runs"
    split_seed: int = 0
    exemplar_seed: int = 0
    estimators: list[dict] = field(default_factory=lambda: [{"kind": "random"}])
    model_id: str = "gpt-3.5-turbo-16k-0613"
    temperature: float = 0.0
    max_output_units: int = 512
    concurrency: int = 4
    cache_dir: Optional[str] = "cache"
    use_cache: bool = True
    template_dir: Optional[str] = None
    backend: str = "mock"  # "live" | "mock"
    mock_script: Optional[object] = None  # path or inline [[matcher, response], ...]
    scorer_url: Optional[str] = None
    ks: list[int] = field(default_factory=lambda: [1, 3, 5])

    @staticmethod
    def load(path: str | Path) -> "RunConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return RunConfig(**raw)

    def snapshot(self) -> dict:
        return {
            k: getattr(self, k)
            for k in (
                "dataset_dir", "split_seed", "exemplar_seed", "estimators", "model_id",
                "temperature", "max_output_units", "template_dir", "backend",
                "mock_script", "scorer_url", "ks",
            )
        }

    def digest(self) -> str:
        canonical = json.dumps(self.snapshot(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def estimator_configs(self) -> list[EstimatorConfig]:
        out = []
        for spec in self.estimators:
            out.append(
                EstimatorConfig(
                    kind=EstimatorKind(spec["kind"]),
                    ablation=Ablation(spec.get("ablation", "none")),
                    seed=spec.get("seed", 0),
                    exemplar_seed=spec.get("exemplar_seed", self.exemplar_seed),
                    scorer_url=spec.get("scorer_url", self.scorer_url),
                )
            )
        return out


def _file_digest(path: Path) -> Optional[str]:
    if not path.is_file():
        return None
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dataset_digest(dataset_dir: Path) -> str:
    h = hashlib.sha256()
    for name in ("dialogues.jsonl", "spots.json", "spot_files.json"):
        h.update((_file_digest(dataset_dir / name) or "missing").encode())
    return h.hexdigest()


def _make_gateway(config: RunConfig, run_dir: Path, no_cache: bool = False) -> Gateway:
    if config.backend == "mock":
        script = config.mock_script or []
        if isinstance(script, str):
            script = json.loads(Path(script).read_text(encoding="utf-8"))
        backend = MockBackend([tuple(entry) for entry in script])
    else:
        backend = LiveBackend()
    cache_dir = None
    if config.cache_dir and config.use_cache and not no_cache:
        cache_dir = Path(config.cache_dir)
        if not cache_dir.is_absolute():
            cache_dir = run_dir / cache_dir
    return Gateway(backend, cache_dir=cache_dir, max_in_flight=config.concurrency)


# --- commands ---

def cmd_validate(config: RunConfig) -> int:
    try:
        dataset = load_dataset(config.dataset_dir)
    except CorpusError as e:
        print(f"INVALID: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    stats = compute_statistics(dataset)
    print(f"Dialogues: {stats.rows['ALL'].dialogues}")
    print("Topic  Dialogues  Utterances  WordsPerUttr  SpotsPerDial")
    for key in ("T", "E", "N", "ALL"):
        row = stats.rows[key]
        wpu = f"{row.words_per_utterance:.2f}" if row.words_per_utterance is not None else "null"
        spd = f"{row.spots_per_dialogue:.2f}" if row.spots_per_dialogue is not None else "null"
        print(f"{key:<5}  {row.dialogues:>9}  {row.utterances:>10}  {wpu:>12}  {spd:>12}")
    return 0


def cmd_split(config: RunConfig, run_dir: Optional[Path] = None) -> Path:
    dataset = load_dataset(config.dataset_dir)
    run_dir = run_dir or _run_dir(config)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / "split.json"
    if not path.is_file():
        save_split(split_dataset(dataset, seed=config.split_seed), path)
    return path


def _run_dir(config: RunConfig) -> Path:
    return Path(config.runs_dir) / config.digest()


@dataclass
class RunResult:
    run_dir: Path
    report_csv: Path
    manifest_path: Path
    backend_calls: int
    failures: int


def cmd_run(
    config: RunConfig,
    no_cache: bool = False,
    estimator_filter: Optional[list[str]] = None,
) -> RunResult:
    started = time.time()
    dataset = load_dataset(config.dataset_dir)
    run_dir = _run_dir(config)
    run_dir.mkdir(parents=True, exist_ok=True)

    split_path = run_dir / "split.json"
    if split_path.is_file():
        split = load_split(split_path)
    else:
        split = split_dataset(dataset, seed=config.split_seed)
        save_split(split, split_path)

    by_id = {d.dialogue_id: d for d in dataset.dialogues}
    train_cases = [by_id[i] for i in split.ids_for(Split.TRAIN)]
    test_cases = [by_id[i] for i in split.ids_for(Split.TEST)]

    estimators = config.estimator_configs()
    if estimator_filter:
        estimators = [e for e in estimators if e.kind.value in estimator_filter]

    gateway = _make_gateway(config, run_dir, no_cache=no_cache)
    artifacts = ArtifactStore(run_dir / "artifacts")
    template_dir = Path(config.template_dir) if config.template_dir else None

    gen = GenerationConfig(
        model_id=config.model_id,
        temperature=config.temperature,
        max_output_units=config.max_output_units,
        template_dir=template_dir,
    )

    needs_summaries = any(
        e.kind in (EstimatorKind.SUMREC_LLM, EstimatorKind.REMOTE_BIENCODER)
        and e.ablation is not Ablation.WITHOUT_SUMMARY
        for e in estimators
    )
    needs_rec_info = any(
        e.kind in (EstimatorKind.SUMREC_LLM, EstimatorKind.REMOTE_BIENCODER)
        and e.ablation is not Ablation.WITHOUT_REC_INFO
        for e in estimators
    )
    needs_score_exemplars = any(
        e.kind in (EstimatorKind.SUMREC_LLM, EstimatorKind.BASELINE_LLM) for e in estimators
    )

    # exemplar dialogues come from the train split, per topic
    exemplar_train: dict[Topic, list] = {}
    if needs_score_exemplars:
        for topic in Topic:
            candidates = [d for d in train_cases if d.topic is topic]
            if len(candidates) >= 5:
                exemplar_train[topic] = candidates

    involved_cases = list(test_cases)
    for cand in exemplar_train.values():
        involved_cases.extend(cand)
    involved_spots = sorted(
        {s.spot_id for c in involved_cases for s in dataset.spots_for(c)}
    )

    if needs_rec_info:
        generate_recommendation_info(
            [dataset.spots[sid] for sid in involved_spots],
            gateway,
            gen,
            artifacts,
            load_default_exemplars(PromptKind.RECOMMENDATION_INFO),
        )

    if needs_summaries:
        summary_exemplar = load_default_exemplars(PromptKind.SUMMARY)[0]
        generate_summaries(involved_cases, gateway, gen, artifacts, summary_exemplar)
        if any(e.ablation is Ablation.FIVE_TURNS for e in estimators):
            gen5 = GenerationConfig(
                model_id=gen.model_id,
                temperature=gen.temperature,
                max_output_units=gen.max_output_units,
                template_dir=gen.template_dir,
                source_turns=5,
            )
            generate_summaries(test_cases, gateway, gen5, artifacts, summary_exemplar)

    prediction_sets = {}
    discrete = set()
    total_failures = 0
    for est in estimators:
        exemplars_by_topic = None
        if est.kind is EstimatorKind.BASELINE_LLM:
            exemplars_by_topic = {
                t: select_exemplars(
                    cand, PromptKind.BASELINE_SCORE, t, 5, est.exemplar_seed, dataset=dataset
                )
                for t, cand in exemplar_train.items()
            }
        elif est.kind is EstimatorKind.SUMREC_LLM:
            exemplars_by_topic = {
                t: select_exemplars(
                    cand, PromptKind.SUMREC_SCORE, t, 5, est.exemplar_seed,
                    dataset=dataset, artifacts=artifacts,
                )
                for t, cand in exemplar_train.items()
            }
        store = PredictionStore(run_dir / "predictions", est)
        remote = RemoteScorerClient(est.scorer_url) if est.scorer_url else None
        result = run_estimator(
            test_cases,
            dataset,
            est,
            gateway=gateway,
            artifacts=artifacts,
            exemplars_by_topic=exemplars_by_topic,
            config=gen,
            store=store,
            remote=remote,
        )
        total_failures += len(result.failures)
        if result.failures:
            (run_dir / f"failures-{est.digest()}.json").write_text(
                json.dumps(result.failures, indent=2), encoding="utf-8"
            )
        prediction_sets[est.name] = result.by_key()
        if est.discrete_output:
            discrete.add(est.name)

    table = aggregate(
        prediction_sets,
        test_cases,
        dataset,
        ks=tuple(config.ks),
        tie_policy=TiePolicy.STRICT,
        discrete_estimators=discrete,
    )
    report_csv = run_dir / "report.csv"
    table.to_csv(report_csv)
    (run_dir / "report.txt").write_text(table.to_text() + "\n", encoding="utf-8")

    manifest = {
        "tool_version": __version__,
        "config": config.snapshot(),
        "config_digest": config.digest(),
        "dataset_digest": _dataset_digest(Path(config.dataset_dir)),
        "template_digests": _template_digests(template_dir),
        "artifact_digests": {
            "split": _file_digest(split_path),
            "summaries": _file_digest(artifacts.summaries_path),
            "recinfo": _file_digest(artifacts.rec_info_path),
            "report_csv": _file_digest(report_csv),
            "predictions": {
                est.name: _file_digest(run_dir / "predictions" / f"{est.digest()}.jsonl")
                for est in estimators
            },
        },
        "backend_calls": gateway.backend_calls,
        "cache_hits": gateway.cache_hits,
        "failures": total_failures,
        "started_at": started,
        "finished_at": time.time(),
    }
    manifest_path = run_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return RunResult(
        run_dir=run_dir,
        report_csv=report_csv,
        manifest_path=manifest_path,
        backend_calls=gateway.backend_calls,
        failures=total_failures,
    )


def _template_digests(template_dir: Optional[Path]) -> dict:
    from importlib import resources

    out = {}
    for kind in PromptKind:
        if template_dir is not None:
            out[kind.value] = _file_digest(template_dir / f"{kind.value}.txt")
        else:
            text = (resources.files("sumrec") / "templates" / f"{kind.value}.txt").read_bytes()
            out[kind.value] = hashlib.sha256(text).hexdigest()
    return out


ABLATION_ROSTER = (
    Ablation.NONE,
    Ablation.WITHOUT_SUMMARY,
    Ablation.WITHOUT_REC_INFO,
    Ablation.FIVE_TURNS,
)


def cmd_ablate(config: RunConfig, no_cache: bool = False) -> RunResult:
    """Run the SumRec-family estimator under all four ablation variants."""
    base = next(
        (
            spec for spec in config.estimators
            if EstimatorKind(spec["kind"]) in (EstimatorKind.SUMREC_LLM, EstimatorKind.REMOTE_BIENCODER)
        ),
        None,
    )
    if base is None:
        raise SumRecError("ablation run requires a SumRec-family estimator in the roster")
    roster = [dict(base, ablation=a.value) for a in ABLATION_ROSTER]
    ablate_config = RunConfig(**{**_config_dict(config), "estimators": roster})
    return cmd_run(ablate_config, no_cache=no_cache)


def _config_dict(config: RunConfig) -> dict:
    return {f: getattr(config, f) for f in RunConfig.__dataclass_fields__}


def cmd_report(config: RunConfig) -> int:
    run_dir = _run_dir(config)
    report = run_dir / "report.txt"
    if not report.is_file():
        print(f"no report at {report}; run `sumrec run` first", file=sys.stderr)
        return 1
    print(report.read_text(encoding="utf-8"), end="")
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="sumrec", description=__doc__)
    parser.add_argument("command", choices=["validate", "split", "run", "ablate", "report"])
    parser.add_argument("--config", required=True, help="path to run config JSON")
    parser.add_argument("--backend", choices=["live", "mock"], help="override config backend")
    parser.add_argument("--estimators", help="comma-separated estimator kinds to run")
    parser.add_argument("--no-cache", action="store_true", help="bypass the completion cache")
    parser.add_argument("--seed", type=int, help="override split seed")
    args = parser.parse_args(argv)

    config = RunConfig.load(args.config)
    if args.backend:
        config.backend = args.backend
    if args.seed is not None:
        config.split_seed = args.seed

    try:
        if args.command == "validate":
            return cmd_validate(config)
        if args.command == "split":
            path = cmd_split(config)
            print(f"split written to {path}")
            return 0
        if args.command == "run":
            flt = args.estimators.split(",") if args.estimators else None
            result = cmd_run(config, no_cache=args.no_cache, estimator_filter=flt)
            print(f"report: {result.report_csv} ({result.failures} failures)")
            return 0 if result.failures == 0 else 1
        if args.command == "ablate":
            result = cmd_ablate(config, no_cache=args.no_cache)
            print(f"ablation report: {result.report_csv}")
            return 0 if result.failures == 0 else 1
        if args.command == "report":
            return cmd_report(config)
    except SumRecError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    return 0


if __name__ == "__main__":
    sys.exit(main())
