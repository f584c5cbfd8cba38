"""Pipeline orchestration: stage-per-subcommand with file handoff.

Each stage reads the previous stage's persisted artifacts from the run
directory, so stages are independently re-runnable. With fixed seeds and
replay/offline providers, re-running a stage rewrites byte-identical
artifacts; wall-clock timings live in a separate timings.json sidecar.

Exit codes: 0 success, 2 validation failure, 3 provider failure,
4 partial pipeline (some scenes failed but the run completed).
"""

from __future__ import annotations

import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from importlib import resources
from pathlib import Path

import click

from . import brainstorm, detect, metrics, retrieval, scene as scene_mod, skills
from ._util import canonical_digest
from .catalog import Catalog, load_catalog
from .errors import (
    AnomalykitError,
    BudgetExceeded,
    ParseError,
    PlacementExhausted,
    ReplayMiss,
    SchemaError,
    TransportError,
    UnresolvedItem,
    ValidationError,
    VolumeOverflow,
)
from .providers import ProviderSet, make_providers
from .scene import AssetInstance, SceneSpec

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PROVIDER = 3
EXIT_PARTIAL = 4

_VALIDATION_ERRORS = (
    ParseError, ValidationError, SchemaError, UnresolvedItem,
    PlacementExhausted, VolumeOverflow, ValueError,
)
_PROVIDER_ERRORS = (TransportError, ReplayMiss, BudgetExceeded)

DEFAULT_CONFIG = {
    "catalog": None,  # null -> bundled full manifest
    "n_agents": 3,
    "n_rounds": 3,
    "proposals_per_agent_per_round": 1,
    "dedup_threshold": brainstorm.DEFAULT_DEDUP_THRESHOLD,
    "retrieval_k": retrieval.DEFAULT_TOP_K,
    "max_place_attempts": 200,
    "endpoint": None,
    "model": None,
    "embed_model": "text-embedding-3-small",
    "budget": None,
    "replay_path": None,
    "record_path": None,
    "label_overrides": None,
}


def load_config(path: str | None) -> dict:
    config = dict(DEFAULT_CONFIG)
    if path:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(raw) - set(DEFAULT_CONFIG)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        config.update(raw)
    return config


def open_catalog(config: dict) -> Catalog:
    if config["catalog"]:
        return load_catalog(config["catalog"])
    with resources.as_file(
        resources.files("anomalykit.data").joinpath("partnet_subset.jsonl")
    ) as path:
        return load_catalog(path)


def build_providers(config: dict, mode: str, seed: int) -> ProviderSet:
    return make_providers(
        mode=mode,
        seed=seed,
        replay_path=config["replay_path"],
        record_path=config["record_path"],
        endpoint=config["endpoint"],
        model=config["model"],
        embed_model=config["embed_model"],
        budget=config["budget"],
    )


def _write_json(path: Path, payload) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def _read_json(path: Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------


def update_manifest(out: Path, stage: str, config: dict, seed: int,
                    artifacts: list[str], providers: ProviderSet):
    """Record one completed stage. The manifest itself is deterministic;
    wall-clock timestamps go to timings.json only."""
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        manifest = _read_json(manifest_path)
        if manifest["config"] != config:
            raise ValidationError(
                "config snapshot changed mid-run; start a fresh run directory"
            )
    else:
        snapshot = json.loads(json.dumps(config, sort_keys=True))
        manifest = {
            "run_id": canonical_digest({"config": snapshot, "seed": seed})[:12],
            "config": snapshot,
            "seeds": {},
            "stages": {},
        }
    def rel(p: str) -> str:
        path = Path(p)
        try:
            return path.relative_to(out).as_posix()
        except ValueError:
            return path.as_posix()

    manifest["seeds"][stage] = seed
    manifest["stages"][stage] = {
        "artifacts": sorted(rel(a) for a in artifacts),
        "call_log_digest": providers.log.digest(),
        "provider_mode": providers.mode,
        "n_provider_calls": len(providers.log.entries()),
    }
    _write_json(manifest_path, manifest)

    timings_path = out / "timings.json"
    timings = _read_json(timings_path) if timings_path.exists() else {}
    timings[stage] = time.time()
    _write_json(timings_path, timings)


# ---------------------------------------------------------------------------
# Stage logic (importable, CLI-independent)
# ---------------------------------------------------------------------------


def run_generate(config: dict, seed: int, providers: ProviderSet,
                 out: Path) -> Path:
    catalog = open_catalog(config)
    roles = brainstorm.load_roles()
    session = brainstorm.SessionConfig(
        n_agents=config["n_agents"],
        n_rounds=config["n_rounds"],
        proposals_per_agent_per_round=config["proposals_per_agent_per_round"],
        rng_seed=seed,
        dedup_threshold=config["dedup_threshold"],
    )
    proposals = brainstorm.run_session(
        catalog, roles, session, providers.chat, embed=providers.embed
    )
    return _write_json(
        out / "proposals.json",
        {"schema_version": 1, "proposals": [p.to_dict() for p in proposals]},
    )


def build_scene_for_proposal(proposal: brainstorm.TaskProposal, catalog: Catalog,
                             providers: ProviderSet, seed: int,
                             scene_id: str,
                             max_attempts: int = 200) -> tuple[SceneSpec, list[str]]:
    """Retrieval + configuration + placement for one proposal."""
    warnings: list[str] = []
    target_asset = catalog.assets.get(proposal.target_asset_id)
    if target_asset is None:
        raise UnresolvedItem(f"target asset {proposal.target_asset_id!r} not in catalog")
    instances = [
        AssetInstance(
            instance_id="target_0",
            asset_id=target_asset.asset_id,
            name=target_asset.name,
            role_flag="target",
            size_m=target_asset.nominal_size_m,
            description=target_asset.description,
        )
    ]
    queries = retrieval.describe_auxiliaries(proposal, providers.chat)
    for i, query in enumerate(queries):
        result = retrieval.retrieve_top_k(query, catalog, providers.embed)
        result = retrieval.validate_choice(result, proposal, providers.vision, catalog)
        if result.fallback:
            # No catalog asset survived visual validation; stand in a generic
            # proxy named after the proposal's own item so rules still bind.
            warnings.append(
                f"{scene_id}: no validated asset for {query.object_name!r}, "
                f"using a generic proxy"
            )
            instances.append(
                AssetInstance(
                    instance_id=f"aux_{i}",
                    asset_id=f"generic_{i}",
                    name=query.object_name,
                    role_flag="auxiliary",
                    description=query.object_description,
                )
            )
            continue
        chosen = catalog.assets[result.chosen]
        instances.append(
            AssetInstance(
                instance_id=f"aux_{i}",
                asset_id=chosen.asset_id,
                # Keep the proposal's item name so rule derivation and
                # decomposition can resolve it; record the asset identity.
                name=query.object_name,
                role_flag="auxiliary",
                size_m=chosen.nominal_size_m,
                description=chosen.description,
            )
        )
    rules, state_rules = scene_mod.derive_rules(proposal, instances)
    # An auxiliary held inside (or on) a target lives in the workspace, so it
    # inherits the target flag for the placement invariants.
    target_ids = {i.instance_id for i in instances if i.role_flag == "target"}
    changed = True
    while changed:
        changed = False
        for rule in rules:
            if rule.subject in target_ids and rule.object not in target_ids:
                target_ids.add(rule.object)
                changed = True
    instances = [
        replace(i, role_flag="target") if i.instance_id in target_ids else i
        for i in instances
    ]
    instances = scene_mod.assign_sizes(instances, providers.chat, rules, warnings)
    spec = scene_mod.place(
        instances, rules, state_rules, rng_seed=seed, max_attempts=max_attempts,
        scene_id=scene_id, proposal=proposal, catalog=catalog,
    )
    spec, verdict = scene_mod.verify_scene(spec, providers.vision)
    if not verdict.approved:
        warnings.append(f"{scene_id}: visual verification rejected: {verdict.rationale}")
    return spec, warnings


def run_build_scenes(config: dict, seed: int, providers: ProviderSet,
                     out: Path, jobs: int = 1) -> tuple[list[Path], dict]:
    catalog = open_catalog(config)
    doc = _read_json(out / "proposals.json")
    proposals = [brainstorm.TaskProposal.from_dict(p) for p in doc["proposals"]]
    scene_dir = out / "scenes"
    scene_dir.mkdir(parents=True, exist_ok=True)

    def build(index: int):
        proposal = proposals[index]
        scene_id = f"scene_{index:04d}"
        try:
            spec, warnings = build_scene_for_proposal(
                proposal, catalog, providers, seed=seed + index,
                scene_id=scene_id, max_attempts=config["max_place_attempts"],
            )
        except _VALIDATION_ERRORS as exc:
            return index, None, [f"{scene_id}: {exc}"]
        return index, spec, warnings

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(build, range(len(proposals))))
    else:
        results = [build(i) for i in range(len(proposals))]
    results.sort(key=lambda r: r[0])

    paths: list[Path] = []
    log = {"built": 0, "failed": [], "warnings": []}
    for index, spec, warnings in results:
        log["warnings"].extend(warnings)
        if spec is None:
            log["failed"].append(f"scene_{index:04d}")
            continue
        paths.append(scene_mod.serialize_scene(spec, scene_dir / f"{spec.scene_id}.json"))
        scene_mod.render_topdown(spec, scene_dir / f"{spec.scene_id}.svg")
        log["built"] += 1
    _write_json(out / "build_log.json", log)
    return paths, log


def run_detect(config: dict, seed: int, providers: ProviderSet, out: Path,
               k_max: int = detect.DEFAULT_K_MAX, jobs: int = 1) -> dict:
    scene_dir = out / "scenes"
    scene_paths = sorted(scene_dir.glob("scene_*.json"))
    if not scene_paths:
        raise ValidationError(f"no scenes in {scene_dir}")

    def run_one(path: Path):
        # Detection reads the restricted view; scoring loads the ground
        # truth separately afterwards.
        restricted = scene_mod.load_scene_for_detection(path)
        description = detect.describe_scene(restricted)
        result = detect.detect_anomalies(description, k_max, providers.chat)
        truth = scene_mod.deserialize_scene(path).proposal
        return detect.score_detection(result, truth, providers.embed,
                                      judge=providers.chat)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_one, scene_paths))
    else:
        results = [run_one(p) for p in scene_paths]

    if config["label_overrides"]:
        overrides = _read_json(Path(config["label_overrides"]))
        results = detect.apply_label_overrides(results, overrides)

    ks = list(range(1, k_max + 1))
    hits = {str(k): detect.hit_at_k(results, k) for k in ks}
    payload = {
        "schema_version": 1,
        "k_max": k_max,
        "results": [r.to_dict() for r in results],
        "hit_at_k": hits,
    }
    _write_json(out / "detections.json", payload)
    return payload


def run_solve(config: dict, seed: int, providers: ProviderSet, out: Path,
              jobs: int = 1) -> dict:
    detections = _read_json(out / "detections.json")
    results = {
        r["scene_id"]: detect.DetectionResult.from_dict(r)
        for r in detections["results"]
    }
    scene_paths = sorted((out / "scenes").glob("scene_*.json"))
    if not scene_paths:
        raise ValidationError(f"no scenes in {out / 'scenes'}")

    def solve_one(path: Path):
        spec = scene_mod.deserialize_scene(path)
        result = results.get(spec.scene_id)
        if result is None:
            return spec, None, "no detection result"
        rank = result.match_rank if result.match_rank is not None else 1
        solution = result.candidates[rank - 1][1]
        try:
            sub_tasks = skills.decompose(solution, spec, providers.chat)
            sub_tasks = [skills.select_method(t, providers.chat) for t in sub_tasks]
            trace = skills.execute(sub_tasks, spec, rng_seed=spec.rng_seed)
        except (AnomalykitError, ValueError) as exc:
            return spec, None, str(exc)
        return spec, trace, None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(solve_one, scene_paths))
    else:
        outcomes = [solve_one(p) for p in scene_paths]

    traces = []
    by_category: dict[str, list[bool]] = {}
    failures = []
    for spec, trace, error in outcomes:
        category = spec.proposal.category if spec.proposal else "unknown"
        if trace is None:
            failures.append(f"{spec.scene_id}: {error}")
            by_category.setdefault(category, []).append(False)
            continue
        traces.append(trace.to_dict())
        by_category.setdefault(category, []).append(trace.overall_success)
    completion = {
        cat: sum(flags) / len(flags) for cat, flags in sorted(by_category.items())
    }
    overall = [f for flags in by_category.values() for f in flags]
    payload = {
        "schema_version": 1,
        "traces": traces,
        "failures": failures,
        "completion_by_category": completion,
        "completion_overall": (sum(overall) / len(overall)) if overall else 0.0,
    }
    _write_json(out / "traces.json", payload)
    return payload


def run_evaluate(corpus_paths: list[Path], providers: ProviderSet,
                 out: Path | None = None) -> list[metrics.DiversityReport]:
    reports = []
    for path in corpus_paths:
        doc = _read_json(path)
        if isinstance(doc, dict) and "proposals" in doc:
            texts = [
                f"{p['task_name']} {p['description']}" for p in doc["proposals"]
            ]
        elif isinstance(doc, list):
            texts = [str(t) for t in doc]
        else:
            raise ValidationError(f"{path}: not a proposals artifact or text list")
        if len(texts) < 2:
            raise ValidationError(f"{path}: corpus needs at least 2 documents")
        reports.append(
            metrics.build_report(texts, providers.embed, corpus_id=Path(path).stem)
        )
    if out is not None:
        _write_json(
            out / "diversity.json",
            {
                "schema_version": 1,
                "reports": [
                    {
                        "corpus_id": r.corpus_id,
                        "self_bleu": r.self_bleu,
                        "mean_embedding_similarity": r.mean_embedding_similarity,
                        "mean_wmd": r.mean_wmd,
                        "n_docs": r.n_docs,
                    }
                    for r in reports
                ],
            },
        )
    return reports


def run_report(out: Path) -> tuple[dict, str]:
    sections = {}
    text_parts = []
    diversity_path = out / "diversity.json"
    if diversity_path.exists():
        sections["diversity"] = _read_json(diversity_path)["reports"]
        reports = [
            metrics.DiversityReport(
                corpus_id=r["corpus_id"], self_bleu=r["self_bleu"],
                mean_embedding_similarity=r["mean_embedding_similarity"],
                mean_wmd=r["mean_wmd"], n_docs=r["n_docs"],
            )
            for r in sections["diversity"]
        ]
        text_parts.append("== Diversity ==\n" + metrics.format_diversity_table(reports))
    detections_path = out / "detections.json"
    if detections_path.exists():
        doc = _read_json(detections_path)
        sections["hit_at_k"] = doc["hit_at_k"]
        results = [detect.DetectionResult.from_dict(r) for r in doc["results"]]
        ks = sorted(int(k) for k in doc["hit_at_k"])
        text_parts.append("== Detection ==\n" + detect.format_hit_table(results, ks=ks))
    traces_path = out / "traces.json"
    if traces_path.exists():
        doc = _read_json(traces_path)
        sections["completion_by_category"] = doc["completion_by_category"]
        sections["completion_overall"] = doc["completion_overall"]
        lines = ["== Completion =="]
        for cat, rate in sorted(doc["completion_by_category"].items()):
            lines.append(f"{cat:<24} {rate:.3f}")
        lines.append(f"{'overall':<24} {doc['completion_overall']:.3f}")
        text_parts.append("\n".join(lines) + "\n")
    if not sections:
        raise ValidationError(f"no stage artifacts found in {out}")
    report = {"schema_version": 1, "sections": sections}
    text = "\n".join(text_parts)
    _write_json(out / "report.json", report)
    (out / "report.txt").write_text(text, encoding="utf-8")
    return report, text


# ---------------------------------------------------------------------------
# CLI wiring
# ---------------------------------------------------------------------------


def _common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="JSON configuration file.")(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    fn = click.option("--providers", "providers_mode",
                      type=click.Choice(["live", "replay", "offline"]),
                      default="offline", show_default=True)(fn)
    fn = click.option("--out", type=click.Path(), default="run",
                      show_default=True, help="Run directory.")(fn)
    return fn


def _enter(config_path):
    try:
        return load_config(config_path)
    except _VALIDATION_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)


def _finish(fn):
    """Map domain errors to the documented exit codes."""
    try:
        return fn()
    except _PROVIDER_ERRORS as exc:
        click.echo(f"provider error: {exc}", err=True)
        sys.exit(EXIT_PROVIDER)
    except (AnomalykitError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_VALIDATION)


@click.group()
def main():
    """Household anomaly scenario generation and evaluation pipeline."""


@main.command("generate")
@_common_options
def cmd_generate(config_path, seed, providers_mode, out):
    """Brainstorm a deduplicated task-proposal corpus."""
    config = _enter(config_path)
    out = Path(out)

    def stage():
        providers = build_providers(config, providers_mode, seed)
        path = run_generate(config, seed, providers, out)
        update_manifest(out, "generate", config, seed, [str(path)], providers)
        n = len(_read_json(path)["proposals"])
        click.echo(f"generate: wrote {n} proposals to {path}")

    _finish(stage)


@main.command("build-scenes")
@_common_options
@click.option("--jobs", type=int, default=1, show_default=True)
def cmd_build_scenes(config_path, seed, providers_mode, out, jobs):
    """Build a scene per proposal (retrieval, sizing, placement)."""
    config = _enter(config_path)
    out = Path(out)

    def stage():
        providers = build_providers(config, providers_mode, seed)
        paths, log = run_build_scenes(config, seed, providers, out, jobs=jobs)
        update_manifest(out, "build-scenes", config, seed,
                        [str(p) for p in paths], providers)
        click.echo(f"build-scenes: built {log['built']} scenes, "
                   f"{len(log['failed'])} failed")
        if log["failed"] and log["built"] > 0:
            sys.exit(EXIT_PARTIAL)
        if log["failed"]:
            sys.exit(EXIT_VALIDATION)

    _finish(stage)


@main.command("detect")
@_common_options
@click.option("--k-max", type=int, default=detect.DEFAULT_K_MAX, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
def cmd_detect(config_path, seed, providers_mode, out, k_max, jobs):
    """Run proactive anomaly detection over the built scenes."""
    config = _enter(config_path)
    out = Path(out)

    def stage():
        providers = build_providers(config, providers_mode, seed)
        payload = run_detect(config, seed, providers, out, k_max=k_max, jobs=jobs)
        update_manifest(out, "detect", config, seed,
                        [str(out / "detections.json")], providers)
        results = [detect.DetectionResult.from_dict(r) for r in payload["results"]]
        click.echo(detect.format_hit_table(results, ks=range(1, k_max + 1)))

    _finish(stage)


@main.command("solve")
@_common_options
@click.option("--jobs", type=int, default=1, show_default=True)
def cmd_solve(config_path, seed, providers_mode, out, jobs):
    """Decompose and execute the detected solutions."""
    config = _enter(config_path)
    out = Path(out)

    def stage():
        providers = build_providers(config, providers_mode, seed)
        payload = run_solve(config, seed, providers, out, jobs=jobs)
        update_manifest(out, "solve", config, seed,
                        [str(out / "traces.json")], providers)
        for cat, rate in sorted(payload["completion_by_category"].items()):
            click.echo(f"{cat:<24} {rate:.3f}")
        click.echo(f"{'overall':<24} {payload['completion_overall']:.3f}")
        if payload["failures"] and payload["traces"]:
            sys.exit(EXIT_PARTIAL)

    _finish(stage)


@main.command("evaluate")
@_common_options
@click.argument("corpora", nargs=-1, type=click.Path(exists=True))
def cmd_evaluate(config_path, seed, providers_mode, out, corpora):
    """Diversity metrics over one or more proposal corpora."""
    config = _enter(config_path)
    out = Path(out)

    def stage():
        providers = build_providers(config, providers_mode, seed)
        paths = [Path(c) for c in corpora] or [out / "proposals.json"]
        for path in paths:
            if not path.exists():
                raise ValidationError(f"corpus file not found: {path}")
        reports = run_evaluate(paths, providers, out=out)
        update_manifest(out, "evaluate", config, seed,
                        [str(out / "diversity.json")], providers)
        click.echo(metrics.format_diversity_table(reports))

    _finish(stage)


@main.command("report")
@click.option("--out", type=click.Path(exists=True), default="run",
              show_default=True, help="Run directory.")
def cmd_report(out):
    """Consolidated diversity + detection + completion report."""

    def stage():
        _, text = run_report(Path(out))
        click.echo(text)

    _finish(stage)


if __name__ == "__main__":
    main()
