"""Proactive anomaly detection over scene text.

The detector sees coordinates, names, and joint states only; the hidden
ground-truth proposal is used afterwards to score the ranked (problem,
solution) candidates into hit@k.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace

from ._util import normalize_name
from .brainstorm import TaskProposal, load_prompt
from .errors import LeakageError, SchemaError, ValidationError
from .providers import ChatRequest, cosine
from .scene import SceneSpec

DEFAULT_K_MAX = 3
MATCH_THRESHOLD_OFFLINE = 0.60
MATCH_THRESHOLD_LIVE = 0.80
COORD_DECIMALS = 2


@dataclass(frozen=True)
class SceneDescription:
    scene_id: str
    lines: tuple[str, ...]
    entries: tuple[dict, ...] = ()  # structured mirror of the lines

    def text(self) -> str:
        return "\n".join(self.lines)


@dataclass(frozen=True)
class DetectionResult:
    scene_id: str
    candidates: tuple[tuple[str, str], ...]  # (problem, solution)
    match_rank: int | None = None

    def __post_init__(self):
        if self.match_rank is not None and not (
            1 <= self.match_rank <= len(self.candidates)
        ):
            raise ValidationError("match_rank out of candidate range")

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "candidates": [list(c) for c in self.candidates],
            "match_rank": self.match_rank,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "DetectionResult":
        return cls(
            scene_id=raw["scene_id"],
            candidates=tuple((p, s) for p, s in raw["candidates"]),
            match_rank=raw["match_rank"],
        )


def describe_scene(scene: SceneSpec) -> SceneDescription:
    """Deterministic textual observation of the scene.

    Includes every instance once with its position (2 decimals) and joint
    states. Raises LeakageError if the ground-truth task name or
    description appears verbatim.
    """
    if not scene.targets():
        raise ValidationError(f"scene {scene.scene_id} has no target instance")
    lines = []
    entries = []
    for inst in scene.instances:
        x, y, z = inst.position
        joints = inst.joints()
        joint_text = (
            ", ".join(f"{j}={s}" for j, s in sorted(joints.items())) if joints else "none"
        )
        lines.append(
            f"- {inst.instance_id}: {inst.name} ({inst.role_flag}) at "
            f"({x:.{COORD_DECIMALS}f}, {y:.{COORD_DECIMALS}f}, "
            f"{z:.{COORD_DECIMALS}f}); joints: {joint_text}"
        )
        entries.append(
            {
                "instance_id": inst.instance_id,
                "name": inst.name,
                "role": inst.role_flag,
                "position": [round(x, COORD_DECIMALS), round(y, COORD_DECIMALS),
                             round(z, COORD_DECIMALS)],
                "joint_states": joints,
            }
        )
    description = SceneDescription(
        scene_id=scene.scene_id, lines=tuple(lines), entries=tuple(entries)
    )
    if scene.proposal is not None:
        text = normalize_name(description.text())
        for secret in (scene.proposal.task_name, scene.proposal.description):
            if normalize_name(secret) in text:
                raise LeakageError(
                    f"ground-truth text leaked into scene description: {secret!r}"
                )
    return description


_CANDIDATE_RE = re.compile(
    r"^\s*\d+\.\s*problem\s*:\s*(?P<problem>.+?)\s*$", re.IGNORECASE
)
_SOLUTION_RE = re.compile(r"^\s*solution\s*:\s*(?P<solution>.+?)\s*$", re.IGNORECASE)


def parse_candidates(text: str) -> list[tuple[str, str]]:
    pairs: list[tuple[str, str]] = []
    problem = None
    for line in text.splitlines():
        m = _CANDIDATE_RE.match(line)
        if m:
            problem = m.group("problem")
            continue
        m = _SOLUTION_RE.match(line.strip())
        if m and problem is not None:
            pairs.append((problem, m.group("solution")))
            problem = None
    if not pairs:
        raise SchemaError("no (problem, solution) pairs found in completion")
    return pairs


def detect_anomalies(description: SceneDescription, k_max: int, chat) -> DetectionResult:
    """Elicit up to k_max ranked (problem, solution) pairs for one scene."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    context = {
        "kind": "detect",
        "k_max": k_max,
        "instances": list(description.entries),
    }
    prompt = load_prompt("detect").format(
        k_max=k_max,
        scene_block=description.text(),
        context_json=json.dumps(context, sort_keys=True),
    )
    text = chat.chat(
        ChatRequest(
            system_prompt="You are a proactive household safety robot.",
            messages=(("user", prompt),),
            temperature=0.2,
            max_tokens=768,
        )
    )
    pairs = parse_candidates(text)[:k_max]
    return DetectionResult(scene_id=description.scene_id, candidates=tuple(pairs))


def match_solution(candidate: tuple[str, str], truth: TaskProposal, embed,
                   judge=None, threshold: float | None = None) -> bool:
    """Automated stand-in for human annotation.

    True iff the candidate solution embeds close enough to the ground-truth
    name+description, or the optional judge provider affirms equivalence.
    """
    if threshold is None:
        threshold = (
            MATCH_THRESHOLD_OFFLINE
            if getattr(embed, "is_scripted", False)
            else MATCH_THRESHOLD_LIVE
        )
    solution = candidate[1]
    truth_text = f"{truth.task_name} {truth.description}"
    va, vb = (v.array() for v in embed.embed([solution, truth_text]))
    if cosine(va, vb) >= threshold:
        return True
    if judge is not None:
        context = {"kind": "judge_match", "candidate": solution, "truth": truth_text}
        prompt = load_prompt("judge_match").format(
            candidate=solution,
            truth=truth_text,
            context_json=json.dumps(context, sort_keys=True),
        )
        answer = judge.chat(
            ChatRequest(
                system_prompt="You judge whether two task statements match.",
                messages=(("user", prompt),),
                temperature=0.0,
                max_tokens=8,
            )
        )
        return answer.strip().lower().startswith("yes")
    return False


def score_detection(result: DetectionResult, truth: TaskProposal, embed,
                    judge=None, threshold: float | None = None) -> DetectionResult:
    """Fill match_rank with the 1-based rank of the first matching candidate."""
    for rank, candidate in enumerate(result.candidates, start=1):
        if match_solution(candidate, truth, embed, judge=judge, threshold=threshold):
            return replace(result, match_rank=rank)
    return replace(result, match_rank=None)


def apply_label_overrides(results: list[DetectionResult],
                          overrides: dict[str, int | None]) -> list[DetectionResult]:
    """Honor a human-label override file: scene_id -> match_rank (or null)."""
    out = []
    for r in results:
        if r.scene_id in overrides:
            out.append(replace(r, match_rank=overrides[r.scene_id]))
        else:
            out.append(r)
    return out


def hit_at_k(results: list[DetectionResult], k: int) -> float:
    """Fraction of scenes whose first matching candidate ranks <= k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not results:
        raise ValueError("hit_at_k needs at least one result")
    hits = sum(1 for r in results if r.match_rank is not None and r.match_rank <= k)
    return hits / len(results)


def format_hit_table(results: list[DetectionResult], ks=(1, 2, 3)) -> str:
    header = f"{'k Solutions':>12} {'Success Rate':>14}"
    lines = [header, "-" * len(header)]
    for k in ks:
        lines.append(f"{k:>12d} {hit_at_k(results, k):>14.3f}")
    return "\n".join(lines) + "\n"
