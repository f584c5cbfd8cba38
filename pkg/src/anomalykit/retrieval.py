"""Auxiliary asset selection: LLM object descriptions, top-k embedding
retrieval over the auxiliary pool, and per-candidate visual validation."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace

from ._util import normalize_name
from .brainstorm import TaskProposal, load_prompt
from .catalog import Catalog
from .errors import EmptyPool, SchemaError, ValidationError
from .providers import ChatRequest, VisualVerdict, cosine

DEFAULT_TOP_K = 5


@dataclass(frozen=True)
class AuxiliaryQuery:
    object_name: str
    object_description: str
    source_proposal: str

    def __post_init__(self):
        if not self.object_name or not self.object_description:
            raise ValidationError("auxiliary query needs name and description")


@dataclass(frozen=True)
class RetrievalResult:
    query: AuxiliaryQuery
    ranked: tuple[tuple[str, float], ...]  # (asset_id, cosine) descending
    chosen: str | None = None
    visual_verdict: VisualVerdict | None = None
    fallback: bool = False

    def __post_init__(self):
        scores = [s for _, s in self.ranked]
        if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
            raise ValidationError("ranking scores must be weakly decreasing")
        if self.chosen is not None and self.chosen not in {a for a, _ in self.ranked}:
            raise ValidationError("chosen asset must appear in the ranking")

    def to_dict(self) -> dict:
        return {
            "query": {
                "object_name": self.query.object_name,
                "object_description": self.query.object_description,
                "source_proposal": self.query.source_proposal,
            },
            "ranked": [[a, s] for a, s in self.ranked],
            "chosen": self.chosen,
            "visual_verdict": (
                None
                if self.visual_verdict is None
                else {
                    "approved": self.visual_verdict.approved,
                    "rationale": self.visual_verdict.rationale,
                }
            ),
            "fallback": self.fallback,
        }


_NAME_RE = re.compile(r"^name\s*:\s*(.+)$", re.IGNORECASE)
_DESC_RE = re.compile(r"^description\s*:\s*(.+)$", re.IGNORECASE)


def describe_auxiliaries(proposal: TaskProposal, chat) -> list[AuxiliaryQuery]:
    """One retrieval query per auxiliary item the proposal requires."""
    if not proposal.auxiliary_items:
        return []
    context = {
        "kind": "auxiliary_queries",
        "task_name": proposal.task_name,
        "auxiliary_items": list(proposal.auxiliary_items),
    }
    prompt = load_prompt("auxiliary_queries").format(
        task_name=proposal.task_name,
        items=", ".join(proposal.auxiliary_items),
        context_json=json.dumps(context, sort_keys=True),
    )
    text = chat.chat(
        ChatRequest(
            system_prompt="You describe household objects for 3D asset retrieval.",
            messages=(("user", prompt),),
            temperature=0.3,
            max_tokens=512,
        )
    )
    queries: list[AuxiliaryQuery] = []
    name = None
    for line in text.splitlines():
        m = _NAME_RE.match(line.strip())
        if m:
            name = normalize_name(m.group(1))
            continue
        m = _DESC_RE.match(line.strip())
        if m and name is not None:
            queries.append(
                AuxiliaryQuery(
                    object_name=name,
                    object_description=m.group(1).strip(),
                    source_proposal=proposal.task_name,
                )
            )
            name = None
    wanted = {normalize_name(i) for i in proposal.auxiliary_items}
    got = {q.object_name for q in queries}
    if not wanted.issubset(got):
        raise SchemaError(f"auxiliary queries missing items: {sorted(wanted - got)}")
    return [q for q in queries if q.object_name in wanted]


def retrieve_top_k(query: AuxiliaryQuery, catalog: Catalog, embed,
                   k: int = DEFAULT_TOP_K) -> RetrievalResult:
    """Rank auxiliary-pool assets by description embedding similarity."""
    if k < 1:
        raise ValueError("k must be >= 1")
    pool = catalog.pool("auxiliary_pool")
    if not pool:
        raise EmptyPool("catalog has no auxiliary_pool assets")
    texts = [query.object_description] + [
        f"{a.name}. {a.description}" for a in pool
    ]
    vecs = [v.array() for v in embed.embed(texts)]
    qv = vecs[0]
    scored = [
        (asset.asset_id, cosine(qv, vec)) for asset, vec in zip(pool, vecs[1:])
    ]
    # Descending score, ties broken by ascending asset_id.
    scored.sort(key=lambda item: (-item[1], item[0]))
    return RetrievalResult(query=query, ranked=tuple(scored[:k]))


def validate_choice(result: RetrievalResult, proposal: TaskProposal,
                    vision, catalog: Catalog) -> RetrievalResult:
    """Walk the ranking top-down; the first visually approved candidate wins.

    If every candidate is rejected the result is flagged for fallback and
    no asset is chosen.
    """
    if not result.ranked:
        raise ValidationError("cannot validate an empty ranking")
    last_verdict: VisualVerdict | None = None
    for asset_id, _ in result.ranked:
        asset = catalog.assets[asset_id]
        verdict = vision.validate_scene_image(
            task_name=result.query.object_name,
            task_description=result.query.object_description,
            asset_annotations=[f"{asset.name}: {asset.description}"],
        )
        last_verdict = verdict
        if verdict.approved:
            return replace(result, chosen=asset_id, visual_verdict=verdict)
    return replace(result, chosen=None, visual_verdict=last_verdict, fallback=True)
