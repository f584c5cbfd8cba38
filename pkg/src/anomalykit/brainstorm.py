"""Role-play initialization and round-based group brainstorming.

Round 0 holds each agent's initial proposal for its seeded-random target
object; rounds 1..n feed every agent the other agents' prior proposals and
collect new ones. The final corpus is greedily deduplicated by embedding
similarity.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from importlib import resources

from ._util import normalize_name
from .catalog import AssetRecord, Catalog
from .errors import EmptyPool, InsufficientRoles, SchemaError, ValidationError
from .providers import ChatRequest, cosine

CATEGORIES = ("household_hazards", "hygiene_management", "child_safety")
PARSE_RETRY_CAP = 2
DEFAULT_DEDUP_THRESHOLD = 0.92


@dataclass(frozen=True)
class Role:
    role_name: str
    role_description: str

    def __post_init__(self):
        if not self.role_name or not self.role_description:
            raise ValidationError("role name and description must be non-empty")


@dataclass
class AgentState:
    role: Role
    target_asset: AssetRecord
    transcript: list = field(default_factory=list)

    def __post_init__(self):
        if self.target_asset.source != "target_pool":
            raise ValidationError(
                f"agent target {self.target_asset.asset_id!r} is not from the target pool"
            )


@dataclass(frozen=True)
class TaskProposal:
    task_name: str
    explanation: str
    description: str
    auxiliary_items: tuple[str, ...]
    articulation_usage: tuple[tuple[str, str], ...]  # (joint_id, "from->to")
    category: str
    proposer_role: str
    round_index: int
    target_asset_id: str

    def __post_init__(self):
        if not self.task_name:
            raise ValidationError("proposal task_name must be non-empty")
        if self.category not in CATEGORIES:
            raise ValidationError(f"unknown category {self.category!r}")
        if self.round_index < 0:
            raise ValidationError("round_index must be >= 0")

    def key_text(self) -> str:
        return f"{self.task_name} {self.description}"

    def to_dict(self) -> dict:
        return {
            "task_name": self.task_name,
            "explanation": self.explanation,
            "description": self.description,
            "auxiliary_items": list(self.auxiliary_items),
            "articulation_usage": [list(u) for u in self.articulation_usage],
            "category": self.category,
            "proposer_role": self.proposer_role,
            "round_index": self.round_index,
            "target_asset_id": self.target_asset_id,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TaskProposal":
        return cls(
            task_name=raw["task_name"],
            explanation=raw["explanation"],
            description=raw["description"],
            auxiliary_items=tuple(raw["auxiliary_items"]),
            articulation_usage=tuple((j, c) for j, c in raw["articulation_usage"]),
            category=raw["category"],
            proposer_role=raw["proposer_role"],
            round_index=raw["round_index"],
            target_asset_id=raw["target_asset_id"],
        )


@dataclass(frozen=True)
class SessionConfig:
    n_agents: int = 3
    n_rounds: int = 3
    proposals_per_agent_per_round: int = 1
    rng_seed: int = 0
    dedup_threshold: float = DEFAULT_DEDUP_THRESHOLD

    def __post_init__(self):
        if self.n_agents < 2:
            raise ValidationError("n_agents must be >= 2")
        if self.n_rounds < 1:
            raise ValidationError("n_rounds must be >= 1")
        if self.proposals_per_agent_per_round < 1:
            raise ValidationError("proposals_per_agent_per_round must be >= 1")
        if not 0.0 <= self.dedup_threshold <= 1.0:
            raise ValidationError("dedup_threshold must be in [0, 1]")


def load_roles() -> list[Role]:
    """The bundled 10-role household role list."""
    raw = json.loads(
        resources.files("anomalykit.data").joinpath("roles.json").read_text("utf-8")
    )
    roles = [Role(r["role_name"], r["role_description"]) for r in raw["roles"]]
    names = [r.role_name for r in roles]
    if len(set(names)) != len(names):
        raise ValidationError("bundled role list has duplicate role names")
    return roles


def load_prompt(name: str) -> str:
    return resources.files("anomalykit.data.prompts").joinpath(f"{name}.txt").read_text("utf-8")


def init_agents(catalog: Catalog, roles: list[Role], config: SessionConfig) -> list[AgentState]:
    """Assign distinct roles and seeded-random target assets to n agents."""
    if len(roles) < config.n_agents:
        raise InsufficientRoles(
            f"need {config.n_agents} roles, only {len(roles)} available"
        )
    pool = catalog.pool("target_pool")
    if not pool:
        raise EmptyPool("catalog has no target_pool assets")
    rng = random.Random(config.rng_seed)
    chosen_roles = rng.sample(roles, config.n_agents)
    return [AgentState(role=r, target_asset=rng.choice(pool)) for r in chosen_roles]


# ---------------------------------------------------------------------------
# Proposal parsing
# ---------------------------------------------------------------------------

_FIELD_RE = re.compile(
    r"^(task name|explanation|description|auxiliary items|articulations|category)\s*:\s*(.*)$",
    re.IGNORECASE,
)


def _parse_fields(text: str) -> dict[str, str]:
    fields: dict[str, str] = {}
    current = None
    for line in text.splitlines():
        m = _FIELD_RE.match(line.strip())
        if m:
            current = m.group(1).lower()
            fields[current] = m.group(2).strip()
        elif current and line.strip():
            fields[current] += " " + line.strip()
    return fields


def parse_proposal(text: str, agent: AgentState, round_index: int) -> TaskProposal:
    """Parse a labeled-field completion into a validated TaskProposal.

    Raises SchemaError on missing/unparseable fields and ValidationError
    when a referenced articulation does not exist on the target asset.
    """
    fields = _parse_fields(text)
    missing = [
        k
        for k in ("task name", "explanation", "description", "category")
        if not fields.get(k)
    ]
    if missing:
        raise SchemaError(f"completion missing fields: {missing}")
    category = fields["category"].strip().lower().replace(" ", "_")
    if category not in CATEGORIES:
        raise SchemaError(f"unknown category label {fields['category']!r}")

    aux_raw = fields.get("auxiliary items", "none").strip()
    if aux_raw.lower() in ("none", "", "-"):
        aux_items: tuple[str, ...] = ()
    else:
        aux_items = tuple(
            normalize_name(x) for x in aux_raw.split(",") if normalize_name(x)
        )

    art_raw = fields.get("articulations", "none").strip()
    usage: list[tuple[str, str]] = []
    if art_raw.lower() not in ("none", "", "-"):
        for entry in re.split(r"[;\n]", art_raw):
            entry = entry.strip()
            if not entry:
                continue
            m = re.match(r"([\w\-]+)\s*:\s*([\w\-]+)\s*->\s*([\w\-]+)", entry)
            if not m:
                raise SchemaError(f"unparseable articulation entry {entry!r}")
            joint_id, src, dst = m.groups()
            agent.target_asset.joint(joint_id)  # raises ValidationError if absent
            spec = agent.target_asset.joint(joint_id)
            for state in (src, dst):
                if state not in spec.states:
                    raise ValidationError(
                        f"joint {joint_id!r} has no state {state!r}"
                    )
            usage.append((joint_id, f"{src}->{dst}"))

    return TaskProposal(
        task_name=fields["task name"],
        explanation=fields["explanation"],
        description=fields["description"],
        auxiliary_items=aux_items,
        articulation_usage=tuple(usage),
        category=category,
        proposer_role=agent.role.role_name,
        round_index=round_index,
        target_asset_id=agent.target_asset.asset_id,
    )


# ---------------------------------------------------------------------------
# Prompt construction and rounds
# ---------------------------------------------------------------------------


def foreign_proposals(agent: AgentState, prior: list[TaskProposal]) -> list[TaskProposal]:
    """Prior proposals from other agents only (no self-echo)."""
    return [p for p in prior if p.proposer_role != agent.role.role_name]


def _build_propose_request(agent: AgentState, prior: list[TaskProposal],
                           round_index: int, slot: int) -> ChatRequest:
    others = foreign_proposals(agent, prior)
    if others:
        prior_block = "\n".join(
            f"- [{p.proposer_role}] {p.task_name}: {p.description}" for p in others
        )
    else:
        prior_block = "(none yet - you are opening the session)"
    target = agent.target_asset
    arts = (
        "; ".join(
            f"{a.joint_id} ({a.kind}: {'/'.join(a.states)}, default {a.default_state})"
            for a in target.articulations
        )
        or "none (rigid object)"
    )
    context = {
        "kind": "propose",
        "role": agent.role.role_name,
        "round": round_index,
        "slot": slot,
        "target": {
            "asset_id": target.asset_id,
            "name": target.name,
            "category": target.category,
            "articulations": [
                {
                    "joint_id": a.joint_id,
                    "kind": a.kind,
                    "states": list(a.states),
                    "default_state": a.default_state,
                }
                for a in target.articulations
            ],
        },
        "prior_tasks": [p.task_name for p in others],
    }
    prompt = load_prompt("propose").format(
        role_name=agent.role.role_name,
        role_description=agent.role.role_description,
        target_name=target.name,
        target_category=target.category,
        articulations=arts,
        prior_block=prior_block,
        context_json=json.dumps(context, sort_keys=True),
    )
    return ChatRequest(
        system_prompt="You generate household anomaly tasks for a robot arm.",
        messages=(("user", prompt),),
        temperature=0.7,
        max_tokens=512,
    )


def _ask_one(agent: AgentState, prior: list[TaskProposal], round_index: int,
             slot: int, chat) -> TaskProposal:
    request = _build_propose_request(agent, prior, round_index, slot)
    last_error: Exception | None = None
    for attempt in range(PARSE_RETRY_CAP + 1):
        if attempt == 0:
            req = request
        else:
            nudge = (
                "Your previous answer did not match the labeled-field format. "
                "Answer again with exactly the fields Task Name, Explanation, "
                "Description, Auxiliary Items, Articulations, Category."
            )
            req = ChatRequest(
                system_prompt=request.system_prompt,
                messages=request.messages + (("user", f"{nudge} (attempt {attempt})"),),
                temperature=request.temperature,
                max_tokens=request.max_tokens,
            )
        text = chat.chat(req)
        try:
            proposal = parse_proposal(text, agent, round_index)
            agent.transcript.append(proposal)
            return proposal
        except SchemaError as exc:
            last_error = exc
    raise SchemaError(f"unparseable proposal after {PARSE_RETRY_CAP} retries: {last_error}")


def propose_initial(agent: AgentState, chat, n_proposals: int = 1) -> list[TaskProposal]:
    """Round-0 role-play proposals for one agent."""
    return [_ask_one(agent, [], 0, slot, chat) for slot in range(n_proposals)]


def run_round(agents: list[AgentState], prior_proposals: list[TaskProposal],
              round_index: int, chat,
              proposals_per_agent: int = 1) -> list[TaskProposal]:
    """One brainstorming round: every agent reads the others' prior work."""
    if round_index < 1:
        raise ValidationError("run_round is for rounds >= 1")
    if not prior_proposals:
        raise ValidationError("run_round needs prior proposals")
    new: list[TaskProposal] = []
    for agent in agents:
        for slot in range(proposals_per_agent):
            new.append(_ask_one(agent, prior_proposals, round_index, slot, chat))
    return new


def dedup(proposals: list[TaskProposal], embed, threshold: float) -> list[TaskProposal]:
    """Greedy order-preserving near-duplicate filter.

    A proposal is dropped iff its name+description text is byte-identical to
    a kept one, or its embedding cosine with any kept one is >= threshold.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError("dedup threshold must be in [0, 1]")
    if not proposals:
        return []
    texts = [p.key_text() for p in proposals]
    vectors = [v.array() for v in embed.embed(texts)] if embed is not None else None
    kept: list[int] = []
    for i, proposal in enumerate(proposals):
        duplicate = False
        for j in kept:
            if texts[i] == texts[j]:
                duplicate = True
                break
            if vectors is not None and cosine(vectors[i], vectors[j]) >= threshold:
                duplicate = True
                break
        if not duplicate:
            kept.append(i)
    return [proposals[i] for i in kept]


def run_session(catalog: Catalog, roles: list[Role], config: SessionConfig,
                chat, embed=None) -> list[TaskProposal]:
    """Full brainstorming session: init, round 0, rounds 1..n, dedup."""
    agents = init_agents(catalog, roles, config)
    proposals: list[TaskProposal] = []
    for agent in agents:
        proposals.extend(
            propose_initial(agent, chat, config.proposals_per_agent_per_round)
        )
    for round_index in range(1, config.n_rounds + 1):
        proposals.extend(
            run_round(
                agents,
                proposals,
                round_index,
                chat,
                config.proposals_per_agent_per_round,
            )
        )
    return dedup(proposals, embed, config.dedup_threshold)
