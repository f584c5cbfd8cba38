"""Scene configuration: sizing, rule derivation, collision-free placement,
visual verification, serialization, and top-down rendering.

Assets are axis-aligned cube proxies (edge = size in meters). Target
instances live inside the unit workspace cube; auxiliary instances are
placed outside it within a 3 m bounding region. Placement is rejection
sampling against pairwise AABB overlap and the scene's spatial rules.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ._util import normalize_name
from .brainstorm import TaskProposal, load_prompt
from .errors import (
    PlacementExhausted,
    ParseError,
    SchemaError,
    UnresolvedItem,
    ValidationError,
    VolumeOverflow,
)
from .kernels import pairwise_overlap_depths
from .providers import ChatRequest, VisualVerdict

SCENE_SCHEMA_VERSION = 1
WORKSPACE = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
SIZE_MIN, SIZE_MAX = 0.01, 3.0
OVERLAP_TOL = 1e-6
WALL_MARGIN = 0.05  # containment inset, fraction of container edge
REPAIR_FACTOR = 1.5  # container resize when sizes violate containment
AUX_REGION = (-1.0, 2.0)  # x/y band of the auxiliary shell (3 m wide)


@dataclass(frozen=True)
class AssetInstance:
    instance_id: str
    asset_id: str
    name: str
    role_flag: str  # "target" | "auxiliary"
    size_m: float | None = None
    position: tuple[float, float, float] | None = None
    joint_states: tuple[tuple[str, str], ...] = ()
    description: str = ""

    def __post_init__(self):
        if self.role_flag not in ("target", "auxiliary"):
            raise ValidationError(f"bad role_flag {self.role_flag!r}")
        if self.size_m is not None and self.size_m <= 0:
            raise ValidationError(f"instance {self.instance_id!r}: size must be positive")

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        if self.size_m is None or self.position is None:
            raise ValidationError(f"instance {self.instance_id!r} is not placed")
        half = self.size_m / 2.0
        pos = np.asarray(self.position, dtype=np.float64)
        return pos - half, pos + half

    def joints(self) -> dict[str, str]:
        return dict(self.joint_states)


@dataclass(frozen=True)
class SpatialRule:
    kind: str  # "contains" | "on_top_of" | "adjacent_within"
    subject: str  # container / base instance_id
    object: str  # contained / placed instance_id
    distance: float | None = None

    def __post_init__(self):
        if self.kind not in ("contains", "on_top_of", "adjacent_within"):
            raise ValidationError(f"unknown spatial rule kind {self.kind!r}")
        if self.kind == "adjacent_within" and (self.distance is None or self.distance <= 0):
            raise ValidationError("adjacent_within needs a positive distance")


@dataclass(frozen=True)
class InitialStateRule:
    instance_id: str
    joint_id: str
    required_state: str


@dataclass(frozen=True)
class SceneSpec:
    scene_id: str
    instances: tuple[AssetInstance, ...]
    spatial_rules: tuple[SpatialRule, ...]
    state_rules: tuple[InitialStateRule, ...]
    rng_seed: int
    proposal: TaskProposal | None = None  # ground truth; hidden from detection
    verified: bool | None = None
    workspace: tuple = WORKSPACE

    def instance(self, instance_id: str) -> AssetInstance:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise UnresolvedItem(f"no instance {instance_id!r} in scene {self.scene_id}")

    def targets(self) -> list[AssetInstance]:
        return [i for i in self.instances if i.role_flag == "target"]


# ---------------------------------------------------------------------------
# Geometric checks (shared by placement and execution predicates)
# ---------------------------------------------------------------------------


def aabb_inside(inner_min, inner_max, outer_min, outer_max, shrink: float = 0.0) -> bool:
    """Closed containment of one box in another, optionally shrunk by a
    per-side fraction of the outer edge."""
    outer_min = np.asarray(outer_min, dtype=np.float64)
    outer_max = np.asarray(outer_max, dtype=np.float64)
    inset = (outer_max - outer_min) * shrink
    return bool(
        np.all(np.asarray(inner_min) >= outer_min + inset)
        and np.all(np.asarray(inner_max) <= outer_max - inset)
    )


def check_contains(container: AssetInstance, containee: AssetInstance) -> bool:
    """Containee box strictly inside the container shrunk by the wall margin."""
    cmin, cmax = container.aabb()
    imin, imax = containee.aabb()
    return aabb_inside(imin, imax, cmin, cmax, shrink=WALL_MARGIN)


def check_on_top_of(base: AssetInstance, item: AssetInstance, tol: float = 1e-6) -> bool:
    bmin, bmax = base.aabb()
    imin, imax = item.aabb()
    vertical = abs(imin[2] - bmax[2]) <= tol
    over = (
        imin[0] >= bmin[0] - tol
        and imax[0] <= bmax[0] + tol
        and imin[1] >= bmin[1] - tol
        and imax[1] <= bmax[1] + tol
    ) or (
        # Item larger than the base: centers must align over the footprint.
        bmin[0] - tol <= (imin[0] + imax[0]) / 2 <= bmax[0] + tol
        and bmin[1] - tol <= (imin[1] + imax[1]) / 2 <= bmax[1] + tol
    )
    return vertical and over


def check_adjacent_within(a: AssetInstance, b: AssetInstance, distance: float) -> bool:
    pa = np.asarray(a.position)
    pb = np.asarray(b.position)
    return bool(np.linalg.norm(pa - pb) <= distance)


def evaluate_spatial_rule(rule: SpatialRule, scene: SceneSpec) -> bool:
    subject = scene.instance(rule.subject)
    obj = scene.instance(rule.object)
    if rule.kind == "contains":
        return check_contains(subject, obj)
    if rule.kind == "on_top_of":
        return check_on_top_of(subject, obj)
    return check_adjacent_within(subject, obj, rule.distance)


def evaluate_state_rule(rule: InitialStateRule, scene: SceneSpec) -> bool:
    inst = scene.instance(rule.instance_id)
    return inst.joints().get(rule.joint_id) == rule.required_state


def containment_exempt_pairs(spatial_rules) -> set[frozenset]:
    """Instance pairs allowed to interpenetrate (containment implies overlap)."""
    return {
        frozenset((r.subject, r.object)) for r in spatial_rules if r.kind == "contains"
    }


# ---------------------------------------------------------------------------
# Sizing
# ---------------------------------------------------------------------------

_SIZE_LINE_RE = re.compile(r"^\s*([\w\-]+)\s*:\s*([0-9.]+)\s*m?\s*$")


def _ask_sizes(instances: list[AssetInstance], chat) -> dict[str, float]:
    items = [
        {"instance_id": i.instance_id, "name": i.name, "description": i.description}
        for i in instances
    ]
    context = {"kind": "assign_sizes", "items": items}
    prompt = load_prompt("assign_sizes").format(
        items_block="\n".join(f"- {i['instance_id']}: {i['name']} ({i['description']})"
                              for i in items),
        context_json=json.dumps(context, sort_keys=True),
    )
    text = chat.chat(
        ChatRequest(
            system_prompt="You estimate real-world object sizes in meters.",
            messages=(("user", prompt),),
            temperature=0.0,
            max_tokens=512,
        )
    )
    sizes: dict[str, float] = {}
    for line in text.splitlines():
        m = _SIZE_LINE_RE.match(line)
        if m:
            sizes[m.group(1)] = float(m.group(2))
    missing = [i.instance_id for i in instances if i.instance_id not in sizes]
    if missing:
        raise SchemaError(f"size completion missing instances: {missing}")
    return sizes


def _containment_ok(container_size: float, containee_size: float) -> bool:
    return containee_size < container_size * (1.0 - 2.0 * WALL_MARGIN)


def assign_sizes(instances: list[AssetInstance], chat,
                 rules: tuple[SpatialRule, ...] = (),
                 warnings: list[str] | None = None) -> list[AssetInstance]:
    """Fill in missing sizes via the chat provider, clamp to [0.01, 3.0] m,
    and enforce containment feasibility.

    Sizes violating a contains rule are re-asked once; a persisting
    violation is auto-repaired by resizing the container to 1.5x the
    containee.
    """
    sized = {i.instance_id: i.size_m for i in instances}
    unsized = [i for i in instances if i.size_m is None]
    if unsized:
        answers = _ask_sizes(unsized, chat)
        for iid, val in answers.items():
            clamped = min(max(val, SIZE_MIN), SIZE_MAX)
            if clamped != val and warnings is not None:
                warnings.append(
                    f"size {val} m for {iid} clamped to {clamped} m"
                )
            sized[iid] = clamped

    contains_rules = [r for r in rules if r.kind == "contains"]

    def violated():
        return [
            r
            for r in contains_rules
            if not _containment_ok(sized[r.subject], sized[r.object])
        ]

    bad = violated()
    if bad and unsized:
        # One deterministic re-ask, then mechanical repair.
        answers = _ask_sizes(unsized, chat)
        for iid, val in answers.items():
            sized[iid] = min(max(val, SIZE_MIN), SIZE_MAX)
        bad = violated()
    for rule in bad:
        repaired = min(sized[rule.object] * REPAIR_FACTOR, SIZE_MAX)
        if warnings is not None:
            warnings.append(
                f"container {rule.subject} resized {sized[rule.subject]} -> "
                f"{repaired} m to admit {rule.object}"
            )
        sized[rule.subject] = repaired
        if not _containment_ok(sized[rule.subject], sized[rule.object]):
            raise ValidationError(
                f"cannot repair containment of {rule.object} in {rule.subject}"
            )
    return [replace(i, size_m=sized[i.instance_id]) for i in instances]


# ---------------------------------------------------------------------------
# Rule derivation
# ---------------------------------------------------------------------------

# Sentences with these words describe what the robot should do, not how the
# scene starts; they never yield initial spatial rules.
_ACTION_WORDS = re.compile(
    r"\b(should|must|needs?|robot|place|put|store|move|pick|set|push|switch)\b"
)
_STATIVE_CONTAIN = r"(?:sits|is|rests|lies|sit|rest|lie)?\s*(?:inside|within|in)\s+(?:the\s+|a\s+)?"
_STATIVE_ON = r"(?:sits|is|rests|lies|sit|rest|lie)?\s*(?:on top of|on)\s+(?:the\s+|a\s+)?"


def derive_rules(proposal: TaskProposal,
                 instances: list[AssetInstance]) -> tuple[tuple[SpatialRule, ...],
                                                          tuple[InitialStateRule, ...]]:
    """Extract initial spatial-relationship and state rules.

    Articulation usage entries "from->to" pin the joint's initial state to
    "from". Stative containment/support phrasings in the description over
    known instance names become spatial rules; goal phrasings (sentences
    with action verbs) are ignored.
    """
    by_name = {normalize_name(i.name): i for i in instances}
    target_instances = [i for i in instances if i.asset_id == proposal.target_asset_id]
    if not target_instances:
        raise UnresolvedItem(
            f"no instance of target asset {proposal.target_asset_id!r}"
        )
    target = target_instances[0]
    for item in proposal.auxiliary_items:
        if normalize_name(item) not in by_name:
            raise UnresolvedItem(f"proposal item {item!r} has no scene instance")

    state_rules = []
    for joint_id, change in proposal.articulation_usage:
        src = change.split("->")[0].strip()
        state_rules.append(
            InitialStateRule(
                instance_id=target.instance_id, joint_id=joint_id, required_state=src
            )
        )

    spatial_rules: list[SpatialRule] = []
    text = normalize_name(proposal.description)
    for sentence in re.split(r"[.;]", text):
        if _ACTION_WORDS.search(sentence):
            continue
        for name_a, inst_a in by_name.items():
            for name_b, inst_b in by_name.items():
                if inst_a.instance_id == inst_b.instance_id:
                    continue
                if re.search(
                    rf"\b{re.escape(name_a)}\b\s+(?:of\s+\w+\s+)?{_STATIVE_CONTAIN}{re.escape(name_b)}\b",
                    sentence,
                ):
                    spatial_rules.append(
                        SpatialRule("contains", subject=inst_b.instance_id,
                                    object=inst_a.instance_id)
                    )
                elif re.search(
                    rf"\b{re.escape(name_a)}\b\s+{_STATIVE_ON}{re.escape(name_b)}\b",
                    sentence,
                ):
                    spatial_rules.append(
                        SpatialRule("on_top_of", subject=inst_b.instance_id,
                                    object=inst_a.instance_id)
                    )
    # Deterministic order, no duplicates.
    seen = set()
    unique = []
    for r in spatial_rules:
        key = (r.kind, r.subject, r.object)
        if key not in seen:
            seen.add(key)
            unique.append(r)
    return tuple(unique), tuple(state_rules)


# ---------------------------------------------------------------------------
# Placement
# ---------------------------------------------------------------------------


def _overlaps(candidate_min, candidate_max, placed, exempt_ids, tol=OVERLAP_TOL):
    for inst in placed:
        if inst.instance_id in exempt_ids:
            continue
        pmin, pmax = inst.aabb()
        depth = np.min(np.minimum(candidate_max, pmax) - np.maximum(candidate_min, pmin))
        if depth > tol:
            return True
    return False


def place(instances: list[AssetInstance], rules: tuple[SpatialRule, ...],
          state_rules: tuple[InitialStateRule, ...], rng_seed: int,
          max_attempts: int = 200, scene_id: str = "scene",
          proposal: TaskProposal | None = None,
          catalog=None) -> SceneSpec:
    """Rejection-sampling placement producing a rule-satisfying SceneSpec."""
    for inst in instances:
        if inst.size_m is None:
            raise ValidationError(f"instance {inst.instance_id!r} is unsized")

    contains_by_obj = {r.object: r for r in rules if r.kind == "contains"}
    on_top_by_obj = {r.object: r for r in rules if r.kind == "on_top_of"}

    def region_kind(inst: AssetInstance) -> str:
        if inst.instance_id in contains_by_obj:
            return "contained"
        if inst.instance_id in on_top_by_obj:
            return "on_top"
        return "workspace" if inst.role_flag == "target" else "shell"

    inside_volume = sum(i.size_m ** 3 for i in instances if i.role_flag == "target")
    if inside_volume > 0.8:
        raise VolumeOverflow(
            f"combined target volume {inside_volume:.3f} m^3 exceeds 80% of workspace"
        )

    # Dependency order: free bodies first, then supported/contained ones.
    order: list[AssetInstance] = []
    pending = list(instances)
    while pending:
        progressed = False
        for inst in list(pending):
            dep = None
            if inst.instance_id in contains_by_obj:
                dep = contains_by_obj[inst.instance_id].subject
            elif inst.instance_id in on_top_by_obj:
                dep = on_top_by_obj[inst.instance_id].subject
            if dep is None or any(p.instance_id == dep for p in order):
                order.append(inst)
                pending.remove(inst)
                progressed = True
        if not progressed:
            raise ValidationError("cyclic spatial rule dependencies")

    rng = np.random.default_rng(rng_seed)
    placed: list[AssetInstance] = []
    exempt = containment_exempt_pairs(rules)

    for inst in order:
        s = inst.size_m
        half = s / 2.0
        kind = region_kind(inst)
        exempt_ids = {
            other
            for pair in exempt
            if inst.instance_id in pair
            for other in pair
            if other != inst.instance_id
        }
        pos = None
        for _ in range(max_attempts):
            if kind == "workspace":
                if s > 1.0:
                    break
                x = rng.uniform(half, 1.0 - half) if s < 1.0 else half
                y = rng.uniform(half, 1.0 - half) if s < 1.0 else half
                cand = np.array([x, y, half])
            elif kind == "shell":
                x = rng.uniform(*AUX_REGION)
                y = rng.uniform(*AUX_REGION)
                cand = np.array([x, y, half])
                if 0.0 <= x <= 1.0 and 0.0 <= y <= 1.0 and 0.0 <= half <= 1.0:
                    continue  # position must lie outside the workspace
            elif kind == "contained":
                container = next(
                    p for p in placed
                    if p.instance_id == contains_by_obj[inst.instance_id].subject
                )
                cmin, cmax = container.aabb()
                edge = container.size_m
                lo = cmin + edge * WALL_MARGIN + half
                hi = cmax - edge * WALL_MARGIN - half
                if np.any(lo > hi):
                    break
                cand = rng.uniform(lo, hi)
            else:  # on_top
                base = next(
                    p for p in placed
                    if p.instance_id == on_top_by_obj[inst.instance_id].subject
                )
                bmin, bmax = base.aabb()
                lo_x, hi_x = bmin[0] + half, bmax[0] - half
                lo_y, hi_y = bmin[1] + half, bmax[1] - half
                if lo_x > hi_x or lo_y > hi_y:
                    x = (bmin[0] + bmax[0]) / 2
                    y = (bmin[1] + bmax[1]) / 2
                else:
                    x = rng.uniform(lo_x, hi_x)
                    y = rng.uniform(lo_y, hi_y)
                cand = np.array([x, y, bmax[2] + half])
            if not _overlaps(cand - half, cand + half, placed, exempt_ids):
                pos = cand
                break
        if pos is None:
            raise PlacementExhausted(
                f"could not place {inst.instance_id!r} after {max_attempts} attempts"
            )
        placed.append(replace(inst, position=(float(pos[0]), float(pos[1]), float(pos[2]))))

    # Joint states: asset defaults overridden by initial-state rules.
    final = []
    for inst in placed:
        states = dict(inst.joint_states)
        if catalog is not None and inst.asset_id in catalog.assets:
            for art in catalog.assets[inst.asset_id].articulations:
                states.setdefault(art.joint_id, art.default_state)
        for rule in state_rules:
            if rule.instance_id == inst.instance_id:
                states[rule.joint_id] = rule.required_state
        final.append(replace(inst, joint_states=tuple(sorted(states.items()))))

    scene = SceneSpec(
        scene_id=scene_id,
        instances=tuple(final),
        spatial_rules=tuple(rules),
        state_rules=tuple(state_rules),
        rng_seed=rng_seed,
        proposal=proposal,
    )
    _check_scene(scene)
    return scene


def _check_scene(scene: SceneSpec):
    ws_min = np.asarray(scene.workspace[0])
    ws_max = np.asarray(scene.workspace[1])
    for inst in scene.instances:
        imin, imax = inst.aabb()
        if inst.role_flag == "target":
            if not aabb_inside(imin, imax, ws_min, ws_max):
                raise PlacementExhausted(
                    f"target {inst.instance_id!r} escaped the workspace"
                )
        if inst.role_flag == "auxiliary":
            pos = np.asarray(inst.position)
            if np.all(pos >= ws_min) and np.all(pos <= ws_max):
                raise PlacementExhausted(
                    f"auxiliary {inst.instance_id!r} placed inside the workspace"
                )
    mins = np.stack([inst.aabb()[0] for inst in scene.instances])
    maxs = np.stack([inst.aabb()[1] for inst in scene.instances])
    depths = pairwise_overlap_depths(mins, maxs)
    exempt = containment_exempt_pairs(scene.spatial_rules)
    ids = [inst.instance_id for inst in scene.instances]
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            if frozenset((ids[i], ids[j])) in exempt:
                continue
            if depths[i, j] > OVERLAP_TOL:
                raise PlacementExhausted(
                    f"instances {ids[i]!r} and {ids[j]!r} interpenetrate "
                    f"by {depths[i, j]:.2e} m"
                )
    for rule in scene.spatial_rules:
        if not evaluate_spatial_rule(rule, scene):
            raise PlacementExhausted(f"spatial rule {rule} unsatisfied")
    for rule in scene.state_rules:
        if not evaluate_state_rule(rule, scene):
            raise PlacementExhausted(f"state rule {rule} unsatisfied")


# ---------------------------------------------------------------------------
# Verification, serialization, rendering
# ---------------------------------------------------------------------------


def scene_annotations(scene: SceneSpec) -> list[str]:
    return [
        f"{inst.name}: {inst.description or inst.name} "
        f"(size {inst.size_m:.2f} m, {inst.role_flag})"
        for inst in scene.instances
    ]


def verify_scene(scene: SceneSpec, vision) -> tuple[SceneSpec, VisualVerdict]:
    """Composed-scene validation; a rejected scene is kept but flagged."""
    if scene.proposal is None:
        raise ValidationError("verify_scene needs the ground-truth proposal")
    verdict = vision.validate_scene_image(
        task_name=scene.proposal.task_name,
        task_description=scene.proposal.description,
        asset_annotations=scene_annotations(scene),
    )
    return replace(scene, verified=verdict.approved), verdict


def _instance_to_dict(inst: AssetInstance) -> dict:
    return {
        "instance_id": inst.instance_id,
        "asset_id": inst.asset_id,
        "name": inst.name,
        "role_flag": inst.role_flag,
        "size_m": inst.size_m,
        "position": list(inst.position) if inst.position else None,
        "joint_states": [list(j) for j in inst.joint_states],
        "description": inst.description,
    }


def _instance_from_dict(raw: dict) -> AssetInstance:
    return AssetInstance(
        instance_id=raw["instance_id"],
        asset_id=raw["asset_id"],
        name=raw["name"],
        role_flag=raw["role_flag"],
        size_m=raw["size_m"],
        position=tuple(raw["position"]) if raw["position"] else None,
        joint_states=tuple((j, s) for j, s in raw["joint_states"]),
        description=raw.get("description", ""),
    )


def scene_to_dict(scene: SceneSpec, include_ground_truth: bool = True) -> dict:
    doc = {
        "schema_version": SCENE_SCHEMA_VERSION,
        "scene": {
            "scene_id": scene.scene_id,
            "rng_seed": scene.rng_seed,
            "verified": scene.verified,
            "workspace": [list(scene.workspace[0]), list(scene.workspace[1])],
            "instances": [_instance_to_dict(i) for i in scene.instances],
            "spatial_rules": [
                {"kind": r.kind, "subject": r.subject, "object": r.object,
                 "distance": r.distance}
                for r in scene.spatial_rules
            ],
            "state_rules": [
                {"instance_id": r.instance_id, "joint_id": r.joint_id,
                 "required_state": r.required_state}
                for r in scene.state_rules
            ],
        },
    }
    if include_ground_truth and scene.proposal is not None:
        doc["ground_truth"] = scene.proposal.to_dict()
    return doc


def scene_from_dict(doc: dict, with_ground_truth: bool = True) -> SceneSpec:
    if doc.get("schema_version") != SCENE_SCHEMA_VERSION:
        raise ParseError(f"unsupported scene schema {doc.get('schema_version')!r}")
    body = doc["scene"]
    proposal = None
    if with_ground_truth and "ground_truth" in doc:
        proposal = TaskProposal.from_dict(doc["ground_truth"])
    return SceneSpec(
        scene_id=body["scene_id"],
        instances=tuple(_instance_from_dict(i) for i in body["instances"]),
        spatial_rules=tuple(
            SpatialRule(r["kind"], r["subject"], r["object"], r.get("distance"))
            for r in body["spatial_rules"]
        ),
        state_rules=tuple(
            InitialStateRule(r["instance_id"], r["joint_id"], r["required_state"])
            for r in body["state_rules"]
        ),
        rng_seed=body["rng_seed"],
        proposal=proposal,
        verified=body.get("verified"),
        workspace=(tuple(body["workspace"][0]), tuple(body["workspace"][1])),
    )


def serialize_scene(scene: SceneSpec, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(
        json.dumps(scene_to_dict(scene), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return path


def deserialize_scene(path: str | Path) -> SceneSpec:
    return scene_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_scene_for_detection(path: str | Path) -> SceneSpec:
    """Capability-restricted reader: drops the ground-truth section so the
    detection path can never see the task name or description."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    doc.pop("ground_truth", None)
    return scene_from_dict(doc, with_ground_truth=False)


def render_topdown(scene: SceneSpec, path: str | Path) -> Path:
    """Deterministic SVG top-down (x-y) projection; targets outlined red."""
    scale = 120.0
    margin = 20.0
    span = AUX_REGION[1] - AUX_REGION[0]
    width = height = span * scale + 2 * margin

    def sx(v):
        return (v - AUX_REGION[0]) * scale + margin

    def sy(v):
        return height - ((v - AUX_REGION[0]) * scale + margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<rect x="{sx(0):.1f}" y="{sy(1):.1f}" width="{scale:.1f}" '
        f'height="{scale:.1f}" fill="none" stroke="#444" stroke-dasharray="4 3"/>',
    ]
    for inst in sorted(scene.instances, key=lambda i: i.instance_id):
        imin, imax = inst.aabb()
        color = "#d33" if inst.role_flag == "target" else "#999"
        parts.append(
            f'<rect x="{sx(imin[0]):.2f}" y="{sy(imax[1]):.2f}" '
            f'width="{(imax[0] - imin[0]) * scale:.2f}" '
            f'height="{(imax[1] - imin[1]) * scale:.2f}" '
            f'fill="{color}" fill-opacity="0.35" stroke="{color}"/>'
        )
        parts.append(
            f'<text x="{sx(imin[0]):.2f}" y="{sy(imax[1]) - 2:.2f}" '
            f'font-size="9">{inst.instance_id}</text>'
        )
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return path
