"""Sub-task decomposition and primitive-based execution in the kinematic
world: suction grasp/approach primitive, RRT motion planning, joint-state
writes, and scene-level success predicates.

Reinforcement-learning sub-tasks are executed by a scripted oracle policy
that applies the intended state change; the SAC/CEM hyperparameters are
housed in LearningConfig so a real trainer can slot in later.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace

import numpy as np

from ._util import normalize_name
from .brainstorm import TaskProposal, load_prompt
from .errors import (
    ContactFailure,
    PlanNotFound,
    SchemaError,
    UnresolvedItem,
    ValidationError,
)
from .kernels import segment_hits_any_box
from .metrics import solve_transport
from .providers import ChatRequest
from .scene import SceneSpec, WALL_MARGIN, aabb_inside

VERBS = ("approach", "grasp", "move_to", "release", "set_joint", "navigate")
METHODS = ("reinforcement_learning", "primitive_motion_planning")

PRE_CONTACT_OFFSET = 0.03  # meters above the surface along the normal
CONTACT_DISTANCE = 1e-4
MAX_ADVANCE = 0.1
GRIPPER_HOME = (0.5, 0.5, 2.0)


@dataclass(frozen=True)
class LearningConfig:
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    entropy_lr: float = 3e-4
    manipulation_horizon: int = 100
    manipulation_frameskip: int = 2
    env_steps: int = 1_000_000
    locomotion_horizon: int = 150
    locomotion_frameskip: int = 4
    action_dim: int = 6

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if getattr(self, name) <= 0:
                raise ValidationError(f"LearningConfig.{name} must be positive")


@dataclass(frozen=True)
class RewardSpec:
    kind: str  # "low_level_state_expression" | "particle_emd"
    expression: str

    def __post_init__(self):
        if self.kind not in ("low_level_state_expression", "particle_emd"):
            raise ValidationError(f"unknown reward kind {self.kind!r}")


@dataclass(frozen=True)
class SubTask:
    index: int
    verb: str
    arguments: dict
    method: str | None = None
    reward_spec: RewardSpec | None = None

    def __post_init__(self):
        if self.verb not in VERBS:
            raise ValidationError(f"unknown verb {self.verb!r}")
        if self.method is not None and self.method not in METHODS:
            raise ValidationError(f"unknown method {self.method!r}")
        if self.method == "reinforcement_learning" and self.reward_spec is None:
            raise ValidationError("reinforcement_learning sub-task needs a reward_spec")
        if self.method == "primitive_motion_planning" and self.reward_spec is not None:
            raise ValidationError("primitive sub-task must not carry a reward_spec")


@dataclass
class GripperState:
    position: np.ndarray
    orientation: np.ndarray  # unit quaternion (w, x, y, z)
    attached: str | None = None
    attach_offset: np.ndarray | None = None  # object center - gripper point

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.orientation = np.asarray(self.orientation, dtype=np.float64)
        norm = np.linalg.norm(self.orientation)
        if abs(norm - 1.0) > 1e-9:
            raise ValidationError("gripper orientation quaternion must be unit length")


@dataclass(frozen=True)
class TraceStep:
    sub_task: SubTask
    outcome: str  # success | plan_failure | contact_failure | predicate_failure
    path: tuple | None = None
    note: str = ""


@dataclass(frozen=True)
class ExecutionTrace:
    scene_id: str
    steps: tuple[TraceStep, ...]
    overall_success: bool
    predicate: str = ""

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "overall_success": self.overall_success,
            "predicate": self.predicate,
            "steps": [
                {
                    "verb": s.sub_task.verb,
                    "arguments": s.sub_task.arguments,
                    "method": s.sub_task.method,
                    "outcome": s.outcome,
                    "n_waypoints": len(s.path) if s.path is not None else 0,
                    "note": s.note,
                }
                for s in self.steps
            ],
        }


# ---------------------------------------------------------------------------
# World model
# ---------------------------------------------------------------------------


@dataclass
class Body:
    instance_id: str
    name: str
    role_flag: str
    size: float
    position: np.ndarray
    joints: dict[str, str]
    joint_specs: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def aabb(self):
        half = self.size / 2.0
        return self.position - half, self.position + half


class World:
    """Mutable kinematic copy of a scene for one execution."""

    def __init__(self, scene: SceneSpec):
        self.scene_id = scene.scene_id
        self.bodies: dict[str, Body] = {}
        for inst in scene.instances:
            self.bodies[inst.instance_id] = Body(
                instance_id=inst.instance_id,
                name=inst.name,
                role_flag=inst.role_flag,
                size=inst.size_m,
                position=np.asarray(inst.position, dtype=np.float64),
                joints=dict(inst.joint_states),
            )
        self.gripper = GripperState(
            position=np.asarray(GRIPPER_HOME), orientation=np.array([1.0, 0, 0, 0])
        )

    def body(self, instance_id: str) -> Body:
        if instance_id not in self.bodies:
            raise UnresolvedItem(f"no body {instance_id!r} in world")
        return self.bodies[instance_id]

    def obstacle_boxes(self, exclude: set[str] = frozenset()):
        mins, maxs = [], []
        for body in self.bodies.values():
            if body.instance_id in exclude:
                continue
            lo, hi = body.aabb()
            mins.append(lo)
            maxs.append(hi)
        if not mins:
            return np.zeros((0, 3)), np.zeros((0, 3))
        return np.stack(mins), np.stack(maxs)

    def move_gripper_along(self, path: np.ndarray):
        """Advance the gripper through waypoints; attached bodies ride along."""
        for waypoint in path:
            self.gripper.position = np.asarray(waypoint, dtype=np.float64)
            if self.gripper.attached is not None:
                body = self.body(self.gripper.attached)
                body.position = self.gripper.position + self.gripper.attach_offset


# ---------------------------------------------------------------------------
# Quaternions
# ---------------------------------------------------------------------------


def quat_from_vectors(a, b) -> np.ndarray:
    """Unit quaternion rotating direction a onto direction b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    d = float(np.dot(a, b))
    if d > 1.0 - 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    if d < -1.0 + 1e-12:
        # 180 degrees about any axis orthogonal to a.
        axis = np.cross(a, np.array([1.0, 0.0, 0.0]))
        if np.linalg.norm(axis) < 1e-9:
            axis = np.cross(a, np.array([0.0, 1.0, 0.0]))
        axis /= np.linalg.norm(axis)
        return np.array([0.0, *axis])
    axis = np.cross(a, b)
    q = np.array([1.0 + d, *axis])
    return q / np.linalg.norm(q)


# ---------------------------------------------------------------------------
# Decomposition and method selection
# ---------------------------------------------------------------------------

_STEP_RE = re.compile(r"^\s*\d+\.\s*(\w+)\s*(.*)$")


def _parse_step(verb: str, rest: str, scene: SceneSpec, index: int) -> SubTask:
    tokens = rest.split()
    if verb in ("approach", "grasp"):
        if len(tokens) != 1:
            raise SchemaError(f"{verb} expects one instance_id, got {rest!r}")
        scene.instance(tokens[0])
        return SubTask(index=index, verb=verb, arguments={"instance_id": tokens[0]})
    if verb == "release":
        return SubTask(index=index, verb=verb, arguments={})
    if verb == "set_joint":
        if len(tokens) != 3:
            raise SchemaError(f"set_joint expects '<id> <joint> <state>', got {rest!r}")
        inst = scene.instance(tokens[0])
        joints = inst.joints()
        if tokens[1] not in joints:
            raise UnresolvedItem(
                f"instance {tokens[0]!r} has no joint {tokens[1]!r}"
            )
        return SubTask(
            index=index,
            verb=verb,
            arguments={"instance_id": tokens[0], "joint_id": tokens[1],
                       "state": tokens[2]},
        )
    if verb in ("move_to", "navigate"):
        if len(tokens) == 3 and all(re.fullmatch(r"-?\d+(\.\d+)?", t) for t in tokens):
            return SubTask(
                index=index, verb=verb,
                arguments={"point": [float(t) for t in tokens]},
            )
        if len(tokens) == 1 and tokens[0] == "lift":
            return SubTask(index=index, verb=verb, arguments={"mode": "lift"})
        if len(tokens) == 2 and tokens[1] in ("interior", "top"):
            scene.instance(tokens[0])
            return SubTask(
                index=index, verb=verb,
                arguments={"instance_id": tokens[0], "mode": tokens[1]},
            )
        raise SchemaError(f"{verb} arguments not understood: {rest!r}")
    raise SchemaError(f"unknown verb {verb!r}")


def decompose(solution: str, scene: SceneSpec, chat) -> list[SubTask]:
    """Break a detected solution into primitive-level sub-tasks."""
    instances_ctx = [
        {
            "instance_id": inst.instance_id,
            "name": inst.name,
            "role_flag": inst.role_flag,
            "articulations": [
                {"joint_id": j, "states": [s]} for j, s in inst.joint_states
            ],
        }
        for inst in scene.instances
    ]
    # States known to the decomposer: current plus the complementary ones.
    for ctx, inst in zip(instances_ctx, scene.instances):
        for art in ctx["articulations"]:
            current = art["states"][0]
            complements = {
                "open": "closed", "closed": "open", "on": "off", "off": "on"
            }
            if current in complements:
                art["states"].append(complements[current])
    context = {"kind": "decompose", "solution": solution, "instances": instances_ctx}
    prompt = load_prompt("decompose").format(
        solution=solution,
        instances_block="\n".join(
            f"- {i['instance_id']}: {i['name']} ({i['role_flag']})"
            for i in instances_ctx
        ),
        context_json=json.dumps(context, sort_keys=True),
    )
    text = chat.chat(
        ChatRequest(
            system_prompt="You decompose robot tasks into primitive sub-tasks.",
            messages=(("user", prompt),),
            temperature=0.0,
            max_tokens=512,
        )
    )
    sub_tasks: list[SubTask] = []
    for line in text.splitlines():
        m = _STEP_RE.match(line)
        if not m:
            continue
        verb, rest = m.group(1), m.group(2).strip()
        if verb not in VERBS:
            raise SchemaError(f"completion used unknown verb {verb!r}")
        sub_tasks.append(_parse_step(verb, rest, scene, len(sub_tasks)))
    if not sub_tasks:
        raise SchemaError("decomposition produced no sub-tasks")
    return sub_tasks


def _rule_method(verb: str) -> str:
    # Joint dynamics are contact-rich; transit verbs go to the planner.
    return "reinforcement_learning" if verb == "set_joint" else "primitive_motion_planning"


def _default_reward(sub_task: SubTask) -> RewardSpec:
    args = sub_task.arguments
    if sub_task.verb == "set_joint":
        expr = (
            f"-abs(joint_value({args['instance_id']}, {args['joint_id']}) "
            f"- state_value({args['state']}))"
        )
    else:
        expr = f"-distance(gripper, {args.get('instance_id', 'goal')})"
    return RewardSpec(kind="low_level_state_expression", expression=expr)


def select_method(sub_task: SubTask, chat=None) -> SubTask:
    """Assign a learning/execution method to one sub-task.

    Scripted providers (and no provider) use the fixed verb rule; a live
    chat provider is asked with in-context examples.
    """
    if chat is None or getattr(chat, "is_scripted", False):
        method = _rule_method(sub_task.verb)
        if chat is not None:
            context = {"kind": "select_method", "verb": sub_task.verb}
            prompt = load_prompt("select_method").format(
                verb=sub_task.verb,
                arguments=json.dumps(sub_task.arguments, sort_keys=True),
                context_json=json.dumps(context, sort_keys=True),
            )
            answer = chat.chat(
                ChatRequest(
                    system_prompt="You pick learning algorithms for robot sub-tasks.",
                    messages=(("user", prompt),),
                    temperature=0.0,
                    max_tokens=8,
                )
            ).strip()
            if answer in METHODS:
                method = answer
    else:
        context = {"kind": "select_method", "verb": sub_task.verb}
        prompt = load_prompt("select_method").format(
            verb=sub_task.verb,
            arguments=json.dumps(sub_task.arguments, sort_keys=True),
            context_json=json.dumps(context, sort_keys=True),
        )
        answer = chat.chat(
            ChatRequest(
                system_prompt="You pick learning algorithms for robot sub-tasks.",
                messages=(("user", prompt),),
                temperature=0.0,
                max_tokens=8,
            )
        ).strip()
        method = answer if answer in METHODS else _rule_method(sub_task.verb)
    reward = _default_reward(sub_task) if method == "reinforcement_learning" else None
    return replace(sub_task, method=method, reward_spec=reward)


# ---------------------------------------------------------------------------
# Motion planning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlannerParams:
    step: float = 0.05
    goal_bias: float = 0.1
    max_iters: int = 20000
    margin: float = 1e-3
    bounds: tuple = ((-2.0, -2.0, 0.0), (3.0, 3.0, 3.0))
    smoothing_trials: int = 100


def plan_path(start, goal, obstacles_min, obstacles_max, rng_seed: int,
              params: PlannerParams = PlannerParams()) -> np.ndarray:
    """RRT polyline from start to goal, collision-free under conservative
    segment-box clearance with the configured margin. Deterministic in seed.
    """
    start = np.asarray(start, dtype=np.float64)
    goal = np.asarray(goal, dtype=np.float64)
    mins = np.asarray(obstacles_min, dtype=np.float64).reshape(-1, 3)
    maxs = np.asarray(obstacles_max, dtype=np.float64).reshape(-1, 3)

    def free(p0, p1):
        return not segment_hits_any_box(p0, p1, mins, maxs, margin=params.margin)

    for name, point in (("start", start), ("goal", goal)):
        if segment_hits_any_box(point, point, mins, maxs, margin=params.margin):
            raise PlanNotFound(f"{name} point is in collision")

    if free(start, goal):
        return np.stack([start, goal])

    rng = np.random.default_rng(rng_seed)
    lo = np.asarray(params.bounds[0])
    hi = np.asarray(params.bounds[1])
    nodes = np.empty((params.max_iters + 2, 3), dtype=np.float64)
    parents = np.empty(params.max_iters + 2, dtype=np.int64)
    nodes[0] = start
    parents[0] = -1
    count = 1
    goal_index = None
    for _ in range(params.max_iters):
        if rng.random() < params.goal_bias:
            sample = goal
        else:
            sample = rng.uniform(lo, hi)
        diffs = nodes[:count] - sample
        nearest = int(np.argmin(np.einsum("ij,ij->i", diffs, diffs)))
        direction = sample - nodes[nearest]
        norm = np.linalg.norm(direction)
        if norm < 1e-12:
            continue
        new = nodes[nearest] + direction / norm * min(params.step, norm)
        if not free(nodes[nearest], new):
            continue
        nodes[count] = new
        parents[count] = nearest
        count += 1
        # Greedy goal connection keeps open-space plans near-instant.
        if free(new, goal):
            nodes[count] = goal
            parents[count] = count - 1
            goal_index = count
            count += 1
            break
    if goal_index is None:
        raise PlanNotFound(
            f"no path within {params.max_iters} iterations "
            f"({count} nodes explored)"
        )
    path = []
    idx = goal_index
    while idx != -1:
        path.append(nodes[idx].copy())
        idx = int(parents[idx])
    path.reverse()

    # Deterministic shortcut smoothing.
    waypoints = list(path)
    for _ in range(params.smoothing_trials):
        if len(waypoints) <= 2:
            break
        i = int(rng.integers(0, len(waypoints) - 2))
        j = int(rng.integers(i + 2, len(waypoints)))
        if free(waypoints[i], waypoints[j]):
            waypoints = waypoints[: i + 1] + waypoints[j:]
    return np.stack(waypoints)


# ---------------------------------------------------------------------------
# Grasp / approach primitive
# ---------------------------------------------------------------------------


def _dist_to_box(point, lo, hi) -> float:
    d = np.maximum(np.maximum(lo - point, 0.0), point - hi)
    return float(np.linalg.norm(d))


def sample_surface_point(body: Body, rng) -> tuple[np.ndarray, np.ndarray]:
    """Uniform point on one of the six cube faces (equal areas) with its
    outward normal."""
    lo, hi = body.aabb()
    face = int(rng.integers(0, 6))
    axis, side = divmod(face, 2)
    point = rng.uniform(lo, hi)
    normal = np.zeros(3)
    if side == 0:
        point[axis] = lo[axis]
        normal[axis] = -1.0
    else:
        point[axis] = hi[axis]
        normal[axis] = 1.0
    return point, normal


def grasp_approach_primitive(target: str, world: World, rng_seed: int,
                             params: PlannerParams = PlannerParams()) -> TraceStep:
    """Suction grasp: sample a surface point, align with its outward normal,
    plan to the pre-contact pose 0.03 m out, advance to contact, attach."""
    body = world.body(target)
    if world.gripper.attached is not None:
        raise ValidationError("gripper is already attached")
    rng = np.random.default_rng(rng_seed)
    point, normal = sample_surface_point(body, rng)
    pre_contact = point + PRE_CONTACT_OFFSET * normal
    mins, maxs = world.obstacle_boxes()
    sub = SubTask(index=0, verb="grasp", arguments={"instance_id": target},
                  method="primitive_motion_planning")
    try:
        path = plan_path(world.gripper.position, pre_contact, mins, maxs,
                         rng_seed, params)
    except PlanNotFound as exc:
        return TraceStep(sub_task=sub, outcome="plan_failure", note=str(exc))
    world.move_gripper_along(path)
    world.gripper.orientation = quat_from_vectors(np.array([0.0, 1.0, 0.0]), normal)

    lo, hi = body.aabb()
    traveled = 0.0
    step = 1e-3
    position = world.gripper.position.copy()
    while _dist_to_box(position, lo, hi) > CONTACT_DISTANCE:
        remaining = _dist_to_box(position, lo, hi) - CONTACT_DISTANCE
        advance = min(step, remaining)
        position = position - advance * normal
        traveled += advance
        if traveled > MAX_ADVANCE:
            raise ContactFailure(
                f"no contact with {target!r} within {MAX_ADVANCE} m of travel"
            )
    world.gripper.position = position
    world.gripper.attached = target
    world.gripper.attach_offset = body.position - position
    return TraceStep(
        sub_task=sub,
        outcome="success",
        path=tuple(map(tuple, path)),
        note=f"pre_contact={tuple(np.round(pre_contact, 6))} normal={tuple(normal)}",
    )


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def derive_success_predicate(proposal: TaskProposal, scene: SceneSpec):
    """Mechanical scene-level goal check derived from the proposal verbs.

    Returns (predicate description, callable(World) -> bool).
    """
    target = next(
        (i for i in scene.instances if i.asset_id == proposal.target_asset_id), None
    )
    if target is None:
        raise UnresolvedItem(f"scene lacks target asset {proposal.target_asset_id!r}")
    name = normalize_name(proposal.task_name)

    if proposal.articulation_usage:
        goals = [(j, change.split("->")[1].strip())
                 for j, change in proposal.articulation_usage]

        def joint_predicate(world: World) -> bool:
            body = world.body(target.instance_id)
            return all(body.joints.get(j) == s for j, s in goals)

        desc = " and ".join(f"joint({target.instance_id}.{j})={s}" for j, s in goals)
        return desc, joint_predicate

    def find_aux(predicate):
        for inst in scene.instances:
            if inst.instance_id != target.instance_id and predicate(inst):
                return inst
        return None

    if re.search(r"\b(store|put away|secure)\b", name):
        container = find_aux(lambda i: "box" in normalize_name(i.name)
                             or "bin" in normalize_name(i.name)) or find_aux(
            lambda i: i.role_flag == "auxiliary")
        if container is None:
            raise UnresolvedItem("no container instance for a store-style task")

        def contains_predicate(world: World) -> bool:
            c = world.body(container.instance_id)
            t = world.body(target.instance_id)
            clo, chi = c.aabb()
            tlo, thi = t.aabb()
            return aabb_inside(tlo, thi, clo, chi, shrink=WALL_MARGIN)

        desc = f"contains({container.instance_id}, {target.instance_id})"
        return desc, contains_predicate

    if re.search(r"\b(onto|on)\b", name) and re.search(r"\b(move|place|put)\b", name):
        base = find_aux(lambda i: "table" in normalize_name(i.name)) or find_aux(
            lambda i: i.role_flag == "auxiliary")
        if base is None:
            raise UnresolvedItem("no base instance for a place-on task")

        def on_top_predicate(world: World) -> bool:
            b = world.body(base.instance_id)
            t = world.body(target.instance_id)
            blo, bhi = b.aabb()
            tlo, thi = t.aabb()
            vertical = abs(tlo[2] - bhi[2]) <= 1e-6
            over = (
                blo[0] - 1e-6 <= t.position[0] <= bhi[0] + 1e-6
                and blo[1] - 1e-6 <= t.position[1] <= bhi[1] + 1e-6
            )
            return vertical and over

        desc = f"on_top_of({base.instance_id}, {target.instance_id})"
        return desc, on_top_predicate

    # Fallback: pick-up style, the target must leave the floor plane.
    def off_floor_predicate(world: World) -> bool:
        t = world.body(target.instance_id)
        return bool(t.position[2] - t.size / 2.0 > 0.05)

    return f"off_floor({target.instance_id})", off_floor_predicate


def _goal_for_move(sub_task: SubTask, world: World) -> tuple[np.ndarray, set[str]]:
    """Object-center goal point and the obstacle ids to exclude en route."""
    args = sub_task.arguments
    exclude: set[str] = set()
    if "point" in args:
        return np.asarray(args["point"], dtype=np.float64), exclude
    if args.get("mode") == "lift":
        return world.gripper.position + np.array([0.0, 0.0, 0.3]), exclude
    dest = world.body(args["instance_id"])
    exclude.add(dest.instance_id)  # open-top destination
    lo, hi = dest.aabb()
    if args["mode"] == "interior":
        return dest.position.copy(), exclude
    # top
    attached_half = 0.0
    if world.gripper.attached is not None:
        attached_half = world.body(world.gripper.attached).size / 2.0
    center = dest.position.copy()
    center[2] = hi[2] + attached_half
    return center, exclude


def _settle(body: Body, world: World):
    """Gravity proxy at release: stay if contained, rest on a support below,
    else drop to the floor."""
    lo, hi = body.aabb()
    for other in world.bodies.values():
        if other.instance_id == body.instance_id:
            continue
        olo, ohi = other.aabb()
        if aabb_inside(lo, hi, olo, ohi, shrink=WALL_MARGIN):
            return
    best_top = 0.0
    for other in world.bodies.values():
        if other.instance_id == body.instance_id:
            continue
        olo, ohi = other.aabb()
        over = (
            olo[0] <= body.position[0] <= ohi[0]
            and olo[1] <= body.position[1] <= ohi[1]
            and ohi[2] <= body.position[2] + 1e-9
        )
        if over:
            best_top = max(best_top, float(ohi[2]))
    body.position[2] = best_top + body.size / 2.0


def execute(sub_tasks: list[SubTask], scene: SceneSpec, rng_seed: int,
            params: PlannerParams = PlannerParams()) -> ExecutionTrace:
    """Run sub-tasks in order on a private world copy and evaluate the
    scene-level success predicate at the end."""
    world = World(scene)
    steps: list[TraceStep] = []
    pending_normal: np.ndarray | None = None
    failed = False

    for sub_task in sub_tasks:
        if sub_task.method is None:
            sub_task = select_method(sub_task)
        if failed:
            steps.append(TraceStep(sub_task=sub_task, outcome="plan_failure",
                                   note="skipped after earlier failure"))
            continue
        seed = rng_seed + 7919 * (sub_task.index + 1)
        try:
            if sub_task.method == "reinforcement_learning":
                # Oracle policy stub: apply the intended state change; a
                # trained SAC policy is required for physical fidelity.
                if sub_task.verb == "set_joint":
                    body = world.body(sub_task.arguments["instance_id"])
                    body.joints[sub_task.arguments["joint_id"]] = (
                        sub_task.arguments["state"]
                    )
                    steps.append(TraceStep(sub_task=sub_task, outcome="success",
                                           note="oracle policy stub"))
                else:
                    steps.append(TraceStep(sub_task=sub_task, outcome="success",
                                           note="oracle policy stub (no-op)"))
                continue
            if sub_task.verb == "approach":
                body = world.body(sub_task.arguments["instance_id"])
                rng = np.random.default_rng(seed)
                point, normal = sample_surface_point(body, rng)
                pre_contact = point + PRE_CONTACT_OFFSET * normal
                mins, maxs = world.obstacle_boxes()
                path = plan_path(world.gripper.position, pre_contact, mins, maxs,
                                 seed, params)
                world.move_gripper_along(path)
                world.gripper.orientation = quat_from_vectors(
                    np.array([0.0, 1.0, 0.0]), normal
                )
                pending_normal = normal
                steps.append(TraceStep(sub_task=sub_task, outcome="success",
                                       path=tuple(map(tuple, path))))
            elif sub_task.verb == "grasp":
                body = world.body(sub_task.arguments["instance_id"])
                if pending_normal is None:
                    step = grasp_approach_primitive(body.instance_id, world, seed,
                                                    params)
                    steps.append(replace(step, sub_task=sub_task))
                    if step.outcome != "success":
                        failed = True
                    continue
                lo, hi = body.aabb()
                position = world.gripper.position.copy()
                traveled = 0.0
                while _dist_to_box(position, lo, hi) > CONTACT_DISTANCE:
                    remaining = _dist_to_box(position, lo, hi) - CONTACT_DISTANCE
                    advance = min(1e-3, remaining)
                    position = position - advance * pending_normal
                    traveled += advance
                    if traveled > MAX_ADVANCE:
                        raise ContactFailure(
                            f"no contact with {body.instance_id!r}"
                        )
                world.gripper.position = position
                world.gripper.attached = body.instance_id
                world.gripper.attach_offset = body.position - position
                pending_normal = None
                steps.append(TraceStep(sub_task=sub_task, outcome="success"))
            elif sub_task.verb in ("move_to", "navigate"):
                goal_center, exclude = _goal_for_move(sub_task, world)
                margin = params.margin
                if world.gripper.attached is not None:
                    attached = world.body(world.gripper.attached)
                    exclude.add(attached.instance_id)
                    margin = params.margin + attached.size / 2.0
                    gripper_goal = goal_center - world.gripper.attach_offset
                else:
                    gripper_goal = goal_center
                mins, maxs = world.obstacle_boxes(exclude=exclude)
                path = plan_path(world.gripper.position, gripper_goal, mins, maxs,
                                 seed, replace(params, margin=margin))
                world.move_gripper_along(path)
                steps.append(TraceStep(sub_task=sub_task, outcome="success",
                                       path=tuple(map(tuple, path))))
            elif sub_task.verb == "release":
                if world.gripper.attached is not None:
                    body = world.body(world.gripper.attached)
                    world.gripper.attached = None
                    world.gripper.attach_offset = None
                    _settle(body, world)
                steps.append(TraceStep(sub_task=sub_task, outcome="success"))
            elif sub_task.verb == "set_joint":
                body = world.body(sub_task.arguments["instance_id"])
                body.joints[sub_task.arguments["joint_id"]] = (
                    sub_task.arguments["state"]
                )
                steps.append(TraceStep(sub_task=sub_task, outcome="success"))
        except PlanNotFound as exc:
            steps.append(TraceStep(sub_task=sub_task, outcome="plan_failure",
                                   note=str(exc)))
            failed = True
        except ContactFailure as exc:
            steps.append(TraceStep(sub_task=sub_task, outcome="contact_failure",
                                   note=str(exc)))
            failed = True

    predicate_desc = ""
    predicate_holds = True
    if scene.proposal is not None:
        predicate_desc, predicate = derive_success_predicate(scene.proposal, scene)
        predicate_holds = predicate(world)
        if not failed and not predicate_holds:
            steps.append(
                TraceStep(
                    sub_task=SubTask(index=len(steps), verb="release", arguments={},
                                     method="primitive_motion_planning"),
                    outcome="predicate_failure",
                    note=f"final check failed: {predicate_desc}",
                )
            )
    overall = (not failed) and predicate_holds and all(
        s.outcome == "success" for s in steps
    )
    return ExecutionTrace(
        scene_id=scene.scene_id,
        steps=tuple(steps),
        overall_success=overall,
        predicate=predicate_desc,
    )


# ---------------------------------------------------------------------------
# Particle EMD reward
# ---------------------------------------------------------------------------


def emd_reward(current: np.ndarray, target: np.ndarray) -> float:
    """Exact earth-mover distance between two uniform particle sets under
    Euclidean ground cost. Negate for a maximization reward."""
    current = np.asarray(current, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    if current.size == 0 or target.size == 0:
        raise ValidationError("particle sets must be non-empty")
    a = np.full(current.shape[0], 1.0 / current.shape[0])
    b = np.full(target.shape[0], 1.0 / target.shape[0])
    diff = current[:, None, :] - target[None, :, :]
    cost = np.sqrt(np.sum(diff * diff, axis=2))
    _, objective = solve_transport(a, b, cost)
    return objective
