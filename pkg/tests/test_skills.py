import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anomalykit.errors import (
    PlanNotFound,
    SchemaError,
    UnresolvedItem,
    ValidationError,
)
from anomalykit.scene import place
from anomalykit.skills import (
    CONTACT_DISTANCE,
    GRIPPER_HOME,
    MAX_ADVANCE,
    PRE_CONTACT_OFFSET,
    GripperState,
    LearningConfig,
    PlannerParams,
    RewardSpec,
    SubTask,
    World,
    _dist_to_box,
    decompose,
    derive_success_predicate,
    emd_reward,
    execute,
    grasp_approach_primitive,
    plan_path,
    quat_from_vectors,
    sample_surface_point,
    select_method,
)

from .conftest import make_instance, make_proposal


def _store_scene(proposal=None):
    instances = [
        make_instance("target_0", position=None),
        make_instance("box_0", asset_id="aux_0000", name="storage box",
                      role_flag="auxiliary", size_m=0.5, position=None,
                      description="a sturdy box"),
    ]
    return place(instances, (), (), rng_seed=0, scene_id="scene_0",
                 proposal=proposal)


# ---------------------------------------------------------------------------
# Data classes
# ---------------------------------------------------------------------------


def test_learning_config_defaults_and_bounds():
    cfg = LearningConfig()
    assert cfg.actor_lr == cfg.critic_lr == cfg.entropy_lr == 3e-4
    assert (cfg.manipulation_horizon, cfg.manipulation_frameskip) == (100, 2)
    assert (cfg.locomotion_horizon, cfg.locomotion_frameskip) == (150, 4)
    assert cfg.env_steps == 1_000_000
    assert cfg.action_dim == 6
    with pytest.raises(ValidationError):
        LearningConfig(actor_lr=0.0)


def test_subtask_method_reward_coupling():
    with pytest.raises(ValidationError):
        SubTask(0, "fly", {})
    with pytest.raises(ValidationError):
        SubTask(0, "set_joint", {}, method="reinforcement_learning")
    with pytest.raises(ValidationError):
        SubTask(0, "move_to", {}, method="primitive_motion_planning",
                reward_spec=RewardSpec("particle_emd", "emd"))
    with pytest.raises(ValidationError):
        RewardSpec("vibes", "x")


def test_gripper_quaternion_must_be_unit():
    with pytest.raises(ValidationError):
        GripperState(position=np.zeros(3), orientation=np.array([1.0, 1.0, 0, 0]))


def test_quat_from_vectors_rotates():
    for a, b in (
        ((0, 1, 0), (0, 0, 1)),
        ((0, 1, 0), (0, -1, 0)),
        ((1, 0, 0), (1, 0, 0)),
        ((0.3, -0.7, 0.2), (-1, 0.5, 0.1)),
    ):
        q = quat_from_vectors(a, b)
        assert np.linalg.norm(q) == pytest.approx(1.0, abs=1e-12)
        # Apply the rotation and compare directions.
        w, x, y, z = q
        r = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])
        va = np.asarray(a, dtype=float)
        vb = np.asarray(b, dtype=float)
        got = r @ (va / np.linalg.norm(va))
        assert np.allclose(got, vb / np.linalg.norm(vb), atol=1e-9)


# ---------------------------------------------------------------------------
# Decomposition / method selection
# ---------------------------------------------------------------------------


def test_decompose_offline(providers):
    scene = _store_scene()
    subs = decompose("store the knife in the storage box", scene, providers.chat)
    assert [s.verb for s in subs] == ["approach", "grasp", "move_to", "release"]
    assert subs[0].arguments["instance_id"] == "target_0"
    assert subs[2].arguments == {"instance_id": "box_0", "mode": "interior"}
    assert [s.index for s in subs] == [0, 1, 2, 3]


class _ScriptChat:
    is_scripted = True

    def __init__(self, text):
        self.text = text

    def chat(self, request):
        return self.text


def test_decompose_rejects_unknown_instance():
    scene = _store_scene()
    with pytest.raises(UnresolvedItem):
        decompose("x", scene, _ScriptChat("1. grasp ghost_9"))


def test_decompose_rejects_unknown_verb_and_joint():
    scene = _store_scene()
    with pytest.raises(SchemaError):
        decompose("x", scene, _ScriptChat("1. teleport target_0"))
    with pytest.raises(UnresolvedItem):
        decompose("x", scene, _ScriptChat("1. set_joint target_0 blade closed"))
    with pytest.raises(SchemaError):
        decompose("x", scene, _ScriptChat("no steps here"))


def test_select_method_rule():
    rl = select_method(SubTask(0, "set_joint",
                               {"instance_id": "t", "joint_id": "door",
                                "state": "closed"}))
    assert rl.method == "reinforcement_learning"
    assert rl.reward_spec is not None
    assert rl.reward_spec.kind == "low_level_state_expression"
    assert "door" in rl.reward_spec.expression
    pm = select_method(SubTask(0, "move_to", {"mode": "lift"}))
    assert pm.method == "primitive_motion_planning"
    assert pm.reward_spec is None


def test_select_method_live_answer_used():
    class _Live:
        is_scripted = False

        def chat(self, request):
            return "reinforcement_learning"

    out = select_method(SubTask(0, "move_to", {"mode": "lift"}), chat=_Live())
    assert out.method == "reinforcement_learning"

    class _Garbage(_Live):
        def chat(self, request):
            return "astrology"

    fallback = select_method(SubTask(0, "move_to", {"mode": "lift"}),
                             chat=_Garbage())
    assert fallback.method == "primitive_motion_planning"


# ---------------------------------------------------------------------------
# Planner
# ---------------------------------------------------------------------------


def _segment_clear_of_boxes(p0, p1, mins, maxs, margin, n=2000):
    """Independent dense re-check: sample points along the segment and
    measure the distance to each inflated box."""
    for t in np.linspace(0.0, 1.0, n):
        p = p0 + t * (p1 - p0)
        for lo, hi in zip(mins, maxs):
            if np.all(p >= lo - margin - 1e-12) and np.all(p <= hi + margin + 1e-12):
                return False
    return True


def test_plan_path_direct_when_free():
    path = plan_path([0, 0, 1], [1, 1, 1], np.zeros((0, 3)), np.zeros((0, 3)),
                     rng_seed=0)
    assert path.shape == (2, 3)


def test_plan_path_around_wall():
    # Wall with a gap above it; the straight line is blocked.
    mins = np.array([[0.4, -2.0, 0.0]])
    maxs = np.array([[0.6, 2.0, 1.5]])
    start = np.array([0.0, 0.0, 0.5])
    goal = np.array([1.0, 0.0, 0.5])
    path = plan_path(start, goal, mins, maxs, rng_seed=1)
    assert np.allclose(path[0], start) and np.allclose(path[-1], goal)
    for a, b in zip(path[:-1], path[1:]):
        assert _segment_clear_of_boxes(a, b, mins, maxs, margin=1e-3)


def test_plan_path_deterministic():
    mins = np.array([[0.4, -2.0, 0.0]])
    maxs = np.array([[0.6, 2.0, 1.5]])
    a = plan_path([0, 0, 0.5], [1, 0, 0.5], mins, maxs, rng_seed=7)
    b = plan_path([0, 0, 0.5], [1, 0, 0.5], mins, maxs, rng_seed=7)
    assert np.array_equal(a, b)


def test_plan_path_start_in_collision():
    mins = np.array([[-0.5, -0.5, -0.5]])
    maxs = np.array([[0.5, 0.5, 0.5]])
    with pytest.raises(PlanNotFound, match="start"):
        plan_path([0, 0, 0], [2, 2, 2], mins, maxs, rng_seed=0)
    with pytest.raises(PlanNotFound, match="goal"):
        plan_path([2, 2, 2], [0, 0, 0], mins, maxs, rng_seed=0)


def test_plan_path_no_route():
    # Goal sealed inside a hollow made of six slabs; tiny budget forces
    # an explicit failure.
    size = 1.0
    slabs = []
    for axis in range(3):
        for side in (-1, 1):
            lo = -size * np.ones(3)
            hi = size * np.ones(3)
            if side < 0:
                hi[axis] = -size + 0.1
            else:
                lo[axis] = size - 0.1
            slabs.append((lo, hi))
    mins = np.stack([s[0] for s in slabs]) + np.array([0, 0, 1.2])
    maxs = np.stack([s[1] for s in slabs]) + np.array([0, 0, 1.2])
    params = PlannerParams(max_iters=300)
    with pytest.raises(PlanNotFound):
        plan_path([2.0, 2.0, 1.2], [0.0, 0.0, 1.2], mins, maxs, rng_seed=0,
                  params=params)


# ---------------------------------------------------------------------------
# Grasp primitive
# ---------------------------------------------------------------------------


def test_surface_sampling_on_faces():
    body = World(_store_scene()).body("target_0")
    lo, hi = body.aabb()
    rng = np.random.default_rng(0)
    for _ in range(200):
        point, normal = sample_surface_point(body, rng)
        assert np.linalg.norm(normal) == pytest.approx(1.0)
        axis = int(np.argmax(np.abs(normal)))
        expected = hi[axis] if normal[axis] > 0 else lo[axis]
        assert point[axis] == pytest.approx(expected)
        assert np.all(point >= lo - 1e-12) and np.all(point <= hi + 1e-12)


def test_grasp_pre_contact_and_attach():
    world = World(_store_scene())
    step = grasp_approach_primitive("target_0", world, rng_seed=3)
    assert step.outcome == "success"
    body = world.body("target_0")
    lo, hi = body.aabb()
    # The planned path ends exactly at the pre-contact pose 0.03 m out.
    end = np.asarray(step.path[-1])
    assert _dist_to_box(end, lo, hi) == pytest.approx(PRE_CONTACT_OFFSET, abs=1e-9)
    # After advancing, the gripper touches the surface and is attached.
    assert _dist_to_box(world.gripper.position, lo, hi) <= CONTACT_DISTANCE
    assert world.gripper.attached == "target_0"


def test_grasp_rigid_attachment_no_drift():
    world = World(_store_scene())
    assert grasp_approach_primitive("target_0", world, rng_seed=3).outcome == "success"
    offset = world.gripper.attach_offset.copy()
    rel_before = world.body("target_0").position - world.gripper.position
    waypoints = np.array([[0.5, 0.5, 1.0], [0.2, 0.8, 0.9], [0.7, 0.1, 1.5]])
    world.move_gripper_along(waypoints)
    rel_after = world.body("target_0").position - world.gripper.position
    assert np.max(np.abs(rel_after - rel_before)) <= 1e-9
    assert np.array_equal(world.gripper.attach_offset, offset)


def test_grasp_refuses_double_attach():
    world = World(_store_scene())
    grasp_approach_primitive("target_0", world, rng_seed=3)
    with pytest.raises(ValidationError):
        grasp_approach_primitive("box_0", world, rng_seed=3)


# ---------------------------------------------------------------------------
# Success predicates
# ---------------------------------------------------------------------------


def test_predicate_articulation():
    proposal = make_proposal(articulation_usage=(("blade", "open->closed"),))
    scene = _store_scene(proposal)
    desc, predicate = derive_success_predicate(proposal, scene)
    assert "blade" in desc
    world = World(scene)
    world.body("target_0").joints["blade"] = "open"
    assert not predicate(world)
    world.body("target_0").joints["blade"] = "closed"
    assert predicate(world)


def test_predicate_store_contains():
    proposal = make_proposal()
    scene = _store_scene(proposal)
    desc, predicate = derive_success_predicate(proposal, scene)
    assert desc == "contains(box_0, target_0)"
    world = World(scene)
    assert not predicate(world)
    world.body("target_0").position = world.body("box_0").position.copy()
    assert predicate(world)


def test_predicate_place_on():
    proposal = make_proposal(task_name="place the knife on the table")
    instances = [
        make_instance("target_0", position=None),
        make_instance("table_0", asset_id="aux_0002", name="table",
                      role_flag="auxiliary", size_m=0.8, position=None),
    ]
    scene = place(instances, (), (), rng_seed=1, proposal=proposal)
    desc, predicate = derive_success_predicate(proposal, scene)
    assert desc == "on_top_of(table_0, target_0)"
    world = World(scene)
    table = world.body("table_0")
    knife = world.body("target_0")
    knife.position = table.position + np.array(
        [0.0, 0.0, table.size / 2 + knife.size / 2]
    )
    assert predicate(world)


def test_predicate_fallback_off_floor():
    proposal = make_proposal(task_name="inspect the knife")
    scene = _store_scene(proposal)
    desc, predicate = derive_success_predicate(proposal, scene)
    assert desc.startswith("off_floor")
    world = World(scene)
    assert not predicate(world)
    world.body("target_0").position[2] += 0.5
    assert predicate(world)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def _store_subtasks():
    return [
        SubTask(0, "approach", {"instance_id": "target_0"}),
        SubTask(1, "grasp", {"instance_id": "target_0"}),
        SubTask(2, "move_to", {"instance_id": "box_0", "mode": "interior"}),
        SubTask(3, "release", {}),
    ]


def test_execute_store_task_succeeds():
    scene = _store_scene(make_proposal())
    trace = execute(_store_subtasks(), scene, rng_seed=0)
    assert trace.overall_success
    assert all(s.outcome == "success" for s in trace.steps)
    assert trace.predicate == "contains(box_0, target_0)"
    doc = trace.to_dict()
    assert doc["overall_success"] is True
    assert len(doc["steps"]) == 4


def test_execute_set_joint_oracle():
    proposal = make_proposal(
        task_name="close the knife blade",
        articulation_usage=(("blade", "open->closed"),),
    )
    instances = [
        make_instance("target_0", position=None,
                      joint_states=(("blade", "open"),)),
    ]
    scene = place(instances, (), (), rng_seed=0, proposal=proposal)
    subs = [
        select_method(SubTask(0, "set_joint",
                              {"instance_id": "target_0", "joint_id": "blade",
                               "state": "closed"}))
    ]
    trace = execute(subs, scene, rng_seed=0)
    assert trace.overall_success
    assert trace.steps[0].note == "oracle policy stub"


def test_execute_predicate_failure_recorded():
    # Lift then release over the floor: the store predicate cannot hold.
    scene = _store_scene(make_proposal())
    subs = [
        SubTask(0, "approach", {"instance_id": "target_0"}),
        SubTask(1, "grasp", {"instance_id": "target_0"}),
        SubTask(2, "move_to", {"mode": "lift"}),
        SubTask(3, "release", {}),
    ]
    trace = execute(subs, scene, rng_seed=0)
    assert not trace.overall_success
    assert trace.steps[-1].outcome == "predicate_failure"


def test_execute_skips_after_failure():
    scene = _store_scene(make_proposal())
    subs = [
        # Goal buried inside the box body: planning must fail.
        SubTask(0, "move_to", {"point": list(
            World(scene).body("box_0").position)}),
        SubTask(1, "approach", {"instance_id": "target_0"}),
    ]
    trace = execute(subs, scene, rng_seed=0)
    assert not trace.overall_success
    assert trace.steps[0].outcome == "plan_failure"
    assert trace.steps[1].note == "skipped after earlier failure"


def test_execute_release_settles_to_floor():
    scene = _store_scene(make_proposal(task_name="inspect the knife"))
    subs = [
        SubTask(0, "approach", {"instance_id": "target_0"}),
        SubTask(1, "grasp", {"instance_id": "target_0"}),
        SubTask(2, "move_to", {"mode": "lift"}),
        SubTask(3, "release", {}),
    ]
    trace = execute(subs, scene, rng_seed=0)
    # After settling, the knife rests on the floor again.
    assert trace.steps[3].outcome == "success"
    assert not trace.overall_success  # off_floor predicate fails post-release


def test_execute_deterministic():
    scene = _store_scene(make_proposal())
    a = execute(_store_subtasks(), scene, rng_seed=5).to_dict()
    b = execute(_store_subtasks(), scene, rng_seed=5).to_dict()
    assert a == b


# ---------------------------------------------------------------------------
# Particle EMD reward
# ---------------------------------------------------------------------------


def test_emd_reward_identity_and_shift():
    pts = np.random.default_rng(0).uniform(size=(8, 3))
    assert emd_reward(pts, pts) == pytest.approx(0.0, abs=1e-9)
    shifted = pts + np.array([0.5, 0.0, 0.0])
    # Pure translation of matched uniform sets costs exactly the shift.
    assert emd_reward(pts, shifted) == pytest.approx(0.5, abs=1e-9)
    with pytest.raises(ValidationError):
        emd_reward(np.zeros((0, 3)), pts)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=1000))
def test_emd_reward_symmetry(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(5, 3))
    b = rng.uniform(size=(7, 3))
    assert emd_reward(a, b) == pytest.approx(emd_reward(b, a), abs=1e-9)
    assert emd_reward(a, b) >= -1e-12
