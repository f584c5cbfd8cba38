import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anomalykit.errors import (
    PlacementExhausted,
    SchemaError,
    UnresolvedItem,
    ValidationError,
    VolumeOverflow,
)
from anomalykit.scene import (
    AUX_REGION,
    OVERLAP_TOL,
    SIZE_MAX,
    SIZE_MIN,
    WALL_MARGIN,
    AssetInstance,
    InitialStateRule,
    SceneSpec,
    SpatialRule,
    assign_sizes,
    check_contains,
    check_on_top_of,
    derive_rules,
    deserialize_scene,
    load_scene_for_detection,
    place,
    render_topdown,
    serialize_scene,
    verify_scene,
)

from .conftest import make_instance, make_proposal


# ---------------------------------------------------------------------------
# Geometric predicates
# ---------------------------------------------------------------------------


def test_check_contains_respects_wall_margin():
    box = make_instance("box_0", name="box", size_m=1.0, position=(0.0, 0.0, 0.5),
                        role_flag="auxiliary")
    inner = make_instance("t", size_m=0.2, position=(0.0, 0.0, 0.5))
    assert check_contains(box, inner)
    # Touching the 5% inset wall from inside is still allowed (closed check);
    # crossing it is not.
    at_wall = make_instance("t", size_m=0.2, position=(0.35, 0.0, 0.5))
    past_wall = make_instance("t", size_m=0.2, position=(0.36, 0.0, 0.5))
    assert check_contains(box, at_wall)
    assert not check_contains(box, past_wall)


def test_check_on_top_of():
    base = make_instance("b", name="table", size_m=1.0, position=(0.0, 0.0, 0.5),
                         role_flag="auxiliary")
    good = make_instance("t", size_m=0.2, position=(0.1, 0.1, 1.1))
    floating = make_instance("t", size_m=0.2, position=(0.1, 0.1, 1.3))
    off_edge = make_instance("t", size_m=0.2, position=(0.9, 0.0, 1.1))
    assert check_on_top_of(base, good)
    assert not check_on_top_of(base, floating)
    assert not check_on_top_of(base, off_edge)
    # Larger item on smaller base: center over footprint suffices.
    slab = make_instance("t", size_m=2.0, position=(0.2, 0.2, 2.0))
    assert check_on_top_of(base, slab)


def test_instance_validation():
    with pytest.raises(ValidationError):
        make_instance(role_flag="protagonist")
    with pytest.raises(ValidationError):
        make_instance(size_m=0.0)
    with pytest.raises(ValidationError):
        make_instance(size_m=None).aabb()
    with pytest.raises(ValidationError):
        SpatialRule("adjacent_within", "a", "b", distance=None)
    with pytest.raises(ValidationError):
        SpatialRule("orbits", "a", "b")


# ---------------------------------------------------------------------------
# Sizing
# ---------------------------------------------------------------------------


class _SizesChat:
    """Scripted size oracle; replays answer dicts in sequence."""

    is_scripted = True

    def __init__(self, *answers):
        self.answers = list(answers)
        self.calls = 0

    def chat(self, request):
        answer = self.answers[min(self.calls, len(self.answers) - 1)]
        self.calls += 1
        return "\n".join(f"{k}: {v} m" for k, v in answer.items())


def test_assign_sizes_clamps_and_warns():
    instances = [
        make_instance("t", size_m=None),
        make_instance("aux_0", name="warehouse", size_m=None, role_flag="auxiliary"),
    ]
    warnings = []
    chat = _SizesChat({"t": 0.001, "aux_0": 12.0})
    out = assign_sizes(instances, chat, warnings=warnings)
    sizes = {i.instance_id: i.size_m for i in out}
    assert sizes == {"t": SIZE_MIN, "aux_0": SIZE_MAX}
    assert len(warnings) == 2


def test_assign_sizes_preserves_known_sizes():
    instances = [make_instance("t", size_m=0.2)]
    out = assign_sizes(instances, _SizesChat({}))
    assert out[0].size_m == 0.2


def test_assign_sizes_missing_answer():
    with pytest.raises(SchemaError):
        assign_sizes([make_instance("t", size_m=None)], _SizesChat({"other": 1.0}))


def test_assign_sizes_containment_repair():
    # Bowl answered smaller than the knife both times: the container must be
    # mechanically resized to 1.5x the containee.
    instances = [
        make_instance("t", size_m=None),
        make_instance("bowl_0", name="bowl", size_m=None, role_flag="auxiliary"),
    ]
    rule = SpatialRule("contains", subject="bowl_0", object="t")
    chat = _SizesChat({"t": 0.3, "bowl_0": 0.2}, {"t": 0.3, "bowl_0": 0.2})
    warnings = []
    out = assign_sizes(instances, chat, rules=(rule,), warnings=warnings)
    sizes = {i.instance_id: i.size_m for i in out}
    assert sizes["bowl_0"] == pytest.approx(0.45)
    assert sizes["t"] < sizes["bowl_0"] * (1.0 - 2.0 * WALL_MARGIN)
    assert chat.calls == 2
    assert any("resized" in w for w in warnings)


def test_assign_sizes_reask_can_fix():
    instances = [
        make_instance("t", size_m=None),
        make_instance("bowl_0", name="bowl", size_m=None, role_flag="auxiliary"),
    ]
    rule = SpatialRule("contains", subject="bowl_0", object="t")
    chat = _SizesChat({"t": 0.3, "bowl_0": 0.2}, {"t": 0.1, "bowl_0": 0.5})
    out = assign_sizes(instances, chat, rules=(rule,))
    sizes = {i.instance_id: i.size_m for i in out}
    assert sizes == {"t": 0.1, "bowl_0": 0.5}


def test_assign_sizes_irreparable():
    # Containee at the size cap: no container can admit it.
    instances = [
        make_instance("t", size_m=None),
        make_instance("bowl_0", name="bowl", size_m=None, role_flag="auxiliary"),
    ]
    rule = SpatialRule("contains", subject="bowl_0", object="t")
    chat = _SizesChat({"t": 3.0, "bowl_0": 0.2})
    with pytest.raises(ValidationError):
        assign_sizes(instances, chat, rules=(rule,))


# ---------------------------------------------------------------------------
# Rule derivation
# ---------------------------------------------------------------------------


def _knife_and_box():
    return [
        make_instance("target_0", name="knife", size_m=0.2),
        make_instance("aux_0", asset_id="aux_0000", name="storage box",
                      role_flag="auxiliary", size_m=0.5),
    ]


def test_derive_rules_stative_containment():
    proposal = make_proposal(
        description=(
            "A knife sits inside the storage box. The robot should take it "
            "out and inspect it."
        ),
    )
    spatial, state = derive_rules(proposal, _knife_and_box())
    assert spatial == (SpatialRule("contains", subject="aux_0", object="target_0"),)
    assert state == ()


def test_derive_rules_goal_sentences_ignored():
    proposal = make_proposal()  # "...put it into a storage box..." is a goal
    spatial, state = derive_rules(proposal, _knife_and_box())
    assert spatial == ()


def test_derive_rules_on_top():
    proposal = make_proposal(
        description="A knife lies on the storage box. Something is off.",
    )
    spatial, _ = derive_rules(proposal, _knife_and_box())
    assert spatial == (SpatialRule("on_top_of", subject="aux_0", object="target_0"),)


def test_derive_rules_articulation_initial_state():
    proposal = make_proposal(articulation_usage=(("blade", "open->closed"),))
    _, state = derive_rules(proposal, _knife_and_box())
    assert state == (InitialStateRule("target_0", "blade", "open"),)


def test_derive_rules_unresolved_items():
    proposal = make_proposal(auxiliary_items=("laser turret",))
    with pytest.raises(UnresolvedItem, match="laser turret"):
        derive_rules(proposal, _knife_and_box())
    with pytest.raises(UnresolvedItem):
        derive_rules(make_proposal(target_asset_id="ghost"), _knife_and_box())


# ---------------------------------------------------------------------------
# Placement
# ---------------------------------------------------------------------------


def _unplaced(instance_id, **kw):
    kw.setdefault("position", None)
    return make_instance(instance_id, **kw)


def _basic_instances():
    return [
        _unplaced("target_0", size_m=0.2),
        _unplaced("aux_0", asset_id="aux_0000", name="storage box",
                  role_flag="auxiliary", size_m=0.5),
    ]


def test_place_regions_and_gravity():
    scene = place(_basic_instances(), (), (), rng_seed=0)
    target = scene.instance("target_0")
    aux = scene.instance("aux_0")
    tmin, tmax = target.aabb()
    assert np.all(tmin >= -OVERLAP_TOL) and np.all(tmax <= 1.0 + OVERLAP_TOL)
    assert target.position[2] == pytest.approx(target.size_m / 2)
    assert aux.position[2] == pytest.approx(aux.size_m / 2)
    x, y, _ = aux.position
    assert not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0)
    assert AUX_REGION[0] <= x <= AUX_REGION[1]


def test_place_deterministic():
    a = place(_basic_instances(), (), (), rng_seed=11)
    b = place(_basic_instances(), (), (), rng_seed=11)
    assert [i.position for i in a.instances] == [i.position for i in b.instances]


def test_place_satisfies_contains_rule():
    # Contained objects inherit the target flag from their container so the
    # workspace invariant keeps holding; mirror that here.
    instances = [
        _unplaced("box_0", asset_id="aux_0000", name="storage box", size_m=0.5),
        _unplaced("target_0", size_m=0.2),
    ]
    rule = SpatialRule("contains", subject="box_0", object="target_0")
    scene = place(instances, (rule,), (), rng_seed=3)
    assert check_contains(scene.instance("box_0"), scene.instance("target_0"))


def test_place_satisfies_on_top_rule():
    instances = [
        _unplaced("target_0", size_m=0.1),
        _unplaced("table_0", asset_id="aux_0002", name="table", size_m=0.7),
    ]
    rule = SpatialRule("on_top_of", subject="table_0", object="target_0")
    scene = place(instances, (rule,), (), rng_seed=4)
    assert check_on_top_of(scene.instance("table_0"), scene.instance("target_0"))


def test_place_volume_overflow():
    instances = [
        _unplaced("target_0", size_m=0.95),
        _unplaced("target_1", size_m=0.3),
    ]
    with pytest.raises(VolumeOverflow):
        place(instances, (), (), rng_seed=0)


def test_place_exhaustion():
    # Two 0.6 m targets cannot coexist without overlap in the unit cube.
    instances = [
        _unplaced("target_0", size_m=0.6),
        _unplaced("target_1", size_m=0.6),
    ]
    with pytest.raises(PlacementExhausted):
        place(instances, (), (), rng_seed=0, max_attempts=50)


def test_place_cyclic_rules_rejected():
    rules = (
        SpatialRule("contains", subject="aux_0", object="target_0"),
        SpatialRule("on_top_of", subject="target_0", object="aux_0"),
    )
    with pytest.raises(ValidationError, match="cyclic"):
        place(_basic_instances(), rules, (), rng_seed=0)


def test_place_unsized_rejected():
    with pytest.raises(ValidationError):
        place([_unplaced("target_0", size_m=None)], (), (), rng_seed=0)


def test_place_state_rules_and_catalog_defaults(small_catalog):
    instances = [
        _unplaced("target_0", asset_id="microwave_0000", name="microwave",
                  size_m=0.5),
    ]
    state = (InitialStateRule("target_0", "door", "open"),)
    scene = place(instances, (), state, rng_seed=0, catalog=small_catalog)
    joints = scene.instance("target_0").joints()
    assert joints["door"] == "open"  # rule override
    assert joints["power"] == "off"  # catalog default


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000),
       target=st.floats(min_value=0.05, max_value=0.6),
       aux=st.floats(min_value=0.1, max_value=1.5))
def test_place_property_no_overlap(seed, target, aux):
    instances = [
        _unplaced("target_0", size_m=target),
        _unplaced("aux_0", asset_id="aux_0000", name="storage box",
                  role_flag="auxiliary", size_m=aux),
    ]
    try:
        scene = place(instances, (), (), rng_seed=seed)
    except PlacementExhausted:
        return
    (amin, amax), (bmin, bmax) = (i.aabb() for i in scene.instances)
    depth = np.min(np.minimum(amax, bmax) - np.maximum(amin, bmin))
    assert depth <= OVERLAP_TOL


# ---------------------------------------------------------------------------
# Verification, serialization, rendering
# ---------------------------------------------------------------------------


def _scene():
    return place(_basic_instances(), (), (), rng_seed=0,
                 proposal=make_proposal(), scene_id="scene_test")


def test_verify_scene_offline(providers):
    scene, verdict = verify_scene(_scene(), providers.vision)
    assert verdict.approved
    assert scene.verified is True


def test_verify_scene_needs_proposal(providers):
    bare = place(_basic_instances(), (), (), rng_seed=0)
    with pytest.raises(ValidationError):
        verify_scene(bare, providers.vision)


def test_serialize_roundtrip(tmp_path):
    scene = _scene()
    path = serialize_scene(scene, tmp_path / "scene.json")
    loaded = deserialize_scene(path)
    assert loaded == scene


def test_detection_loader_drops_ground_truth(tmp_path):
    scene = _scene()
    path = serialize_scene(scene, tmp_path / "scene.json")
    restricted = load_scene_for_detection(path)
    assert restricted.proposal is None
    assert restricted.instances == scene.instances
    text = path.read_text()
    assert "store the knife safely" in text  # truth is on disk, not in the loader


def test_render_topdown(tmp_path):
    scene = _scene()
    path = render_topdown(scene, tmp_path / "scene.svg")
    svg = path.read_text()
    assert svg.startswith("<svg")
    assert "target_0" in svg and "aux_0" in svg
    assert render_topdown(scene, tmp_path / "again.svg").read_text() == svg
