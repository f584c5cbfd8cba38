import json
from pathlib import Path

import pytest

from anomalykit.brainstorm import TaskProposal
from anomalykit.catalog import load_catalog
from anomalykit.providers import make_providers
from anomalykit.scene import AssetInstance

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def small_catalog():
    return load_catalog(FIXTURES / "catalog_small.jsonl")


@pytest.fixture(scope="session")
def aux_catalog():
    return load_catalog(FIXTURES / "catalog_aux.jsonl")


@pytest.fixture(scope="session")
def full_catalog():
    from importlib import resources

    with resources.as_file(
        resources.files("anomalykit.data").joinpath("partnet_subset.jsonl")
    ) as path:
        return load_catalog(path)


@pytest.fixture()
def providers():
    return make_providers("offline", seed=0)


@pytest.fixture(scope="session")
def session_providers():
    return make_providers("offline", seed=0)


def make_proposal(**overrides) -> TaskProposal:
    base = dict(
        task_name="store the knife safely",
        explanation="a loose knife can cause cuts",
        description=(
            "A knife lies unattended on the floor of the room. The robot "
            "needs to pick up the knife and put it into a storage box so it "
            "is out of reach."
        ),
        auxiliary_items=("storage box",),
        articulation_usage=(),
        category="household_hazards",
        proposer_role="Homemaker",
        round_index=0,
        target_asset_id="knife_0000",
    )
    base.update(overrides)
    return TaskProposal(**base)


def make_instance(instance_id="target_0", asset_id="knife_0000", name="knife",
                  role_flag="target", size_m=0.2, position=(0.5, 0.5, 0.1),
                  joint_states=(), description="a folding knife") -> AssetInstance:
    return AssetInstance(
        instance_id=instance_id, asset_id=asset_id, name=name,
        role_flag=role_flag, size_m=size_m, position=position,
        joint_states=joint_states, description=description,
    )


def read_json(path: Path):
    return json.loads(Path(path).read_text(encoding="utf-8"))
