"""anomalykit: household anomaly scenario generation and evaluation.

Pipeline: multi-agent brainstorming -> auxiliary asset retrieval -> kinematic
3D scene construction -> proactive anomaly detection -> primitive-based task
execution -> diversity / detection / completion metrics.
"""

from .catalog import ArticulationSpec, AssetRecord, Catalog, load_catalog, sample_target
from .brainstorm import Role, SessionConfig, TaskProposal, run_session
from .detect import DetectionResult, SceneDescription, describe_scene, hit_at_k
from .errors import AnomalykitError
from .metrics import DiversityReport, bleu, build_report, self_bleu, solve_transport, wmd
from .providers import ChatRequest, EmbeddingVector, ProviderSet, VisualVerdict, make_providers
from .scene import AssetInstance, SceneSpec, SpatialRule, place, serialize_scene
from .skills import ExecutionTrace, LearningConfig, SubTask, execute, plan_path

__version__ = "0.1.0"

__all__ = [
    "AnomalykitError",
    "ArticulationSpec",
    "AssetInstance",
    "AssetRecord",
    "Catalog",
    "ChatRequest",
    "DetectionResult",
    "DiversityReport",
    "EmbeddingVector",
    "ExecutionTrace",
    "LearningConfig",
    "ProviderSet",
    "Role",
    "SceneDescription",
    "SceneSpec",
    "SessionConfig",
    "SpatialRule",
    "SubTask",
    "TaskProposal",
    "VisualVerdict",
    "bleu",
    "build_report",
    "describe_scene",
    "execute",
    "hit_at_k",
    "load_catalog",
    "make_providers",
    "place",
    "plan_path",
    "run_session",
    "sample_target",
    "self_bleu",
    "serialize_scene",
    "solve_transport",
    "wmd",
]
