import numpy as np
import pytest

from anomalykit.errors import EmptyPool, SchemaError, ValidationError
from anomalykit.providers import VisualVerdict, cosine
from anomalykit.retrieval import (
    AuxiliaryQuery,
    RetrievalResult,
    describe_auxiliaries,
    retrieve_top_k,
    validate_choice,
)

from .conftest import make_proposal


def _query(name="storage box", description="a small metal box with lid"):
    return AuxiliaryQuery(object_name=name, object_description=description,
                          source_proposal="store the knife safely")


def test_describe_auxiliaries_coverage(providers):
    queries = describe_auxiliaries(make_proposal(), providers.chat)
    assert len(queries) == 1
    assert queries[0].object_name == "storage box"
    assert queries[0].object_description


def test_describe_auxiliaries_empty(providers):
    proposal = make_proposal(auxiliary_items=())
    assert describe_auxiliaries(proposal, providers.chat) == []


class _IncompleteChat:
    is_scripted = True

    def chat(self, request):
        return "Name: something else\nDescription: unrelated\n"


def test_describe_auxiliaries_missing_item(providers):
    with pytest.raises(SchemaError, match="storage box"):
        describe_auxiliaries(make_proposal(), _IncompleteChat())


def test_retrieve_self_similar_first(aux_catalog, providers):
    asset = aux_catalog.assets["aux_0000"]
    query = _query(description=f"{asset.name}. {asset.description}")
    result = retrieve_top_k(query, aux_catalog, providers.embed, k=3)
    assert result.ranked[0][0] == "aux_0000"
    assert result.ranked[0][1] == pytest.approx(1.0, abs=1e-9)


def test_retrieve_k_larger_than_pool(aux_catalog, providers):
    result = retrieve_top_k(_query(), aux_catalog, providers.embed, k=50)
    assert len(result.ranked) == 5


def test_retrieve_full_expected_ranking(aux_catalog, providers):
    query = _query(description="a small metal box with a lid")
    result = retrieve_top_k(query, aux_catalog, providers.embed, k=5)
    # Brute-force oracle: embed the query and all 5 pool descriptions
    # independently and rank by cosine with the id tie-break.
    pool = aux_catalog.pool("auxiliary_pool")
    texts = [query.object_description] + [f"{a.name}. {a.description}" for a in pool]
    vecs = [v.array() for v in providers.embed.embed(texts)]
    expected = sorted(
        ((a.asset_id, cosine(vecs[0], v)) for a, v in zip(pool, vecs[1:])),
        key=lambda t: (-t[1], t[0]),
    )
    assert [a for a, _ in result.ranked] == [a for a, _ in expected]
    assert np.allclose([s for _, s in result.ranked], [s for _, s in expected],
                       atol=1e-12)


def test_retrieve_scores_weakly_decreasing(aux_catalog, providers):
    result = retrieve_top_k(_query(), aux_catalog, providers.embed, k=5)
    scores = [s for _, s in result.ranked]
    assert all(scores[i] >= scores[i + 1] for i in range(len(scores) - 1))


def test_retrieve_empty_pool(small_catalog, providers):
    with pytest.raises(EmptyPool):
        retrieve_top_k(_query(), small_catalog, providers.embed)


class _ScriptedVision:
    is_scripted = True

    def __init__(self, verdicts):
        self.verdicts = list(verdicts)
        self.calls = 0

    def validate_scene_image(self, task_name, task_description,
                             asset_annotations, image_ref=None):
        verdict = self.verdicts[min(self.calls, len(self.verdicts) - 1)]
        self.calls += 1
        return verdict


def test_validate_choice_top1(aux_catalog, providers):
    result = retrieve_top_k(_query(), aux_catalog, providers.embed, k=3)
    vision = _ScriptedVision([VisualVerdict(True, "ok")])
    out = validate_choice(result, make_proposal(), vision, aux_catalog)
    assert out.chosen == result.ranked[0][0]
    assert not out.fallback


def test_validate_choice_walks_to_rank2(aux_catalog, providers):
    result = retrieve_top_k(_query(), aux_catalog, providers.embed, k=3)
    vision = _ScriptedVision([VisualVerdict(False, "no"), VisualVerdict(True, "ok")])
    out = validate_choice(result, make_proposal(), vision, aux_catalog)
    assert out.chosen == result.ranked[1][0]
    assert vision.calls == 2


def test_validate_choice_all_rejected(aux_catalog, providers):
    result = retrieve_top_k(_query(), aux_catalog, providers.embed, k=3)
    vision = _ScriptedVision([VisualVerdict(False, "no")])
    out = validate_choice(result, make_proposal(), vision, aux_catalog)
    assert out.chosen is None
    assert out.fallback


def test_validate_choice_offline_rule(aux_catalog, providers):
    # The rule backend approves the box asset for a "storage box" query.
    result = retrieve_top_k(
        _query(description="a sturdy storage box with a hinged lid"),
        aux_catalog, providers.embed, k=5,
    )
    out = validate_choice(result, make_proposal(), providers.vision, aux_catalog)
    assert out.chosen is not None
    chosen = aux_catalog.assets[out.chosen]
    assert "box" in f"{chosen.name} {chosen.description}"


def test_result_invariants():
    q = _query()
    with pytest.raises(ValidationError):
        RetrievalResult(query=q, ranked=(("a", 0.1), ("b", 0.9)))
    with pytest.raises(ValidationError):
        RetrievalResult(query=q, ranked=(("a", 0.9),), chosen="zzz")
    with pytest.raises(ValidationError):
        AuxiliaryQuery(object_name="", object_description="d", source_proposal="s")
