import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from provhunt.denoise import RawCti
from provhunt.errors import InvalidInputError
from provhunt.estimators import (
    ActivitySubgraphSampler,
    CtiCorpusFilter,
    CtiDenoiser,
    GraphTextAligner,
    ReportSynthesizer,
    ThreatHunter,
)
from provhunt.graph import EntityKind
from provhunt.hunting import MatchDecision
from provhunt.synthetic import make_audit_records
from provhunt.validation import check_random_state, check_reports, check_subgraphs

SMALL = dict(d=8, heads=2, text_layers=1, fusion_layers=1, max_len=64, epochs=2, warmup_epochs=0, batch_size=4)


@pytest.mark.parametrize("est", [
    ActivitySubgraphSampler(min_nodes=8, random_state=3), ReportSynthesizer(max_concurrency=2),
    CtiCorpusFilter(), CtiDenoiser(), GraphTextAligner(d=16, epochs=3), ThreatHunter(k=5, lam=0.3),
])
def test_params_roundtrip_through_clone(est):
    params = est.get_params()
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(**params)
    assert est.get_params() == params


def test_sampler_fit_transform(graph200, subgraphs200):
    est = ActivitySubgraphSampler(random_state=0)
    with pytest.raises(NotFittedError):
        est.transform(graph200)
    out = est.fit(graph200).transform(graph200)
    assert [s.graph_id for s in out] == [s.graph_id for s in subgraphs200]
    assert est.stats_.emitted == len(out)
    assert all({e.kind for e in s.entities.values()} == set(EntityKind) for s in out)


def test_sampler_accepts_raw_records():
    recs = make_audit_records(300, seed=1)
    out = ActivitySubgraphSampler(random_state=7).fit_transform(recs)
    assert out and all(10 <= len(s) <= 20 for s in out)
    with pytest.raises(InvalidInputError):
        ActivitySubgraphSampler().fit_transform("not records")


def test_synth_and_text_estimators(subgraphs200):
    pairs = ReportSynthesizer().fit_transform(subgraphs200[:3])
    assert [p.graph for p in pairs] == subgraphs200[:3]
    kept = CtiCorpusFilter().fit_transform(["Beacon to 10.0.0.1 enabled lateral movement.", "Great webinar!"])
    assert [r.body for r in kept] == ["Beacon to 10.0.0.1 enabled lateral movement."]
    den = CtiDenoiser().fit_transform([RawCti("a", "", "see https://x.y/z now")])
    assert den[0].id == "a" and "https" not in den[0].body
    with pytest.raises(InvalidInputError):
        CtiDenoiser().transform([42])


def test_corpus_filter_custom_rules():
    est = CtiCorpusFilter(rules=["ioc:zzz\\d", "ttp:beacon"]).fit()
    assert [r.body for r in est.transform(["zzz1 beacon", "zzz1 only", "beacon only"])] == ["zzz1 beacon"]


def test_aligner_and_hunter(pairs, tmp_path):
    aligner = GraphTextAligner(**SMALL)
    with pytest.raises(NotFittedError):
        aligner.transform([pairs[0].graph])
    aligner.fit(pairs)
    assert len(aligner.loss_log_) == 2
    z = aligner.transform([p.graph for p in pairs])
    assert z.shape == (len(pairs), 8) and np.isfinite(z).all()
    assert aligner.embed_texts(["a b"]).shape == (1, 8)

    aligner.save(tmp_path / "m.ckpt")
    back = GraphTextAligner.from_checkpoint(tmp_path / "m.ckpt")
    assert back.d == 8 and np.array_equal(back.transform([pairs[0].graph]), z[:1])

    hunter = ThreatHunter(model=aligner, k=3)
    with pytest.raises(NotFittedError):
        hunter.predict([pairs[0].graph])
    hunter.fit({p.pair_id: p.report for p in pairs})
    out = hunter.predict([p.graph for p in pairs[:2]])
    assert all(isinstance(d, MatchDecision) for d in out) and len(out) == 2
    assert all(len(d.candidates) == 3 for d in out)


def test_hunter_needs_model():
    with pytest.raises(InvalidInputError):
        ThreatHunter().fit({"r": "text"})


def test_aligner_deterministic(pairs):
    a = GraphTextAligner(**SMALL).fit(pairs).transform([pairs[0].graph])
    b = GraphTextAligner(**SMALL).fit(pairs).transform([pairs[0].graph])
    assert np.array_equal(a, b)


# -- validation helpers --------------------------------------------------------

def test_check_random_state():
    g = np.random.default_rng(0)
    assert check_random_state(g) is g
    assert check_random_state(5).integers(1 << 30) == np.random.default_rng(5).integers(1 << 30)
    assert isinstance(check_random_state(None), np.random.Generator)
    for bad in (-1, 1.5, "x"):
        with pytest.raises(InvalidInputError):
            check_random_state(bad)


def test_check_reports():
    assert check_reports({"a": "x", "b": "y"}) == (["a", "b"], ["x", "y"])
    assert check_reports([1, 2], ["x", "y"]) == (["1", "2"], ["x", "y"])
    for args in (([1], ["x", "y"]), ({},), (["a", "a"], ["x", "y"]), (["a"], ["  "]), (["a"],)):
        with pytest.raises(InvalidInputError):
            check_reports(*args)


def test_check_subgraphs(subgraphs200):
    sg = subgraphs200[0]
    assert check_subgraphs(sg) == [sg]
    assert check_subgraphs([sg.to_dict()])[0].to_dict() == sg.to_dict()
    assert check_subgraphs([], allow_empty=True) == []
    with pytest.raises(InvalidInputError):
        check_subgraphs([])
    with pytest.raises(InvalidInputError):
        check_subgraphs(["nope"])
