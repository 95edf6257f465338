import numpy as np
import pytest
from hypothesis import given, strategies as st

from trackreid.errors import ConfigurationError, MissingGroundTruthError
from trackreid.synthetic import SyntheticConfig, generate_dataset, inject_frame_scores, random_class_map


def test_counts():
    tr, truth = generate_dataset(SyntheticConfig(procedures=3, entities_per_procedure=2,
                                                 tracklets_per_entity=(2, 4), seed=5))
    assert 12 <= len(tr) <= 24
    for t in tr:
        assert truth[t.tracklet_id] == t.entity_id
        assert t.entity_id.startswith(t.procedure_id + "-")


def test_noise_free_frames_are_identical():
    cfg = SyntheticConfig(procedures=2, view_noise=0.0, observation_noise=0.0, nuisance_dim=0, seed=1)
    tr, _ = generate_dataset(cfg)
    by_entity = {}
    for t in tr:
        by_entity.setdefault(t.entity_id, []).append(t.features)
    for feats in by_entity.values():
        stacked = np.concatenate(feats)
        assert np.array_equal(stacked, np.broadcast_to(stacked[0], stacked.shape))
    firsts = [f[0][0] for f in by_entity.values()]
    assert all(np.linalg.norm(a - b) > 0 for i, a in enumerate(firsts) for b in firsts[i + 1:])


def test_deterministic():
    cfg = SyntheticConfig(procedures=4, degraded_rate=0.2, seed=3)
    (a, ta), (b, tb) = generate_dataset(cfg), generate_dataset(cfg)
    assert ta == tb
    for x, y in zip(a, b):
        assert x.tracklet_id == y.tracklet_id
        assert np.array_equal(x.features, y.features) and np.array_equal(x.confidence, y.confidence)


def test_more_procedures_extend_the_same_dataset():
    small, _ = generate_dataset(SyntheticConfig(procedures=3, seed=2))
    big, _ = generate_dataset(SyntheticConfig(procedures=5, seed=2))
    for x, y in zip(small, big):
        assert x.tracklet_id == y.tracklet_id and np.array_equal(x.features, y.features)


def test_record_invariants():
    tr, _ = generate_dataset(SyntheticConfig(procedures=5, seed=0))
    for t in tr:
        assert np.all(np.diff(t.frame_index) > 0)
        assert t.features.shape == (len(t), 32)
        assert 20 <= len(t) <= 40
        assert np.all((t.confidence >= 0.3) & (t.confidence <= 1.0))
    # fragments of one procedure never overlap in time
    for p in {t.procedure_id for t in tr}:
        spans = sorted((t.frame_index[0], t.frame_index[-1]) for t in tr if t.procedure_id == p)
        assert all(a[1] < b[0] for a, b in zip(spans, spans[1:]))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SyntheticConfig(tracklets_per_entity=(3, 2))
    with pytest.raises(ConfigurationError):
        SyntheticConfig(view_noise=-1.0)
    with pytest.raises(ConfigurationError):
        SyntheticConfig(degraded_rate=1.0)


def test_config_dict_roundtrip():
    cfg = SyntheticConfig(procedures=7, frames_per_tracklet=(5, 9))
    assert SyntheticConfig.from_dict({k: list(v) if isinstance(v, tuple) else v
                                      for k, v in cfg.to_dict().items()}) == cfg


def _small():
    return generate_dataset(SyntheticConfig(procedures=30, seed=4))


def test_scores_exact_when_noise_free():
    tr, truth = _small()
    cm = random_class_map(truth.values(), 0)
    fs = inject_frame_scores(tr, cm, 1.0, seed=0, sigma=0.0)
    for t in tr:
        assert np.all(fs[t.tracklet_id] == cm[t.entity_id])


def test_scores_label_independent_at_zero_separability():
    tr, truth = _small()
    cm = {e: 1 for e in truth.values()}
    cm0 = {e: 0 for e in truth.values()}
    a, b = inject_frame_scores(tr, cm, 0.0, seed=8), inject_frame_scores(tr, cm0, 0.0, seed=8)
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_scores_class_means():
    tr, truth = _small()
    cm = random_class_map(truth.values(), 1)
    sigma, sep = 0.1, 0.4  # small sigma: clipping at 0/1 is negligible
    fs = inject_frame_scores(tr, cm, sep, seed=2, sigma=sigma)
    for label, mu in ((1, 0.7), (0, 0.3)):
        s = np.concatenate([fs[t.tracklet_id] for t in tr if cm[t.entity_id] == label])
        assert abs(s.mean() - mu) <= 3 * sigma / np.sqrt(len(s))


def test_scores_need_labels():
    tr, _ = _small()
    with pytest.raises(MissingGroundTruthError):
        inject_frame_scores(tr, {}, 0.4, seed=0)


@given(st.integers(0, 1000))
def test_entities_never_shared_across_procedures(seed):
    tr, _ = generate_dataset(SyntheticConfig(procedures=3, frames_per_tracklet=(2, 4), seed=seed))
    owner = {}
    for t in tr:
        assert owner.setdefault(t.entity_id, t.procedure_id) == t.procedure_id
