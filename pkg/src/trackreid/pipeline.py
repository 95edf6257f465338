"""End-to-end synthetic ReID experiment: generate, train, score, calibrate, group."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import TrackletRecord, ground_truth
from .metrics import FragmentationReport, fragmentation_report, pr_auc, roc_auc
from .reid import (
    SCORERS,
    GroupingPartition,
    PairScore,
    TrackletEmbedder,
    calibrate_threshold,
    empirical_fpr,
    group_dataset,
    score_pairs,
    singleton_partition,
)
from .sampling import filter_tracklets
from .synthetic import SyntheticConfig, generate_dataset
from .train import TrainConfig, TrainResult, train_reid

log = logging.getLogger(__name__)


def split_by_procedure(tracklets: list[TrackletRecord], fractions=(0.5, 0.25, 0.25)):
    """Deterministic train / calibration / test split on sorted procedure ids."""
    procs = sorted({t.procedure_id for t in tracklets})
    n_train = int(round(fractions[0] * len(procs)))
    n_cal = int(round(fractions[1] * len(procs)))
    sets = (set(procs[:n_train]), set(procs[n_train:n_train + n_cal]), set(procs[n_train + n_cal:]))
    return tuple([t for t in tracklets if t.procedure_id in s] for s in sets)


@dataclass
class ReidExperiment:
    train_result: TrainResult
    test: list[TrackletRecord]
    calibration: list[TrackletRecord]
    pair_scores: dict[str, list[PairScore]]
    auroc: dict[str, float]
    auprc: dict[str, float]
    threshold: float = float("nan")
    test_fpr: float = float("nan")
    partition: GroupingPartition | None = None
    fr_before: FragmentationReport | None = None
    fr_after: FragmentationReport | None = None
    extra: dict = field(default_factory=dict)

    @property
    def fr_reduction(self) -> float:
        return 1.0 - self.fr_after.fr / self.fr_before.fr


def _labels(pairs: list[PairScore]):
    return np.array([p.score for p in pairs]), np.array([p.label == "same" for p in pairs])


def run_reid_experiment(synth: SyntheticConfig, train_cfg: TrainConfig,
                        split=(0.5, 0.25, 0.25), scorers=SCORERS, target_fpr: float = 0.05,
                        grouping_scorer: str = "mv_joint", method: str = "components"
                        ) -> ReidExperiment:
    tracklets, _ = generate_dataset(synth)
    train_set, cal_set, test_set = split_by_procedure(tracklets, split)
    # labels are never shown to training
    filtered = filter_tracklets(train_set, fps=train_cfg.fps, min_duration_s=train_cfg.min_duration_s,
                                min_high_conf=train_cfg.min_high_conf,
                                conf_threshold=train_cfg.conf_threshold)
    log.info("training on %d filtered tracklets", len(filtered))
    result = train_reid(filtered, train_cfg)
    embedder = TrackletEmbedder(result.params, train_cfg.encoder)
    pair_scores, auroc, auprc = {}, {}, {}
    for sc in scorers:
        pairs = score_pairs(test_set, embedder, sc)
        s, y = _labels(pairs)
        pair_scores[sc] = pairs
        auroc[sc] = roc_auc(s, y)
        auprc[sc] = pr_auc(s, y)
    exp = ReidExperiment(result, test_set, cal_set, pair_scores, auroc, auprc)
    if grouping_scorer:
        cal_pairs = score_pairs(cal_set, embedder, grouping_scorer)
        t = calibrate_threshold([(p.score, p.label) for p in cal_pairs], target_fpr)
        test_pairs = pair_scores.get(grouping_scorer) or score_pairs(test_set, embedder, grouping_scorer)
        exp.threshold = t
        exp.test_fpr = empirical_fpr([(p.score, p.label) for p in test_pairs], t)
        exp.partition = group_dataset(test_set, test_pairs, t, grouping_scorer, method)
        truth = ground_truth(test_set)
        exp.fr_before = fragmentation_report(singleton_partition(test_set), truth)
        exp.fr_after = fragmentation_report(exp.partition, truth)
    return exp
