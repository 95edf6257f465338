"""Command-line front end: ``trackreid <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or contract error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .cadx import evaluate_groupings
from .data import by_procedure, ground_truth, read_manifest, write_manifest
from .encoders import EncoderConfig
from .errors import FormatError, MissingGroundTruthError, ReIDError
from .formats import (
    read_frame_scores,
    read_json,
    read_pairs,
    read_weights,
    write_embeddings,
    write_frame_scores,
    write_json,
    write_pairs,
    write_weights,
)
from .gradsuite import case_names, gradient_suite
from .metrics import f1_scores, fragmentation_report, pr_auc, roc_auc, sensitivity_at_specificity
from .reid import (
    SCORERS,
    GroupingPartition,
    TrackletEmbedder,
    calibrate_threshold,
    empirical_fpr,
    group_dataset,
    oracle_partition,
    score_pairs,
    singleton_partition,
)
from .sampling import filter_tracklets
from .synthetic import SyntheticConfig, generate_dataset, inject_frame_scores, random_class_map
from .train import TrainConfig, train_reid, write_loss_curve

log = logging.getLogger("trackreid")

GRAD_TOL = 1e-6
METRIC_KEYS = ("auroc", "auprc", "fr", "fr_std", "fragmented_ratio", "impurity",
               "f1_macro", "f1_micro", "sens_at_spec", "threshold")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def threads() -> int:
    raw = os.environ.get("REID_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise UsageError(f"REID_THREADS must be a positive integer, got {raw!r}") from exc
    if n < 1:
        raise UsageError(f"REID_THREADS must be a positive integer, got {raw!r}")
    return n


# -- helpers -------------------------------------------------------------------

def _sidecar(weights: str) -> Path:
    return Path(str(weights) + ".json")


def _load_model(weights: str):
    meta = read_json(_sidecar(weights)) if _sidecar(weights).exists() else {}
    cfg = EncoderConfig.from_dict(meta.get("encoder", {}))
    return read_weights(weights), cfg


def _frame_score_arrays(path, tracklets) -> dict[str, np.ndarray]:
    raw = read_frame_scores(path)
    out = {}
    for t in tracklets:
        if t.tracklet_id not in raw:
            continue
        table = raw[t.tracklet_id]
        try:
            out[t.tracklet_id] = np.array([table[int(fi)] for fi in t.frame_index])
        except KeyError as exc:
            raise FormatError(f"{path}: tracklet {t.tracklet_id} has no score for frame {exc}") from exc
    return out


def _report(args, summary: dict, lines: list[str]) -> None:
    for line in lines:
        print(line)
    if getattr(args, "out_json", None):
        write_json(args.out_json, summary)


# -- subcommands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    base = read_json(args.config) if args.config else {}
    overrides = {k: getattr(args, k) for k in ("procedures", "feature_dim", "view_noise",
                                               "observation_noise", "degraded_rate")
                 if getattr(args, k) is not None}
    cfg = SyntheticConfig.from_dict({**base, **overrides, "seed": args.seed})
    tracklets, truth = generate_dataset(cfg)
    write_manifest(args.out, tracklets, labels=not args.no_labels)
    lines = [f"wrote {len(tracklets)} tracklets from {cfg.procedures} procedures "
             f"({len(set(truth.values()))} entities) to {args.out}"]
    if args.frame_scores or args.class_map:
        if not (args.frame_scores and args.class_map):
            raise UsageError("--frame-scores and --class-map go together")
        class_map = random_class_map(truth.values(), args.seed)
        scores = inject_frame_scores(tracklets, class_map, args.separability, args.seed, args.sigma)
        write_frame_scores(args.frame_scores, scores, {t.tracklet_id: t.frame_index for t in tracklets})
        write_json(args.class_map, class_map)
        lines.append(f"wrote frame scores to {args.frame_scores} and class map to {args.class_map}")
    for line in lines:
        print(line)
    return 0


def cmd_train(args) -> int:
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    cfg.seed = args.seed
    for flag, field_name in (("phase1_steps", "phase1_steps"), ("phase2_steps", "phase2_steps"),
                             ("batch", "N"), ("conf_threshold", "conf_threshold"), ("fps", "fps")):
        if getattr(args, flag) is not None:
            setattr(cfg, field_name, getattr(args, flag))
    if args.freeze_backbone:
        cfg.freeze_backbone = True
    tracklets = read_manifest(args.data)
    if not args.no_filter:
        tracklets = filter_tracklets(tracklets, cfg.fps, cfg.min_duration_s, cfg.min_high_conf,
                                     cfg.conf_threshold)
    result = train_reid(tracklets, cfg)
    write_weights(args.out, result.params)
    write_json(_sidecar(args.out), {"encoder": cfg.encoder.to_dict(), "train": cfg.to_dict()})
    if args.loss_curve:
        write_loss_curve(args.loss_curve, result.losses)
    final = result.losses[-1][2] if result.losses else float("nan")
    print(f"trained on {len(tracklets)} tracklets, {len(result.losses)} steps, final loss {final:.4f}")
    print(f"wrote weights to {args.out}")
    return 0


def cmd_embed(args) -> int:
    params, cfg = _load_model(args.weights)
    tracklets = sorted(read_manifest(args.data), key=lambda t: t.tracklet_id)
    emb = TrackletEmbedder(params, cfg)
    vecs = np.stack([emb.embedding(t, args.scorer) for t in tracklets]) if tracklets \
        else np.zeros((0, cfg.embed_dim))
    write_embeddings(args.out, [t.tracklet_id for t in tracklets], vecs)
    print(f"wrote {len(tracklets)} {args.scorer} embeddings of dim {vecs.shape[1]} to {args.out}")
    return 0


def _score_all(tracklets, params, cfg, scorer):
    procs = sorted(by_procedure(tracklets).items())

    def one(item):
        # one embedder per procedure: caches are not shared across threads
        return score_pairs(item[1], TrackletEmbedder(params, cfg), scorer)

    with ThreadPoolExecutor(max_workers=threads()) as pool:
        return [p for chunk in pool.map(one, procs) for p in chunk]


def cmd_score(args) -> int:
    params, cfg = _load_model(args.weights)
    pairs = _score_all(read_manifest(args.data), params, cfg, args.scorer)
    write_pairs(args.out, pairs)
    print(f"scored {len(pairs)} within-procedure pairs with {args.scorer}; wrote {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    pairs = [p for p in read_pairs(args.pairs) if p.label != "unknown"]
    scored = [(p.score, p.label) for p in pairs]
    t = calibrate_threshold(scored, args.target_fpr)
    fpr = empirical_fpr(scored, t)
    summary = {"threshold": t, "target_fpr": args.target_fpr, "fpr": fpr,
               "negatives": sum(p.label == "diff" for p in pairs)}
    _report(args, summary, [f"threshold {t!r} (calibration FPR {fpr:.4f}, target {args.target_fpr})"])
    return 0


def cmd_group(args) -> int:
    if (args.threshold is None) == (args.calibration is None):
        raise UsageError("give exactly one of --threshold or --calibration")
    if args.threshold is not None:
        t = args.threshold
    else:
        cal = read_json(args.calibration)
        if not isinstance(cal, dict) or not isinstance(cal.get("threshold"), (int, float)):
            raise FormatError(f"{args.calibration}: no numeric 'threshold' field")
        t = float(cal["threshold"])
    tracklets = read_manifest(args.data)
    pairs = read_pairs(args.pairs)
    part = group_dataset(tracklets, pairs, t, args.scorer, args.method)
    write_json(args.out, part.to_json())
    print(f"{len(tracklets)} tracklets -> {len(part.groups)} groups at threshold {t!r}; wrote {args.out}")
    return 0


def cmd_eval_reid(args) -> int:
    labelled = read_pairs(args.pairs)
    summary = dict.fromkeys(METRIC_KEYS)
    lines = []
    if args.scores:
        scores = {(p.tracklet_a, p.tracklet_b): p.score for p in read_pairs(args.scores)}
        missing = [(p.tracklet_a, p.tracklet_b) for p in labelled if (p.tracklet_a, p.tracklet_b) not in scores]
        if missing:
            raise FormatError(f"{args.scores}: no score for pairs {missing[:5]}")
        s = np.array([scores[(p.tracklet_a, p.tracklet_b)] for p in labelled if p.label != "unknown"])
    else:
        s = np.array([p.score for p in labelled if p.label != "unknown"])
    y = np.array([p.label == "same" for p in labelled if p.label != "unknown"])
    summary["auroc"], summary["auprc"] = roc_auc(s, y), pr_auc(s, y)
    summary["sens_at_spec"] = sensitivity_at_specificity(s, y, args.min_specificity)[0]
    lines.append(f"pairs {len(y)}  auroc {summary['auroc']:.4f}  auprc {summary['auprc']:.4f}  "
                 f"sensitivity {summary['sens_at_spec']:.4f} at specificity {args.min_specificity}")
    if args.threshold is not None:
        pred = s >= args.threshold
        summary["threshold"] = args.threshold
        summary["f1_macro"], summary["f1_micro"] = f1_scores(pred, y)
        lines.append(f"at threshold {args.threshold!r}: FPR {float(np.mean(pred[~y])) if (~y).any() else 0:.4f}")
    if args.partition:
        if not args.data:
            raise UsageError("--partition needs --data for ground truth")
        tracklets = read_manifest(args.data)
        truth = ground_truth(tracklets)
        if len(truth) != len(tracklets):
            raise MissingGroundTruthError("fragmentation needs every tracklet labelled")
        part = GroupingPartition.from_json(read_json(args.partition))
        before = fragmentation_report(singleton_partition(tracklets), truth)
        rep = fragmentation_report(part, truth)
        summary.update(fr=rep.fr, fr_std=rep.fr_std, fragmented_ratio=rep.fragmented_ratio,
                       impurity=rep.impurity)
        if summary["threshold"] is None:
            summary["threshold"] = part.threshold
        lines.append(f"FR {before.fr:.3f} -> {rep.fr:.3f} (std {rep.fr_std:.3f}, "
                     f"fragmented {rep.fragmented_ratio:.3f}, impure groups {rep.impurity})")
    _report(args, summary, lines)
    return 0


def cmd_eval_cadx(args) -> int:
    tracklets = read_manifest(args.data)
    class_map = {k: int(v) for k, v in read_json(args.class_map).items()}
    scores = _frame_score_arrays(args.frame_scores, tracklets)
    groupings = {"fragmented": singleton_partition(tracklets), "oracle": oracle_partition(tracklets)}
    if args.partition:
        groupings["reid"] = GroupingPartition.from_json(read_json(args.partition))
    report = evaluate_groupings(tracklets, scores, groupings, class_map,
                                decision_threshold=args.decision_threshold,
                                min_specificity=args.min_specificity)
    lines = [f"{'grouping':<12}{'groups':>8}{'FR':>8}{'AUC':>8}{'F1 mac':>8}{'F1 mic':>8}{'sens':>8}"]
    for name in ("fragmented", "reid", "oracle"):
        if name in report:
            r = report[name]
            lines.append(f"{name:<12}{r['tracklets']:>8d}{r['fr']:>8.3f}{r['auc']:>8.4f}"
                         f"{r['f1_macro']:>8.4f}{r['f1_micro']:>8.4f}{r['sens_at_spec']:>8.4f}")
    _report(args, report, lines)
    return 0


def cmd_gradcheck(args) -> int:
    names = [n for arg in args.layers or [] for n in arg.split(",") if n] or None
    unknown = sorted(set(names or []) - set(case_names()))
    if unknown:
        raise UsageError(f"unknown layers {unknown}; choose from {', '.join(case_names())}")
    errors = gradient_suite(seeds=args.seeds, names=names)
    worst = max(errors.values())
    lines = [f"{name:<32} {err:.3e} {'ok' if err < GRAD_TOL else 'FAIL'}" for name, err in errors.items()]
    lines.append(f"max relative error {worst:.3e} over {args.seeds} seeds")
    _report(args, errors, lines)
    return 0 if worst < GRAD_TOL else 2


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trackreid", description="Contrastive tracklet re-identification toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic tracklet manifest")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True, help="manifest path (JSON Lines)")
    g.add_argument("--config", help="JSON file with SyntheticConfig fields")
    g.add_argument("--procedures", type=int)
    g.add_argument("--feature-dim", dest="feature_dim", type=int)
    g.add_argument("--view-noise", dest="view_noise", type=float)
    g.add_argument("--observation-noise", dest="observation_noise", type=float)
    g.add_argument("--degraded-rate", dest="degraded_rate", type=float)
    g.add_argument("--no-labels", action="store_true", help="strip entity ids")
    g.add_argument("--frame-scores", help="also write injected per-frame class scores (CSV)")
    g.add_argument("--class-map", help="where to write the random entity -> class map (JSON)")
    g.add_argument("--separability", type=float, default=0.4)
    g.add_argument("--sigma", type=float, default=0.25)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="two-phase contrastive training")
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="weights file; config goes to <out>.json")
    t.add_argument("--config", help="JSON training config")
    t.add_argument("--phase1-steps", dest="phase1_steps", type=int)
    t.add_argument("--phase2-steps", dest="phase2_steps", type=int)
    t.add_argument("--batch", type=int, help="tracklets per batch (N)")
    t.add_argument("--fps", type=float)
    t.add_argument("--conf-threshold", dest="conf_threshold", type=float)
    t.add_argument("--freeze-backbone", dest="freeze_backbone", action="store_true",
                   help="train only the joint-encoder layers in phase 2")
    t.add_argument("--no-filter", action="store_true", help="skip the duration/confidence filter")
    t.add_argument("--loss-curve", help="CSV of step, loss")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("embed", help="write per-tracklet embeddings")
    e.add_argument("--data", required=True)
    e.add_argument("--weights", required=True)
    e.add_argument("--scorer", choices=("mv_joint", "mv_average"), default="mv_joint")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_embed)

    s = sub.add_parser("score", help="score within-procedure tracklet pairs")
    s.add_argument("--data", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--scorer", choices=SCORERS, default="mv_joint")
    s.add_argument("--out", required=True, help="pair CSV")
    s.set_defaults(func=cmd_score)

    c = sub.add_parser("calibrate", help="threshold at a target false-positive rate")
    c.add_argument("--pairs", required=True, help="labelled pair CSV")
    c.add_argument("--target-fpr", dest="target_fpr", type=float, default=0.05)
    c.add_argument("--out", dest="out_json")
    c.set_defaults(func=cmd_calibrate)

    gr = sub.add_parser("group", help="group tracklets per procedure")
    gr.add_argument("--data", required=True)
    gr.add_argument("--pairs", required=True)
    gr.add_argument("--threshold", type=float)
    gr.add_argument("--calibration", help="JSON written by calibrate")
    gr.add_argument("--scorer", choices=SCORERS, default="mv_joint")
    gr.add_argument("--method", choices=("components", "sequential"), default="components")
    gr.add_argument("--out", required=True, help="partition JSON")
    gr.set_defaults(func=cmd_group)

    er = sub.add_parser("eval-reid", help="pair AUROC/AUPRC and fragmentation")
    er.add_argument("--pairs", required=True, help="labelled pair CSV")
    er.add_argument("--scores", help="pair CSV whose scores replace those in --pairs")
    er.add_argument("--threshold", type=float)
    er.add_argument("--min-specificity", type=float, default=0.9)
    er.add_argument("--partition")
    er.add_argument("--data", help="manifest with ground truth (for --partition)")
    er.add_argument("--out", dest="out_json")
    er.set_defaults(func=cmd_eval_reid)

    ec = sub.add_parser("eval-cadx", help="soft-voting classification per grouping")
    ec.add_argument("--data", required=True)
    ec.add_argument("--frame-scores", required=True)
    ec.add_argument("--class-map", required=True)
    ec.add_argument("--partition", help="ReID partition JSON")
    ec.add_argument("--decision-threshold", type=float, default=0.5)
    ec.add_argument("--min-specificity", type=float, default=0.9)
    ec.add_argument("--out", dest="out_json")
    ec.set_defaults(func=cmd_eval_cadx)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    gc.add_argument("--seeds", type=int, default=20)
    gc.add_argument("--layers", nargs="*", help="case names, space or comma separated (default: all)")
    gc.add_argument("--out", dest="out_json")
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ReIDError, OSError) as exc:
        print(f"trackreid: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
