"""Command-line entry points: gen, train, diarise, score, psi-dump."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .datagen import generate_corpus, load_stats, normalise_features, write_corpus
from .margin_loss import (
    MarginParams,
    decision_regions,
    psi_approx_values,
    psi_values,
    validate_params,
)
from .numerics import ContractError
from .pipeline import (
    RTTMFormatError,
    diarise_meetings,
    load_segments,
    model_embedder,
    read_rttm,
    score_ser,
    write_rttm,
)
from .speaker_net import NetworkConfig, load_checkpoint, save_checkpoint
from .training import TrainConfig, fit, segment_windows

log = logging.getLogger("glmdiar")


class CommandError(Exception):
    pass


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, corpus=replace(cfg.corpus, seed=args.seed),
                      training=replace(cfg.training, seed=args.seed))
    return cfg


def _margins_arg(text):
    try:
        parts = [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected m1,m2,m3 but got {text!r}") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated values, got {text!r}")
    return MarginParams(*parts)


def _normalised(corpus_dir, splits):
    stats = load_stats(Path(corpus_dir) / "stats.json")
    return [normalise_features(s, stats) for s in load_segments(corpus_dir, splits)]


def cmd_gen(args):
    cfg = _config(args)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create output directory {out}: {exc.strerror}") from exc
    corpus = generate_corpus(cfg.corpus)
    write_corpus(corpus, cfg.corpus, out)
    log.info("wrote %d train / %d validation / %d test segments to %s",
             len(corpus.train), len(corpus.validation), len(corpus.test), out)
    return 0


def cmd_train(args):
    cfg = _config(args)
    corpus_dir = Path(args.corpus)
    if not (corpus_dir / "manifest.json").is_file():
        raise CommandError(f"{corpus_dir}: no manifest.json (run `glmdiar gen` first)")
    mcfg = cfg.margins
    margins = args.margins if args.margins is not None else mcfg.params
    report = validate_params(margins)
    if not report.ok:
        raise CommandError(report.describe())
    gating = mcfg.overlap_gating and not args.no_gating
    approx = mcfg.approx_mode or args.approx
    train = _normalised(corpus_dir, {"train"})
    val = _normalised(corpus_dir, {"validation"})
    speakers = sorted({s for seg in train for s in seg.speakers})
    index = {s: i for i, s in enumerate(speakers)}
    val = [seg for seg in val if all(s in index for s in seg.speakers)]
    dim = train[0].frames.shape[1]
    if cfg.network.preset == "small":
        net_cfg = NetworkConfig.small(len(speakers), dim, **cfg.network.overrides())
    elif cfg.network.preset == "full":
        net_cfg = NetworkConfig(num_classes=len(speakers), feature_dim=dim, **cfg.network.overrides())
    else:
        raise CommandError(f"unknown network preset {cfg.network.preset!r}")
    t = cfg.training
    tcfg = TrainConfig(epochs=t.epochs, batch_size=t.batch_size, lr=t.lr, lr_decay=t.lr_decay,
                       lr_decay_every=t.lr_decay_every, warmup_epochs=t.warmup_epochs,
                       margins=margins, eta=mcfg.eta, overlap_gating=gating, approx_mode=approx,
                       window_s=t.window_s, shift_s=t.shift_s, seed=t.seed)
    model, schedule, rep = fit(net_cfg, tcfg, segment_windows(train, index, t.window_s, t.shift_s),
                               segment_windows(val, index, t.window_s, t.shift_s))
    out = Path(args.out)
    extra = {"speakers": speakers, "margins": list(margins.as_tuple()), "eta": schedule.eta,
             "overlap_gating": gating, "approx_mode": approx,
             "window_s": t.window_s, "shift_s": t.shift_s}
    save_checkpoint(out, model, net_cfg, extra)
    metrics = Path(args.metrics) if args.metrics else out.with_name(out.name + ".metrics.csv")
    fields = ["epoch", "lr", "mean_loss", "accuracy", "val_accuracy", "m1", "m2", "m3", "steps"]
    with open(metrics, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rep.as_rows())
    return 0


def cmd_diarise(args):
    cfg = _config(args)
    if not Path(args.model).is_file():
        raise CommandError(f"model file {args.model} does not exist")
    model, net_cfg, extra = load_checkpoint(args.model)
    segments = _normalised(args.corpus, {args.split})
    if not segments:
        raise CommandError(f"no {args.split!r} segments in {args.corpus}")
    hyp = diarise_meetings(segments, model_embedder(model, net_cfg), cfg.clustering.build(),
                           seed=cfg.training.seed, window_s=extra.get("window_s", 2.0),
                           shift_s=extra.get("shift_s", 1.0))
    write_rttm(hyp, args.out)
    return 0


def cmd_score(args):
    ref = read_rttm(args.ref)
    hyp = read_rttm(args.hyp)
    res = score_ser(ref, hyp, args.collar)
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["meeting", "scored_time", "speaker_error_time", "ser"])
    for m, r in res.per_meeting.items():
        out.writerow([m, f"{r.scored_time:.3f}", f"{r.speaker_error_time:.3f}", f"{r.ser:.6f}"])
    out.writerow(["ALL", f"{res.scored_time:.3f}", f"{res.speaker_error_time:.3f}", f"{res.ser:.6f}"])
    return 0


def regions_path(out_csv):
    p = Path(out_csv)
    return p.with_name(p.stem + ".regions" + (p.suffix or ".csv"))


def cmd_psi_dump(args):
    params = MarginParams(args.m1, args.m2, args.m3)
    report = validate_params(params)
    if not report.ok:
        raise CommandError(report.describe())
    if args.grid_points < 2:
        raise CommandError("grid-points must be at least 2")
    theta = np.linspace(0.0, math.pi, args.grid_points)
    exact, k = psi_values(theta, params)
    approx = psi_approx_values(theta, params)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta", "cos", "psi", "psi_approx", "k"])
        for row in zip(theta, np.cos(theta), exact, approx, k):
            w.writerow([f"{row[0]:.12g}", f"{row[1]:.12g}", f"{row[2]:.12g}", f"{row[3]:.12g}", int(row[4])])
    t1, t2, region = decision_regions(params, args.region_points)
    with open(regions_path(args.out), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta1", "theta2", "region"])
        for a, b, r in zip(t1.ravel(), t2.ravel(), region.ravel()):
            w.writerow([f"{a:.9g}", f"{b:.9g}", int(r)])
    band = int(np.sum(region == 0))
    print(f"{params}: margin band covers {band} of {region.size} grid cells")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="glmdiar", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic corpus")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train an embedding network")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="per-epoch CSV (default: <out>.metrics.csv)")
    p.add_argument("--margins", type=_margins_arg, help="override target margins as m1,m2,m3")
    p.add_argument("--no-gating", action="store_true", help="train overlap windows with the margin too")
    p.add_argument("--approx", action="store_true", help="use the k-free approximated psi")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("diarise", help="diarise a corpus split and write RTTM")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diarise)

    p = sub.add_parser("score", help="speaker error rate of a hypothesis RTTM")
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--collar", type=float, default=0.25)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("psi-dump", help="tabulate psi and the two-class decision regions")
    p.add_argument("--m1", type=float, default=1.0)
    p.add_argument("--m2", type=float, default=0.0)
    p.add_argument("--m3", type=float, default=0.0)
    p.add_argument("--grid-points", type=int, default=1001)
    p.add_argument("--region-points", type=int, default=181)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_psi_dump)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, ConfigError, ContractError, RTTMFormatError, OSError, ValueError,
            KeyError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"glmdiar {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
