"""``sglanet`` command-line entry point.

Commands::

    sglanet train --data ROOT --out DIR [--config F] [--preset P] [--seed N] [--gamma1 G] [--gamma2 G]
    sglanet eval CHECKPOINT --data ROOT [--split S] [--config F]
    sglanet gradcheck [--scope S] [--seed N]
    sglanet visualize CHECKPOINT IMAGE --out DIR [--config F]
    sglanet inspect-checkpoint CHECKPOINT

Records go to stdout as one JSON object per line; diagnostics go to stderr.
Exit codes: 0 success, 1 failed gradient check, 2 configuration error
(including bad flags), 3 data error, 4 checkpoint error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import checkpoint, config, data, plotting, verification
from .errors import CheckpointError, ConfigError, DataError
from .network import LossWeights, SGLANet
from .tensor import Tensor, no_grad
from .train import SGDState, evaluate, lr_schedule, metric_record, train_epoch
from .transformer import affine_params

log = logging.getLogger("sglanet")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 1, 2, 3, 4
CONFIG_NAME = "config.txt"


class _Parser(argparse.ArgumentParser):
    """Argument errors are configuration errors."""

    def error(self, message):
        raise ConfigError(message)


def _emit(record: dict) -> None:
    print(json.dumps(record), flush=True)


def _overrides(args) -> dict:
    out = {}
    for key in ("seed", "gamma1", "gamma2"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


def _config_for_checkpoint(args) -> config.Config:
    """Explicit ``--config``, else the ``config.txt`` written next to the checkpoint by ``train``."""
    path = args.config
    if path is None:
        beside = Path(args.checkpoint).parent / CONFIG_NAME
        path = beside if beside.exists() else None
    return config.load(path, getattr(args, "preset", None), _overrides(args))


def _restore(cfg: config.Config, path) -> SGLANet:
    model = SGLANet(cfg.model, seed=cfg.train.seed)
    checkpoint.assign(model.parameters(), checkpoint.load(path))
    return model


def run_train(args) -> int:
    cfg = config.load(args.config, args.preset, _overrides(args))
    if args.data is None:
        raise DataError("train needs --data ROOT")
    index = data.load_dataset(args.data, seed=cfg.train.seed)
    if len(index.classes) != cfg.model.classes:
        log.info("dataset has %d classes; overriding classes=%d", len(index.classes), cfg.model.classes)
        cfg.model.classes = len(index.classes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_NAME).write_text(config.dump(cfg))

    t, m = cfg.train, cfg.model
    train_x, train_y = data.load_split(index, "train", m.resolution, t.mean, t.std)
    val_x, val_y = data.load_split(index, "val", m.resolution, t.mean, t.std)
    if len(train_y) == 0:
        raise DataError(f"no training images under {args.data}")
    if len(val_y) == 0:
        log.warning("validation split is empty; best.sgla is chosen by training top-1")

    model = SGLANet(m, seed=t.seed)
    rng = np.random.default_rng(t.seed)
    state = SGDState(lr=t.lr, momentum=t.momentum)
    weights = LossWeights(t.gamma1, t.gamma2)
    records: List[dict] = []
    best = -1.0
    with (out / "metrics.jsonl").open("w") as sink:
        for epoch in range(t.epochs):
            summary = train_epoch(model, train_x, train_y, state, t, epoch, rng, weights)
            lr = lr_schedule(epoch, t)
            lines = [metric_record(epoch + 1, "train", summary.report, lr)]
            score = summary.report.top1
            if len(val_y):
                val = evaluate(model, val_x, val_y, weights=weights)
                lines.append(metric_record(epoch + 1, "val", val, lr))
                score = val.top1
            for rec in lines:
                sink.write(json.dumps(rec) + "\n")
                _emit(rec)
            sink.flush()
            records.extend(lines)
            state_now = model.state()
            if (epoch + 1) % t.checkpoint_every == 0 or epoch + 1 == t.epochs:
                checkpoint.save(out / f"epoch-{epoch + 1}.sgla", state_now)
            if score > best:
                best = score
                checkpoint.save(out / "best.sgla", state_now)
    plotting.save_curves(out / "curves.png", records)
    return EXIT_OK


def run_eval(args) -> int:
    cfg = _config_for_checkpoint(args)
    model = _restore(cfg, args.checkpoint)
    if args.data is None:
        raise DataError("eval needs --data ROOT")
    index = data.load_dataset(args.data, seed=cfg.train.seed)
    if len(index.classes) != cfg.model.classes:
        raise ConfigError(f"dataset has {len(index.classes)} classes, model has {cfg.model.classes}")
    x, y = data.load_split(index, args.split, cfg.model.resolution, cfg.train.mean, cfg.train.std)
    report = evaluate(model, x, y)
    _emit({"top1": report.top1, "top5": report.top5, "n": report.n})
    return EXIT_OK


def run_gradcheck(args) -> int:
    results = []
    for r in verification.run_suite(args.scope, seed=args.seed or 0):
        results.append(r)
        _emit({"scope": r.scope, "op": r.name, "max_rel_error": r.error, "seconds": round(r.seconds, 3),
               "pass": r.passed})
    failed = verification.failures(results)
    for r in failed:
        print(f"gradient check failed: {r.scope}/{r.name} error {r.error:.3e} > {verification.TOLERANCE:g}",
              file=sys.stderr)
    return EXIT_VERIFY if failed else EXIT_OK


def run_visualize(args) -> int:
    cfg = _config_for_checkpoint(args)
    model = _restore(cfg, args.checkpoint)
    t, m = cfg.train, cfg.model
    image = data.preprocess(args.image, m.resolution, t.mean, t.std)
    with no_grad():
        out = model(Tensor(image[None]))
    rgb = data.unstandardize(image, t.mean, t.std)
    target = Path(args.out)
    target.mkdir(parents=True, exist_ok=True)
    for s in model.tapped:
        heat = plotting.save_heatmap(target / f"sca-stage{s}.png", rgb, out.attention[s].spatial.data[0, 0])
        regions = affine_params(out.regions[s])[0]
        boxes = plotting.save_regions(target / f"st-stage{s}.png", rgb, regions)
        _emit({"stage": s, "sca": str(heat), "st": str(boxes), "regions": [list(p.as_row()) for p in regions]})
    return EXIT_OK


def run_inspect(args) -> int:
    tensors = checkpoint.load(args.checkpoint)
    for name, arr in tensors.items():
        _emit({"name": name, "shape": list(arr.shape), "count": int(arr.size)})
    _emit({"tensors": len(tensors), "parameters": int(sum(a.size for a in tensors.values()))})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sglanet", description="Global-local attention classifier on a numpy autograd core.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out=False, data_flag=False):
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--preset", choices=("desk", "paper"))
        p.add_argument("--seed", type=int)
        p.add_argument("--gamma1", type=float)
        p.add_argument("--gamma2", type=float)
        if data_flag:
            p.add_argument("--data", metavar="PATH")
        if out:
            p.add_argument("--out", metavar="PATH", required=True)

    p = sub.add_parser("train", help="train and write metrics, checkpoints and curves")
    common(p, out=True, data_flag=True)
    p.set_defaults(run=run_train)

    p = sub.add_parser("eval", help="report top-1/top-5 of a checkpoint on one split")
    p.add_argument("checkpoint")
    common(p, data_flag=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.set_defaults(run=run_eval)

    p = sub.add_parser("gradcheck", help="run the 64-bit gradient-check suites")
    p.add_argument("--scope", choices=("all",) + verification.SCOPES, default="all")
    p.add_argument("--seed", type=int)
    p.set_defaults(run=run_gradcheck)

    p = sub.add_parser("visualize", help="render attention heatmaps and region boxes for one image")
    p.add_argument("checkpoint")
    p.add_argument("image")
    common(p, out=True)
    p.set_defaults(run=run_visualize)

    p = sub.add_parser("inspect-checkpoint", help="list the tensors stored in a checkpoint")
    p.add_argument("checkpoint")
    p.set_defaults(run=run_inspect)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        return args.run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    raise SystemExit(main())
