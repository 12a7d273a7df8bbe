"""Command-line entry point: ``solis generate | train | evaluate``.

Exit codes: 0 success, 2 configuration error, 3 numeric abort, 4 artifact mismatch.
Set ``SOLIS_NUM_THREADS`` to cap BLAS threads.
"""

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import check_compatible, load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .datasets import generate_splits, load_dataset, save_dataset
from .estimator import IPINN, SOLIS
from .evaluation import (canonical_table, evaluate_rollout, portrait_similarity,
                         write_metrics_json, write_portrait_csv, write_rollout_csv,
                         write_table_csv)
from .exceptions import (ArtifactMismatchError, ConfigurationError, NumericalError, ParseError,
                         TrainingAborted, UsageError)
from .losses import TERMS

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISMATCH = 0, 2, 3, 4
THREADS_ENV = "SOLIS_NUM_THREADS"

logger = logging.getLogger("solis")


def _load_config(args):
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


# --- generate -------------------------------------------------------------

def cmd_generate(args):
    cfg = _load_config(args)
    d = cfg.dataset
    train, test = generate_splits(cfg.system, d.n_train, d.n_test, d.n_meas, d.n_coll, d.sigma,
                                  cfg.seed, latent_velocity=d.latent_velocity)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"config_hash": cfg.config_hash()}
    for ds in (train, test):
        path = save_dataset(ds, out / f"{ds.split}.csv", extra=extra)
        print(path)
    return EXIT_OK


# --- train ----------------------------------------------------------------

def _write_log(path, log, lambda_h0=None, decay=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "phase", *TERMS, "total", "lambda_h"])
        n2 = 0
        for epoch, r in enumerate(log):
            lam = ""
            if lambda_h0 is not None:
                if r.phase == 2:
                    n2 += 1
                lam = repr(lambda_h0 * decay ** n2)
            w.writerow([epoch, r.phase, *(repr(getattr(r, t)) for t in TERMS), repr(r.total), lam])


def _model(cfg, baseline):
    if baseline:
        return IPINN(kind=baseline, train_config=cfg.train, seed=cfg.seed,
                     **{k: v for k, v in cfg.estimator_kwargs().items()
                        if k in IPINN._get_param_names()})
    return SOLIS(train_config=cfg.train, seed=cfg.seed, **cfg.estimator_kwargs())


def _checkpoint(cfg, est, dataset, trainer, kind, best=False):
    payload = est.model_payload(best=True) if best else est.model_payload()
    return {"kind": kind, "config": cfg.to_dict(), "config_hash": cfg.config_hash(),
            "dataset_hash": dataset.dataset_hash, "normalization": dataset.normalization.to_dict(),
            **payload, "epoch": trainer.epoch,
            "state": None if best else trainer.state_dict()}


def cmd_train(args):
    cfg = _load_config(args)
    dataset = load_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    est = _model(cfg, args.baseline)
    trainer = est.build_trainer(dataset)
    if args.resume:
        ck = load_checkpoint(args.resume)
        if ck.get("config_hash") != cfg.config_hash():
            raise ArtifactMismatchError("checkpoint was written under a different configuration")
        check_compatible(ck, dataset)
        if ck.get("state") is None:
            raise UsageError("checkpoint carries no training state (best-snapshot files are not resumable)")
        trainer.load_state_dict(ck["state"])

    def periodic(tr, tag):
        est._adopt(tr, dataset)
        save_checkpoint(out / f"checkpoint_{tr.epoch:06d}.json",
                        _checkpoint(cfg, est, dataset, tr, "periodic"))

    solis = not args.baseline
    try:
        if solis:
            trainer.fit(callback=periodic)
        else:
            trainer.fit()
    except TrainingAborted as exc:
        if exc.checkpoint is not None:
            trainer.load_state_dict(exc.checkpoint)
            est._adopt(trainer, dataset)
            save_checkpoint(out / "checkpoint_last_good.json",
                            _checkpoint(cfg, est, dataset, trainer, "last_good"))
        raise
    est._adopt(trainer, dataset)
    lam = (cfg.train.lambda_h0, cfg.train.hint_decay) if solis else (None, None)
    _write_log(out / "training_log.csv", trainer.log, *lam)
    save_checkpoint(out / "checkpoint_final.json", _checkpoint(cfg, est, dataset, trainer, "final"))
    if solis and trainer.best is not None:
        save_checkpoint(out / "checkpoint_best.json",
                        _checkpoint(cfg, est, dataset, trainer, "best", best=True))
    print(out / "checkpoint_final.json")
    return EXIT_OK


# --- evaluate -------------------------------------------------------------

def model_from_checkpoint(ck):
    cfg = ExperimentConfig.from_dict(ck["config"])
    if ck["model"] == "solis":
        est = SOLIS(train_config=cfg.train, seed=cfg.seed, **cfg.estimator_kwargs())
    else:
        est = IPINN(kind=ck["model"], trajectory=ck.get("trajectory", 0), seed=cfg.seed)
    return est.load_payload(ck), cfg


def cmd_evaluate(args):
    ck = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    check_compatible(ck, dataset)
    est, cfg = model_from_checkpoint(ck)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": ck["config_hash"], "dataset_hash": dataset.dataset_hash,
            "model": ck["model"], "which": args.which, "split": dataset.split,
            "epoch": ck.get("epoch")}
    coeff = est.coefficient_fn()
    if args.which == "reconstruction":
        scores = est.reconstruction_scores(dataset)
        write_metrics_json(out / "reconstruction.json", {
            **meta, "accuracy": float(np.mean([s.accuracy for s in scores])),
            "by_channel": {c: float(np.mean([s.accuracy for s in scores if s.channel == c]))
                           for c in sorted({s.channel for s in scores})},
            "scores": [s.to_dict() for s in scores]})
    elif args.which == "rollout":
        res = evaluate_rollout(coeff, dataset)
        for tr, pred in zip(dataset, res.predictions):
            path = out / f"rollout_traj{tr.traj_id}.csv"
            if pred is None:
                write_rollout_csv(path, [], [], [], [])
            else:
                write_rollout_csv(path, pred[0], pred[1], pred[2], tr.y_meas, tr.v_meas)
        write_metrics_json(out / "rollout.json", {
            **meta, "accuracy": res.mean, "diverged": res.diverged,
            "per_trajectory": res.per_trajectory(), "scores": [s.to_dict() for s in res.scores]})
    elif args.which == "portrait":
        if dataset.spec is None:
            raise UsageError("portrait evaluation needs a dataset with a known system spec")
        sim, sur, tru = portrait_similarity(coeff, dataset.spec, dataset.measurement_states())
        write_portrait_csv(out / "portrait.csv", sur, tru, sim)
        write_metrics_json(out / "portrait.json", {**meta, **sim.to_dict()})
    else:
        tables = []
        if dataset.split == "train":
            states = est.reconstruct(dataset)
        else:
            states = [np.column_stack(p[1:]) if p is not None else None
                      for p in evaluate_rollout(coeff, dataset).predictions]
        for tr, st in zip(dataset, states):
            if st is None:
                continue
            table = canonical_table(coeff, tr.t_meas, st[:, 0], st[:, 1], tr.u_meas)
            write_table_csv(out / f"canonical_traj{tr.traj_id}.csv", table)
            tables.append((tr.traj_id, table))
        write_metrics_json(out / "canonical.json", {
            **meta, "source": "reconstruction" if dataset.split == "train" else "rollout",
            "trajectories": {str(j): {"valid_fraction": float(np.mean(t["valid"])),
                                      "mean_k": float(np.mean(t["k"])),
                                      "mean_d": float(np.mean(t["d"])),
                                      "mean_g": float(np.mean(t["g"]))} for j, t in tables}})
    print(out)
    return EXIT_OK


# --- entry point ----------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="solis", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate train/test datasets")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--config", required=True)
    t.add_argument("--dataset", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--baseline", choices=("ipinn", "ipinn-m"))
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--which", required=True,
                   choices=("reconstruction", "rollout", "portrait", "canonical"))
    e.set_defaults(func=cmd_evaluate)
    return p


def _thread_limit():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return None
    from threadpoolctl import threadpool_limits
    try:
        return threadpool_limits(limits=int(n))
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {n!r}") from None


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        limiter = _thread_limit()
        try:
            return args.func(args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except ArtifactMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except (ConfigurationError, ParseError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
