"""Command-line entry point: ``cmtrack <subcommand> [--config FILE] [--seed N] [--out DIR]``.

Datasets are addressed by prefix (``out/test`` for ``out/test.{csv,bin,json}``);
a dataset's feature table defaults to ``<prefix>_features.csv``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import autoencoder as ae
from . import harness as H
from . import store
from .experiment import (STAT_NAMES, ExperimentConfig, aggregate, load_config, run_experiment,
                         simulate, stage, write_search)
from .tracker import MODES


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out(args, cfg) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _table(prefix, features=None):
    data, meta = store.read_dataset(prefix)
    path = features or f"{prefix}_features.csv"
    return store.read_features(path, data), meta


def _ids(text):
    return tuple(s for s in text.split(",") if s) if text else None


def cmd_simulate(args, cfg, out):
    with stage("simulate"):
        _, _, files = simulate(cfg, out, validation=args.validation)
    return files


def cmd_extract(args, cfg, out):
    with stage("extract"):
        model = ae.load(args.ae) if args.ae else None
        files = []
        for prefix in args.dataset:
            data, _ = store.read_dataset(prefix)
            path = out / f"{Path(prefix).name}_features.csv"
            store.write_features(path, H.extract(data, cfg.features, model))
            files.append(path)
    return files


def cmd_train_ae(args, cfg, out):
    with stage("train-ae"):
        data, meta = store.read_dataset(args.dataset)
        ac = cfg.autoencoder or ae.AeConfig(input_dim=meta["L"])
        model = ae.train(ae.init(ac), H.magnitudes(data), ac)
        ae.save(model, out / "ae_model.json", out / "ae_history.csv")
    return [out / "ae_model.json", out / "ae_history.csv"]


def cmd_train_gpr(args, cfg, out):
    with stage("train-gpr"):
        env, _ = cfg.scene()
        table, _ = _table(args.dataset, args.features)
        feats = _ids(args.feature_set) or cfg.feature_set
        if isinstance(feats, str):
            raise H.ConfigError("train-gpr needs explicit feature ids (--feature-set)")
        db = H.build_fingerprint_db(table, env, feats, args.density or cfg.density,
                                    args.radius or cfg.radius)
        models = H.train_gps(db, cfg.gpr, cfg.seed)
        store.write_scalers(out / "scalers.json", db.scalers)
        return [out / "scalers.json", *store.write_models(out / "models", models)]


def cmd_track(args, cfg, out):
    with stage("track"):
        env, _ = cfg.scene()
        table, meta = _table(args.dataset, args.features)
        models = None
        if args.mode == "FUSION":
            if not args.models:
                raise H.ConfigError("FUSION tracking needs --models")
            models = H.cache_models(store.read_models(args.models), env.bounds,
                                    cfg.gpr.field_spacing)
        bundles = H.make_bundles(table, models)
        dt = meta.get("sample_period") or cfg.test.sample_period
        (out / "tracks").mkdir(exist_ok=True)
        files = []
        for r in range(args.repeats or cfg.repeats):
            tc = replace(cfg.tracker, mode=args.mode, rng_seed=H.pf_seed(cfg.seed, r))
            path = out / "tracks" / f"{args.mode}_{r:03d}.csv"
            store.write_track(path, H.track(table, bundles, env.anchors, tc, dt))
            files.append(path)
    return files


def cmd_evaluate(args, cfg, out):
    with stage("evaluate"):
        stats = [H.compute_ape_stats(store.read_track_ape(p)) for p in args.tracks]
        store.write_rows(out / "stats.csv", ("track", *STAT_NAMES),
                         ((Path(p).name, *(getattr(s, k) for k in STAT_NAMES))
                          for p, s in zip(args.tracks, stats)))
        agg = aggregate(stats)
        store.write_rows(out / "aggregate_stats.csv", ("statistic", "mean", "std", "runs"),
                         ((k, *agg[k], len(stats)) for k in STAT_NAMES))
        for k in STAT_NAMES:
            print(f"{k.upper():4s} {agg[k][0]:.3f} m (std {agg[k][1]:.3f})")
    return [out / "stats.csv", out / "aggregate_stats.csv"]


def cmd_gridsearch(args, cfg, out):
    with stage("gridsearch"):
        env, _ = cfg.scene()
        survey, _ = _table(args.survey)
        validation, meta = _table(args.validation)
        cands = _ids(args.candidates) or cfg.search.candidates
        budget = args.budget if args.budget is not None else cfg.search.budget
        result = H.gridsearch_features(
            cands, budget, survey, validation, env,
            dt=meta.get("sample_period") or cfg.test.sample_period, density=cfg.density,
            radius=cfg.radius, gpr_settings=cfg.gpr, tracker=cfg.tracker,
            repeats=cfg.search.repeats, seed=cfg.seed)
        write_search(out / "gridsearch.csv", result)
        b = result.best
        print(f"best {'+'.join(b.features)}: MAE {b.mae:.3f} C95 {b.c95:.3f}"
              + (" (partial)" if result.partial else ""))
    return [out / "gridsearch.csv"]


def cmd_export_field(args, cfg, out):
    with stage("export-field"):
        model = store.read_model(args.model)
        if args.bounds:
            bounds = tuple(float(v) for v in args.bounds.split(","))
        else:
            bounds = cfg.scene()[0].bounds
        grid, fps = H.export_field(model, bounds, args.resolution)
        return store.write_grid(out / f"field_{Path(args.model).stem}.csv", grid, fps)


def cmd_run(args, cfg, out):
    res = run_experiment(cfg, out)
    for m in res.aggregate:
        print(m, "  ".join(f"{k.upper()} {res.mean(m, k):.3f}" for k in STAT_NAMES))
    return res.files


def build_parser() -> argparse.ArgumentParser:
    def global_flags(parser, default):
        # subcommands suppress their defaults so flags given before the subcommand survive
        parser.add_argument("--config", default=default, help="experiment config (JSON)")
        parser.add_argument("--seed", type=int, default=default, help="override the config seed")
        parser.add_argument("--out", default=default,
                            help="output directory (default: config output_dir)")
        parser.add_argument("-v", "--verbose", action="store_true",
                            default=False if default is None else default)

    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="cmtrack", description="Channel-fingerprint tracking experiments.")
    global_flags(p, None)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        sp = sub.add_parser(name, parents=[common], help=help)
        sp.set_defaults(fn=fn)
        return sp

    sp = add("simulate", cmd_simulate, "render survey and test datasets")
    sp.add_argument("--validation", action="store_true", help="also render the validation walk")
    sp = add("extract", cmd_extract, "LOS decisions and features per dataset")
    sp.add_argument("--dataset", nargs="+", required=True, help="dataset prefix(es)")
    sp.add_argument("--ae", help="autoencoder model JSON for latent features")
    sp = add("train-ae", cmd_train_ae, "train the autoencoder on a dataset's magnitudes")
    sp.add_argument("--dataset", required=True)
    sp = add("train-gpr", cmd_train_gpr, "build the fingerprint DB and fit one GP per (anchor, feature)")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--features")
    sp.add_argument("--feature-set", help="comma-separated feature ids")
    sp.add_argument("--density", choices=("full", "sparse"))
    sp.add_argument("--radius", type=float)
    sp = add("track", cmd_track, "run the particle filter over a dataset")
    sp.add_argument("--dataset", required=True)
    sp.add_argument("--features")
    sp.add_argument("--models", help="directory of GP model JSON files")
    sp.add_argument("--mode", choices=MODES, default="FUSION")
    sp.add_argument("--repeats", type=int)
    sp = add("evaluate", cmd_evaluate, "APE statistics of track files")
    sp.add_argument("tracks", nargs="+")
    sp = add("gridsearch", cmd_gridsearch, "rank feature subsets on a validation walk")
    sp.add_argument("--survey", required=True, help="survey dataset prefix")
    sp.add_argument("--validation", required=True, help="validation dataset prefix")
    sp.add_argument("--candidates", help="comma-separated feature ids")
    sp.add_argument("--budget", type=int)
    sp = add("export-field", cmd_export_field, "GP mean/std on a grid plus fingerprint positions")
    sp.add_argument("--model", required=True)
    sp.add_argument("--resolution", type=int, default=50)
    sp.add_argument("--bounds", help="xmin,ymin,xmax,ymax (default: environment bounds)")
    add("run", cmd_run, "whole pipeline from the config")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with stage("config"):
            cfg = _config(args)
            out = _out(args, cfg)
        files = args.fn(args, cfg, out)
    except H.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for f in files:
        logging.getLogger("cmtrack").info("wrote %s", f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
