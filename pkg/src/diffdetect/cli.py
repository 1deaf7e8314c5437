"""Command-line front end.

Subcommands ``sample``, ``train``, ``roc``, ``arl-edd`` and ``verify`` read a
JSON config (see ``fileio.DEFAULT_CONFIG`` for the schema) and write CSV
tables plus a manifest into ``output_dir``. Exit codes: 0 success, 1 a check
failed, 2 configuration error, 3 numerical-domain error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .detection import estimate_arl, estimate_edd, roc_curves
from .diffusion import ConstantDiffusion, MlpDiffusion, calibrate_scale, gaussian_optimal
from .errors import ArgumentError, ConfigurationError, NumericalDomainError
from .models import build_appendix_models
from .samplers import MhConfig, PairSampler
from .statistics import (DEFAULT_NORM_RATIO_SAMPLES, DiffusionStatistic, FisherStatistic,
                         KLStatistic, norm_ratio_estimate)
from .training import TrainConfig, TrainingData, TrainingDiverged, train
from .verification import SUITE_IDS, SuiteConfig, run_suite, verify_identities

log = logging.getLogger("diffdetect")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
PAPER_SCALE, DESK_SCALE = 10_000, 1000

# seed-sequence tags, one per independent random stream
TAG_TRAIN_INF, TAG_TRAIN_ONE, TAG_TEST_INF, TAG_TEST_ONE = 10, 11, 12, 13
TAG_NORM_RATIO, TAG_ROC, TAG_ZEXPORT = 20, 30, 31
TAG_CALIBRATE, TAG_ARL, TAG_EDD = 40, 41, 42

DATASETS = {"inf_train": TAG_TRAIN_INF, "one_train": TAG_TRAIN_ONE,
            "inf_test": TAG_TEST_INF, "one_test": TAG_TEST_ONE}


class Context:
    """Resolved config plus the objects every command needs."""

    def __init__(self, cfg: dict, paper_scale: bool, threads: int):
        self.cfg = cfg
        self.seed = int(cfg["seed"])
        self.paper_scale = paper_scale
        self.threads = threads
        self.out = Path(cfg["output_dir"])
        self.kind = cfg["model_kind"]
        self.pair = build_appendix_models(self.kind, int(cfg["model_seed"]))
        mh = dict(cfg["mh"])
        if mh["step_size"] is None:
            mh.pop("step_size")
            mh_cfg = MhConfig.for_model(self.kind, **mh)
        else:
            mh_cfg = MhConfig(**mh)
        self.sampler = PairSampler(self.pair, mh_cfg, mh_cfg)

    def rng(self, *tags) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, *tags]))

    def seed_for(self, *tags) -> list[int]:
        return [self.seed, *tags]

    def count(self, value) -> int:
        if value is not None:
            return int(value)
        return PAPER_SCALE if self.paper_scale else DESK_SCALE

    @property
    def data_dir(self) -> Path:
        return self.out / "data"

    @property
    def checkpoint_path(self) -> Path:
        ck = self.cfg["checkpoint"]
        return Path(ck) if ck else self.out / "checkpoint.json"

    def diffusion(self):
        source = self.cfg["diffusion"]
        if source == "identity":
            return ConstantDiffusion.identity(self.pair.d)
        if source == "optimal":
            return gaussian_optimal(self.pair.p_inf.sigma)
        path = self.checkpoint_path
        if not path.exists():
            raise ConfigurationError(f"checkpoint not found: {path}")
        m = fileio.load_checkpoint(path)
        if m.d != self.pair.d:
            raise ConfigurationError(f"checkpoint dimension {m.d} does not match models")
        return m

    def statistics(self, with_norm_ratio: bool = True) -> tuple[list, dict]:
        stats, info = [], {}
        for name in self.cfg["statistics"]:
            if name == "kl":
                log_r = None
                if not (self.pair.p_inf.normalized and self.pair.p_one.normalized):
                    n = int(self.cfg["norm_ratio_samples"] or DEFAULT_NORM_RATIO_SAMPLES)
                    est = norm_ratio_estimate(
                        self.pair, self.sampler.draw_one(n, self.rng(TAG_NORM_RATIO)))
                    log_r = est.log_ratio
                    info["norm_ratio_log"] = est.log_ratio
                    info["norm_ratio_log_se"] = est.std_error
                stats.append(KLStatistic(self.pair, log_r))
            elif name == "fisher":
                stats.append(FisherStatistic(self.pair))
            else:
                stats.append(DiffusionStatistic(self.pair, self.diffusion()))
        return stats, info


# -- commands


def cmd_sample(ctx: Context) -> int:
    sizes = {"train": ctx.cfg["dataset"]["n_train"], "test": ctx.cfg["dataset"]["n_test"]}
    outputs, rates = [], {}
    for name, tag in DATASETS.items():
        which, split = name.split("_")
        draw = ctx.sampler.draw_inf if which == "inf" else ctx.sampler.draw_one
        model_sampler = ctx.sampler.inf if which == "inf" else ctx.sampler.one
        X = draw(sizes[split], ctx.rng(tag))
        if not model_sampler.direct:
            rates[name] = model_sampler.acceptance_rates[-1]
        outputs.append(fileio.write_dataset(ctx.data_dir / f"{name}.csv", X))
    outputs.append(fileio.save_pair(ctx.out / "models.json", ctx.pair))
    mh = ctx.sampler.inf.mh
    fileio.write_manifest(ctx.out, "sample", ctx.cfg, outputs, {
        "sampler": {"method": "direct" if ctx.sampler.inf.direct else "metropolis-hastings",
                    "step_size": mh.step_size, "burn_in": mh.burn_in,
                    "thinning": mh.thinning, "n_chains": mh.n_chains},
        "acceptance_rates": rates})
    return EXIT_OK


def _train_config(ctx: Context) -> tuple[TrainConfig, dict]:
    t = dict(ctx.cfg["train"])
    arch = {"hidden": int(t.pop("hidden")), "output_scale": float(t.pop("output_scale"))}
    if t["lr"] is None:
        t.pop("lr")
    return TrainConfig.for_model(ctx.kind, seed=ctx.seed, **t), arch


def cmd_train(ctx: Context) -> int:
    tcfg, arch = _train_config(ctx)
    d = ctx.pair.d
    data = TrainingData(fileio.read_dataset(ctx.data_dir / "inf_train.csv", d),
                        fileio.read_dataset(ctx.data_dir / "one_train.csv", d))
    m = MlpDiffusion(d, arch["hidden"], arch["output_scale"], seed=ctx.seed)
    ck = ctx.checkpoint_path
    fileio.save_checkpoint(ck, m)

    def on_epoch(rec, model, is_best):
        if is_best:
            fileio.save_checkpoint(ck, model)

    header = ["epoch", "loss", "divergence_term", "penalty_term", "constraint_value"]
    report_path = ctx.out / "train_report.csv"
    try:
        report = train(m, ctx.pair, data, tcfg, on_epoch)
    except TrainingDiverged as exc:
        fileio.write_csv(report_path, header, [[r[h] for h in header] for r in exc.report.rows()])
        raise
    if report.best_params is not None:
        m.set_flat(report.best_params)
    fileio.save_checkpoint(ck, m)
    fileio.write_csv(report_path, header, [[r[h] for h in header] for r in report.rows()])

    # held-out constraint on the test split of the task's penalty model
    stat = DiffusionStatistic(ctx.pair, m)
    extra = {"best_epoch": report.best_epoch}
    test_path = ctx.data_dir / ("inf_test.csv" if tcfg.objective == "cpd" else "one_test.csv")
    if test_path.exists():
        z = stat(fileio.read_dataset(test_path, d))
        sign = 1.0 if tcfg.objective == "cpd" else -1.0
        with np.errstate(over="ignore"):
            extra["heldout_constraint_value"] = float(np.mean(np.exp(sign * z)))
    fileio.write_manifest(ctx.out, "train", ctx.cfg, [ck, report_path], extra)
    return EXIT_OK


def cmd_roc(ctx: Context) -> int:
    stats, info = ctx.statistics()
    n_batches = ctx.count(ctx.cfg["roc"]["n_batches"])
    outputs = []
    for n in ctx.cfg["roc"]["batch_sizes"]:
        curves = roc_curves(stats, ctx.sampler, n, n_batches, seed=ctx.seed_for(TAG_ROC, n))
        rows = [[name, n, p.threshold, p.alpha, p.beta]
                for name, points in curves.items() for p in points]
        outputs.append(fileio.write_csv(ctx.out / "roc" / f"roc_n{n}.csv",
                                        ["statistic", "batch_size", "threshold", "alpha", "beta"],
                                        rows))
    n_export = min(1000, n_batches)
    for which, draw in (("inf", ctx.sampler.draw_inf), ("one", ctx.sampler.draw_one)):
        X = draw(n_export, ctx.rng(TAG_ZEXPORT, 0 if which == "inf" else 1))
        cols = {s.name: s(X) for s in stats}
        names = [k for k in ("kl", "fisher", "diffusion") if k in cols]
        rows = [[i] + [cols[k][i] for k in names] for i in range(n_export)]
        outputs.append(fileio.write_csv(ctx.out / "roc" / f"z_{which}.csv",
                                        ["sample_index"] + [f"z_{k}" for k in names], rows))
    fileio.write_manifest(ctx.out, "roc", ctx.cfg, outputs, {"n_batches": n_batches, **info})
    return EXIT_OK


def cmd_arl_edd(ctx: Context) -> int:
    sec = ctx.cfg["arl_edd"]
    stats, info = ctx.statistics()
    n_paths = ctx.count(sec["n_paths"])
    thresholds = [float(c) for c in sec["thresholds"]]
    scales = {}
    if sec["calibrate"]:
        cal = ctx.sampler.draw_inf(int(sec["calibration_samples"]), ctx.rng(TAG_CALIBRATE))
        for i, s in enumerate(stats):
            if s.name == "kl":
                continue
            m = ConstantDiffusion.identity(ctx.pair.d) if s.name == "fisher" else s.m
            k = calibrate_scale(m, cal, ctx.pair, exact=True)
            scales[s.name] = k
            stats[i] = DiffusionStatistic(ctx.pair, m.scaled(k), name=s.name)
    rows = []
    for s in stats:
        arl = estimate_arl(s, ctx.sampler, thresholds, n_paths, sec["max_len_arl"],
                           ctx.seed_for(TAG_ARL), ctx.threads)
        edd = estimate_edd(s, ctx.sampler, thresholds, n_paths, int(sec["max_len_edd"]),
                           ctx.seed_for(TAG_EDD), ctx.threads)
        for a, e in zip(arl, edd):
            rows.append([s.name, a.threshold, a.mean, a.std_error, a.censored_frac,
                         e.mean, e.std_error])
    path = fileio.write_csv(ctx.out / "arl_edd.csv",
                            ["statistic", "threshold", "arl", "arl_se", "arl_censored_frac",
                             "edd", "edd_se"], rows)
    fileio.write_manifest(ctx.out, "arl-edd", ctx.cfg, [path],
                          {"n_paths": n_paths, "calibration_scales": scales, **info})
    return EXIT_OK


def cmd_verify(ctx: Context, only: str | None) -> int:
    sec = ctx.cfg["verify"]
    trained = None
    if ctx.cfg["checkpoint"]:
        trained = fileio.load_checkpoint(ctx.checkpoint_path)
        if trained.d != ctx.pair.d:
            raise ConfigurationError("checkpoint dimension does not match models")
    suite = SuiteConfig(seed=ctx.seed, n_paths=ctx.count(sec["n_paths"]),
                        identity_samples=int(sec["identity_samples"]), threads=ctx.threads)
    reports = run_suite(suite, only)
    if trained is not None and only in (None, "identities"):
        rep = verify_identities(ctx.pair, trained, int(sec["identity_samples"]), ctx.seed,
                                ctx.sampler)
        rep.theorem = f"identities-{ctx.kind}-checkpoint"
        reports.append(rep)
    outputs = []
    for rep in reports:
        path = ctx.out / "verify" / f"{rep.theorem}.txt"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(rep.to_text(), encoding="utf-8")
        outputs.append(path)
    outputs.append(fileio.write_csv(ctx.out / "verify" / "summary.csv", ["theorem", "pass"],
                                    [[r.theorem, r.status] for r in reports]))
    fileio.write_manifest(ctx.out, "verify", ctx.cfg, outputs)
    for rep in reports:
        print(f"{rep.theorem}: {rep.status}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK


# -- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffdetect", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("sample", "train", "roc", "arl-edd", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for simulations")
        p.add_argument("--paper-scale", action="store_true",
                       help="10,000 paths/batches instead of 1,000 where not set in the config")
        p.add_argument("--output-dir", type=Path, help="override the config output_dir")
        if name == "verify":
            p.add_argument("--only", choices=SUITE_IDS, help="run a single suite item")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.output_dir is not None:
        overrides["output_dir"] = str(args.output_dir)
    try:
        if args.threads < 1:
            raise ConfigurationError("--threads must be at least 1")
        cfg = fileio.load_config(args.config, overrides)
        ctx = Context(cfg, args.paper_scale, args.threads)
        if args.command == "sample":
            return cmd_sample(ctx)
        if args.command == "train":
            return cmd_train(ctx)
        if args.command == "roc":
            return cmd_roc(ctx)
        if args.command == "arl-edd":
            return cmd_arl_edd(ctx)
        return cmd_verify(ctx, args.only)
    except (ConfigurationError, ArgumentError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDomainError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
