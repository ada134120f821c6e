"""Command-line interface: ``zisae estimate | simulate | bootstrap-mse``.

Settings come from an optional YAML/JSON file (``--config``) overridden by
flags. Errors are reported as one JSON object on stderr and mapped to exit
codes 2 (configuration), 3 (data) and 4 (numerical failure).
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__, streams
from .bootstrap import DEFAULT_B, bootstrap_mse
from .data import AREA, RESPONSE, STRATUM, area_means
from .errors import ConfigError, SaeError
from .estimators import TAGS, area_eblup, horvitz_thompson, post_stratified, unit_eblup
from .io import (BOOT_MSE_COLUMNS, BOOT_REPLICATE_COLUMNS, EFFICIENCY_COLUMNS, ESTIMATE_COLUMNS,
                 FAILURE_COLUMNS, METRIC_COLUMNS, REPLICATE_COLUMNS, RESIDUAL_COLUMNS,
                 ensure_writable_dir, estimate_rows, read_population, read_rows, read_sample,
                 write_csv, write_json)
from .mixed import fit_lmm_reml
from .simulation import SIM_DEFAULT_B, SimConfig, relative_efficiency, run_simulation
from .zi import zi_estimate, zi_fit

COMMANDS = ("estimate", "simulate", "bootstrap-mse")

DEVIATION_NOTICES = (
    "unit-level g1 uses gamma_j * sigma2_eps / n_j (standard form); "
    "g1_form='printed' gives gamma_j * sigma2_re / n_j",
    "unit-level g2 uses (Xbar_j - gamma_j xbar_j)' Cov(beta) (Xbar_j - gamma_j xbar_j)",
    "unit-level h uses the inverse information matrix of the variance components (standard "
    "form); h_form='printed' reproduces the entrywise-reciprocal variant",
    "area-level f3 implemented as D^2 (D+s2)^-3 [2 sum (s2+D)^-2]^-1 and the MSE as f1+f2+2f3",
    "bootstrap population linear predictor uses the positive-part coefficients gamma",
    "bootstrap samples may contain negative responses; refits treat nonzero values as positive",
)


@dataclass
class RunConfig:
    command: str
    population: Optional[str] = None
    sample: Optional[str] = None
    out: str = "."
    response: str = RESPONSE
    area: str = AREA
    covariates: Optional[list] = None
    stratum: Optional[str] = None
    estimators: Optional[list] = None
    seed: Optional[int] = None
    workers: int = 1
    boot_reps: Optional[int] = None
    sim_reps: int = 1000
    proportion: float = 0.03
    min_n: int = 2
    bootstrap: bool = False
    residuals: bool = False
    replicates: bool = False
    h_form: str = "standard"
    g1_form: str = "standard"

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not self.population:
            raise ConfigError("--population is required")
        if self.command in ("estimate", "bootstrap-mse") and not self.sample:
            raise ConfigError("--sample is required for this command")
        if self.estimators is not None:
            bad = [e for e in self.estimators if e not in TAGS]
            if bad or not self.estimators:
                raise ConfigError(f"unknown estimator(s) {bad}; choose from {list(TAGS)}")
        if self.workers is None or self.workers < 1:
            raise ConfigError("--workers must be at least 1")
        if self.boot_reps is not None and self.boot_reps < 1:
            raise ConfigError("--boot-reps must be at least 1")
        if self.h_form not in ("standard", "printed") or self.g1_form not in ("standard", "printed"):
            raise ConfigError("h_form and g1_form must be 'standard' or 'printed'")
        if self.seed is not None and not (0 <= self.seed < 2 ** 63):
            raise ConfigError("--seed must be a nonnegative 63-bit integer")
        if self.command == "simulate":
            SimConfig(K=self.sim_reps, proportion=self.proportion, min_n=self.min_n,
                      B=self.boot_reps or SIM_DEFAULT_B)
        for path in (self.population, self.sample):
            if path and not Path(path).is_file():
                raise ConfigError(f"input file {path} not found")


def _split_list(v):
    if v is None or isinstance(v, list):
        return v
    return [s.strip() for s in str(v).split(",") if s.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="zisae", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"zisae {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML or JSON file with default settings")
        p.add_argument("--population")
        p.add_argument("--sample")
        p.add_argument("--out")
        p.add_argument("--estimators", help="comma-separated subset of " + ",".join(TAGS))
        p.add_argument("--covariates", help="comma-separated covariate columns")
        p.add_argument("--response")
        p.add_argument("--area")
        p.add_argument("--stratum")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--boot-reps", type=int)
        p.add_argument("--sim-reps", type=int)
        p.add_argument("--proportion", type=float)
        p.add_argument("--min-n", type=int)
        p.add_argument("--h-form", choices=("standard", "printed"))
        p.add_argument("--g1-form", choices=("standard", "printed"))
        p.add_argument("--bootstrap", action="store_true", default=None,
                       help="estimate: attach bootstrap MSE to ZI rows")
        p.add_argument("--residuals", action="store_true", default=None,
                       help="estimate: write residuals.csv")
        p.add_argument("--replicates", action="store_true", default=None,
                       help="write replicate-level output")
    return parser


def load_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def resolve_config(args) -> RunConfig:
    known = {f.name for f in fields(RunConfig)} - {"command"}
    values = {}
    if args.config:
        file_values = load_config_file(args.config)
        unknown = sorted(set(file_values) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {unknown}")
        values.update(file_values)
    for k, v in vars(args).items():
        if k in known and v is not None:
            values[k] = v
    values["covariates"] = _split_list(values.get("covariates"))
    values["estimators"] = _split_list(values.get("estimators"))
    try:
        cfg = RunConfig(command=args.command, **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def _check_header(path, cfg, *, need_response):
    rows = read_rows(path)
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    header = set(rows[0])
    needed = [cfg.area] + list(cfg.covariates or [])
    if need_response:
        needed.append(cfg.response)
    if cfg.stratum:
        needed.append(cfg.stratum)
    missing = [c for c in needed if c not in header]
    if missing:
        raise ConfigError(f"{path}: configured column(s) {missing} not found")


def _load(cfg, *, need_sample, need_population_response=False):
    _check_header(cfg.population, cfg, need_response=need_population_response)
    stratum = cfg.stratum or STRATUM
    covs = cfg.covariates
    if covs is None:
        header = list(read_rows(cfg.population)[0])
        covs = [c for c in header if c not in (cfg.area, cfg.response, stratum)]
    pop = read_population(cfg.population, covs, area=cfg.area, response=cfg.response,
                          stratum=stratum)
    sample = None
    if need_sample:
        _check_header(cfg.sample, cfg, need_response=True)
        sample = read_sample(cfg.sample, covs, area=cfg.area, response=cfg.response,
                             stratum=stratum, strata_levels=pop.stratum_levels)
        sample.codes_in(pop.area_ids)  # every sample area must be a population area
    return pop, sample


def _sizes(sample, pop):
    return np.bincount(sample.codes_in(pop.area_ids), minlength=pop.J)


def _base_log(cfg, seed, generated):
    d = asdict(cfg)
    d["seed"] = seed
    return {
        "version": __version__,
        "command": cfg.command,
        "config": d,
        "seed_generated": generated,
        "seeds": streams.describe(seed),
        "deviation_notices": list(DEVIATION_NOTICES),
    }


def cmd_estimate(cfg: RunConfig, seed: int, log: dict):
    pop, sample = _load(cfg, need_sample=True)
    out = Path(cfg.out)
    Xbar = area_means(pop)
    selected = [t for t in TAGS if t in (cfg.estimators or TAGS)]
    if "PS" in selected and not (pop.has_strata and sample.has_strata):
        if cfg.estimators is not None:
            raise ConfigError("PS selected but population or sample has no stratum column")
        selected.remove("PS")
    results, fit_logs, residual_rows = {}, {}, []
    ht = horvitz_thompson(sample)
    for tag in selected:
        if tag == "HT":
            results[tag] = ht
        elif tag == "PS":
            results[tag] = post_stratified(sample, Xbar)
        elif tag == "AEBLUP":
            results[tag], fh = area_eblup(ht, Xbar, return_fit=True)
            fit_logs[tag] = {"fit": fh.fit_log.to_dict(), "sigma2_re": fh.sigma2_re,
                             "beta": fh.beta.tolist()}
        elif tag == "UEBLUP":
            lmm = fit_lmm_reml(sample.y, sample.design(), sample.area_labels, pop.area_ids)
            results[tag] = unit_eblup(sample, Xbar, fit=lmm, h_form=cfg.h_form,
                                      g1_form=cfg.g1_form)
            fit_logs[tag] = {"fit": lmm.fit_log.to_dict(), "sigma2_re": lmm.sigma2_re,
                             "sigma2_eps": lmm.sigma2_eps, "beta": lmm.beta.tolist()}
            if cfg.residuals:
                res = lmm.residuals(sample.y, sample.design(), sample.area_labels)
                fitted = sample.y - res
                residual_rows += [("UEBLUP", sample.area_ids[sample.codes[i]], i, fitted[i], res[i])
                                  for i in range(sample.N)]
        elif tag == "ZI":
            fit = zi_fit(sample, pop.area_ids)
            est = zi_estimate(fit, pop)
            fit_logs[tag] = fit.fit_logs()
            if cfg.bootstrap or cfg.boot_reps is not None:
                B = cfg.boot_reps or DEFAULT_B
                boot = bootstrap_mse(fit, pop, _sizes(sample, pop), B=B, seed=seed,
                                     workers=cfg.workers, keep_replicates=False)
                est = [type(e)(e.area, e.estimate, float(m), e.estimator_tag, e.n_used,
                               e.flags + boot.flags) for e, m in zip(est, boot.mse)]
                fit_logs[tag]["bootstrap"] = {"B": B, "n_success": boot.n_success,
                                              "n_failed": boot.n_failed,
                                              "n_fallback": boot.n_fallback}
            results[tag] = est
            if cfg.residuals and fit.positive_model is not None:
                pm = fit.positive_model
                idx = np.flatnonzero(sample.y != 0)
                pos = sample.take(idx)
                res = pm.residuals(pos.y, pos.design(), pos.area_labels)
                residual_rows += [("ZI_positive", pos.area_ids[pos.codes[k]], int(idx[k]),
                                   pos.y[k] - res[k], res[k]) for k in range(pos.N)]
    rows = [r for tag in selected for r in estimate_rows(results[tag])]
    write_csv(out / "estimates.csv", ESTIMATE_COLUMNS, rows)
    ref = "PS" if "PS" in results else ("HT" if "HT" in results else None)
    eff_rows = []
    if ref is not None:
        ref_mse = {e.area: (np.nan if e.mse is None else e.mse) for e in results[ref]}
        for tag in ("AEBLUP", "UEBLUP", "ZI"):
            if tag not in results:
                continue
            for e in results[tag]:
                m = np.nan if e.mse is None else e.mse
                eff_rows.append((e.area, tag, ref,
                                 float(relative_efficiency(m, ref_mse.get(e.area, np.nan)))))
    write_csv(out / "efficiency.csv", EFFICIENCY_COLUMNS, eff_rows)
    if cfg.residuals:
        write_csv(out / "residuals.csv", RESIDUAL_COLUMNS, residual_rows)
    log["fit_logs"] = fit_logs
    log["flags"] = {tag: {e.area: list(e.flags) for e in results[tag] if e.flags}
                    for tag in selected}


def cmd_simulate(cfg: RunConfig, seed: int, log: dict):
    pop, _ = _load(cfg, need_sample=False, need_population_response=True)
    out = Path(cfg.out)
    estimators = tuple(cfg.estimators or TAGS)
    if "PS" in estimators and not pop.has_strata:
        if cfg.estimators is not None:
            raise ConfigError("PS selected but the population has no stratum column")
        estimators = tuple(e for e in estimators if e != "PS")
    sim = SimConfig(K=cfg.sim_reps, proportion=cfg.proportion, min_n=cfg.min_n,
                    estimators=estimators, seed=seed,
                    B=cfg.boot_reps or SIM_DEFAULT_B, workers=cfg.workers)
    report = run_simulation(pop, sim)
    write_csv(out / "metrics.csv", METRIC_COLUMNS, report.long_rows())
    write_csv(out / "failures.csv", FAILURE_COLUMNS, report.failures)
    if cfg.replicates:
        write_csv(out / "replicates.csv", REPLICATE_COLUMNS, report.replicate_rows())
    log["simulation"] = {"K": sim.K, "proportion": sim.proportion, "min_n": sim.min_n,
                         "B": sim.B, "estimators": list(sim.estimators),
                         "sample_sizes": dict(zip(pop.area_ids, report.sample_sizes.tolist())),
                         "n_failures": len(report.failures)}
    log["flags"] = [list(f) for f in report.metric_flags]


def cmd_bootstrap_mse(cfg: RunConfig, seed: int, log: dict):
    pop, sample = _load(cfg, need_sample=True)
    out = Path(cfg.out)
    B = cfg.boot_reps or DEFAULT_B
    fit = zi_fit(sample, pop.area_ids)
    est = zi_estimate(fit, pop)
    boot = bootstrap_mse(fit, pop, _sizes(sample, pop), B=B, seed=seed, workers=cfg.workers,
                         keep_replicates=cfg.replicates)
    rows = [(e.area, e.estimate, m, B, boot.n_success, boot.n_failed, e.flags + boot.flags)
            for e, m in zip(est, boot.mse)]
    write_csv(out / "bootstrap_mse.csv", BOOT_MSE_COLUMNS, rows)
    if cfg.replicates:
        reps = [(b, a, boot.replicate_estimates[b, j])
                for b in range(B) for j, a in enumerate(pop.area_ids)]
        write_csv(out / "replicates.csv", BOOT_REPLICATE_COLUMNS, reps)
    log["fit_logs"] = {"ZI": fit.fit_logs()}
    log["bootstrap"] = {"B": B, "n_success": boot.n_success, "n_failed": boot.n_failed,
                        "n_fallback": boot.n_fallback, "failures": boot.failures,
                        "synthetic_means": dict(zip(pop.area_ids, boot.synthetic_means.tolist()))}
    log["flags"] = {e.area: list(e.flags + boot.flags) for e in est if e.flags or boot.flags}


HANDLERS = {"estimate": cmd_estimate, "simulate": cmd_simulate, "bootstrap-mse": cmd_bootstrap_mse}


def _fail(exc, code):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        cfg = resolve_config(args)
        ensure_writable_dir(cfg.out)
    except SaeError as exc:
        return _fail(exc, exc.exit_code)
    except OSError as exc:
        return _fail(exc, ConfigError.exit_code)
    generated = cfg.seed is None
    seed = streams.fresh_seed() if generated else cfg.seed
    if generated:
        print(f"seed: {seed}")
    log = _base_log(cfg, seed, generated)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            HANDLERS[cfg.command](cfg, seed, log)
        log["warnings"] = [str(w.message) for w in caught]
    except SaeError as exc:
        return _fail(exc, exc.exit_code)
    except ValueError as exc:
        return _fail(exc, ConfigError.exit_code)
    write_json(Path(cfg.out) / "run_log.json", log)
    return 0


if __name__ == "__main__":
    sys.exit(main())
