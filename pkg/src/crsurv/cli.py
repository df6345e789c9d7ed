"""Batch command line: ``crsurv {explore,fit,bma,simulate}``.

Exit codes: 0 success, 2 validation error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .cohort import (
    CohortError,
    CohortMeta,
    detect_separation,
    expand_person_period,
    load_cohort,
    load_schema,
)
from .config import ConfigError, RunConfig, build_config, read_config_file
from .gibbs import PosteriorDraws, run_chain
from .model import ParamBlock, baseline_hazards, cohort_loglik, simulate_cohort
from .model_space import (
    dic,
    full_coefficients,
    mask_label,
    parse_mask,
    psml,
    run_bma,
)
from .np_hazard import cumulative_incidence, np_sub_hazard
from .output import weighted_quantile, write_csv
from .priors import IneligibleModel, check_xtx

logger = logging.getLogger("crsurv")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3
QUANTILES = (0.025, 0.5, 0.975)


def _meta(config: RunConfig, command: str) -> dict[str, object]:
    return {"command": command, "seed": config.seed, "config-sha256": config.fingerprint()}


def _load(config: RunConfig) -> tuple[list, CohortMeta]:
    if config.cohort is None or config.schema is None:
        raise ConfigError("'cohort' and 'schema' are required")
    for path in (config.cohort, config.schema):
        if not Path(path).exists():
            raise ConfigError(f"file not found: {path}")
    meta = load_schema(config.schema)
    return load_cohort(config.cohort, meta), meta


# -- explore ----------------------------------------------------------------

def cmd_explore(config: RunConfig) -> list[Path]:
    records, meta = _load(config)
    curve = np_sub_hazard(records, meta.n_events)
    cif = cumulative_incidence(curve)
    info = _meta(config, "explore")
    out = Path(config.out)
    rows = [(meta.event_labels[r], t, curve.hazard[r, t - 1], curve.risk_set[t - 1],
             curve.events[r, t - 1])
            for r in range(meta.n_events) for t in curve.periods]
    files = [write_csv(out / "hazard.csv", ["event", "period", "hazard", "risk_set", "events"],
                       rows, info)]
    rows = [(meta.event_labels[r], t, cif[r, t - 1])
            for r in range(meta.n_events) for t in curve.periods]
    files.append(write_csv(out / "incidence.csv", ["event", "period", "cumulative_incidence"],
                           rows, info))
    frame = expand_person_period(records, meta, t0=config.t0, mask=np.zeros(meta.k_star, bool))
    rows = [(meta.event_labels[c.event - 1], c.period, c.at_risk)
            for c in detect_separation(frame)]
    files.append(write_csv(out / "separation.csv", ["event", "period", "at_risk"], rows, info))
    return files


# -- fit ----------------------------------------------------------------------

def _coef_names(meta: CohortMeta) -> list[str]:
    return list(meta.column_names)


def _draw_rows(draws: PosteriorDraws, meta: CohortMeta, mask: np.ndarray):
    labels = meta.event_labels
    cols = meta.columns_for(mask)
    for m in range(draws.n_draws):
        for r, lab in enumerate(labels):
            for t in range(draws.delta.shape[2]):
                yield m + 1, "delta", f"{lab}[{t + 1}]", draws.delta[m, r, t]
            for j, c in enumerate(cols):
                yield m + 1, "beta", f"{lab}:{meta.column_names[c]}", draws.beta[m, r, j]
            yield m + 1, "lambda", lab, draws.lam[m, r]
            if cols.size:
                yield m + 1, "log_g", lab, draws.log_g[m, r]
        yield m + 1, "loglik", "cohort", draws.loglik[m]


def _hazard_draws(draws: PosteriorDraws, t0: int) -> np.ndarray:
    """(M, R, t0) baseline hazards at x = 0."""
    periods = np.arange(1, t0 + 1)
    out = np.empty((draws.n_draws, draws.delta.shape[1], t0))
    for m in range(draws.n_draws):
        params = ParamBlock(draws.delta[m], np.zeros((draws.delta.shape[1], 0)))
        out[m] = baseline_hazards(params, periods)[1:]
    return out


def _summary_rows(values: np.ndarray, weights: np.ndarray):
    """mean, sd, q025, median, q975 of a weighted sample."""
    keep = weights > 0
    values, weights = values[keep], weights[keep]
    if np.all(weights == weights[0]):
        mean, sd = float(values.mean()), float(values.std())
    else:
        w = weights / weights.sum()
        mean = float(np.sum(w * values))
        sd = float(np.sqrt(max(np.sum(w * (values - mean) ** 2), 0.0)))
    return (mean, sd, *weighted_quantile(values, weights, QUANTILES))


def _write_posterior_summaries(out: Path, info: dict, meta: CohortMeta, t0: int,
                               coef_draws: np.ndarray, delta_draws: np.ndarray,
                               hazard_draws: np.ndarray, weights: np.ndarray) -> list[Path]:
    """coefficients.csv and hazards.csv from (possibly weighted) pooled draws."""
    rows = []
    for r, lab in enumerate(meta.event_labels):
        for j, name in enumerate(meta.column_names):
            vals = coef_draws[:, r, j]
            p_zero = float(np.sum(weights * (vals == 0)) / weights.sum())
            rows.append((lab, name, *_summary_rows(vals, weights), p_zero))
    files = [write_csv(out / "coefficients.csv",
                       ["event", "coefficient", "mean", "sd", "q025", "median", "q975", "p_zero"],
                       rows, info)]
    rows = []
    for r, lab in enumerate(meta.event_labels):
        for t in range(t0):
            hq = weighted_quantile(hazard_draws[:, r, t], weights, QUANTILES)
            lq = weighted_quantile(delta_draws[:, r, t], weights, QUANTILES)
            rows.append((lab, t + 1, *hq, *lq))
    files.append(write_csv(out / "hazards.csv",
                           ["event", "period", "hazard_q025", "hazard_median", "hazard_q975",
                            "log_odds_q025", "log_odds_median", "log_odds_q975"], rows, info))
    return files


def _mask_index(mask: np.ndarray) -> int:
    return int(sum(1 << j for j, b in enumerate(mask) if b))


def cmd_fit(config: RunConfig, mask: np.ndarray | None = None) -> list[Path]:
    records, meta = _load(config)
    if mask is None:
        try:
            mask = (parse_mask(config.mask, meta.k_star) if config.mask
                    else np.ones(meta.k_star, dtype=bool))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    frame = expand_person_period(records, meta, t0=config.t0, mask=mask)
    if frame.k:
        check_xtx(frame.xtx())
    draws = run_chain(frame, config.prior, config.sampler, model_index=_mask_index(mask))
    info = {**_meta(config, "fit"), "mask": mask_label(mask)}
    out = Path(config.out)
    files = [write_csv(out / "draws.csv", ["draw", "block", "name", "value"],
                       _draw_rows(draws, meta, mask), info)]
    weights = np.ones(draws.n_draws)
    files += _write_posterior_summaries(
        out, info, meta, config.t0, full_coefficients(draws, mask, meta), draws.delta,
        _hazard_draws(draws, config.t0), weights)
    dic_value, p_d = dic(draws.loglik, cohort_loglik(draws.posterior_mean(), frame))
    rows = [("mean_loglik", float(draws.loglik.mean())), ("dic", dic_value), ("p_d", p_d),
            ("log_psml", psml(draws.subject_loglik))]
    rows += [(f"g_acceptance:{lab}", a) for lab, a in zip(meta.event_labels, draws.acceptance)]
    files.append(write_csv(out / "scores.csv", ["criterion", "value"], rows,
                           {**info, "criteria": "DIC plug-in posterior mean; PsML subject-level CPO"}))
    return files


# -- bma ----------------------------------------------------------------------

def cmd_bma(config: RunConfig) -> list[Path]:
    records, meta = _load(config)
    result = run_bma(records, meta, config.t0, config.prior, config.sampler,
                     config.evidence, workers=config.workers)
    info = {**_meta(config, "bma"),
            "criteria": "log-ML stepping-stone; DIC plug-in posterior mean; PsML subject-level CPO"}
    out = Path(config.out)
    rows = []
    for f in result.fits:
        s = f.score
        rows.append((s.index, mask_label(s.mask), int(s.eligible), s.log_ml, s.log_ml_se,
                     s.ti_log_ml, s.dic, s.p_d, s.log_psml,
                     s.log_prior["uniform"], s.probability["uniform"],
                     s.log_prior["binomial-beta"], s.probability["binomial-beta"]))
    files = [write_csv(out / "models.csv",
                       ["model", "mask", "eligible", "log_ml", "log_ml_se", "ti_log_ml", "dic",
                        "p_d", "log_psml", "log_prior_uniform", "prob_uniform",
                        "log_prior_binomial_beta", "prob_binomial_beta"], rows, info)]
    rows = [(name, result.inclusion["uniform"][j], result.inclusion_se["uniform"][j],
             result.inclusion["binomial-beta"][j], result.inclusion_se["binomial-beta"][j])
            for j, name in enumerate(meta.covariate_names)]
    files.append(write_csv(out / "inclusion.csv",
                           ["covariate", "uniform", "uniform_se", "binomial_beta",
                            "binomial_beta_se"], rows, info))

    # conditional-on-inclusion draws, weighted per model-space prior
    rows = []
    fits = [f for f in result.fits if f.draws is not None]
    for f in fits:
        cols = meta.columns_for(f.score.mask)
        n = f.draws.n_draws
        for r, lab in enumerate(meta.event_labels):
            for j, c in enumerate(cols):
                name = meta.column_names[c]
                for m in range(n):
                    rows.append((lab, name, f.score.index,
                                 f.score.probability["uniform"] / n,
                                 f.score.probability["binomial-beta"] / n,
                                 f.draws.beta[m, r, j]))
    files.append(write_csv(out / "coefficient_draws.csv",
                           ["event", "coefficient", "model", "weight_uniform",
                            "weight_binomial_beta", "value"], rows, info))

    # pooled summaries under the configured model-space prior
    choice = config.prior.model_prior
    coef = np.concatenate([full_coefficients(f.draws, f.score.mask, meta) for f in fits])
    delta = np.concatenate([f.draws.delta for f in fits])
    haz = np.concatenate([_hazard_draws(f.draws, config.t0) for f in fits])
    weights = np.concatenate([np.full(f.draws.n_draws, f.score.probability[choice] / f.draws.n_draws)
                              for f in fits])
    files += _write_posterior_summaries(out, {**info, "model_prior": choice}, meta, config.t0,
                                        coef, delta, haz, weights)
    return files


# -- simulate -----------------------------------------------------------------

def _read_params(path: Path) -> tuple[ParamBlock, list[dict], list[str]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        delta = np.array(doc["delta"], dtype=float, ndmin=2)
        covs = doc.get("covariates", [])
        beta = np.array(doc.get("beta", [[] for _ in delta]), dtype=float).reshape(len(delta), -1)
        labels = doc.get("event_labels", [f"event{r + 1}" for r in range(len(delta))])
        if beta.shape[1] != len(covs) or len(labels) != len(delta):
            raise ValueError("beta columns must match covariates; labels must match delta rows")
        for c in covs:
            if c.get("kind", "continuous") not in ("binary", "continuous"):
                raise ValueError(f"covariate {c.get('name')!r}: kind must be binary or continuous")
        return ParamBlock(delta, beta), covs, labels
    except (OSError, KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse params file {path}: {exc}") from exc


def cmd_simulate(config: RunConfig) -> list[Path]:
    if config.params is None:
        raise ConfigError("'params' is required for simulate")
    params, covs, labels = _read_params(config.params)

    def sampler(rng, n):
        cols = []
        for c in covs:
            if c.get("kind", "continuous") == "binary":
                cols.append((rng.random(n) < float(c.get("p", 0.5))).astype(float))
            else:
                cols.append(float(c.get("mean", 0.0)) + float(c.get("sd", 1.0)) * rng.standard_normal(n))
        return np.column_stack(cols) if cols else np.zeros((n, 0))

    records = simulate_cohort(params, sampler, config.n, config.horizon,
                              np.random.default_rng(config.seed))
    out = Path(config.out)
    names = [c["name"] for c in covs]
    rows = [(rec.subject_id, rec.terminal_time, rec.event,
             *[int(v) if c.get("kind") == "binary" else v for v, c in zip(rec.covariates, covs)])
            for rec in records]
    info = _meta(config, "simulate")
    cohort = write_csv(out / "cohort.csv", ["subject_id", "terminal_time", "event", *names],
                       rows, info)
    schema = out / "schema.ini"
    lines = ["[events]"] + [f"{r + 1} = {lab}" for r, lab in enumerate(labels)]
    lines += ["", "[covariates]"] + [f"{c['name']} = {c.get('kind', 'continuous')}" for c in covs]
    schema.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return [cohort, schema]


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crsurv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("explore", "fit", "bma", "simulate"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out", type=Path)
        p.add_argument("--mask")
        p.add_argument("--cohort", type=Path)
        p.add_argument("--schema", type=Path)
        p.add_argument("--params", type=Path)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict[str, object] = read_config_file(args.config) if args.config else {}
    base = Path(args.config).parent if args.config else Path(".")
    for key in ("cohort", "schema", "params"):
        if key in values and not Path(values[key]).is_absolute():
            values[key] = str(base / values[key])
    for key in ("seed", "workers", "out", "mask", "cohort", "schema", "params"):
        value = getattr(args, key)
        if value is not None:
            values[key] = value
    return build_config(values)


COMMANDS = {"explore": cmd_explore, "fit": cmd_fit, "bma": cmd_bma, "simulate": cmd_simulate}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        files = COMMANDS[args.command](config)
    except (ConfigError, CohortError, IneligibleModel) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        logger.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
