"""Command-line surface: simulate, fit, predict, summarize.

Every failure path exits nonzero after printing one JSON object to stderr
({"error": <class>, "message": <text>}); successful runs exit 0. Re-running
any command with the same config and seed reproduces its output files
byte for byte.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import dataio
from .errors import DisaggError, NumericalError
from .inference import McmcConfig, diagnostics, run_mcmc
from .model import HETEROGENEOUS, validate_dataset
from .predictive import PredictiveRequest, predictive_draws
from .simulate import generate, get_preset, scenario_truth


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


def cmd_simulate(args):
    scenario = get_preset(args.preset)
    seed = args.seed if args.seed is not None else scenario.seed
    data = generate(scenario, np.random.default_rng(seed))
    out = _outdir(args.out)
    dataio.save_dataset(data, os.path.join(out, "data.csv"),
                        os.path.join(out, "weights.csv"))
    truth = scenario_truth(scenario)
    truth["seed"] = seed
    with open(os.path.join(out, "truth.json"), "w") as fh:
        json.dump(truth, fh, sort_keys=True, indent=1)
        fh.write("\n")
    print(f"wrote data.csv, weights.csv, truth.json to {out}")
    return 0


def _load(args):
    cfg = dataio.load_config(args.config)
    if args.out is not None:
        cfg.output_dir = args.out
    data = dataio.load_dataset(dataio._path(cfg, cfg.observations),
                               dataio._path(cfg, cfg.weights))
    basis, cov_spec, prior, mcmc = dataio.resolve_model(cfg, data)
    if args.seed is not None or getattr(args, "chains", None) is not None:
        kw = dict(n_iter=mcmc.n_iter, burn_in=mcmc.burn_in, thin=mcmc.thin,
                  proposal_sd=mcmc.proposal_sd, seed=mcmc.seed,
                  n_chains=mcmc.n_chains, adapt=mcmc.adapt,
                  proposal_sd_overrides=mcmc.proposal_sd_overrides)
        if args.seed is not None:
            kw["seed"] = args.seed
        if getattr(args, "chains", None) is not None:
            kw["n_chains"] = args.chains
        mcmc = McmcConfig(**kw)
    return cfg, data, basis, cov_spec, prior, mcmc


def cmd_fit(args):
    cfg, data, basis, cov_spec, prior, mcmc = _load(args)
    validate_dataset(data, cov_spec).raise_if_invalid()
    out = _outdir(dataio._path(cfg, cfg.output_dir))
    chains = run_mcmc(data, basis, cov_spec, prior, mcmc)
    dataio.write_draws_csv(chains, os.path.join(out, "draws.csv"))
    if len(chains) >= 2:
        report = diagnostics(chains)
    else:
        from .inference import DiagnosticsReport
        report = DiagnosticsReport(psrf={}, ess={}, flagged=())
    dataio.write_diagnostics_json(
        os.path.join(out, "diagnostics.json"), report, chains,
        eta_sign_ambiguous=(cov_spec.kind == HETEROGENEOUS))
    grid = dataio.summary_grid(cfg, basis)
    dataio.write_summary_csv(os.path.join(out, "summary_alpha.csv"),
                             dataio.summarize_alpha(chains, basis, cov_spec, grid))
    dataio.write_summary_csv(os.path.join(out, "summary_eta.csv"),
                             dataio.summarize_eta(chains, cov_spec, grid))
    print(f"wrote draws.csv, diagnostics.json, summary_alpha.csv, "
          f"summary_eta.csv to {out}")
    return 0


def cmd_summarize(args):
    cfg, data, basis, cov_spec, prior, mcmc = _load(args)
    out = _outdir(dataio._path(cfg, cfg.output_dir))
    chains = dataio.read_draws_csv(os.path.join(out, "draws.csv"), cov_spec,
                                   basis.dimension)
    grid = dataio.summary_grid(cfg, basis)
    dataio.write_summary_csv(os.path.join(out, "summary_alpha.csv"),
                             dataio.summarize_alpha(chains, basis, cov_spec, grid))
    dataio.write_summary_csv(os.path.join(out, "summary_eta.csv"),
                             dataio.summarize_eta(chains, cov_spec, grid))
    print(f"wrote summary_alpha.csv, summary_eta.csv to {out}")
    return 0


def cmd_predict(args):
    cfg, data, basis, cov_spec, prior, mcmc = _load(args)
    out = _outdir(dataio._path(cfg, cfg.output_dir))
    pred = cfg.prediction or {}
    label = str(pred.get("curve_id", (data.labels or ("1",))[0]))
    labels = data.labels or tuple(str(i + 1) for i in range(data.n_curves))
    if label not in labels:
        raise DisaggError(f"prediction curve_id {label!r} not in dataset")
    curve_index = labels.index(label)
    if "grid" in pred:
        new_grid = np.asarray(pred["grid"], dtype=np.float64)
    else:
        n = int(pred.get("n_points", 50))
        new_grid = np.linspace(basis.domain_lo, basis.domain_hi, n)
    chains = dataio.read_draws_csv(os.path.join(out, "draws.csv"), cov_spec,
                                   basis.dimension)
    request = PredictiveRequest(
        data=data, basis=basis, draws=chains, curve_index=curve_index,
        new_grid=new_grid, include_noise=bool(pred.get("include_noise", True)))
    seed = args.seed if args.seed is not None else mcmc.seed
    summary = predictive_draws(request, np.random.default_rng(seed))
    dataio.write_predictive_csv(os.path.join(out, "predictive.csv"), label,
                                summary)
    print(f"wrote predictive.csv to {out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="disagg",
        description="Estimate latent disaggregated mean and covariance curves "
                    "from aggregated functional data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="write a synthetic dataset")
    p_sim.add_argument("--preset", required=True,
                       help="scenario name, e.g. case1_I30")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", default="out")
    p_sim.set_defaults(func=cmd_simulate)

    for name, func, extra in [("fit", cmd_fit, True),
                              ("predict", cmd_predict, False),
                              ("summarize", cmd_summarize, False)]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        if extra:
            p.add_argument("--chains", type=int, default=None)
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except (DisaggError, OSError, ValueError, TypeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
