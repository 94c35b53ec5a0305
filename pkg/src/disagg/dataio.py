"""Data ingestion, run configuration, and result persistence.

File formats (all CSV is RFC-4180, floats carry 17 significant digits so
values round-trip exactly):

  observations CSV  header curve_id,replicate_id,t,y
  weights CSV       header curve_id,category,r,c_weight
  draws CSV         header chain,draw,<beta_c_k...>,<covariance scalars...>
  summary CSV       header category,t,post_mean,q025,q975

Run configuration is a single JSON file; a preset name can stand in for
the basis/covariance sections.
"""

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .basis import equispaced_basis, make_basis
from .errors import DatasetError, SpecError
from .inference import (ChainOutput, McmcConfig, PriorSpec, default_prior,
                        param_names, practical_range_phi_prior)
from .model import (HETEROGENEOUS, HOMOGENEOUS, UNIFORM, CovarianceSpec,
                    make_dataset)
from .simulate import get_preset

_KIND_ALIASES = {
    "uniform": UNIFORM,
    "uniformly_homogeneous": UNIFORM,
    "homogeneous": HOMOGENEOUS,
    "heterogeneous": HETEROGENEOUS,
}


def fmt(x):
    """Float -> text with 17 significant digits (round-trip safe)."""
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# dataset CSV
# ---------------------------------------------------------------------------

def load_dataset(observations_path, weights_path):
    """Parse the observation and weight CSVs into an AggregatedDataset.

    The grid is the sorted set of distinct t values; every
    (curve, replicate) pair must cover it exactly once. All violations
    carry file names and line numbers.
    """
    obs = {}
    curve_order = []
    rep_order = {}
    tset = set()
    with open(observations_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["curve_id", "replicate_id", "t", "y"]:
            raise DatasetError(
                f"{observations_path}:1: expected header "
                f"'curve_id,replicate_id,t,y', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise DatasetError(
                    f"{observations_path}:{lineno}: expected 4 fields, got {len(row)}")
            cid, rid, t_raw, y_raw = row
            try:
                t = float(t_raw)
                y = float(y_raw)
            except ValueError:
                raise DatasetError(
                    f"{observations_path}:{lineno}: non-numeric t or y") from None
            if cid not in rep_order:
                curve_order.append(cid)
                rep_order[cid] = []
            if rid not in rep_order[cid]:
                rep_order[cid].append(rid)
            key = (cid, rid, t)
            if key in obs:
                raise DatasetError(
                    f"{observations_path}:{lineno}: duplicate observation for "
                    f"curve {cid!r}, replicate {rid!r}, t={t_raw}")
            obs[key] = y
            tset.add(t)
    if not obs:
        raise DatasetError(f"{observations_path}: no observation rows")
    grid = np.array(sorted(tset))
    J = len(rep_order[curve_order[0]])
    for cid in curve_order:
        if len(rep_order[cid]) != J:
            raise DatasetError(
                f"{observations_path}: curve {cid!r} has {len(rep_order[cid])} "
                f"replicates, expected {J}")
    I, T = len(curve_order), grid.size
    y = np.empty((I, J, T))
    for i, cid in enumerate(curve_order):
        for j, rid in enumerate(rep_order[cid]):
            for k, t in enumerate(grid):
                key = (cid, rid, float(t))
                if key not in obs:
                    raise DatasetError(
                        f"{observations_path}: ragged grid: curve {cid!r}, "
                        f"replicate {rid!r} missing t={fmt(t)}")
                y[i, j, k] = obs[key]

    weights = {}
    cat_order = []
    with open(weights_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["curve_id", "category", "r", "c_weight"]:
            raise DatasetError(
                f"{weights_path}:1: expected header "
                f"'curve_id,category,r,c_weight', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise DatasetError(
                    f"{weights_path}:{lineno}: expected 4 fields, got {len(row)}")
            cid, cat, r_raw, cw_raw = row
            if cid not in rep_order:
                raise DatasetError(
                    f"{weights_path}:{lineno}: weight row for unknown curve {cid!r}")
            try:
                rv, cwv = float(r_raw), float(cw_raw)
            except ValueError:
                raise DatasetError(
                    f"{weights_path}:{lineno}: non-numeric r or c_weight") from None
            if cat not in cat_order:
                cat_order.append(cat)
            if (cid, cat) in weights:
                raise DatasetError(
                    f"{weights_path}:{lineno}: duplicate weight for curve "
                    f"{cid!r}, category {cat!r}")
            weights[(cid, cat)] = (rv, cwv)
    C = len(cat_order)
    r = np.empty((I, C))
    cw = np.empty((I, C))
    for i, cid in enumerate(curve_order):
        for c, cat in enumerate(cat_order):
            if (cid, cat) not in weights:
                raise DatasetError(
                    f"{weights_path}: missing weights for curve {cid!r}, "
                    f"category {cat!r}")
            r[i, c], cw[i, c] = weights[(cid, cat)]
    return make_dataset(grid=grid, y=y, r=r, c_weights=cw,
                        labels=curve_order, category_labels=cat_order)


def save_dataset(data, observations_path, weights_path):
    """Write a dataset in the canonical order (load round-trips exactly)."""
    labels = data.labels or tuple(str(i + 1) for i in range(data.n_curves))
    cats = data.category_labels or tuple(str(c + 1)
                                         for c in range(data.n_categories))
    with open(observations_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["curve_id", "replicate_id", "t", "y"])
        for i, cid in enumerate(labels):
            for j in range(data.n_replicates):
                for k, t in enumerate(data.grid):
                    w.writerow([cid, str(j + 1), fmt(t), fmt(data.y[i, j, k])])
    with open(weights_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["curve_id", "category", "r", "c_weight"])
        for i, cid in enumerate(labels):
            for c, cat in enumerate(cats):
                w.writerow([cid, cat, fmt(data.r[i, c]), fmt(data.c_weights[i, c])])


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    """Parsed configuration for the fit/predict/summarize commands."""

    observations: str
    weights: str
    output_dir: str
    covariance: str = None
    basis_cfg: dict = None
    eta_basis_cfg: dict = None
    prior_cfg: dict = None
    mcmc_cfg: dict = None
    prediction: dict = None
    summary_points: object = 200
    preset: str = None
    base_dir: str = "."


def load_config(path):
    """Read and structurally validate a JSON run configuration."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: invalid JSON: {exc}") from None
    data = raw.get("data", {})
    if "observations" not in data or "weights" not in data:
        raise SpecError(f"{path}: config needs data.observations and data.weights")
    cfg = RunConfig(
        observations=data["observations"],
        weights=data["weights"],
        output_dir=raw.get("output_dir", "out"),
        covariance=raw.get("covariance"),
        basis_cfg=raw.get("basis"),
        eta_basis_cfg=raw.get("eta_basis"),
        prior_cfg=raw.get("prior"),
        mcmc_cfg=raw.get("mcmc"),
        prediction=raw.get("prediction"),
        summary_points=raw.get("summary_points", 200),
        preset=raw.get("preset"),
        base_dir=os.path.dirname(os.path.abspath(path)))
    if cfg.covariance is not None:
        if cfg.covariance not in _KIND_ALIASES:
            raise SpecError(f"{path}: unknown covariance kind {cfg.covariance!r}")
        cfg.covariance = _KIND_ALIASES[cfg.covariance]
    elif cfg.preset is None:
        raise SpecError(f"{path}: config needs either 'covariance' or 'preset'")
    return cfg


def _path(cfg, p):
    return p if os.path.isabs(p) else os.path.join(cfg.base_dir, p)


def _build_basis(basis_cfg, grid):
    domain = basis_cfg.get("domain")
    if domain is None:
        domain = (float(grid.min()), float(grid.max()))
    if "interior_knots" in basis_cfg:
        return make_basis(basis_cfg["interior_knots"], domain)
    n = int(basis_cfg.get("n_interior", 10))
    return equispaced_basis(n, domain)


def resolve_model(cfg, data):
    """Turn the config plus a loaded dataset into (basis, cov_spec, prior,
    mcmc_config)."""
    C = data.n_categories
    if cfg.preset is not None:
        scenario = get_preset(cfg.preset)
        kind = cfg.covariance or scenario.cov_spec.kind
        basis_cfg = cfg.basis_cfg or {
            "n_interior": 10,
            "domain": [float(scenario.grid.min()), float(scenario.grid.max())]}
        eta_cfg = cfg.eta_basis_cfg
        if kind == HETEROGENEOUS and eta_cfg is None:
            eta_cfg = basis_cfg
    else:
        kind = cfg.covariance
        basis_cfg = cfg.basis_cfg or {"n_interior": 10}
        eta_cfg = cfg.eta_basis_cfg or basis_cfg
    basis = _build_basis(basis_cfg, data.grid)
    eta_basis = _build_basis(eta_cfg, data.grid) if kind == HETEROGENEOUS else None
    cov_spec = CovarianceSpec(kind=kind, num_categories=C, eta_basis=eta_basis)
    prior = _build_prior(cfg.prior_cfg or {}, cov_spec, basis, data.grid)
    mcmc = McmcConfig(**(cfg.mcmc_cfg or {}))
    return basis, cov_spec, prior, mcmc


def _build_prior(pc, cov_spec, basis, grid):
    base = default_prior(cov_spec, basis, grid,
                         beta_var=float(pc.get("beta_var", 100.0)),
                         sigma2_shape=float(pc.get("sigma2_shape", 2.0)),
                         sigma2_rate=float(pc.get("sigma2_rate", 0.2)),
                         theta_var=float(pc.get("theta_var", 100.0)))
    C = cov_spec.num_categories
    phi_shape, phi_rate = None, None
    if "phi_practical_range" in pc:
        pr = pc["phi_practical_range"]
        mean = practical_range_phi_prior(float(pr["dist"]),
                                         float(pr.get("target_corr", 0.05)))
        var = float(pr.get("variance", mean ** 2 / 2.0))
        phi_shape, phi_rate = mean ** 2 / var, mean / var
    if "phi_shape" in pc:
        phi_shape, phi_rate = float(pc["phi_shape"]), float(pc["phi_rate"])
    if phi_shape is None:
        return base
    if cov_spec.kind == UNIFORM:
        return PriorSpec(beta_mean=base.beta_mean, beta_var=base.beta_var,
                         sigma2_shape=base.sigma2_shape,
                         sigma2_rate=base.sigma2_rate,
                         phi_shape=phi_shape, phi_rate=phi_rate)
    return PriorSpec(beta_mean=base.beta_mean, beta_var=base.beta_var,
                     sigma2_shape=base.sigma2_shape,
                     sigma2_rate=base.sigma2_rate,
                     phi_shape=np.full(C, phi_shape),
                     phi_rate=np.full(C, phi_rate),
                     theta_mean=base.theta_mean, theta_var=base.theta_var)


# ---------------------------------------------------------------------------
# results persistence
# ---------------------------------------------------------------------------

def write_draws_csv(chains, path):
    """All retained draws, one row each, prefixed by chain and draw index."""
    names = chains[0].names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "draw"] + list(names))
        for ch in chains:
            for d in range(ch.n_draws):
                w.writerow([str(ch.chain_index), str(d)]
                           + [fmt(v) for v in ch.draws[d]])


def read_draws_csv(path, cov_spec, mean_dim):
    """Rebuild per-chain ChainOutput objects (draws only) from draws.csv."""
    expected = param_names(cov_spec, mean_dim)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["chain", "draw"]:
            raise DatasetError(f"{path}: expected draws header starting "
                               "'chain,draw'")
        if header[2:] != expected:
            raise DatasetError(
                f"{path}: draw columns do not match the configured model "
                f"(expected {len(expected)} parameter columns)")
        by_chain = {}
        for row in reader:
            by_chain.setdefault(int(row[0]), []).append(
                [float(v) for v in row[2:]])
    chains = []
    for idx in sorted(by_chain):
        draws = np.asarray(by_chain[idx])
        chains.append(ChainOutput(
            names=tuple(expected), draws=draws,
            log_posterior=np.full(draws.shape[0], np.nan),
            acceptance_rates={}, proposal_sds={}, seed=-1, chain_index=idx,
            config=None, cov_spec=cov_spec, mean_dim=mean_dim))
    if not chains:
        raise DatasetError(f"{path}: no draws found")
    return chains


def write_diagnostics_json(path, report, chains, eta_sign_ambiguous):
    payload = {
        "psrf": {k: _json_float(v) for k, v in report.psrf.items()},
        "ess": {k: _json_float(v) for k, v in report.ess.items()},
        "flagged": list(report.flagged),
        "acceptance_rates": {
            f"chain_{ch.chain_index}": {k: _json_float(v)
                                        for k, v in ch.acceptance_rates.items()}
            for ch in chains},
        "proposal_sds": {
            f"chain_{ch.chain_index}": {k: _json_float(v)
                                        for k, v in ch.proposal_sds.items()}
            for ch in chains},
        "n_draws_per_chain": chains[0].n_draws,
        "eta_sign_ambiguous": bool(eta_sign_ambiguous),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _json_float(v):
    v = float(v)
    if np.isnan(v):
        return None
    if np.isinf(v):
        return 1e308 if v > 0 else -1e308
    return v


def summary_grid(cfg, basis):
    sp = cfg.summary_points
    if isinstance(sp, (list, tuple)):
        return np.asarray(sp, dtype=np.float64)
    return np.linspace(basis.domain_lo, basis.domain_hi, int(sp))


def curve_draw_matrix(chains, coeff_prefix, n_coeff, eval_matrix, absolute=False):
    """Stack curve values over pooled draws: rows draws, cols grid points."""
    blocks = []
    for ch in chains:
        cols = [ch.names.index(f"{coeff_prefix}_{k + 1}") for k in range(n_coeff)]
        vals = ch.draws[:, cols] @ eval_matrix.T
        blocks.append(vals)
    out = np.vstack(blocks)
    return np.abs(out) if absolute else out


def summarize_alpha(chains, basis, cov_spec, grid):
    """Rows (category,t,post_mean,q025,q975) for the mean curves alpha_c."""
    from .basis import basis_matrix
    B = basis_matrix(basis, grid)
    rows = []
    for c in range(cov_spec.num_categories):
        vals = curve_draw_matrix(chains, f"beta_{c + 1}", basis.dimension, B)
        rows.extend(_quantile_rows(c + 1, grid, vals))
    return rows


def summarize_eta(chains, cov_spec, grid):
    """Rows (category,t,post_mean,q025,q975) for the sd curves eta_c.

    The heterogeneous eta_c is only sign-identified (it enters the
    covariance through eta_c(t) eta_c(s)), so draws are summarized as
    |eta_c|.
    """
    from .basis import basis_matrix
    rows = []
    C = cov_spec.num_categories
    if cov_spec.kind == UNIFORM:
        for c in range(C):
            sig = np.sqrt(np.concatenate([ch.column("sigma2") for ch in chains]))
            vals = np.repeat(sig[:, None], grid.size, axis=1)
            rows.extend(_quantile_rows(c + 1, grid, vals))
    elif cov_spec.kind == HOMOGENEOUS:
        for c in range(C):
            sig = np.sqrt(np.concatenate([ch.column(f"sigma2_{c + 1}")
                                          for ch in chains]))
            vals = np.repeat(sig[:, None], grid.size, axis=1)
            rows.extend(_quantile_rows(c + 1, grid, vals))
    else:
        Be = basis_matrix(cov_spec.eta_basis, grid)
        for c in range(C):
            vals = curve_draw_matrix(chains, f"theta_{c + 1}",
                                     cov_spec.eta_basis.dimension, Be,
                                     absolute=True)
            rows.extend(_quantile_rows(c + 1, grid, vals))
    return rows


def _quantile_rows(category, grid, vals):
    mean = vals.mean(axis=0)
    q025 = np.quantile(vals, 0.025, axis=0)
    q975 = np.quantile(vals, 0.975, axis=0)
    return [(str(category), grid[k], mean[k], q025[k], q975[k])
            for k in range(grid.size)]


def write_summary_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category", "t", "post_mean", "q025", "q975"])
        for cat, t, m, lo, hi in rows:
            w.writerow([cat, fmt(t), fmt(m), fmt(lo), fmt(hi)])


def write_predictive_csv(path, curve_label, summary):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["curve_id", "t", "post_mean", "q025", "q975"])
        for k in range(summary.grid.size):
            w.writerow([curve_label, fmt(summary.grid[k]), fmt(summary.mean[k]),
                        fmt(summary.q025[k]), fmt(summary.q975[k])])
