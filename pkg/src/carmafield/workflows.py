"""Higher-level pipelines behind the command line front end.

Everything here is importable and testable without argv plumbing: data
diagnostics, normalization, the fit-and-select workflow over a model
menu, and the replicated simulation study (simulate on a fine grid,
thin, estimate, tabulate).
"""

from __future__ import annotations

import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import estimate, model, simulate
from .errors import CarmaFieldError, ConfigError, ValidationError, ZeroVariance
from .simulate import LatticeField

__all__ = [
    "normalize",
    "diagnose",
    "MODEL_MENU",
    "run_fit_workflow",
    "StudyConfig",
    "run_simulation_study",
    "worker_count",
]

# (p, q) by menu name; the workflow fits each and ranks by AIC
MODEL_MENU = {
    "car1": (1, 0),
    "car2": (2, 0),
    "car3": (3, 0),
    "carma21": (2, 1),
    "carma31": (3, 1),
}


def worker_count(n_tasks):
    """Worker pool size, capped by the CARMA_FIELD_THREADS variable."""
    cap = os.environ.get("CARMA_FIELD_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_tasks))


def normalize(field):
    """Affine rescale to sample mean zero and variance one.

    The applied shift and scale are recorded in the provenance so the
    original values are recoverable.
    """
    mean = float(np.mean(field.values))
    std = float(np.std(field.values))
    if std == 0.0 or not np.isfinite(std):
        raise ZeroVariance("cannot normalize a field with zero variance")
    prov = dict(field.provenance)
    prov["normalize_shift"] = mean
    prov["normalize_scale"] = std
    return LatticeField(
        delta=field.delta,
        values=(field.values - mean) / std,
        provenance=prov,
    )


def diagnose(field, bins=100):
    """Stationarity and marginal diagnostics of a lattice field.

    Returns a dict with per-axis marginal means (mean over all other
    axes), a density histogram with a standard-normal reference column,
    sample statistics, and any warnings (for instance a degenerate
    histogram on constant data).
    """
    values = field.values
    axis_means = []
    for ax in range(values.ndim):
        other = tuple(i for i in range(values.ndim) if i != ax)
        axis_means.append(values.mean(axis=other) if other else values.copy())
    mean = float(values.mean())
    std = float(values.std())
    warnings = []
    if std == 0.0:
        warnings.append("zero variance: histogram is degenerate")
    counts, edges = np.histogram(values.ravel(), bins=bins, density=std > 0)
    centers = 0.5 * (edges[:-1] + edges[1:])
    reference = np.exp(-0.5 * centers ** 2) / math.sqrt(2.0 * math.pi)
    return {
        "axis_means": axis_means,
        "histogram_centers": centers,
        "histogram_density": counts.astype(float),
        "normal_reference": reference,
        "mean": mean,
        "std": std,
        "min": float(values.min()),
        "max": float(values.max()),
        "count": int(values.size),
        "warnings": warnings,
    }


def run_fit_workflow(emp, models, weights="quadratic", kappa2=1.0, seed=0,
                     generations=300, population_factor=10):
    """Fit every model of the menu to one empirical variogram and rank.

    Parameters
    ----------
    emp : EmpiricalVariogram
    models : sequence of menu names (keys of ``MODEL_MENU``)

    Returns
    -------
    (fits, ranked) : dict name -> FitResult, list of (name, FitResult)
    """
    if not models:
        raise ConfigError("empty model menu")
    unknown = [m for m in models if m not in MODEL_MENU]
    if unknown:
        raise ConfigError(f"unknown models {unknown}; menu: {sorted(MODEL_MENU)}")
    fits = {}
    for name in models:
        p, q = MODEL_MENU[name]
        config = estimate.FitConfig(
            p=p,
            q=q,
            kappa2=kappa2,
            weights=weights,
            seed=seed,
            generations=generations,
            population_factor=population_factor,
            require_identifiable_lags=False,
        )
        try:
            fits[name] = estimate.fit(emp, config)
        except CarmaFieldError as exc:
            raise type(exc)(f"fit stage failed for model {name}: {exc}") from exc
    ranked_results = estimate.model_select(list(fits.values()))
    by_id = {id(v): k for k, v in fits.items()}
    ranked = [(by_id[id(r)], r) for r in ranked_results]
    return fits, ranked


def overlay_tables(emp, fits):
    """Per-axis overlay data: lag, empirical ordinate, fitted ordinates.

    Returns a dict axis -> (header, rows) ready for CSV emission.
    """
    classes = estimate._axis_structure(emp)
    tables = {}
    names = list(fits)
    for axis in sorted({c[0] for c in classes if c is not None}):
        rows_idx = [i for i, c in enumerate(classes) if c is not None and c[0] == axis]
        taus = np.asarray([emp.lags[i][axis] for i in rows_idx])
        order = np.argsort(taus)
        taus = taus[order]
        emp_vals = emp.ordinates[[rows_idx[o] for o in order]]
        cols = [taus, emp_vals]
        for name in names:
            cols.append(model.axis_variogram(fits[name].spec, axis, taus))
        header = ["lag", "empirical"] + [f"fitted_{n}" for n in names]
        tables[axis] = (header, np.column_stack(cols))
    return tables


# -- simulation study ---------------------------------------------------------

# the four weighting cases: (lags per axis, weight scheme)
STUDY_CASES = {
    1: (50, "quadratic"),
    2: (25, "quadratic"),
    3: (50, "exponential"),
    4: (25, "exponential"),
}


@dataclass
class StudyConfig:
    """Replicated simulation study around a known ground truth.

    Fields are simulated with the truncated-discretized scheme on a
    grid ``fine_factor`` times finer than the estimation grid, then
    thinned back, mirroring the reference protocol at desk scale.
    """

    spec: model.CarmaSpec
    basis: object
    replications: int = 50
    n: int = 500
    delta: float = 0.04
    fine_factor: int = 2
    m_steps: int = 300
    j_max: int = 50
    cases: tuple = (1,)
    seed: int = 12345
    generations: int = 300
    population_factor: int = 10
    kappa2: float = 1.0

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("need at least one replication")
        bad = [c for c in self.cases if c not in STUDY_CASES]
        if bad:
            raise ConfigError(f"unknown study cases {bad}")


def _thin(field, factor):
    if factor == 1:
        return field
    sl = tuple(slice(factor - 1, None, factor) for _ in range(field.d))
    return LatticeField(
        delta=tuple(d * factor for d in field.delta),
        values=np.ascontiguousarray(field.values[sl]),
        provenance=dict(field.provenance, thinned_by=factor),
    )


def _study_replication(args):
    """One replication: simulate fine, thin, estimate per case.

    Returns (replication index, {case: theta or None}, error strings).
    """
    cfg, rep = args
    errors = []
    thetas = {}
    try:
        fine = simulate.simulate_truncated_discretized(
            cfg.spec,
            cfg.basis,
            cfg.m_steps,
            cfg.n * cfg.fine_factor,
            cfg.delta / cfg.fine_factor,
            seed=cfg.seed,
            stream=rep,
        )
        coarse = _thin(fine, cfg.fine_factor)
        lags = estimate.axis_lag_set(cfg.spec.d, coarse.delta, cfg.j_max)
        emp_full = estimate.empirical_variogram(coarse, lags)
    except CarmaFieldError as exc:
        return rep, {c: None for c in cfg.cases}, [f"simulation: {exc}"]
    de_seed = int(
        np.random.SeedSequence(entropy=cfg.seed, spawn_key=(rep, 977)).generate_state(1)[0]
    )
    for case in cfg.cases:
        j_case, scheme = STUDY_CASES[case]
        keep = [
            i
            for i, cls in enumerate(estimate._axis_structure(emp_full))
            if cls is not None and cls[1] <= j_case
        ]
        emp = estimate.EmpiricalVariogram(
            lags=emp_full.lags[keep],
            ordinates=emp_full.ordinates[keep],
            pair_counts=emp_full.pair_counts[keep],
            delta=emp_full.delta,
            n=emp_full.n,
        )
        config = estimate.FitConfig(
            p=cfg.spec.p,
            q=cfg.spec.q,
            kappa2=cfg.kappa2,
            weights=scheme,
            seed=de_seed + case,
            generations=cfg.generations,
            population_factor=cfg.population_factor,
            require_identifiable_lags=False,
        )
        try:
            thetas[case] = estimate.fit(emp, config).theta_star
        except CarmaFieldError as exc:
            thetas[case] = None
            errors.append(f"case {case}: {exc}")
    return rep, thetas, errors


def parameter_names(spec):
    names = [f"b{i}" for i in range(spec.q + 1)]
    for i in range(1, spec.d + 1):
        for k in range(1, spec.p + 1):
            names.append(f"lambda{i}{k}")
    return names


def run_simulation_study(cfg, log=None):
    """Run the replicated study and tabulate estimator quality per case.

    Replications are farmed out to a process pool (size capped by
    CARMA_FIELD_THREADS); every replication draws its own substream of
    the master seed, so results do not depend on scheduling.

    Returns
    -------
    dict case -> {"table": list of rows, "estimates": ndarray,
                  "failed": int}
        Table rows are (parameter, true value, mean, bias, std, rmse).
    """
    log = log or (lambda msg: print(msg, file=sys.stderr))
    codec = estimate.ThetaCodec(
        p=cfg.spec.p, q=cfg.spec.q, d=cfg.spec.d, kappa2=cfg.kappa2
    )
    truth = codec.from_spec(
        model.CarmaSpec(
            b=cfg.spec.b,
            eigenvalues=tuple(
                tuple(sorted(ax, key=lambda e: (-e.real, -e.imag)))
                for ax in cfg.spec.eigenvalues
            ),
            kappa2=cfg.spec.kappa2,
        )
    )
    tasks = [(cfg, rep) for rep in range(cfg.replications)]
    workers = worker_count(len(tasks))
    results = {}
    if workers == 1:
        collected = [_study_replication(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            collected = list(pool.map(_study_replication, tasks))
    collected.sort(key=lambda item: item[0])
    for rep, _, errors in collected:
        for err in errors:
            log(f"replication {rep}: {err}")
    names = parameter_names(cfg.spec)
    for case in cfg.cases:
        thetas = [thetas_by_case[case] for _, thetas_by_case, _ in collected]
        good = np.asarray([t for t in thetas if t is not None])
        failed = sum(1 for t in thetas if t is None)
        if good.size == 0:
            raise ValidationError(f"case {case}: every replication failed")
        mean = good.mean(axis=0)
        std = good.std(axis=0, ddof=1) if good.shape[0] > 1 else np.zeros_like(mean)
        bias = mean - truth
        rmse = np.sqrt(np.mean((good - truth[None, :]) ** 2, axis=0))
        table = [
            (names[i], truth[i], mean[i], bias[i], std[i], rmse[i])
            for i in range(len(names))
        ]
        results[case] = {"table": table, "estimates": good, "failed": failed}
    return results
