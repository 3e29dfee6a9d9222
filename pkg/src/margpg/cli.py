"""Command-line front end.

    margpg run <config.json | preset> [--seed S] [--chains K] [--out DIR] [--override key=value ...]
    margpg simulate <config.json | preset> [--out DIR]
    margpg list-presets
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import diagnostics as D
from .config import ExperimentConfig, ObservationError, preset_names, resolve, write_observations
from .samplers import ConfigError, run_sampler
from .smc import WeightCollapse

log = logging.getLogger("margpg")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) for c in r])


def _run_chain(args):
    cfg, label, sc, y = args
    return label, run_sampler(cfg.make_model(), sc, y)


def run_chains(cfg: ExperimentConfig, y, chain_index: int = 0, parallel: int = 1) -> dict:
    """Run every configured sampler on `y`; chain `k` uses stream ``k`` of each run's seed."""
    jobs = [(cfg, r.label, replace(r.sampler, stream=r.sampler.stream + chain_index), y) for r in cfg.runs]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as ex:
            return dict(ex.map(_run_chain, jobs))
    return dict(_run_chain(j) for j in jobs)


def _param_names(chains: dict) -> list[str]:
    names: list[str] = []
    for c in chains.values():
        for k in c.scalar_series():
            if k not in names:
                names.append(k)
    return names


def write_outputs(cfg: ExperimentConfig, chains: dict, y, out: Path) -> dict:
    """Write the CSV tables and ``summary.json`` for one set of runs; returns the summary."""
    out.mkdir(parents=True, exist_ok=True)
    diag = cfg.diagnostics
    names = _param_names(chains)
    burn = {r.label: r.sampler.burn_in for r in cfg.runs}
    T = len(y)

    header = ["run", "iteration", *names]
    store_states = diag["store_states"]
    if store_states:
        header += [f"x{t}" for t in range(T + 1)]
    rows = []
    for label, c in chains.items():
        series = c.scalar_series()
        for m in range(c.M):
            row = [label, m, *[series[n][m] if n in series else float("nan") for n in names]]
            if store_states and c.trajectories is not None:
                row += list(c.trajectories[m])
            rows.append(row)
    _write_csv(out / "samples.csv", header, rows)

    kept = {label: c.after_burn_in(burn[label]) for label, c in chains.items()}
    mcmc = {label: c for label, c in kept.items() if c.method != "mis"}

    if mcmc:
        max_lag = min([int(diag["acf_max_lag"])] + [c.M - 1 for c in mcmc.values()])
        cols, table = [], []
        for label, c in mcmc.items():
            for n, v in c.scalar_series().items():
                try:
                    table.append(D.acf(v, max_lag).acf)
                except ValueError:
                    table.append(np.full(max_lag + 1, np.nan))
                cols.append(f"{label}.{n}")
        if max_lag >= 1:
            _write_csv(out / "acf.csv", ["lag", *cols], [[k, *[a[k] for a in table]] for k in range(max_lag + 1)])

    if diag["update_frequency"]:
        freqs = {label: D.update_frequency(c.trajectories).freq
                 for label, c in mcmc.items() if c.trajectories is not None and c.M >= 2}
        if freqs:
            t_max = diag["update_frequency_t_max"] or T
            ts = range(1, min(int(t_max), T) + 1)
            _write_csv(out / "update_frequency.csv", ["t", *freqs], [[t, *[f[t] for f in freqs.values()]] for t in ts])

    bins = int(diag["histogram_bins"])
    if bins > 0:
        rows = []
        for label, c in kept.items():
            for n, v in c.scalar_series().items():
                for left, right, dens in D.histogram(v, bins, weights=c.weights):
                    rows.append([label, n, left, right, dens])
        _write_csv(out / "histogram.csv", ["run", "param", "bin_left", "bin_right", "density"], rows)

    if diag["filtered"]:
        rows = []
        for label, c in kept.items():
            if "filter_mean" not in c.extras:
                continue
            fm, fv = c.extras["filter_mean"], c.extras["filter_var"]
            mean = fm.mean(axis=0)
            # total variance over iterations: within-filter variance plus spread of the filter means
            sd = np.sqrt(fv.mean(axis=0) + fm.var(axis=0))
            obs_var = float(np.mean(c.params["sigma2_w"])) if "sigma2_w" in c.params else 0.0
            sd_obs = np.sqrt(sd**2 + obs_var)
            for t in range(1, T + 1):
                rows.append([label, t, mean[t], sd[t], sd_obs[t], y[t - 1]])
        if rows:
            _write_csv(out / "filtered.csv", ["run", "t", "mean", "sd", "sd_obs", "y"], rows)

    summary = {"T": T, "runs": {}}
    for label, c in kept.items():
        run = next(r for r in cfg.runs if r.label == label)
        s = {
            "method": c.method,
            "N": run.sampler.N,
            "M": chains[label].M,
            "burn_in": burn[label],
            "wall_clock_seconds": chains[label].wall_clock,
            "params": {n: D.summarize_series(v, c.weights) for n, v in c.scalar_series().items()},
        }
        if c.accepted is not None:
            s["acceptance_rate"] = float(np.mean(c.accepted))
            s["all_rejected"] = not bool(np.any(c.accepted))
        summary["runs"][label] = s
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _pooled(summaries: list[dict]) -> dict:
    pooled = {}
    for label in summaries[0]["runs"]:
        per = [s["runs"][label] for s in summaries]
        pooled[label] = {
            n: {
                "mean": float(np.mean([p["params"][n]["mean"] for p in per])),
                "between_chain_sd": float(np.std([p["params"][n]["mean"] for p in per], ddof=1)),
                "ess": float(np.sum([p["params"][n]["ess"] for p in per])),
            }
            for n in per[0]["params"]
        }
    return {"chains": len(summaries), "runs": pooled}


def cmd_run(ns) -> int:
    overrides = list(ns.override or [])
    if ns.seed is not None:
        overrides.append(f"sampler.seed={ns.seed}")
    cfg = resolve(ns.config, overrides)
    out = Path(ns.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    resolved = json.loads(json.dumps(cfg.raw))
    resolved["out"] = str(out)
    resolved["runs"] = [{"label": r.label, **asdict(r.sampler)} for r in cfg.runs]
    resolved.pop("sampler", None)
    resolved["diagnostics"] = cfg.diagnostics
    (out / "resolved_config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")

    y, x_true = cfg.observations()
    if x_true is not None:
        _write_csv(out / "states_true.csv", ["t", "x"], [[t, v] for t, v in enumerate(x_true)])
    write_observations(out / "observations.csv", y)

    k = max(1, int(ns.chains))
    if k == 1:
        log.info("running %d sampler(s) on T=%d observations", len(cfg.runs), len(y))
        write_outputs(cfg, run_chains(cfg, y, parallel=ns.jobs), y, out)
        return 0
    summaries = []
    with ProcessPoolExecutor(max_workers=ns.jobs) as ex:
        futures = [ex.submit(run_chains, cfg, y, i) for i in range(k)]
        for i, f in enumerate(futures):
            summaries.append(write_outputs(cfg, f.result(), y, out / f"chain-{i}"))
    (out / "summary.json").write_text(json.dumps(_pooled(summaries), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_simulate(ns) -> int:
    cfg = resolve(ns.config, ns.override or [])
    if "simulate" not in cfg.data:
        raise ConfigError("data", "simulate needs a data.simulate section")
    out = Path(ns.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    y, x = cfg.observations()
    write_observations(out / "observations.csv", y)
    _write_csv(out / "states_true.csv", ["t", "x"], [[t, v] for t, v in enumerate(x)])
    print(out / "observations.csv")
    return 0


def cmd_list_presets(ns) -> int:
    for name in preset_names():
        cfg = resolve(name)
        print(f"{name}\t{cfg.raw.get('description', '')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="margpg", description="Particle Gibbs samplers with conjugate parameters integrated out.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config or preset")
    r.add_argument("config", help="path to a JSON config, or a preset name")
    r.add_argument("--seed", type=int)
    r.add_argument("--chains", type=int, default=1, help="independent chains (streams 0..K-1 of the seed)")
    r.add_argument("--jobs", type=int, default=1, help="worker processes")
    r.add_argument("--out")
    r.add_argument("--override", action="append", metavar="KEY=VALUE", help="e.g. sampler.M=500 or runs.0.N=50")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("simulate", help="write the simulated observations of a config")
    s.add_argument("config")
    s.add_argument("--out")
    s.add_argument("--override", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_simulate)

    ls = sub.add_parser("list-presets", help="list packaged experiment presets")
    ls.set_defaults(func=cmd_list_presets)
    return p


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(message)s")
    try:
        return ns.func(ns)
    except (ConfigError, ObservationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except WeightCollapse as e:
        print(f"sampler error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
