"""Scenario runner: single runs, parameter sweeps, theory curves, and
theory-vs-simulation comparison reports.

Exit codes: 0 success, 2 configuration error, 3 runtime failure,
4 acceptance-check failure (for CI gates like --min-r2).
"""

from __future__ import annotations

import functools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import click
import numpy as np

from . import dispatch, impact, synthgen, theory
from .model import (ConfigError, IngestError, ScenarioConfig, ingest_orders,
                    load_scenario, scenario_from_dict, write_orders)

EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_CHECK = 4

SWEEP_COLUMNS = ("T_B_min,pud_min,k,density,rep,avg_delay_min,mileage_km,"
                 "mileage_saved_frac,fleet_size,co2_g_day,co2_saved_frac,"
                 "delivery_km,bundled_fraction,bundle_saving_frac,error")


def _cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, IngestError) as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except click.ClickException:
            raise
        except Exception as exc:
            click.echo(f"runtime failure: {exc}", err=True)
            sys.exit(EXIT_RUNTIME)
    return wrapper


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_lines(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")


def _load_orders(scenario: ScenarioConfig, orders_path, seed=None):
    seed = scenario.rng_seed if seed is None else seed
    if orders_path:
        return ingest_orders(orders_path, scenario.T_p)
    if scenario.gen is None:
        raise ConfigError("no --orders file given and scenario has no 'gen' block")
    orders, _, _ = synthgen.generate_from_config(scenario.gen, scenario.horizon, seed, scenario.T_p)
    return orders


def _records_csv(path, records):
    lines = ["order_id,bundle_id,vehicle_id,t_o,t_r,t_p,t_d,pud_s,delay_vs_baseline_s"]
    for r in records:
        lines.append(f"{r.order_id},{r.bundle_id},{r.vehicle_id},{r.t_o},{r.t_r},"
                     f"{_fmt(r.t_p)},{_fmt(r.t_d)},{_fmt(r.pud_s)},{_fmt(r.delay_s)}")
    _write_lines(path, lines)


@click.group()
def main():
    """Order bundling / fleet dispatch simulator and analytical toolkit."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@_cli_errors
def gen(config_path, out_path):
    """Generate a synthetic order CSV from the scenario's gen block."""
    scenario = load_scenario(config_path)
    if scenario.gen is None:
        raise ConfigError("scenario has no 'gen' block")
    orders = _load_orders(scenario, None)
    write_orders(out_path, orders)
    click.echo(f"wrote {len(orders)} orders to {out_path}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--orders", "orders_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--timings", is_flag=True, default=False,
              help="Include per-batch compute times in metrics.json (non-deterministic).")
@_cli_errors
def run(config_path, orders_path, out_dir, timings):
    """Run one scenario end to end and write metrics.json + orders.csv."""
    scenario = load_scenario(config_path)
    orders = _load_orders(scenario, orders_path)
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.json")
    log_path = os.path.join(out_dir, "orders.csv")
    try:
        result = dispatch.run_simulation(scenario, orders)
        days = max(scenario.horizon / 86400.0, 1e-9)
        payload = result.metrics.to_dict(include_timings=timings)
        payload["co2_g_day"] = impact.lifecycle_emissions(
            scenario.fleet_kind, result.metrics.fleet_size,
            result.metrics.total_mileage_km / days, "CO2")
        with open(metrics_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _records_csv(log_path, result.records)
    except Exception:
        for p in (metrics_path, log_path):
            if os.path.exists(p):
                os.remove(p)
        raise
    click.echo(f"ran {len(orders)} orders: fleet={result.metrics.fleet_size} "
               f"total_km={result.metrics.total_mileage_km:.1f}")


# -- sweep ---------------------------------------------------------------------


@dataclass(frozen=True)
class SweepSpec:
    t_b_min: tuple = (2, 5, 10, 15, 20)
    pud_min: tuple = (10,)
    k: tuple = (1, 4)
    density: tuple = (1.0,)
    repetitions: int = 1

    def __post_init__(self):
        if not (self.t_b_min and self.pud_min and self.k and self.density):
            raise ConfigError("sweep grid must be non-empty on every axis")
        if any(f <= 0 or f > 1 for f in self.density):
            raise ConfigError("density fractions must lie in (0, 1]")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")


def _spec_from(scenario_gen_cfg, overrides) -> SweepSpec:
    cfg = dict(scenario_gen_cfg or {})
    cfg.update({k: v for k, v in overrides.items() if v})
    kwargs = {}
    for key, cast in (("t_b_min", float), ("pud_min", float), ("k", int), ("density", float)):
        if key in cfg:
            vals = cfg[key]
            if isinstance(vals, str):
                vals = vals.split(",")
            kwargs[key] = tuple(cast(v) for v in vals)
    if "repetitions" in cfg:
        kwargs["repetitions"] = int(cfg["repetitions"])
    return SweepSpec(**kwargs)


def _subsample(orders, density: float, seed_key):
    if density >= 1.0:
        return orders
    rng = np.random.default_rng(seed_key)
    n = int(round(len(orders) * density))
    idx = np.sort(rng.choice(len(orders), size=n, replace=False))
    return [orders[i] for i in idx]


def _sweep_cell(args):
    base_cfg, orders_path, t_b, pud, k, density, rep = args
    try:
        scenario = ScenarioConfig(**{**base_cfg,
                                     "T_B": int(round(t_b * 60)),
                                     "delta_pud": int(round(pud * 60)),
                                     "k": int(k)})
        orders = _load_orders(scenario, orders_path, seed=scenario.rng_seed + rep)
        orders = _subsample(orders, density, (scenario.rng_seed, rep, int(density * 10000)))
        result = dispatch.run_simulation(scenario, orders)
        m = result.metrics
        days = max(scenario.horizon / 86400.0, 1e-9)
        co2 = impact.lifecycle_emissions(scenario.fleet_kind, m.fleet_size,
                                         m.total_mileage_km / days, "CO2")
        return (t_b, pud, k, density, rep), {
            "avg_delay_min": m.avg_delivery_delay_s / 60.0,
            "mileage_km": m.total_mileage_km,
            "fleet_size": m.fleet_size,
            "co2_g_day": co2,
            "delivery_km": m.delivery_mileage_km,
            "bundled_fraction": m.bundled_fraction,
            "bundle_saving_frac": m.avg_bundle_saving,
            "error": "",
        }
    except Exception as exc:  # cell failures are recorded, the sweep goes on
        return (t_b, pud, k, density, rep), {"error": str(exc).replace(",", ";")}


def run_sweep(scenario_dict: dict, spec: SweepSpec, orders_path=None, workers: int = 1):
    """All grid cells plus their k=1 baselines; returns ordered CSV lines."""
    cells = set()
    for t_b in spec.t_b_min:
        for pud in spec.pud_min:
            for density in spec.density:
                for rep in range(spec.repetitions):
                    for k in spec.k:
                        cells.add((t_b, pud, k, density, rep))
                    cells.add((t_b, pud, 1, density, rep))  # savings denominator
    ordered = sorted(cells)
    args = [(scenario_dict, orders_path, *cell) for cell in ordered]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(pool.map(_sweep_cell, args))
    else:
        results = dict(map(_sweep_cell, args))

    lines = [SWEEP_COLUMNS]
    for cell in ordered:
        t_b, pud, k, density, rep = cell
        row = results[cell]
        base = results.get((t_b, pud, 1, density, rep), {})
        if row.get("error"):
            lines.append(f"{_fmt(t_b)},{_fmt(pud)},{k},{_fmt(density)},{rep},,,,,,,,,,{row['error']}")
            continue
        saved = ""
        co2_saved = ""
        if not base.get("error") and base.get("mileage_km"):
            saved = _fmt(1.0 - row["mileage_km"] / base["mileage_km"])
            co2_saved = _fmt(1.0 - row["co2_g_day"] / base["co2_g_day"]) if base.get("co2_g_day") else ""
        lines.append(",".join([
            _fmt(t_b), _fmt(pud), str(k), _fmt(density), str(rep),
            _fmt(row["avg_delay_min"]), _fmt(row["mileage_km"]), saved,
            str(row["fleet_size"]), _fmt(row["co2_g_day"]), co2_saved,
            _fmt(row["delivery_km"]), _fmt(row["bundled_fraction"]),
            _fmt(row["bundle_saving_frac"]), "",
        ]))
    return lines


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--orders", "orders_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--t-b", "t_b_opt", default=None, help="Batch durations, minutes, comma list.")
@click.option("--pud", "pud_opt", default=None, help="Max pickup delays, minutes, comma list.")
@click.option("--k", "k_opt", default=None, help="Max bundle sizes, comma list.")
@click.option("--density", "density_opt", default=None, help="Subsampling fractions in (0,1].")
@click.option("--reps", "reps_opt", default=None, type=int)
@click.option("--workers", default=1, type=int)
@_cli_errors
def sweep(config_path, orders_path, out_path, t_b_opt, pud_opt, k_opt, density_opt,
          reps_opt, workers):
    """Run the T_B x PUD x k x density grid and write a long-format CSV."""
    with open(config_path, encoding="utf-8") as fh:
        raw = json.load(fh)
    sweep_cfg = raw.pop("sweep", {}) or {}
    scenario_from_dict(raw)  # validate before fanning out
    spec = _spec_from(sweep_cfg, {"t_b_min": t_b_opt, "pud_min": pud_opt,
                                  "k": k_opt, "density": density_opt,
                                  "repetitions": reps_opt})
    lines = run_sweep(raw, spec, orders_path=orders_path, workers=workers)
    _write_lines(out_path, lines)
    click.echo(f"wrote {len(lines) - 1} sweep rows to {out_path}")


# -- theory --------------------------------------------------------------------


@main.command("theory")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--delta", "delta_opt", default=None,
              help="Batch durations in minutes, comma list (default 1..20).")
@click.option("--d-c", "d_c", default=2.0, type=float, help="Bundling distance, km.")
@click.option("--scale", default=1.0, type=float, help="Demand scale vs the published law.")
@click.option("--c-b", "c_b", default=1.0, type=float)
@_cli_errors
def theory_cmd(out_path, delta_opt, d_c, scale, c_b):
    """Export the closed-form savings chain as a CSV of curve points."""
    deltas = ([float(x) for x in delta_opt.split(",")] if delta_opt
              else [float(x) for x in range(1, 21)])
    params = theory.TheoryParams(delta_c=d_c, U=d_c, V=d_c, C_b=c_b).scaled(scale)
    rows = theory.chain_table(params, deltas)
    lines = ["theta_min,Delta_min,F_S,F_B,F_dm,F_gm,Omega"]
    for r in rows:
        om = r.F_gm  # Omega(theta(delta)) round-trips to F_gm(delta)
        lines.append(f"{_fmt(r.theta_min)},{_fmt(r.delta_min)},{_fmt(r.F_S)},"
                     f"{_fmt(r.F_B)},{_fmt(r.F_dm)},{_fmt(r.F_gm)},{_fmt(om)}")
    _write_lines(out_path, lines)
    click.echo(f"wrote {len(rows)} theory rows to {out_path}")


# -- compare -------------------------------------------------------------------


def _read_sweep_csv(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            rows.append(dict(zip(header, parts)))
    return rows


def compare_theory(sweep_rows, scenario: ScenarioConfig, refit: bool = True):
    """Align simulated saved-global-mileage against the theory's patience curve.

    Only defined for the k=2, same-vendor regime the closed-form model
    covers. Returns a dict report with per-point values, the calibrated
    constants, R^2 and the maximum absolute deviation.
    """
    if not scenario.same_vendor_only:
        raise ConfigError("theory comparison needs same_vendor_only=true in the scenario")
    k2 = [r for r in sweep_rows if r.get("k") == "2" and not r.get("error")]
    if not k2:
        raise ConfigError("sweep holds no k=2 rows; the theory covers only k=2")
    bad_k = sorted({r["k"] for r in sweep_rows if r.get("k") not in ("1", "2") and not r.get("error")})
    if bad_k:
        raise ConfigError(f"sweep mixes k={bad_k} cells; rerun with k in {{1,2}}")

    gen_cfg = dict(synthgen.default_generator_config())
    gen_cfg.update(scenario.gen or {})
    theory_cfg = scenario.theory or {}
    law = synthgen.law_from_config(gen_cfg)
    from dataclasses import replace as _replace

    base = _replace(law, delta_c=scenario.d_c, U=float(gen_cfg["U_km"]),
                    V=float(theory_cfg.get("V_km", scenario.d_c)),
                    C_b=float(theory_cfg.get("C_b", 1.0)))
    per_vendor_rate = float(gen_cfg["orders_per_day"]) / 1440.0 / float(gen_cfg["n_vendors"])
    scale = per_vendor_rate / theory.mean_popularity(base)
    params = base.scaled(scale)

    groups = {}
    for r in k2:
        groups.setdefault(float(r["T_B_min"]), []).append(r)
    observations = []
    for t_b in sorted(groups):
        rows = groups[t_b]
        if any(not r["mileage_saved_frac"] for r in rows):
            continue
        observations.append({
            "delta_min": t_b,
            "theta_min": float(np.mean([float(r["avg_delay_min"]) for r in rows])),
            "bundled_fraction": float(np.mean([float(r["bundled_fraction"]) for r in rows])),
            "mu_obs": float(np.mean([float(r["bundle_saving_frac"]) for r in rows])),
            "f_gm_obs": float(np.mean([float(r["mileage_saved_frac"]) for r in rows])),
            "f_dm_obs": float(np.mean([_delivery_saved(r, sweep_rows) for r in rows])),
        })
    if refit:
        fit = theory.calibrate(observations, params)
        params, fit_r2 = fit.params, fit.r2
    else:
        fit_r2 = {}
    points = []
    for obs in observations:
        om = theory.omega(obs["theta_min"], params)
        points.append({"theta_min": obs["theta_min"], "delta_min": obs["delta_min"],
                       "f_gm_simulated": obs["f_gm_obs"], "omega_theory": om,
                       "deviation": om - obs["f_gm_obs"]})
    devs = [p["deviation"] for p in points]
    sim = np.array([p["f_gm_simulated"] for p in points])
    pred = np.array([p["omega_theory"] for p in points])
    if len(points) >= 2 and float(((sim - sim.mean()) ** 2).sum()) > 0:
        r2 = 1.0 - float(((sim - pred) ** 2).sum()) / float(((sim - sim.mean()) ** 2).sum())
    else:
        r2 = None
    return {
        "n_points": len(points),
        "r_squared": r2,
        "max_abs_deviation": max(abs(d) for d in devs) if devs else None,
        "demand_scale": scale,
        "calibrated": {
            "C_b": params.C_b, "w_gm": params.w_gm,
            "mu_slope": params.mu_slope, "mu_intercept": params.mu_intercept,
            "theta_slope": params.theta_slope, "theta_intercept": params.theta_intercept,
        },
        "fit_r2": fit_r2,
        "points": points,
    }


def _delivery_saved(row, all_rows):
    """1 - delivery_km(k)/delivery_km(k=1 twin) for a sweep row."""
    for r in all_rows:
        if (r.get("k") == "1" and r["T_B_min"] == row["T_B_min"]
                and r["pud_min"] == row["pud_min"] and r["density"] == row["density"]
                and r["rep"] == row["rep"] and not r.get("error")):
            base = float(r["delivery_km"])
            return 1.0 - float(row["delivery_km"]) / base if base else 0.0
    raise ConfigError(f"no k=1 baseline row for T_B={row['T_B_min']} rep={row['rep']}")


@main.command()
@click.option("--sweep", "sweep_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--no-refit", is_flag=True, default=False)
@click.option("--min-r2", default=None, type=float,
              help="Exit 4 when the comparison R^2 falls below this bound.")
@_cli_errors
def compare(sweep_path, config_path, out_path, no_refit, min_r2):
    """Compare simulated saved mileage with the calibrated theory curve."""
    scenario = load_scenario(config_path)
    rows = _read_sweep_csv(sweep_path)
    report = compare_theory(rows, scenario, refit=not no_refit)
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    r2 = report["r_squared"]
    click.echo(f"compared {report['n_points']} points: R^2="
               f"{'undefined' if r2 is None else format(r2, '.4f')}")
    if min_r2 is not None and (r2 is None or r2 < min_r2):
        click.echo(f"R^2 below required {min_r2}", err=True)
        sys.exit(EXIT_CHECK)


if __name__ == "__main__":
    main()
