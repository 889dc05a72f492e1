"""Command-line pipeline: simulate / ingest / cluster / design / fit / diagnose / report.

Every stage reads and writes plain delimited files so runs are scriptable
and byte-reproducible given a seed:

* normalized records CSV (ingest, simulate) - panel columns plus month_idx
* assignment CSV (cluster)                  - airport, cluster_id
* design CSV + .meta.json (design)          - model-ready arrays
* draws CSV + .meta.json (fit)              - one column per parameter,
  chain/draw indices, per-draw sampler statistics
* summary CSV (diagnose)                    - posterior table per parameter
* report CSVs + PNG figures (report)
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import sys
from pathlib import Path

import numpy as np

from . import cluster as clustermod
from . import diagnostics, figures, ingest, report, simulate
from .model import (
    LogPosterior,
    ModelConfig,
    build_design,
    derived_names,
    design_from_files,
    design_to_files,
)
from .sampler import SamplerConfig, run_chains

_STAT_COLUMNS = ("tree_depth", "n_leapfrog", "divergent", "energy", "accept_stat", "depth_saturated")


def _print(message: str) -> None:
    print(message, flush=True)


# ----------------------------------------------------------------- ingest


def _cmd_ingest(args) -> int:
    paths = sorted(glob.glob(args.input))
    if not paths:
        raise SystemExit(f"no files match {args.input!r}")
    records: list[ingest.ObservationRecord] = []
    skipped_empty = skipped_zero = 0
    rejected = 0
    for path in paths:
        result = ingest.parse_bts_csv(path)
        records.extend(result.records)
        skipped_empty += result.skipped_empty
        skipped_zero += result.skipped_zero
        rejected += len(result.rejected)
        for line, reason in result.rejected[:10]:
            _print(f"rejected {path}:{line}: {reason}")
    _print(
        f"parsed {len(records)} records from {len(paths)} file(s); "
        f"{skipped_empty} empty, {skipped_zero} zero-arrival, {rejected} invalid rows dropped"
    )

    def stage(label, rows):
        stats = ingest.summarize_corpus(rows)
        _print(
            f"{label:<28} flights {stats.total_flights:>13,.0f}  delays {stats.total_delays:>12,.0f}  "
            f"records {stats.record_count:>7,}  airports {stats.airport_count:>4}  "
            f"carriers {stats.carrier_count:>3}  delay rate {100 * stats.delay_rate:.2f}%"
        )

    stage("n > 0", records)
    records = ingest.apply_volumetric_filter(records, args.threshold)
    stage(f"n >= {args.threshold}", records)
    epoch_end = ingest.parse_year_month(args.epoch_end) if args.epoch_end else None
    if args.continuity_per_epoch and epoch_end is not None:
        records = ingest.split_epoch(records, epoch_end)
        stage(f"through {args.epoch_end}", records)
        records = ingest.apply_continuity_filter(records, args.min_months)
        stage(f">= {args.min_months} months", records)
    else:
        records = ingest.apply_continuity_filter(records, args.min_months)
        stage(f">= {args.min_months} months", records)
        if epoch_end is not None:
            records = ingest.split_epoch(records, epoch_end)
            stage(f"through {args.epoch_end}", records)
    ingest.write_normalized_csv(records, args.output)
    _print(f"wrote {args.output}")
    return 0


# ---------------------------------------------------------------- cluster


def _cmd_cluster(args) -> int:
    records = ingest.parse_bts_csv(args.input).records
    features = clustermod.compute_airport_features(records)
    matrix, _, _ = clustermod.standardize_features(features)
    names = [f.airport for f in features]
    result = clustermod.select_k(
        matrix, args.k_min, args.k_max, args.seed, restarts=args.restarts, names=names
    )
    for k in sorted(result.scores):
        marker = " <- selected" if k == result.best_k else ""
        _print(f"K={k}: silhouette {result.scores[k]:.4f}{marker}")
    with open(args.output, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["airport", "cluster_id"])
        for airport in sorted(result.assignment.labels):
            writer.writerow([airport, result.assignment.labels[airport]])
    profile_path = args.profile or str(Path(args.output).with_suffix("")) + "_profile.csv"
    rows = clustermod.cluster_profile(features, result.assignment)
    with open(profile_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["cluster_id", "airport_count", "mean_log_flights", "log_mean_flights", "mean_delay_rate"]
        )
        for row in rows:
            writer.writerow(
                [
                    row["cluster_id"],
                    row["airport_count"],
                    repr(row["mean_log_flights"]),
                    repr(row["log_mean_flights"]),
                    repr(row["mean_delay_rate"]),
                ]
            )
    _print(f"wrote {args.output} and {profile_path}")
    return 0


# --------------------------------------------------------------- simulate


def _cmd_simulate(args) -> int:
    if args.scenario == "default":
        scenario = simulate.default_scenario()
    else:
        scenario = simulate.load_scenario(args.scenario)
    data = simulate.simulate_dataset(scenario, seed=args.seed)
    ingest.write_normalized_csv(data.records, args.output)
    truth = {
        "mu_alpha": data.truth.mu_alpha,
        "sigma_alpha": data.truth.sigma_alpha,
        "alpha_raw": data.truth.alpha_raw.tolist(),
        "beta": data.truth.beta.tolist(),
        "gamma_raw": data.truth.gamma_raw.tolist(),
        "sigma_gamma": data.truth.sigma_gamma,
        "shock_factor": data.truth.shock_factor,
        "delta_covid": data.truth.delta_covid,
        "phi": data.truth.phi,
    }
    truth_path = str(args.output) + ".truth.json"
    with open(truth_path, "w", encoding="utf-8") as handle:
        json.dump(truth, handle, indent=1, sort_keys=True)
    if args.design:
        design_to_files(data.design, args.design)
    _print(f"wrote {len(data.records)} records to {args.output} (truth: {truth_path})")
    return 0


# ----------------------------------------------------------------- design


def _read_assignment(path) -> dict[str, int]:
    with open(path, newline="", encoding="utf-8") as handle:
        return {row["airport"]: int(row["cluster_id"]) for row in csv.DictReader(handle)}


def _cmd_design(args) -> int:
    config = ModelConfig.from_file(args.config) if args.config else ModelConfig()
    if args.covid_start:
        config.covid_start = ingest.parse_year_month(args.covid_start)
    if args.covid_end:
        config.covid_end = ingest.parse_year_month(args.covid_end)
    records = ingest.parse_bts_csv(args.records).records
    labels = _read_assignment(args.assignment)
    grand_means = None
    if args.grand_means_from:
        grand_means = design_from_files(args.grand_means_from).grand_means
    design = build_design(
        records,
        labels,
        covid_window=config.covid_window,
        grand_means=grand_means,
        z_scale=config.z_scale_predictors,
    )
    design_to_files(design, args.output)
    _print(
        f"wrote design {args.output}: {design.size} observations, "
        f"J={design.J} clusters, T={design.T} months"
    )
    return 0


# -------------------------------------------------------------------- fit


def _write_draws(outputs, posterior, path) -> None:
    names = posterior.names
    extra = derived_names(posterior.design.J, posterior.design.T)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["chain", "draw"] + names + extra + list(_STAT_COLUMNS))
        for output in outputs:
            if output.status != "ok":
                continue
            for i in range(output.constrained.shape[0]):
                row = [output.chain_id, i]
                row += [repr(v) for v in output.constrained[i]]
                row += [repr(v) for v in output.derived[i]]
                row += [
                    int(output.tree_depth[i]),
                    int(output.n_leapfrog[i]),
                    int(output.divergent[i]),
                    repr(float(output.energy[i])),
                    repr(float(output.accept_stat[i])),
                    int(output.depth_saturated[i]),
                ]
                writer.writerow(row)
    meta = {
        "chains": [
            {
                "chain": o.chain_id,
                "status": o.status,
                "step_size": None if np.isnan(o.step_size) else o.step_size,
                "mass_diag": o.mass_diag.tolist(),
                "divergences": int(o.divergent.sum()) if o.status == "ok" else None,
                "depth_saturated": int(o.depth_saturated.sum()) if o.status == "ok" else None,
            }
            for o in outputs
        ],
    }
    with open(str(path) + ".meta.json", "w", encoding="utf-8") as handle:
        json.dump(meta, handle, indent=1, sort_keys=True)


def _cmd_fit(args) -> int:
    config = ModelConfig.from_file(args.config) if args.config else ModelConfig()
    if args.design:
        design = design_from_files(args.design)
    elif args.records and args.assignment:
        records = ingest.parse_bts_csv(args.records).records
        design = build_design(
            records,
            _read_assignment(args.assignment),
            covid_window=config.covid_window,
            z_scale=config.z_scale_predictors,
        )
    else:
        raise SystemExit("fit needs --design or both --records and --assignment")
    posterior = LogPosterior(design, config)
    sampler_config = SamplerConfig(
        chains=args.chains,
        warmup=args.warmup,
        draws=args.draws,
        target_accept=args.target_accept,
        max_tree_depth=args.max_tree_depth,
        seed=args.seed,
        jobs=args.jobs,
    )
    outputs = run_chains(
        posterior,
        posterior.dim,
        sampler_config,
        constrain=posterior.constrain_array,
        derived=posterior.derived,
        names=posterior.names,
        derived_names=derived_names(design.J, design.T),
    )
    for output in outputs:
        if output.status == "ok":
            _print(
                f"chain {output.chain_id}: step size {output.step_size:.4g}, "
                f"{output.divergence_count} divergences"
            )
        else:
            _print(f"chain {output.chain_id}: {output.status}")
    _write_draws(outputs, posterior, args.output)
    retained = sum(o.constrained.shape[0] for o in outputs if o.status == "ok")
    _print(f"wrote {retained} draws to {args.output}")
    return 0


# --------------------------------------------------------------- diagnose


def _read_draw_blocks(path):
    import pandas as pd

    frame = pd.read_csv(path)
    chain_ids = sorted(frame["chain"].unique())
    skip = {"chain", "draw", *(_STAT_COLUMNS)}
    names = [c for c in frame.columns if c not in skip]
    blocks = {}
    for name in names:
        blocks[name] = np.vstack(
            [frame.loc[frame["chain"] == cid, name].to_numpy() for cid in chain_ids]
        )
    divergent_fraction = float(frame["divergent"].mean()) if "divergent" in frame else 0.0
    return blocks, divergent_fraction


def _cmd_diagnose(args) -> int:
    blocks, divergent_fraction = _read_draw_blocks(args.draws)
    rep = diagnostics.convergence_report_from_blocks(blocks, divergent_fraction, args.threshold)
    with open(args.output, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["parameter", "mean", "sd", "hdi_3%", "hdi_97%", "r_hat", "ess_bulk", "divergent_fraction", "r_hat_rank"]
        )
        for row in rep.summaries:
            writer.writerow(
                [
                    row.name,
                    repr(row.posterior_mean),
                    repr(row.posterior_sd),
                    repr(row.hdi_low),
                    repr(row.hdi_high),
                    repr(row.r_hat),
                    repr(row.ess_bulk),
                    repr(row.divergent_fraction),
                    repr(row.r_hat_rank),
                ]
            )
    worst = max(
        (s for s in rep.summaries if s.name.startswith("beta_")),
        key=lambda s: s.r_hat,
        default=None,
    )
    if worst is not None:
        _print(f"worst causal R-hat: {worst.name} = {worst.r_hat:.4f}")
    sigma = next((s for s in rep.summaries if s.name == "sigma_gamma"), None)
    if sigma is not None:
        _print(f"sigma_gamma R-hat: {sigma.r_hat:.4f} (reported, not gated)")
    _print(f"convergence: {'PASS' if rep.passed else 'WARN'} at threshold {args.threshold}")
    _print(f"wrote {args.output}")
    return 0


# ----------------------------------------------------------------- report


def _security_draws(path) -> np.ndarray:
    import pandas as pd

    return pd.read_csv(path)["beta_security"].to_numpy()


def _cmd_report(args) -> int:
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    baseline = report.load_summary_csv(args.baseline)
    full = report.load_summary_csv(args.full)

    comparisons = report.compare_epochs(baseline, full)
    with open(out_dir / "epoch_comparison.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["factor", "beta_baseline", "beta_full", "delta", "or_multiplier", "or_percent"])
        for row in comparisons:
            writer.writerow(
                [
                    row.factor,
                    repr(row.beta_baseline),
                    repr(row.beta_full),
                    repr(row.delta),
                    repr(row.or_multiplier),
                    repr(row.or_percent),
                ]
            )
    _print("factor      baseline     full      delta   OR multiplier")
    for row in comparisons:
        _print(
            f"{row.factor:<10} {row.beta_baseline:>8.3f} {row.beta_full:>8.3f} "
            f"{row.delta:>8.3f} {row.or_percent:>10.2f}%"
        )

    alphas = {
        name: entry.mean for name, entry in full.items() if name.startswith("alpha_") and "raw" not in name
    }
    if alphas:
        rows = report.cluster_intercept_rows(alphas)
        with open(out_dir / "cluster_intercepts.csv", "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["cluster", "alpha", "probability", "percent"])
            for row in rows:
                writer.writerow(
                    [row.cluster, repr(row.alpha), repr(row.probability), f"{100 * row.probability:.2f}"]
                )

    summaries: dict[str, dict] = {}
    if args.thresholds:
        for item in args.thresholds.split(","):
            label, _, path = item.partition("=")
            if not path:
                raise SystemExit("--thresholds expects LABEL=PATH[,LABEL=PATH...]")
            summaries[label] = report.load_summary_csv(path)
        scaling = report.scaling_table(summaries)
        with open(out_dir / "scaling.csv", "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["factor"] + list(summaries) + ["crossover"])
            for row in scaling:
                writer.writerow(
                    [row.factor]
                    + [("" if row.betas[l] is None else repr(row.betas[l])) for l in summaries]
                    + [int(row.crossover)]
                )
        for row in scaling:
            if row.crossover:
                _print(f"sign crossover across thresholds: {row.factor}")
    else:
        summaries = {"baseline": baseline, "full": full}

    draws = {}
    if args.baseline_draws:
        draws["baseline"] = _security_draws(args.baseline_draws)
    if args.full_draws:
        draws["full"] = _security_draws(args.full_draws)
    written = report.export_plot_data(draws, summaries, out_dir)

    if not args.no_figures:
        if "forest" in written:
            figures.render_forest(written["forest"], out_dir / "forest.png")
        if "trajectory" in written:
            figures.render_trajectory(written["trajectory"], out_dir / "gamma_trajectory.png")
        if "density" in written:
            figures.render_density_shift(written["density"], out_dir / "density_shift.png")
    _print(f"wrote report files to {out_dir}")
    return 0


# ------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airdelay",
        description="Hierarchical Bayesian delay-cause attribution pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse, validate and filter on-time CSVs")
    p.add_argument("--input", required=True, help="file path or glob of BTS CSVs")
    p.add_argument("--threshold", type=int, default=100, help="monthly volume threshold")
    p.add_argument("--min-months", type=int, default=36, help="continuity minimum")
    p.add_argument("--epoch-end", default=None, help="keep records through YYYY-MM")
    p.add_argument(
        "--continuity-per-epoch",
        action="store_true",
        help="apply the continuity filter after the epoch split instead of before",
    )
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("cluster", help="fit airport clusters and select K")
    p.add_argument("--input", required=True, help="normalized records CSV")
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--output", required=True, help="assignment CSV (airport, cluster_id)")
    p.add_argument("--profile", default=None, help="profile table path (default: <output>_profile.csv)")
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("simulate", help="generate a synthetic panel")
    p.add_argument("--scenario", required=True, help="scenario file or 'default'")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", required=True, help="normalized records CSV")
    p.add_argument("--design", default=None, help="also write the generative design here")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("design", help="assemble the model design from records")
    p.add_argument("--records", required=True, help="normalized records CSV")
    p.add_argument("--assignment", required=True, help="cluster assignment CSV")
    p.add_argument("--config", default=None, help="model configuration file")
    p.add_argument("--covid-start", default=None, help="override pandemic window start YYYY-MM")
    p.add_argument("--covid-end", default=None, help="override pandemic window end YYYY-MM")
    p.add_argument("--grand-means-from", default=None, help="reuse another design's grand means")
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_design)

    p = sub.add_parser("fit", help="sample the posterior with the no-U-turn sampler")
    p.add_argument("--design", default=None, help="design CSV from the design step")
    p.add_argument("--records", default=None, help="normalized records CSV (with --assignment)")
    p.add_argument("--assignment", default=None)
    p.add_argument("--config", default=None, help="model configuration file")
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--warmup", type=int, default=2000)
    p.add_argument("--draws", type=int, default=2000)
    p.add_argument("--target-accept", type=float, default=0.8)
    p.add_argument("--max-tree-depth", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="chains to run in parallel")
    p.add_argument("--output", required=True, help="draws CSV")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("diagnose", help="convergence diagnostics and posterior summary")
    p.add_argument("--draws", required=True)
    p.add_argument("--threshold", type=float, default=1.01)
    p.add_argument("--output", required=True, help="summary CSV")
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("report", help="cross-epoch tables, plot data and figures")
    p.add_argument("--baseline", required=True, help="baseline-epoch summary CSV")
    p.add_argument("--full", required=True, help="full-horizon summary CSV")
    p.add_argument("--thresholds", default=None, help="LABEL=PATH[,LABEL=PATH...] summaries")
    p.add_argument("--baseline-draws", default=None, help="baseline draws CSV for the density shift")
    p.add_argument("--full-draws", default=None, help="full-horizon draws CSV for the density shift")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
