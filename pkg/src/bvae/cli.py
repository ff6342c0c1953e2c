"""``bvae`` command line interface."""
from __future__ import annotations

import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from .closedform import center_targets, fit_closed_form, sample_cov_S, sample_mean_b, select_latent_dim
from .datagen import GenConfig, generate_dataset, load_dataset, save_dataset
from .harness import (FULL_GRID, ExperimentSpec, deviation_pct, emit_results, epochs_to_within, run_experiment,
                      write_curve)
from .nn import save_checkpoint
from .vae import TrainConfig, VaeArchitecture, apply_preinit, build_model, fit, split_train_test


def _dump(obj) -> None:
    click.echo(json.dumps(obj, indent=2, sort_keys=True))


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more logging.")
def main(verbose):
    """Closed-form bounds and training for Bernoulli VAEs."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--n", "n", type=int, required=True, help="Number of observations.")
@click.option("--d", "d", type=int, required=True, help="Observed dimension.")
@click.option("--k", "k", type=int, default=2, show_default=True, help="Latent rank.")
@click.option("--variances", type=str, default=None,
              help="Comma-separated latent variances (default 0.09,0.25 for k=2).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="CSV output path.")
def generate(n, d, k, variances, seed, out):
    """Generate a synthetic binary dataset (CSV + .meta.json)."""
    kw = {}
    if variances:
        kw["variances"] = tuple(float(v) for v in variances.split(","))
    data = generate_dataset(GenConfig(N=n, d=d, k=k, seed=seed, **kw))
    csv_path, meta_path = save_dataset(data, out)
    _dump({"csv": str(csv_path), "metadata": str(meta_path), "N": data.N, "d": data.d})


@main.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--kappa", type=int, default=2, show_default=True, help="Latent dimension.")
def bound(data, kappa):
    """Closed-form optimum and bound value on a dataset."""
    ds = load_dataset(data)
    sol = fit_closed_form(ds, kappa)
    _dump({
        "bound": sol.bound,
        "neg_bound": -sol.bound,
        "kappa": kappa,
        "N": ds.N,
        "d": ds.d,
        "b_hat": {"min": float(sol.b_hat.min()), "max": float(sol.b_hat.max()),
                  "mean": float(sol.b_hat.mean())},
        "eigenvalues": [float(v) for v in sol.eigenvalues],
    })


@main.command("select-dim")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
def select_dim(data):
    """Eigenvalues of the covariance of 4(x - 1/2) above 4, and their count."""
    Y = center_targets(load_dataset(data))
    kmax, eligible = select_latent_dim(sample_cov_S(Y, sample_mean_b(Y)))
    _dump({"kappa_max": kmax, "eligible": [float(v) for v in eligible]})


@main.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--arch", type=click.Choice(["canonical", "deep"]), default="canonical", show_default=True)
@click.option("--variant", type=click.Choice(["plain", "preinit"]), default="preinit", show_default=True)
@click.option("--kappa", type=int, default=2, show_default=True)
@click.option("--epochs", type=int, default=400, show_default=True)
@click.option("--batch", type=int, default=100, show_default=True)
@click.option("--lr", type=float, default=1e-4, show_default=True)
@click.option("--split-ratio", type=float, default=2 / 3, show_default=True)
@click.option("--mc-samples", type=int, default=1, show_default=True)
@click.option("--first-hidden", type=int, default=2000, show_default=True,
              help="Width of E1 in the canonical architecture.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None,
              help="Write the per-epoch TrainLog CSV here.")
@click.option("--checkpoint", type=click.Path(dir_okay=False), default=None,
              help="Save final parameters here.")
@click.option("--timing/--no-timing", default=False, show_default=True,
              help="Fill the wall_ms column (makes the CSV run-dependent).")
def train(data, arch, variant, kappa, epochs, batch, lr, split_ratio, mc_samples, first_hidden,
          seed, log_path, checkpoint, timing):
    """Train one VAE and report its final losses against the bound."""
    ds = load_dataset(data)
    cfg = TrainConfig(epochs=epochs, batch_size=batch, lr=lr, split_ratio=split_ratio,
                      seed=seed, mc_samples=mc_samples)
    train_ds, test_ds = split_train_test(ds, split_ratio, seed)
    sol = fit_closed_form(train_ds, kappa)
    if arch == "canonical":
        architecture = VaeArchitecture.canonical_for(ds.d, kappa, "plain", first_hidden)
    else:
        architecture = VaeArchitecture.deep(kappa, "plain")
    model = build_model(architecture, ds.d, np.random.default_rng(seed))
    if variant == "preinit":
        model = apply_preinit(model, sol)
    tlog = fit(model, train_ds, test_ds, cfg)
    if log_path:
        write_curve(tlog, log_path, include_timing=timing)
    if checkpoint:
        save_checkpoint(checkpoint, model.checkpoint_groups(),
                        extra={"architecture": asdict(model.architecture), "d": model.d})
    bounds = {"train": -sol.bound, "test": -sol.bound_on(test_ds)}
    summary = {"arch": arch, "variant": variant, "seed": seed, "epochs": epochs, "bound": bounds}
    if tlog.records:
        last = tlog.records[-1]
        summary["final"] = {"train": last.train_neg_elbo, "test": last.test_neg_elbo}
        summary["dev_pct"] = {"train": deviation_pct(last.train_neg_elbo, bounds["train"]),
                              "test": deviation_pct(last.test_neg_elbo, bounds["test"])}
        summary["epochs_to_within_2pct"] = epochs_to_within(tlog.train_losses(), bounds["train"], 2.0)
    _dump(summary)


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Output directory (overrides output_dir in the spec).")
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--timing/--no-timing", default=False, show_default=True)
@click.option("--full-grid", is_flag=True, default=False,
              help="Replace the spec's grid with d in {200,400,1000} x N in {100,5000,10000}.")
def experiment(spec_path, out, jobs, timing, full_grid):
    """Run a grid of (N, d) cells with R restarts of both variants."""
    spec = ExperimentSpec.from_json(spec_path)
    if full_grid:
        spec.grid = list(FULL_GRID)
    out_dir = Path(out or spec.output_dir)
    results, runs = run_experiment(spec, jobs=jobs)
    paths = emit_results(results, out_dir, runs, spec, include_timing=timing)
    failed = [r.run_id for r in runs if r.error]
    _dump({"summary_csv": str(paths["summary_csv"]), "summary_json": str(paths["summary_json"]),
           "runs": len(runs), "failed": failed})
    if failed:
        sys.exit(1)


if __name__ == "__main__":
    main()
