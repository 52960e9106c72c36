"""Command-line entry point.

Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 I/O error.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import io
from .checks import CHECKS, run_checks
from .config import RunConfig
from .errors import ConfigError, ShapeError
from .pipeline import cmd_bench_recall, cmd_gen, cmd_pipeline, cmd_profile

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


def _load_config(ctx: click.Context, overrides: dict) -> RunConfig:
    params = ctx.find_root().params
    base = RunConfig()
    if params.get("config_path"):
        base = RunConfig.from_dict(io.read_json(params["config_path"]))
    root_overrides = {
        "tau": params.get("tau"), "alpha": params.get("alpha"), "theta": params.get("theta"),
        "k_q": params.get("kq"), "k_k": params.get("kk"), "i_max": params.get("imax"),
        "reuse_interval": params.get("reuse_interval"),
        "rho_semantics": params.get("rho_semantics"),
        "workers": params.get("workers"), "output_dir": params.get("output_dir"),
        "synth.master_seed": params.get("seed"),
    }
    return base.merged({**root_overrides, **overrides})


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False),
              help="JSON config file; flags override its values.")
@click.option("--output-dir", type=click.Path(file_okay=False), help="Directory for all outputs.")
@click.option("--tau", type=float, help="Attention mass to cover when measuring density.")
@click.option("--alpha", type=float, help="Upper quantile used for the conservative density.")
@click.option("--theta", type=float, help="Sparsity threshold in the rho rule.")
@click.option("--kq", type=int, help="Number of query blocks.")
@click.option("--kk", type=int, help="Number of key blocks.")
@click.option("--imax", type=int, help="Co-clustering iterations.")
@click.option("--reuse-interval", type=int, help="Steps between reclusterings.")
@click.option("--rho-semantics", type=click.Choice(["as-written", "density"]))
@click.option("--seed", type=int, help="Master seed for the synthetic stack and tokens.")
@click.option("--workers", type=int, help="Worker processes for per-cell fan-out.")
@click.option("-v", "--verbose", is_flag=True)
def cli(verbose, **_):
    """Block-sparse attention lab: profile, co-cluster, select, attend, verify."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--calibration-count", type=int, help="Number of calibration inputs.")
@click.pass_context
def gen(ctx, calibration_count):
    """Write the synthetic stack, calibration inputs and manifest."""
    cfg = _load_config(ctx, {"calibration_count": calibration_count})
    click.echo(cmd_gen(cfg))
    return EXIT_OK


@cli.command()
@click.pass_context
def profile(ctx):
    """Profile the generated stack into schedule.json."""
    cfg = _load_config(ctx, {})
    click.echo(cmd_profile(cfg))
    return EXIT_OK


@cli.command()
@click.option("--steps", type=int, help="Number of simulated steps.")
@click.option("--epsilon", type=float, help="Per-step drift scale for the reuse proxy.")
@click.option("--rho-override", type=float, help="Force this keep ratio in every cell.")
@click.option("--dense-layer", "dense_layers", type=int, multiple=True,
              help="Layer index that always runs dense (repeatable).")
@click.pass_context
def pipeline(ctx, steps, epsilon, rho_override, dense_layers):
    """Run the offline + online pipeline and write report.json."""
    cfg = _load_config(ctx, {"steps": steps, "epsilon": epsilon, "rho_override": rho_override,
                             "dense_layers": tuple(dense_layers) or None})
    click.echo(cmd_pipeline(cfg))
    return EXIT_OK


@cli.command("bench-recall")
@click.option("--seeds", help="Comma-separated seeds (default 0..9).")
@click.option("--n", "n", type=int, help="Token count.")
@click.option("--mass-fraction", type=float, help="Reference attention mass fraction.")
@click.pass_context
def bench_recall(ctx, seeds, n, mass_fraction):
    """Compare co-clustering and K-means recall at matched block-pair budget."""
    parsed = None
    if seeds:
        try:
            parsed = tuple(int(s) for s in seeds.split(",") if s.strip())
        except ValueError:
            raise click.BadParameter("seeds must be comma-separated integers") from None
    params = ctx.find_root().params
    cfg = _load_config(ctx, {"recall.seeds": parsed, "recall.n": n,
                             "recall.mass_fraction": mass_fraction,
                             "recall.k_q": params.get("kq"), "recall.k_k": params.get("kk")})
    click.echo(cmd_bench_recall(cfg))
    return EXIT_OK


@cli.command()
@click.option("--check", "only", multiple=True,
              type=click.Choice([f.__name__.removeprefix("check_") for f in CHECKS]),
              help="Run only the named check (repeatable).")
@click.pass_context
def verify(ctx, only):
    """Run the invariant suite; exit 0 only if every check passes."""
    cfg = _load_config(ctx, {})
    results = run_checks(cfg, set(only) or None)
    ok = all(r["passed"] for r in results)
    root = Path(cfg.output_dir)
    path = io.write_json(root / "details.json", {"passed": ok, "checks": results})
    manifest = io.Manifest(root)
    manifest.add(path, "verify_details")
    manifest.save()
    for r in results:
        click.echo(f"{'PASS' if r['passed'] else 'FAIL'}  {r['name']}")
    return EXIT_OK if ok else EXIT_CHECK


def main(argv=None) -> int:
    try:
        rv = cli.main(args=argv, prog_name="blocksparse-lab", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return EXIT_USAGE
    except (OSError, io.FormatError, ShapeError) as exc:
        click.echo(f"i/o error: {exc}", err=True)
        return EXIT_IO
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
