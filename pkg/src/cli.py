import json
import logging
from typing import Callable, Optional

import attrs
import click
from sqlalchemy.orm import Session

from src.config import RunConfig, load_config
from src.errors import FoodshockException
from src.model import create_registry
from src.toolkit import Toolkit

log = logging.getLogger(__name__)

ENVVAR_PREFIX = "FOODSHOCK"


def _run(ctx: click.Context, action: Callable[[Toolkit], object],
         adjust: Optional[Callable[[RunConfig], RunConfig]] = None) -> None:
    options = ctx.obj
    try:
        config = load_config(
            options["config"],
            data_dir=options["data_dir"],
            output_dir=options["out"],
            seed=options["seed"],
            threads=options["threads"],
        )
        if adjust is not None:
            config = adjust(config)
        engine = create_registry(options["registry_url"])
        with Session(engine) as session:
            try:
                with Toolkit(config, session) as toolkit:
                    action(toolkit)
            except FoodshockException:
                session.rollback()
                raise
    except FoodshockException as exception:
        log.error(f"{type(exception).__name__}: {exception.message}")
        click.echo(json.dumps(exception.as_dict(), sort_keys=True), err=True)
        ctx.exit(exception.exit_code)


def create_cli() -> click.Group:
    @click.group(context_settings={"auto_envvar_prefix": ENVVAR_PREFIX})
    @click.option("--config", "config", type=click.Path(dir_okay=False), default=None,
                  help="TOML run configuration.")
    @click.option("--data-dir", type=click.Path(file_okay=False), default=None,
                  help="Directory holding catalog/ and years/.")
    @click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
    @click.option("--seed", type=int, default=None, help="Seed for permutation tests and pair sampling.")
    @click.option("--threads", type=click.IntRange(min=-1), default=None, help="Worker processes for sampling.")
    @click.option("--registry-url", default=None, help="SQLAlchemy URL of the run registry.")
    @click.pass_context
    def cli(ctx: click.Context, config: Optional[str], data_dir: Optional[str], out: Optional[str],
            seed: Optional[int], threads: Optional[int], registry_url: Optional[str]):
        """
        Calibrates adaptation rules from historical food availability and simulates shock propagation.
        """
        ctx.obj = {
            "config": config,
            "data_dir": data_dir,
            "out": out,
            "seed": seed,
            "threads": threads,
            "registry_url": registry_url,
        }

    @cli.command()
    @click.pass_context
    def calibrate(ctx: click.Context):
        """Fit adaptation and substitution rules."""
        _run(ctx, lambda toolkit: toolkit.calibrate())

    @cli.command()
    @click.option("--scenario", envvar=f"{ENVVAR_PREFIX}_SCENARIO", default=None,
                  help="Configured scenario to run, all of them when omitted.")
    @click.pass_context
    def simulate(ctx: click.Context, scenario: Optional[str]):
        """Run the static and adaptive variant of configured shock scenarios."""
        _run(ctx, lambda toolkit: toolkit.simulate(scenario))

    @cli.command()
    @click.option("--pair", envvar=f"{ENVVAR_PREFIX}_PAIR", default=None,
                  help="Explicit shock pair AREA:ITEM,AREA:ITEM instead of sampling.")
    @click.option("--samples", envvar=f"{ENVVAR_PREFIX}_SAMPLES", type=click.IntRange(min=1), default=None,
                  help="Number of sampled pairs.")
    @click.option("--static", "static", is_flag=True, default=False, help="Disable adaptation.")
    @click.pass_context
    def superpose(ctx: click.Context, pair: Optional[str], samples: Optional[int], static: bool):
        """Measure superposition impacts of combined shocks."""

        def adjust(config: RunConfig) -> RunConfig:
            changes = {}
            if pair is not None:
                changes["pair"] = pair
            if samples is not None:
                changes["n_samples"] = samples
            if static:
                changes["adaptive"] = False
            return config.evolve(superposition=attrs.evolve(config.superposition, **changes))

        _run(ctx, lambda toolkit: toolkit.superpose(), adjust)

    @cli.command()
    @click.pass_context
    def validate(ctx: click.Context):
        """Reconcile simulations with benchmark years and sweep the stability thresholds."""
        _run(ctx, lambda toolkit: toolkit.validate())

    @cli.command()
    @click.option("--top", type=click.IntRange(min=1), default=10, show_default=True,
                  help="Rows listed per table.")
    @click.pass_context
    def report(ctx: click.Context, top: int):
        """Estimate rule impacts and list recent runs."""
        _run(ctx, lambda toolkit: toolkit.report(top))

    return cli
