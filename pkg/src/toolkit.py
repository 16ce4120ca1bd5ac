import json
import logging
import os
import time
from contextlib import contextmanager
from typing import Iterator, Optional

import numpy as np
import pandas as pd
from sqlalchemy import select
from sqlalchemy.orm import Session

from src.analysis.hdi import hdi_group_losses
from src.analysis.impacts import impact_estimators
from src.analysis.losses import combined_losses, loss_per_capita
from src.analysis.reconciliation import reconciliation_harness
from src.analysis.superposition import SuperpositionSample, sample_combined_shocks
from src.calibration.events import events_frame
from src.calibration.fit import fit_rules
from src.calibration.growth import normalize_growth
from src.calibration.rules import AdaptationRuleSet, read_rules, write_rules
from src.calibration.stability import stability_analysis, stability_sweep
from src.calibration.substitution import tests_frame
from src.catalog import Catalog, load_catalog
from src.config import ADAPTIVE_SUFFIX, STATIC_SUFFIX, RunConfig
from src.errors import DataException, MissingYearsException, ScenarioException
from src.model import KnownRun, RunStatus, SuperpositionSampleRecord
from src.parameters import ParameterSet, available_years, load_parameter_set, load_years, threshold_small_shares
from src.pubsub import Publisher
from src.simulator import ShockSpec, run_baseline, run_scenario
from src.status import StatusMessage
from src.utils import directory_checksums, parse_pair, pretty_duration, safe_name, stable_hash, write_frame, write_json

log = logging.getLogger(__name__)

SEED_RANGE = 2 ** 32


class Toolkit:
    """
    Runs the commands of one configuration: loads inputs, writes outputs with their manifests and records every run
    in the registry.
    """
    config: RunConfig
    seed: int

    def __init__(self, config: RunConfig, session: Session, status: Optional[StatusMessage] = None):
        if config.seed is None:
            config = config.evolve(seed=int(np.random.SeedSequence().entropy % SEED_RANGE))
            log.info(f"No seed configured, drew {config.seed}")
        self.config = config
        self.seed = config.seed
        self.session = session
        self.publisher = Publisher()
        self.status = status or StatusMessage()

        self._catalog: Optional[Catalog] = None
        self._checksums: Optional[dict[str, str]] = None
        self._load_reports: dict[int, dict] = {}

    def __enter__(self):
        self.publisher.subscribe(self.status)
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.publisher.unsubscribe(self.status)

    @property
    def catalog(self) -> Catalog:
        if self._catalog is None:
            self._catalog = load_catalog(self.config.catalog_dir)
        return self._catalog

    def input_checksums(self) -> dict[str, str]:
        if self._checksums is None:
            if not os.path.isdir(self.config.data_dir):
                raise DataException(f"data directory {self.config.data_dir} does not exist",
                                    path=self.config.data_dir)
            self._checksums = directory_checksums(self.config.data_dir)
        return self._checksums

    def _output(self, *parts: str) -> str:
        path = os.path.join(self.config.output_dir, *parts)
        os.makedirs(path, exist_ok=True)
        return path

    def _year_range(self) -> tuple[int, int]:
        years = available_years(self.config.years_dir)
        if not years:
            raise DataException("no yearly parameter directories found", path=self.config.years_dir)
        first = self.config.first_year if self.config.first_year is not None else self.config.calibration.base_year
        last = self.config.last_year if self.config.last_year is not None else years[-1]
        return first, last

    def load_yearly(self, first: int, last: int) -> list[ParameterSet]:
        """
        Loads and thresholds every year of ``[first, last]``; all of them must be present.
        """
        years = list(range(first, last + 1))
        present = set(available_years(self.config.years_dir))
        missing = [year for year in years if year not in present]
        if missing:
            raise MissingYearsException(missing, path=self.config.years_dir)
        floor = self.config.calibration.share_floor
        yearly = [threshold_small_shares(params, floor)
                  for params in load_years(self.config.years_dir, years, self.catalog)]
        for params in yearly:
            self._load_reports[params.year] = params.report.as_dict()
        return yearly

    def simulation_params(self) -> ParameterSet:
        year = self.config.simulation_year
        if year is None:
            year = self._year_range()[1]
        params = threshold_small_shares(
            load_parameter_set(self.config.years_dir, year, self.catalog), self.config.calibration.share_floor)
        self._load_reports[year] = params.report.as_dict()
        return params

    def rules(self) -> AdaptationRuleSet:
        return read_rules(os.path.join(self.config.output_dir, "calibration"), self.catalog)

    def _manifest(self, command: str, counts: dict, **extra) -> dict:
        return {
            "command": command,
            "config": self.config.as_dict(),
            "seed": self.seed,
            "inputs": self.input_checksums(),
            "load_reports": {str(year): report for year, report in sorted(self._load_reports.items())},
            "counts": counts,
            **extra,
        }

    @contextmanager
    def _run(self, command: str, output_dir: str, **identity) -> Iterator[KnownRun]:
        config_hash = stable_hash(self.config.as_dict())
        run_id = stable_hash({"command": command, "config": config_hash, "inputs": self.input_checksums(),
                              **identity})
        run = KnownRun.as_unique(self.session, run_id, command=command, config_hash=config_hash,
                                 output_dir=output_dir)
        run.status = RunStatus.RUNNING.value
        self.session.commit()
        self.publisher.message("command", f"{command} -> {output_dir}")
        start = time.time()
        try:
            yield run
        except Exception:
            run.status = RunStatus.FAILED.value
            self.session.commit()
            raise
        self.session.commit()
        log.info(f"Recorded run {run_id[:12]} ({command})")
        self.publisher.message("comment", f"{command} finished in {pretty_duration(time.time() - start)}")

    def _finish(self, run: KnownRun, manifest: dict, directory: str):
        write_json(manifest, os.path.join(directory, "manifest.json"))
        run.finish(json.dumps(manifest, sort_keys=True, default=str))

    def calibrate(self) -> str:
        """
        Fits adaptation and substitution rules on the configured year range and checks their stability.
        :return: output directory
        """
        directory = self._output("calibration")
        with self._run("calibrate", directory) as run:
            config = self.config.calibration_config()
            first, last = self._year_range()
            yearly = self.load_yearly(first, last)
            normalized = normalize_growth(yearly, config.base_year)
            result = fit_rules(normalized, self.catalog, config)
            self.publisher.message("standard", f"{len(result.events)} events, {len(result.rules.table)} rule entries")

            write_frame(events_frame(result.events, self.catalog), os.path.join(directory, "events.csv"))
            write_rules(result.rules, directory, self.catalog)
            write_frame(tests_frame(result.substitution, self.catalog),
                        os.path.join(directory, "substitution_tests.csv"))
            coverage = result.rules.coverage()
            write_frame(coverage, os.path.join(directory, "coverage.csv"))

            stability = None
            try:
                report = stability_analysis(normalized, self.catalog, config)
                write_frame(report.frame(), os.path.join(directory, "stability.csv"))
                stability = report.mcc
            except DataException as exception:
                log.warning(f"Stability analysis skipped: {exception.message}")
                self.publisher.message("comment", f"stability analysis skipped: {exception.message}")

            counts = {
                "years": [first, last],
                "events": len(result.events),
                "rules": {record.family: {"multipliers": record.multipliers, "rewirers": record.rewirers}
                          for record in coverage.itertuples(index=False)},
            }
            self._finish(run, self._manifest("calibrate", counts, stability=stability), directory)
        return directory

    def _write_simulation(self, directory: str, trajectory, report, command: str, run_counts: dict) -> None:
        write_frame(trajectory.frame(self.catalog), os.path.join(directory, "trajectory.csv"))
        write_frame(report.frame(self.catalog), os.path.join(directory, "losses.csv"))
        write_frame(trajectory.adaptation_frame(self.catalog), os.path.join(directory, "adaptations.csv"))
        write_json(self._manifest(command, run_counts), os.path.join(directory, "manifest.json"))

    def simulate(self, name: Optional[str] = None) -> list[str]:
        """
        Runs the static and adaptive variant of each configured scenario (or only ``name``).
        :return: scenario output directories
        """
        names = [name] if name is not None else sorted(self.config.scenarios)
        if not names:
            raise ScenarioException("no scenarios configured")
        settings = {scenario: self.config.scenario(scenario) for scenario in names}
        shocks = {scenario: ShockSpec.parse(settings[scenario].shocks, self.catalog, scenario) for scenario in names}

        directories = []
        for scenario in names:
            base_name = safe_name(scenario)
            directory = self._output("simulate", base_name)
            with self._run("simulate", directory, scenario=scenario) as run:
                shock = shocks[scenario]
                static_config = self.config.simulation.static()
                adaptive_config = self.config.simulation.evolve(
                    adaptation_enabled=settings[scenario].adaptive,
                    substitution_enabled=settings[scenario].substitution,
                )
                params = self.simulation_params()
                rules = self.rules() if adaptive_config.adaptive else None

                baseline = run_baseline(params, static_config)
                static = run_scenario(params, shock, None, baseline, static_config)
                adaptive = run_scenario(params, shock, rules, baseline, adaptive_config)
                static_report = loss_per_capita(baseline, static, self.catalog, f"{scenario}{STATIC_SUFFIX}", shock)
                adaptive_report = loss_per_capita(baseline, adaptive, self.catalog, f"{scenario}{ADAPTIVE_SUFFIX}",
                                                  shock, adaptive=adaptive_config.adaptive)

                shock_counts = {"shock": shock.describe(self.catalog), "year": params.year}
                self._write_simulation(self._output("simulate", f"{base_name}{STATIC_SUFFIX}"), static,
                                       static_report, "simulate", {**shock_counts, "adaptations": 0})
                self._write_simulation(self._output("simulate", f"{base_name}{ADAPTIVE_SUFFIX}"), adaptive,
                                       adaptive_report, "simulate",
                                       {**shock_counts, "adaptations": len(adaptive.adaptations)})

                write_frame(combined_losses(static_report, adaptive_report, self.catalog),
                            os.path.join(directory, "losses.csv"))
                items = sorted({target.item for target in shock.targets})
                write_frame(hdi_group_losses(static_report, adaptive_report, self.catalog, items),
                            os.path.join(directory, "hdi.csv"))
                self.publisher.message(
                    "standard", f"{scenario}: {len(adaptive.adaptations)} adaptations, "
                                f"{float(np.abs(static_report.per_capita).sum()):.4g} summed static loss")
                self._finish(run, self._manifest("simulate", {**shock_counts, "scenario": scenario}), directory)
            directories.append(directory)
        return directories

    def _known_samples(self, sweep_id: str) -> dict[int, SuperpositionSample]:
        records = self.session.scalars(
            select(SuperpositionSampleRecord).where(SuperpositionSampleRecord.sweep_id == sweep_id))
        return {
            record.sample_index: SuperpositionSample(record.sample_index, record.first_sector, record.second_sector,
                                                     record.si_items, record.si_all, record.class_items,
                                                     record.class_all)
            for record in records
        }

    def superpose(self) -> str:
        """
        Superposition impacts of an explicit pair or of randomly sampled pairs; samples already stored for the same
        sweep are reused.
        :return: output directory
        """
        settings = self.config.superposition
        directory = self._output("superpose")
        with self._run("superpose", directory) as run:
            pairs = None
            if settings.pair is not None:
                first, second = (self.catalog.sector_index(*self.catalog.resolve_sector(reference))
                                 for reference in parse_pair(settings.pair))
                pairs = [(first, second)]
            config = self.config.simulation.evolve(adaptation_enabled=settings.adaptive,
                                                   substitution_enabled=settings.adaptive)
            params = self.simulation_params()
            rules = self.rules() if config.adaptive else None

            known = self._known_samples(run.run_id)

            def store(sample: SuperpositionSample):
                record = SuperpositionSampleRecord.as_unique(
                    self.session,
                    sweep_id=run.run_id,
                    sample_index=sample.index,
                    first_sector=sample.first,
                    second_sector=sample.second,
                    si_items=sample.si_items,
                    si_all=sample.si_all,
                    class_items=sample.class_items,
                    class_all=sample.class_all,
                )
                self.session.add(record)
                self.session.commit()

            report = sample_combined_shocks(
                params, rules, self.catalog, config, settings.n_samples, self.seed,
                pool_size=settings.pool_size,
                threads=self.config.threads,
                pairs=pairs,
                known=known,
                publisher=self.publisher,
                on_sample=store,
            )
            write_frame(report.frame(self.catalog), os.path.join(directory, "superposition.csv"))
            summary = report.summary()
            write_json(summary, os.path.join(directory, "summary.json"))
            self.publisher.message(
                "standard", f"mean SI over all items {summary['mean_si_all']:.4g} per person "
                            f"(one-sided p {summary['p_value_all']:.3g})")
            counts = {"samples": len(report.samples), "year": params.year}
            self._finish(run, self._manifest("superpose", counts, summary=summary), directory)
        return directory

    def validate(self) -> str:
        """
        Replays the first benchmark year with rules trained on earlier years and sweeps the event thresholds of the
        stability analysis.
        :return: output directory
        """
        settings = self.config.validation
        directory = self._output("validate")
        with self._run("validate", directory) as run:
            config = self.config.calibration_config()
            first = self.config.first_year if self.config.first_year is not None else config.base_year
            yearly = self.load_yearly(first, settings.benchmark_last_year)

            training = [params for params in yearly if params.year <= settings.train_last_year]
            trained = fit_rules(normalize_growth(training, config.base_year), self.catalog, config)
            result = reconciliation_harness(yearly, trained.rules, self.catalog, config, self.config.simulation,
                                            settings.benchmark_first_year, settings.benchmark_last_year)
            write_frame(result.statistics, os.path.join(directory, "reconciliation.csv"))
            write_frame(result.summary(), os.path.join(directory, "reconciliation_summary.csv"))

            calibration_last = self._year_range()[1]
            normalized = normalize_growth([params for params in yearly if params.year <= calibration_last],
                                          config.base_year)
            sweep = stability_sweep(normalized, self.catalog, config, settings.sweep)
            write_frame(sweep, os.path.join(directory, "stability.csv"))

            counts = {"training_events": len(trained.events), "benchmark_events": len(result.events)}
            self._finish(run, self._manifest("validate", counts), directory)
        return directory

    def report(self, top: int = 10) -> str:
        """
        Impact estimates of the fitted rules and the latest registered runs.
        :return: output directory
        """
        directory = self._output("report")
        with self._run("report", directory) as run:
            params = self.simulation_params()
            impacts = impact_estimators(params, self.rules(), self.catalog)
            write_frame(impacts.frame(), os.path.join(directory, "impacts.csv"))
            for table, frame in impacts.top(top).items():
                self.publisher.message("comment", f"top {table} rules")
                for line in frame.to_string(index=False).splitlines():
                    self.publisher.message("standard", line)

            runs = self.session.scalars(select(KnownRun).order_by(KnownRun.created_at.desc()).limit(top))
            listing = pd.DataFrame([{
                "run": known.run_id[:12],
                "command": known.command,
                "status": known.status,
                "output_dir": known.output_dir,
            } for known in runs], columns=["run", "command", "status", "output_dir"])
            for line in listing.to_string(index=False).splitlines():
                self.publisher.message("standard", line)

            counts = {"trade": len(impacts.trade), "substitution": len(impacts.substitution),
                      "production": len(impacts.production), "year": params.year}
            self._finish(run, self._manifest("report", counts), directory)
        return directory
