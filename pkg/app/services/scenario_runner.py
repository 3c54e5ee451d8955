"""Experiment orchestration.

One replica advances a surrogate world day by day and, in lockstep, the
risk-model ensemble of the user base:

    policy -> contact schedule -> KMC -> resolved contacts -> observations
    -> DA cycle -> classification -> end-of-day policy decisions

Replicas are independent and may run in a process pool. All outputs are
written by the parent process, sorted by replica.
"""
import copy
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app import __version__, config
from app.models.scenario_config import ScenarioConfig
from app.services import riskmodel
from app.services.assimilation import da_cycle, init_ensemble
from app.services.classification import (
    ContactHistory,
    baseline_contact_tracing,
    baseline_test_only,
    classify,
    positive_tested,
    roc_curve,
)
from app.services.interventions import PolicyState, apply_policy, begin_day, duration_quantiles, isolated_fraction
from app.services.kmc import EventLog, HealthState, daily_aggregates, init_world, run_kmc
from app.services.network import (
    GROUP_COMMUNITY,
    ContactNetwork,
    generate_static_network,
    load_network,
    mean_edge_activity_array,
    resolve_contacts,
    sample_day_schedule,
)
from app.services.observations import (
    AssaySpec,
    ObservationSet,
    administer_tests,
    sensor_readings,
    serology_tests,
    status_observations,
)
from app.services.user_base import UserBase, select_user_base
from app.utils.exceptions import RiskNetError
from app.utils.rng import make_rng

logger = logging.getLogger(__name__)

SNAPSHOT_DIR = "snapshots"
DAILY_FILE = "daily.csv"
ROC_FILE = "roc.csv"
LEDGER_FILE = "isolation_ledger.csv"
DIAGNOSTICS_FILE = "da_diagnostics.csv"
OBSERVATIONS_FILE = "observations.csv"
EVENTS_FILE = "events.csv"
MANIFEST_FILE = "manifest.json"
REFERENCE_FILE = "daily_with_reference.csv"


@dataclass
class ReplicaResult:
    replica: int
    daily: pd.DataFrame
    roc: pd.DataFrame
    ledger: pd.DataFrame
    diagnostics: pd.DataFrame
    observations: pd.DataFrame
    events: Optional[pd.DataFrame]
    snapshots: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)
    summary: Dict = field(default_factory=dict)


def build_network(scenario: ScenarioConfig) -> ContactNetwork:
    if scenario.network_path:
        return load_network(scenario.network_path)
    return generate_static_network(scenario.network)


def _exogenous_weight(network: ContactNetwork, user_base: UserBase) -> Optional[np.ndarray]:
    if not np.any(user_base.k_ext):
        return None
    return user_base.k_ext * mean_edge_activity_array(network, user_base.nodes)


class ObservationSource:
    """Per-day observations, either emitted from the world or replayed from a stream"""

    def __init__(self, scenario: ScenarioConfig, user_base: UserBase, rng: np.random.Generator):
        testing = scenario.testing
        self.testing = testing
        self.user_base = user_base
        self.rng = rng
        self.budget = int(round(testing.budget_fraction * user_base.size))
        self.serology_budget = int(round(testing.serology_budget_fraction * user_base.size))
        self.diagnostic = AssaySpec.from_config(testing.diagnostic)
        self.sensor = AssaySpec.from_config(testing.sensor)
        self.serology = AssaySpec.from_config(testing.serology)
        n_sensor = int(round(testing.sensor_fraction * user_base.size))
        self.sensor_users = np.sort(rng.choice(user_base.nodes, size=n_sensor, replace=False)) if n_sensor else None
        self.stream = ObservationSet.from_csv(scenario.observation_stream) if scenario.observation_stream else None

    def emit(self, world, day: int, prevalence: float, resistant_prevalence: float) -> ObservationSet:
        if self.stream is not None:
            return self.stream.select(day=day)
        users = self.user_base.nodes
        parts = [administer_tests(world, users, self.budget, self.diagnostic, prevalence, day, self.rng)]
        if self.sensor_users is not None:
            parts.append(
                sensor_readings(
                    world,
                    self.sensor_users,
                    self.sensor,
                    prevalence,
                    day,
                    self.rng,
                    include_negative=self.testing.assimilate_negative_sensors,
                )
            )
        if self.testing.serology_enabled and self.serology_budget:
            parts.append(serology_tests(world, users, self.serology_budget, self.serology, resistant_prevalence, day, self.rng))
        if self.testing.status_observations:
            parts.append(status_observations(world, users, day))
        return ObservationSet.concat(parts)


def _user_prevalence(states: np.ndarray, column: int, n_users: int) -> float:
    m = states.shape[0]
    return max(float(states[:, column].sum()) / (n_users * m), 1.0 / n_users)


def _rate_row(prefix: str, result) -> Dict[str, float]:
    return {f"{prefix}_tpr": result.tpr, f"{prefix}_ppf": result.ppf, f"{prefix}_fpr": result.fpr}


def epidemic_summary(world, daily: pd.DataFrame) -> Dict[str, float]:
    infected = world.cumulative_infections + world.initial_infectious
    return {
        "cumulative_infections": int(world.cumulative_infections),
        "cumulative_hospitalizations": int(world.cumulative_hospitalizations),
        "cumulative_deaths": int(world.cumulative_deaths),
        "ifr": world.cumulative_deaths / infected if infected else 0.0,
        "hospitalization_rate": world.cumulative_hospitalizations / infected if infected else 0.0,
        "peak_daily_deaths_per_100k": float(daily["new_deaths_7d"].max()) if len(daily) else 0.0,
    }


def run_replica(scenario: ScenarioConfig, replica: int, network: Optional[ContactNetwork] = None) -> ReplicaResult:
    """Run one replica of the daily loop"""
    started = time.monotonic()
    seed = scenario.seed
    network = copy.deepcopy(network) if network is not None else build_network(scenario)
    network.rng = make_rng(seed, replica, "hospital")
    contact_rng = make_rng(seed, replica, "contacts")
    kmc_rng = make_rng(seed, replica, "kmc")
    obs_rng = make_rng(seed, replica, "observations")
    da_rng = make_rng(seed, replica, "assimilation")

    world = init_world(network, scenario.initial_infectious_fraction, make_rng(seed, replica, "world"))
    user_base = select_user_base(
        network, scenario.user_base.fraction, scenario.user_base.topology, make_rng(seed, replica, "user_base")
    )
    users = user_base.nodes
    n_users = user_base.size
    evaluated = network.group[users] == GROUP_COMMUNITY
    source = ObservationSource(scenario, user_base, obs_rng)
    policy = PolicyState.create(scenario.policy, network, scenario.policy_start_day())
    history = ContactHistory(
        lookback_days=scenario.policy.trace_lookback_days,
        min_duration=scenario.policy.trace_min_duration_minutes * config.MINUTE,
    )
    threshold = scenario.classification_threshold()
    roc_days = {scenario.day_index(d): d.isoformat() for d in scenario.roc_dates}
    da = scenario.da

    ensemble = None
    if da.enabled:
        rates = np.column_stack([world.h[users], world.d[users], world.d_prime[users]])
        ensemble = init_ensemble(rates, scenario.prior, da.ensemble_size, make_rng(seed, replica, "ensemble"), t=0.0)

    log = EventLog()
    prevalence: List[float] = []
    daily_rows, roc_rows, diag_rows, obs_parts = [], [], [], []
    snapshots: Dict[str, Dict[str, np.ndarray]] = {}

    for day in range(scenario.days):
        begin_day(network, policy, day)
        schedule = sample_day_schedule(network, day, contact_rng)
        world, day_log = run_kmc(world, network, [schedule], day + 1.0, kmc_rng)
        log.extend(day_log)
        prevalence.append(float(np.count_nonzero(world.state == HealthState.I)) / network.n_persons)
        contacts = resolve_contacts(schedule, network).restrict(user_base.index_map)
        history.add(day, contacts)

        if ensemble is not None:
            p_infectious = _user_prevalence(ensemble.states, riskmodel.I, n_users)
            p_resistant = _user_prevalence(ensemble.states, riskmodel.R, n_users)
        else:
            truth_i = np.isin(world.state[users], (HealthState.I, HealthState.H)).mean()
            p_infectious = max(float(truth_i), 1.0 / n_users)
            p_resistant = max(float((world.state[users] == HealthState.R).mean()), 1.0 / n_users)
        observations = source.emit(world, day, p_infectious, p_resistant)
        obs_parts.append(observations.to_frame())

        exo = _exogenous_weight(network, user_base)
        row = {"day": day}
        if ensemble is not None:
            if day < da.spin_up_days:
                ensemble, trajectory = riskmodel.integrate(
                    ensemble, contacts, day, day + 1.0, scenario.integrator, exogenous_weight=exo, n_users=n_users
                )
                diag = {
                    "t": day + 1.0,
                    "n_observations": 0.0,
                    "mean_I": float(ensemble.states[:, riskmodel.I].mean()),
                    "spread_I": float(ensemble.states[:, riskmodel.I].std(axis=0).mean()),
                    "closure_in_band": float(np.mean(trajectory.closure_in_band)) if trajectory.closure_in_band else 1.0,
                }
            else:
                cycle = da_cycle(
                    ensemble,
                    observations,
                    contacts,
                    day,
                    day + 1.0,
                    da,
                    scenario.prior,
                    da_rng,
                    integrator=scenario.integrator,
                    exogenous_weight=exo,
                    index_map=user_base.index_map,
                    n_users=n_users,
                )
                ensemble, diag = cycle.ensemble, cycle.diagnostics
            diag_rows.append({"day": day, **diag})

        truth = world.state[users] == HealthState.I
        test_only = baseline_test_only(observations, user_base.index_map, truth, evaluated)
        tracing = baseline_contact_tracing(observations, history, day, user_base.index_map, truth, evaluated)
        row.update(_rate_row("test_only", test_only))
        row.update(_rate_row("tracing", tracing))

        flagged = None
        if ensemble is not None:
            mean_i = ensemble.states[:, riskmodel.I].mean(axis=0)
            result = classify(mean_i, threshold, truth, evaluated)
            row.update(_rate_row("da", result))
            row["da_flagged"] = result.n_flagged
            flagged = result.flags if day >= da.spin_up_days else None
            if day in roc_days:
                snapshots[f"day{day:03d}_r{replica:02d}"] = {
                    "mean_infectious": mean_i,
                    "truth": truth,
                    "evaluated": evaluated,
                    "day": np.array(day),
                    "replica": np.array(replica),
                }
                for point in roc_curve(mean_i, truth, scenario.roc_thresholds, evaluated):
                    roc_rows.append({"day": day, "date": roc_days[day], "method": "da", **asdict(point)})
        if day in roc_days:
            for name, base in (("test_only", test_only), ("tracing", tracing)):
                roc_rows.append(
                    {"day": day, "date": roc_days[day], "method": name, "threshold": np.nan,
                     "ppf": base.ppf, "tpr": base.tpr, "fpr": base.fpr}
                )

        notified = np.union1d(
            positive_tested(observations, user_base.index_map),
            history.traced(positive_tested(observations, user_base.index_map), day),
        )
        decisions = apply_policy(network, policy, user_base, day, flagged=flagged, notified=notified)
        row["isolated_fraction"] = isolated_fraction(policy, network.n_persons)
        row["newly_isolated"] = decisions["isolated"]
        daily_rows.append(row)
        counts = world.counts()
        logger.info(
            f"[{scenario.name} r{replica}] day {day}: S={counts[0]} E={counts[1]} I={counts[2]} H={counts[3]} "
            f"R={counts[4]} D={counts[5]}, observations={len(observations)}, "
            f"isolated={row['isolated_fraction']:.3f}"
        )

    aggregates = daily_aggregates(log, network.n_persons, prevalence)
    daily = aggregates.merge(pd.DataFrame(daily_rows), on="day", how="left")
    daily.insert(0, "replica", replica)
    summary = {
        **epidemic_summary(world, aggregates),
        "isolation_duration_days": duration_quantiles(policy, scenario.days),
        "mean_isolated_fraction": float(daily["isolated_fraction"].mean()),
        "user_base": user_base.summary(),
        "n_beds": int(network.n_beds),
    }
    ledger = policy.ledger.to_frame(end_day=scenario.days)
    ledger.insert(0, "replica", replica)
    diagnostics = pd.DataFrame(diag_rows)
    if len(diagnostics):
        diagnostics.insert(0, "replica", replica)
    observations_frame = pd.concat(obs_parts, ignore_index=True) if obs_parts else ObservationSet.empty().to_frame()
    observations_frame.insert(0, "replica", replica)
    events = None
    if scenario.write_event_log:
        events = log.to_frame()
        events.insert(0, "replica", replica)
    roc = pd.DataFrame(roc_rows, columns=["day", "date", "method", "threshold", "ppf", "tpr", "fpr"])
    roc.insert(0, "replica", replica)
    logger.info(f"[{scenario.name} r{replica}] finished in {time.monotonic() - started:.1f}s: {summary}")
    return ReplicaResult(
        replica=replica,
        daily=daily,
        roc=roc,
        ledger=ledger,
        diagnostics=diagnostics,
        observations=observations_frame,
        events=events,
        snapshots=snapshots,
        summary=summary,
    )


def _replica_job(payload: Tuple[str, int]) -> ReplicaResult:
    raw, replica = payload
    config.configure_logging()
    return run_replica(ScenarioConfig.model_validate_json(raw), replica)


def run_replicas(scenario: ScenarioConfig) -> List[ReplicaResult]:
    if scenario.workers > 1 and scenario.replicas > 1:
        raw = scenario.model_dump_json()
        with ProcessPoolExecutor(max_workers=scenario.workers) as pool:
            return list(pool.map(_replica_job, [(raw, r) for r in range(scenario.replicas)]))
    network = build_network(scenario)
    return [run_replica(scenario, r, network) for r in range(scenario.replicas)]


def _concat(frames: Sequence[Optional[pd.DataFrame]]) -> pd.DataFrame:
    frames = [f for f in frames if f is not None and len(f)]
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def merge_reference(daily: pd.DataFrame, reference_path, scenario: ScenarioConfig) -> pd.DataFrame:
    """Replica-mean daily series side by side with a reference series"""
    reference = pd.read_csv(reference_path)
    if "day" not in reference.columns:
        if "date" not in reference.columns:
            raise ValueError("reference series needs a day or date column")
        reference["day"] = [scenario.day_index(pd.Timestamp(d).date()) for d in reference["date"]]
    columns = [c for c in daily.columns if c not in ("replica",) and pd.api.types.is_numeric_dtype(daily[c])]
    mean = daily[columns].groupby("day", as_index=False).mean()
    return mean.merge(reference, on="day", how="left", suffixes=("", "_reference"))


def _manifest(scenario: ScenarioConfig, status: str, error: Optional[str] = None, results=()) -> Dict:
    return {
        "name": scenario.name,
        "status": status,
        "error": error,
        "config_hash": scenario.config_hash(),
        "config": scenario.model_dump(mode="json"),
        "seeds": {"seed": scenario.seed, "network_seed": scenario.network.seed, "replicas": scenario.replicas},
        "versions": {
            "package": __version__,
            "scenario_schema": config.SCENARIO_SCHEMA_VERSION,
            "network_format": config.NETWORK_FORMAT_VERSION,
            "ensemble_format": config.ENSEMBLE_FORMAT_VERSION,
            "numpy": np.__version__,
            "pandas": pd.__version__,
        },
        "replicas": [{"replica": r.replica, **r.summary} for r in results],
    }


def write_manifest(output_dir: Path, manifest: Dict):
    (output_dir / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))


def write_outputs(output_dir: Path, scenario: ScenarioConfig, results: Sequence[ReplicaResult]) -> List[str]:
    files = {
        DAILY_FILE: _concat([r.daily for r in results]),
        ROC_FILE: _concat([r.roc for r in results]),
        LEDGER_FILE: _concat([r.ledger for r in results]),
        DIAGNOSTICS_FILE: _concat([r.diagnostics for r in results]),
        OBSERVATIONS_FILE: _concat([r.observations for r in results]),
    }
    if scenario.write_event_log:
        files[EVENTS_FILE] = _concat([r.events for r in results])
    if scenario.reference_series:
        files[REFERENCE_FILE] = merge_reference(files[DAILY_FILE], scenario.reference_series, scenario)
    for name, frame in files.items():
        frame.to_csv(output_dir / name, index=False)

    snapshot_dir = output_dir / SNAPSHOT_DIR
    for r in results:
        for key, arrays in r.snapshots.items():
            snapshot_dir.mkdir(exist_ok=True)
            np.savez_compressed(snapshot_dir / f"{key}.npz", **arrays)
    return sorted(files)


def run_scenario(scenario: ScenarioConfig, output_dir=None) -> Dict:
    """Run every replica and write the run artifacts; the manifest is written even on failure"""
    output_dir = Path(output_dir or Path(config.OUTPUT_DIR) / scenario.name)
    output_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Running scenario {scenario.name} ({scenario.replicas} replicas) into {output_dir}")
    started = time.monotonic()
    try:
        results = run_replicas(scenario)
        files = write_outputs(output_dir, scenario, results)
    except Exception as e:
        logger.error(f"Scenario {scenario.name} failed: {e}", exc_info=True)
        manifest = _manifest(scenario, "failed", str(e))
        if isinstance(e, RiskNetError):
            manifest["error_details"] = e.details
        write_manifest(output_dir, manifest)
        raise
    manifest = _manifest(scenario, "completed", results=results)
    manifest["files"] = files
    write_manifest(output_dir, manifest)
    logger.info(f"Scenario {scenario.name} completed in {time.monotonic() - started:.1f}s")
    return manifest


def simulate_world(scenario: ScenarioConfig, output_dir=None, replica: int = 0) -> pd.DataFrame:
    """Free-running surrogate world without observations or DA"""
    output_dir = Path(output_dir or Path(config.OUTPUT_DIR) / scenario.name)
    output_dir.mkdir(parents=True, exist_ok=True)
    network = build_network(scenario)
    network.rng = make_rng(scenario.seed, replica, "hospital")
    contact_rng = make_rng(scenario.seed, replica, "contacts")
    kmc_rng = make_rng(scenario.seed, replica, "kmc")
    world = init_world(network, scenario.initial_infectious_fraction, make_rng(scenario.seed, replica, "world"))
    log = EventLog()
    prevalence = []
    for day in range(scenario.days):
        schedule = sample_day_schedule(network, day, contact_rng)
        world, day_log = run_kmc(world, network, [schedule], day + 1.0, kmc_rng)
        log.extend(day_log)
        prevalence.append(float(np.count_nonzero(world.state == HealthState.I)) / network.n_persons)
    daily = daily_aggregates(log, network.n_persons, prevalence)
    daily.to_csv(output_dir / DAILY_FILE, index=False)
    log.to_csv(output_dir / EVENTS_FILE)
    logger.info(f"Simulated {scenario.days} days: {epidemic_summary(world, daily)}")
    return daily


def roc_from_snapshots(output_dir, thresholds: Optional[Sequence[float]] = None) -> pd.DataFrame:
    """Recompute DA ROC points from the classification snapshots of a finished run"""
    snapshot_dir = Path(output_dir) / SNAPSHOT_DIR
    paths = sorted(snapshot_dir.glob("*.npz"))
    if not paths:
        raise FileNotFoundError(f"No snapshots in {snapshot_dir}")
    rows = []
    for path in paths:
        with np.load(path, allow_pickle=False) as data:
            points = roc_curve(data["mean_infectious"], data["truth"], thresholds, data["evaluated"])
            day, replica = int(data["day"]), int(data["replica"])
        rows.extend({"replica": replica, "day": day, **asdict(p)} for p in points)
    return pd.DataFrame(rows, columns=["replica", "day", "threshold", "ppf", "tpr", "fpr"])
