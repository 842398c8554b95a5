"""Experiment orchestration behind the command-line subcommands.

Every command writes into its own directory under the output root
(``synth/``, ``recover/``, ``evaluate/``, ``sweep/``) together with a
``manifest.json`` that hashes each file it wrote.
"""

import asyncio
import logging
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from gridedge.apps import (
    bandpass_remove,
    correlation,
    daylight_mask,
    detect_ev_events,
    disaggregate_feeder,
    extract_pattern,
    pattern_from_series,
    rms_error,
    roc_sweep,
    truth_ev_events,
)
from gridedge.config import ExperimentConfig, RecoveryConfig, config_hash
from gridedge.feeder.admittance import AdmittanceModel, build_admittance
from gridedge.feeder.loader import dump_feeder
from gridedge.feeder.models import HEAD_SENSOR, FeederDescription
from gridedge.recover import (
    AveragingOperator,
    DifferenceOperator,
    FeederOperator,
    RecoveryProblem,
    RecoverySolution,
    RecoverySolver,
    default_lambda,
    lambda_path,
)
from gridedge.shared.constants import SENSOR_ROWS
from gridedge.shared.exceptions import (
    ConfigError,
    DataIOError,
    DegenerateFitError,
    DegeneratePatternError,
)
from gridedge.synth import (
    GroundTruth,
    LoadMatrix,
    MeasurementSet,
    TruthEvent,
    generate_ground_truth,
    load_channels,
    select_sensors,
    synthesize,
)
from gridedge.utils.io import (
    Manifest,
    ensure_dir,
    read_json,
    read_matrix,
    read_table,
    write_json,
    write_matrix,
    write_table,
)
from gridedge.utils.json import JsonFormat


logger = logging.getLogger(__name__)

EVENT_COLUMNS = ("house", "start", "end", "dP", "dQ", "kind")
DETECTION_COLUMNS = ("house", "time", "magnitude", "polarity")
ROC_COLUMNS = ("threshold", "tpr", "fpr", "detections")
RUNTIME_COLUMNS = ("mode", "kappa", "n_houses", "horizon", "iterations", "cg_iterations", "status", "wall_time")
SWEEP_COLUMNS = ("parameter", "value", "replicate", "seed", "status", "iterations", "support", "relative_error", "max_tpr")
SWEEP_RUNTIME_COLUMNS = ("parameter", "value", "replicates", "mean_wall_time", "min_wall_time", "max_wall_time")
SWEEP_TIMING_COLUMNS = ("parameter", "value", "replicate", "seed", "wall_time")


def recovery_problem(
    ms: MeasurementSet,
    recovery: RecoveryConfig,
    capacities: Optional[np.ndarray] = None,
    pv_reactive_ratio: float = 0.0,
    lam: Optional[float] = None,
) -> RecoveryProblem:
    """Assemble the recovery instance of a measurement set.

    Raises:
        ConfigError: rank-one mode without any nonzero PV capacity.
    """
    T = ms.averaging.T
    if lam is None:
        lam = default_lambda(T) if recovery.lam == "auto" else float(recovery.lam)
    if recovery.mode == "rank1" and (capacities is None or not np.any(capacities)):
        raise ConfigError("rank-one recovery needs the PV capacities of at least one house")
    return RecoveryProblem(
        difference=DifferenceOperator(T),
        lam=lam,
        gamma=ms.gamma,
        averaging=ms.averaging,
        gamma_bounds=ms.gamma_bounds,
        Z=ms.Z,
        feeder=ms.feeder,
        z_bounds=ms.z_bounds,
        n_loads=ms.gamma.shape[0] // 2,
        capacities=None if capacities is None else np.asarray(capacities, dtype=float),
        pv_reactive_ratio=pv_reactive_ratio if recovery.q_low_rank else 0.0,
        nonnegative_q=recovery.nonnegative_q,
    )


def relative_error(estimate: np.ndarray, truth: np.ndarray) -> float:
    norm = np.linalg.norm(truth)
    return float(np.linalg.norm(estimate - truth) / norm) if norm > 0 else float(np.linalg.norm(estimate))


def _window_stamps(ms: MeasurementSet) -> List[int]:
    return list(range(0, ms.averaging.T, ms.averaging.interval))


def write_measurements(
    directory: Path,
    ms: MeasurementSet,
    manifest: Manifest,
    meta: Dict[str, Any],
) -> None:
    directory = ensure_dir(directory)
    n = ms.gamma.shape[0] // 2
    channels = load_channels(n)
    stamps = _window_stamps(ms)
    for name, matrix in (("gamma", ms.gamma), ("gamma_bounds", ms.gamma_bounds)):
        manifest.add(write_matrix(directory / f"{name}.csv", matrix, channels, stamps), "measurement")
    segments = []
    if ms.Z is not None:
        for name, matrix in (("Z", ms.Z), ("z_bounds", ms.z_bounds)):
            manifest.add(write_matrix(directory / f"{name}.csv", matrix, ms.sensor_channels), "measurement")
        for k, (start, stop, H) in enumerate(ms.feeder.segments):
            path = write_matrix(directory / f"H_{k:04d}.csv", H, ms.sensor_channels, channels)
            manifest.add(path, "operator")
            segments.append([start, stop])
    offsets = ms.averaging.offsets
    meta = dict(
        meta,
        n_loads=n,
        horizon=ms.averaging.T,
        meter_interval=ms.averaging.interval,
        offsets=None if offsets is None else [int(o) for o in offsets],
        segments=segments,
    )
    manifest.add(write_json(directory / "meta.json", meta), "metadata")


def read_measurements(directory: Path) -> Tuple[MeasurementSet, Dict[str, Any]]:
    """Measurement set written by :func:`write_measurements`.

    Raises:
        ConfigError: a required file is missing.
        DataIOError: files disagree on their dimensions.
    """
    directory = Path(directory)
    meta = read_json(directory / "meta.json")
    n, T, interval = meta["n_loads"], meta["horizon"], meta["meter_interval"]
    offsets = meta.get("offsets")
    averaging = AveragingOperator(
        T=T, interval=interval, offsets=None if offsets is None else np.asarray(offsets, dtype=int)
    )
    gamma = read_matrix(directory / "gamma.csv").to_numpy()
    gamma_bounds = read_matrix(directory / "gamma_bounds.csv").to_numpy()
    if gamma.shape != (2 * n, averaging.T_s):
        raise DataIOError(f"{directory}/gamma.csv has shape {gamma.shape}, expected {(2 * n, averaging.T_s)}")

    Z = z_bounds = feeder = None
    channels: List[str] = []
    if meta.get("sensors"):
        frame = read_matrix(directory / "Z.csv")
        Z = frame.to_numpy()
        channels = list(frame.index)
        z_bounds = read_matrix(directory / "z_bounds.csv").to_numpy()
        segments = []
        for k, (start, stop) in enumerate(meta["segments"]):
            H = read_matrix(directory / f"H_{k:04d}.csv").to_numpy()
            segments.append((start, stop, H))
        feeder = FeederOperator(T=T, segments=tuple(segments))
        if Z.shape != (feeder.n_rows, T):
            raise DataIOError(f"{directory}/Z.csv has shape {Z.shape}, expected {(feeder.n_rows, T)}")
    ms = MeasurementSet(
        gamma=gamma,
        averaging=averaging,
        gamma_bounds=gamma_bounds,
        Z=Z,
        feeder=feeder,
        z_bounds=z_bounds,
        sensor_channels=channels,
    )
    return ms, meta


def write_ground_truth(directory: Path, gt: GroundTruth, manifest: Manifest) -> None:
    directory = ensure_dir(directory)
    N = gt.loads.N
    channels = load_channels(N)
    manifest.add(write_matrix(directory / "loads.csv", gt.loads.X, channels), "truth")
    manifest.add(write_matrix(directory / "pv.csv", gt.pv, channels[:N]), "truth")
    manifest.add(write_matrix(directory / "pattern.csv", gt.pattern, ["rho"]), "truth")
    if gt.hvac is not None:
        manifest.add(write_matrix(directory / "hvac.csv", gt.hvac, channels[:N]), "truth")
    rows = [
        {"house": e.house, "start": e.start, "end": e.end, "dP": e.dP, "dQ": e.dQ, "kind": e.kind}
        for e in gt.events
    ]
    manifest.add(write_table(directory / "events.csv", rows, EVENT_COLUMNS), "truth")
    capacities = [{"house": i + 1, "capacity": float(c)} for i, c in enumerate(gt.capacities)]
    manifest.add(write_table(directory / "capacities.csv", capacities, ("house", "capacity")), "truth")
    manifest.add(write_json(directory / "meta.json", {"start_minute": gt.start_minute}), "metadata")


def read_ground_truth(directory: Path) -> GroundTruth:
    directory = Path(directory)
    X = read_matrix(directory / "loads.csv").to_numpy()
    events = [
        TruthEvent(int(r.house), int(r.start), int(r.end), float(r.dP), float(r.dQ), str(r.kind))
        for r in read_table(directory / "events.csv").itertuples(index=False)
    ]
    hvac = read_matrix(directory / "hvac.csv", required=False)
    meta = read_json(directory / "meta.json")
    return GroundTruth(
        loads=LoadMatrix.from_stacked(X),
        pv=read_matrix(directory / "pv.csv").to_numpy(),
        pattern=read_matrix(directory / "pattern.csv").to_numpy()[0],
        capacities=read_table(directory / "capacities.csv")["capacity"].to_numpy(dtype=float),
        events=events,
        hvac=None if hvac is None else hvac.to_numpy(),
        start_minute=int(meta["start_minute"]),
    )


def write_solution(directory: Path, solution: RecoverySolution, manifest: Manifest) -> None:
    directory = ensure_dir(directory)
    N = solution.P.shape[0]
    channels = load_channels(N)
    for name, matrix, labels in (
        ("K", solution.K, channels[:N]),
        ("Dp", solution.Dp, channels[:N]),
        ("Dq", solution.Dq, channels[N:]),
        ("P", solution.P, channels[:N]),
        ("Q", solution.Q, channels[N:]),
    ):
        manifest.add(write_matrix(directory / f"{name}.csv", matrix, labels), "solution")
    if solution.v is not None:
        manifest.add(write_matrix(directory / "v.csv", solution.v, ["v"]), "solution")
    diagnostics = dict(JsonFormat.to_json(solution.diagnostics), mode=solution.mode)
    manifest.add(write_json(directory / "diagnostics.json", diagnostics), "diagnostics")
    timing = {
        "wall_time": solution.wall_time,
        "iterations": solution.diagnostics.iterations,
        "cg_iterations": solution.diagnostics.cg_iterations,
    }
    manifest.add(write_json(directory / "timing.json", timing), "timing", volatile=True)


def read_solution(directory: Path) -> RecoverySolution:
    directory = Path(directory)
    data = read_json(directory / "diagnostics.json")
    mode = data.pop("mode", None)
    try:
        diagnostics = JsonFormat.from_json(data)
    except (ValueError, TypeError) as e:
        raise DataIOError(f"Cannot decode {directory}/diagnostics.json: {e}") from e
    v = read_matrix(directory / "v.csv", required=False)
    timing = read_json(directory / "timing.json", required=False) or {}
    return RecoverySolution(
        mode=mode or diagnostics.solver,
        K=read_matrix(directory / "K.csv").to_numpy(),
        Dp=read_matrix(directory / "Dp.csv").to_numpy(),
        Dq=read_matrix(directory / "Dq.csv").to_numpy(),
        P=read_matrix(directory / "P.csv").to_numpy(),
        Q=read_matrix(directory / "Q.csv").to_numpy(),
        diagnostics=diagnostics,
        v=None if v is None else v.to_numpy()[0],
        wall_time=float(timing.get("wall_time", 0.0)),
    )


def head_power_rows(ms: MeasurementSet, sensors: Sequence[Dict[str, Any]]) -> Optional[np.ndarray]:
    """Per-phase active power measured at the feeder head, if a head sensor is present."""
    if ms.Z is None:
        return None
    for i, sensor in enumerate(sensors):
        if sensor["kind"] == HEAD_SENSOR:
            return ms.Z[i * SENSOR_ROWS : i * SENSOR_ROWS + 3]
    return None


class ExperimentRunner:
    def __init__(self, config: ExperimentConfig, out_dir: Optional[Path] = None):
        self.config = config
        self.root = Path(out_dir or config.output)
        self.config_hash = config_hash(config)

    @cached_property
    def feeder(self) -> FeederDescription:
        return self.config.load_feeder()

    @cached_property
    def admittance(self) -> AdmittanceModel:
        return build_admittance(self.feeder)

    def _manifest(self, command: str) -> Manifest:
        directory = ensure_dir(self.root / command)
        return Manifest(directory, command, self.config_hash, self.config.scenario.seed)

    def _save(self, manifest: Manifest, **extra) -> Path:
        path = manifest.save(dict(extra, config=self.config.model_dump(mode="json")))
        logger.info(f"{manifest.command}: wrote {len(manifest.entries)} files to {manifest.root}")
        return path

    def export_feeder(self) -> Path:
        manifest = self._manifest("feeder")
        path = dump_feeder(self.feeder, manifest.root / f"{self.feeder.name}.json")
        manifest.add(path, "feeder")
        self._save(manifest)
        return path

    def synth(self) -> Path:
        scenario = self.config.scenario
        manifest = self._manifest("synth")
        gt = generate_ground_truth(scenario)
        ms = synthesize(self.feeder, self.admittance, gt, scenario)
        sensors = select_sensors(self.feeder.sensors, scenario.kappa)
        write_ground_truth(manifest.root / "truth", gt, manifest)
        write_measurements(
            manifest.root / "measurements",
            ms,
            manifest,
            {
                "feeder": self.feeder.name,
                "start_minute": scenario.start_minute,
                "operating_point": scenario.operating_point,
                "sensors": [
                    {"label": s.label, "kind": s.kind, "bus": s.bus} for s in sensors
                ],
                "capacities": [float(c) for c in gt.capacities],
                "pv_reactive_ratio": scenario.pv.reactive_ratio,
            },
        )
        return self._save(manifest)

    def recover(self, measurements: Optional[Path] = None) -> Path:
        """Solve the recovery problem of a measurement directory.

        Non-convergence is reported in ``diagnostics.json``; the solution is
        still written.
        """
        source = Path(measurements or self.root / "synth" / "measurements")
        ms, meta = read_measurements(source)
        recovery = self.config.recovery
        problem = recovery_problem(
            ms,
            recovery,
            capacities=np.asarray(meta.get("capacities") or np.zeros(meta["n_loads"])),
            pv_reactive_ratio=float(meta.get("pv_reactive_ratio", 0.0)),
        )
        logger.info(
            f"recover: {recovery.mode} mode, N={problem.N}, T={problem.T}, "
            f"{len(meta.get('sensors', []))} feeder sensors, lam={problem.lam:.4g}"
        )
        solver = RecoverySolver.create(recovery.mode, options=recovery.options)
        solution = solver.solve(problem)

        manifest = self._manifest("recover")
        write_solution(manifest.root, solution, manifest)
        return self._save(manifest, measurements=str(source), status=solution.status)

    def evaluate(
        self,
        solution_dir: Optional[Path] = None,
        truth_dir: Optional[Path] = None,
        measurements: Optional[Path] = None,
    ) -> Path:
        solution = read_solution(Path(solution_dir or self.root / "recover"))
        ms, meta = read_measurements(Path(measurements or self.root / "synth" / "measurements"))
        truth = self._truth(truth_dir)
        manifest = self._manifest("evaluate")
        out = manifest.root
        N, T = solution.P.shape
        summary: Dict[str, Any] = {"mode": solution.mode, "status": solution.status}

        if truth is None:
            logger.warning("evaluate: no ground truth available, EV detection is skipped")
        else:
            summary.update(self._score_detection(solution, truth, manifest))

        summary.update(self._solar(solution, ms, meta, truth, manifest))

        runtime = [
            {
                "mode": solution.mode,
                "kappa": len(meta.get("sensors", [])),
                "n_houses": N,
                "horizon": T,
                "iterations": solution.diagnostics.iterations,
                "cg_iterations": solution.diagnostics.cg_iterations,
                "status": solution.status,
                "wall_time": solution.wall_time,
            }
        ]
        manifest.add(write_table(out / "runtime.csv", runtime, RUNTIME_COLUMNS), "runtime", volatile=True)
        manifest.add(write_json(out / "summary.json", summary), "summary")
        return self._save(manifest)

    def _truth(self, truth_dir: Optional[Path]) -> Optional[GroundTruth]:
        if truth_dir is not None:
            return read_ground_truth(Path(truth_dir))
        default = self.root / "synth" / "truth"
        return read_ground_truth(default) if (default / "loads.csv").exists() else None

    def _score_detection(
        self, solution: RecoverySolution, truth: GroundTruth, manifest: Manifest
    ) -> Dict[str, Any]:
        apps = self.config.apps
        rating = self.config.scenario.ev.rating
        targets = truth_ev_events(truth)
        if not targets:
            logger.warning("evaluate: ground truth has no EV sessions, the ROC is degenerate")
        curve = roc_sweep(solution.Dp, targets, rating, apps.fractions, apps.tolerance, apps.min_gap)
        manifest.add(write_table(manifest.root / "roc.csv", curve.as_rows(), ROC_COLUMNS), "roc")

        threshold, tpr, fpr = curve.operating_point(apps.max_fpr)
        detections = []
        if np.isfinite(threshold):
            detections = detect_ev_events(solution.Dp, rating, threshold, apps.min_gap)
        manifest.add(
            write_table(
                manifest.root / "detections.csv",
                [event.as_row() for event in detections],
                DETECTION_COLUMNS,
            ),
            "detections",
        )
        logger.info(
            f"evaluate: {len(targets)} EV instants, max TPR {curve.max_tpr:.3f}, "
            f"TPR {tpr:.3f} at FPR {fpr:.4g}"
        )
        return {
            "ev_instants": len(targets),
            "max_tpr": curve.max_tpr,
            "operating_point": {"threshold": threshold, "tpr": tpr, "fpr": fpr},
            "relative_error": relative_error(solution.X, truth.loads.X),
        }

    def _solar(
        self,
        solution: RecoverySolution,
        ms: MeasurementSet,
        meta: Dict[str, Any],
        truth: Optional[GroundTruth],
        manifest: Manifest,
    ) -> Dict[str, Any]:
        apps = self.config.apps
        T = solution.P.shape[1]
        start = int(meta.get("start_minute", self.config.scenario.start_minute))
        daytime = daylight_mask(T, start, apps.sunrise, apps.sunset)
        result: Dict[str, Any] = {}
        try:
            recovered = extract_pattern(solution, daytime)
            rows, channels = [recovered.rho], ["recovered"]
            pattern = recovered
            if apps.bandpass:
                pattern = bandpass_remove(recovered, apps.period_range)
                rows.append(pattern.rho)
                channels.append("filtered")
            if truth is not None and np.any(truth.pattern):
                reference = pattern_from_series(truth.pattern, daytime).rho
                rows.append(reference)
                channels.append("truth")
                result["pattern_correlation"] = correlation(recovered.rho, reference)
                if apps.bandpass:
                    result["filtered_pattern_correlation"] = correlation(pattern.rho, reference)
            manifest.add(write_matrix(manifest.root / "pattern.csv", np.vstack(rows), channels), "pattern")

            head = head_power_rows(ms, meta.get("sensors", []))
            if head is None:
                logger.warning("evaluate: no feeder-head sensor, BTM disaggregation is skipped")
                return result
            if daytime.all():
                logger.warning("evaluate: horizon has no night minutes, BTM disaggregation is skipped")
                return result
            fits, generation = disaggregate_feeder(
                head, pattern, ~daytime, mu=apps.mu, night_weight=apps.night_weight
            )
        except (DegeneratePatternError, DegenerateFitError) as e:
            logger.warning(f"evaluate: solar analysis skipped: {e}")
            return result

        series, labels = [generation], ["estimate"]
        report: Dict[str, Any] = {
            "series": "solar.csv",
            "phases": [{"phase": f.phase, "alpha": f.alpha, "beta": f.beta} for f in fits],
            "peak_generation": float(generation.max(initial=0.0)),
        }
        if truth is not None:
            actual = np.maximum(-truth.pv.sum(axis=0), 0.0)
            series.append(actual)
            labels.append("truth")
            peak = float(actual.max(initial=0.0))
            report["rms_error"] = rms_error(generation, actual)
            report["relative_rms_error"] = report["rms_error"] / peak if peak > 0 else None
            result["solar_relative_rms_error"] = report["relative_rms_error"]
        manifest.add(write_matrix(manifest.root / "solar.csv", np.vstack(series), labels), "solar")
        manifest.add(write_json(manifest.root / "disaggregation.json", report), "disaggregation")
        return result

    def _sweep_point(self, parameter: str, value: float, replicate: int) -> Dict[str, Any]:
        base = self.config.scenario
        update: Dict[str, Any] = {"seed": base.seed + replicate}
        if parameter == "kappa":
            update["kappa"] = int(value)
        scenario = base.model_copy(update=update)
        gt = generate_ground_truth(scenario)
        ms = synthesize(self.feeder, self.admittance, gt, scenario)
        problem = recovery_problem(
            ms,
            self.config.recovery,
            capacities=gt.capacities,
            pv_reactive_ratio=scenario.pv.reactive_ratio,
            lam=float(value) if parameter == "lam" else None,
        )
        solution = RecoverySolver.create(
            self.config.recovery.mode, options=self.config.recovery.options
        ).solve(problem)
        targets = truth_ev_events(gt)
        max_tpr = None
        if targets:
            apps = self.config.apps
            max_tpr = roc_sweep(
                solution.Dp, targets, scenario.ev.rating, apps.fractions, apps.tolerance, apps.min_gap
            ).max_tpr
        return {
            "parameter": parameter,
            "value": value,
            "replicate": replicate,
            "seed": scenario.seed,
            "status": solution.status,
            "iterations": solution.diagnostics.iterations,
            "support": solution.support,
            "relative_error": relative_error(solution.X, gt.loads.X),
            "max_tpr": max_tpr,
            "wall_time": solution.wall_time,
        }

    async def sweep(self, workers: int = 1) -> Path:
        """Recover every (value, replicate) point of the configured grid.

        Points run on worker threads, at most ``workers`` at a time, and are
        written in grid order.
        """
        plan = self.config.sweep
        if plan is None:
            raise ConfigError("the experiment config has no sweep section")
        if workers < 1:
            raise ConfigError(f"workers must be positive, got {workers}")
        # build the shared feeder model before the threads start
        _ = self.admittance
        semaphore = asyncio.Semaphore(workers)
        values = plan.values
        if values is None:
            recovery = self.config.recovery
            base = recovery.lam
            if base == "auto":
                base = default_lambda(self.config.scenario.horizon)
            values = lambda_path(float(base))
            logger.info(f"sweep: lam path {[round(v, 6) for v in values]}")

        async def run(value: float, replicate: int) -> Dict[str, Any]:
            async with semaphore:
                logger.debug(f"sweep: {plan.parameter}={value} replicate {replicate}")
                return await asyncio.to_thread(self._sweep_point, plan.parameter, value, replicate)

        grid = [(value, r) for value in values for r in range(plan.replicates)]
        records = await asyncio.gather(*(run(value, r) for value, r in grid))

        manifest = self._manifest("sweep")
        manifest.add(write_table(manifest.root / "sweep.csv", records, SWEEP_COLUMNS), "sweep")
        runtime = []
        for value in values:
            times = [r["wall_time"] for r in records if r["value"] == value]
            runtime.append(
                {
                    "parameter": plan.parameter,
                    "value": value,
                    "replicates": len(times),
                    "mean_wall_time": float(np.mean(times)),
                    "min_wall_time": float(np.min(times)),
                    "max_wall_time": float(np.max(times)),
                }
            )
        manifest.add(
            write_table(manifest.root / "runtime.csv", runtime, SWEEP_RUNTIME_COLUMNS),
            "runtime",
            volatile=True,
        )
        manifest.add(
            write_table(manifest.root / "timing.csv", records, SWEEP_TIMING_COLUMNS),
            "timing",
            volatile=True,
        )
        return self._save(manifest, parameter=plan.parameter)
