"""
experiment_manager.py
CLIサブコマンド（simulate / floquet / scan / check）の実行を担当するマネージャークラス

各コマンドは with_error_handling で包まれ、例外を終了コードに変換します。
"""
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, List

import numpy as np
from scipy.linalg import expm

from diagnostics import SCAN_COLUMNS, frequency_map, invariant_drift, kam_scan, rotation_numbers, state_energy
from error_handling import (
    CheckFailed,
    ConfigError,
    ConstraintViolation,
    DegenerateRotation,
    HalfTurn,
    InsufficientGrid,
    InsufficientTrajectory,
    with_error_handling,
)
from floquet import (
    FloquetData,
    SubsystemOrbit,
    action_angle_coords,
    check_reversibility,
    classical_action,
    flow_Phi,
    floquet_data,
    subsystem_orbit,
)
from integrators import Trajectory, integrate, reversibility_defect
from logging_config import get_logger
from model import alpha_pair, embed, project, skew_coordinates
from optimizations import CachedDataManager
from reduction import dae_field, induced_field, reduced_field
from .config_manager import ExperimentConfig, build_spec, config_to_dict

logger = get_logger(__name__)

# 当てはめた (ω, ξ) と Floquet データの許容差
ROTATION_TOLERANCE = 1e-6


@dataclass(frozen=True)
class CheckResult:
    """一つの性質の検査結果（status は pass / fail / skip）"""
    name: str
    status: str
    defect: float
    threshold: float
    message: str = ""

    def to_record(self) -> Dict[str, Any]:
        return {"name": self.name, "status": self.status, "defect": self.defect,
                "threshold": self.threshold, "message": self.message}

    def line(self) -> str:
        return f"{self.status.upper():4s}  {self.name:<28s} defect={self.defect:.3e}  threshold={self.threshold:.1e}  {self.message}".rstrip()


def _judge(name: str, defect: float, threshold: float, message: str = "") -> CheckResult:
    status = "pass" if defect <= threshold else "fail"
    return CheckResult(name, status, float(defect), float(threshold), message)


class ExperimentManager:
    """設定から実験を実行し成果物を書き出すマネージャー"""

    def __init__(self, app_state: Dict[str, Any]):
        """ExperimentManagerの初期化

        Args:
            app_state: settings_manager / config_manager / artifact_manager / error_handler を含む状態
        """
        self.app_state = app_state
        self.cache = CachedDataManager()

        from debug_control import print_init
        print_init("[OK] ExperimentManager initialized.")

    # --- 共通 ---

    @property
    def settings(self):
        return self.app_state["settings_manager"]

    @property
    def artifacts(self):
        return self.app_state["artifact_manager"]

    @property
    def threads(self) -> int:
        return self.app_state.get("threads", 1)

    def _spec(self, config: ExperimentConfig):
        return build_spec(config)

    def _torus(self, spec, a: float, config: ExperimentConfig) -> tuple:
        def load():
            orbit = subsystem_orbit(
                spec, a,
                window=tuple(self.settings["orbit_window"]),
                time_cap=self.settings["orbit_time_cap"],
                tol=config.integrator.reference_tol,
                table_size=self.settings["theta_table_size"],
            )
            fd = floquet_data(spec, orbit, config.integrator.with_method("reference"),
                              resonance_tol=self.settings["resonance_tol"],
                              rotation_tol=self.settings["rotation_tol"])
            return orbit, fd
        return self.cache.get(("torus", spec.label, float(a), config.integrator.reference_tol), load)

    # --- simulate ---

    @with_error_handling("simulate")
    def cmd_simulate(self, config: ExperimentConfig) -> int:
        """
        軌道を積分して時刻・状態（簡約チャート）・H・‖u‖ の列をCSVに書く
        """
        spec = self._spec(config)
        exp = config.experiment
        path = self.artifacts.path_for(config.output.dir, config.output.stem, "trajectory.csv")
        self.artifacts.ensure_writable([path])

        handle = induced_field(spec, fd_step=self.settings["fd_step"], tol=config.integrator.newton_tol,
                               cond_max=self.settings["fibre_cond_max"])
        s0 = np.array(exp.initial_state, dtype=float)
        trajectory = integrate(handle, s0, exp.T, config.integrator, sample_dt=exp.sample_dt,
                               spec_label=spec.label)

        base = spec.unperturbed()
        rows = (
            [t, *y, state_energy(spec, y), float(np.linalg.norm(skew_coordinates(base, y)))]
            for t, y in zip(trajectory.times, trajectory.states)
        )
        columns = ["t", "q1", "q2", "q3", "p", "p3", "H", "norm_u"]
        self.artifacts.write_csv(path, columns, ([float(v) for v in row] for row in rows), config_to_dict(config))
        logger.info(f"simulate: {len(trajectory)} samples on {spec.label} with {config.integrator.method}")
        return 0

    # --- floquet ---

    @with_error_handling("floquet")
    def cmd_floquet(self, config: ExperimentConfig) -> int:
        """a の格子の各点で FloquetData と古典的作用をJSONに書く。共鳴点は resonant_flag で報告する。"""
        if not config.experiment.a_grid:
            raise ConfigError("'experiment.a_grid' is empty", context={"operation": "cmd_floquet"})
        spec = self._spec(config).unperturbed()
        path = self.artifacts.path_for(config.output.dir, config.output.stem, "floquet.json")
        self.artifacts.ensure_writable([path])

        records = []
        for a in config.experiment.a_grid:
            orbit, fd = self._torus(spec, a, config)
            record = fd.to_record()
            record["T3"] = orbit.period_T3
            record["classical_action"] = classical_action(spec, orbit)
            if fd.resonant_flag:
                logger.warning(f"Torus a={a} is resonant (sigma={fd.sigma:.3g})")
            records.append(record)

        self.artifacts.write_json(path, records, config_to_dict(config),
                                  {"kind": "floquet", "frequency_map": self._frequency_map(spec, config)})
        return 0

    def _frequency_map(self, spec, config: ExperimentConfig):
        """格子が min_grid_points 以上のときだけ ξ ≈ c·ω の判定を返す。足りなければ None。"""
        a_grid = config.experiment.a_grid
        if len(a_grid) < self.settings["min_grid_points"]:
            return None
        try:
            fmap = frequency_map(
                spec, a_grid, config.integrator.with_method("reference"),
                resonance_tol=self.settings["resonance_tol"],
                dependence_tol=self.settings["dependence_tol"],
                min_points=self.settings["min_grid_points"],
                loader=lambda a: self._torus(spec, a, config)[1],
            )
        except InsufficientGrid as e:
            logger.warning(f"Frequency map skipped: {e.message}")
            return None
        return fmap.to_dict()

    # --- scan ---

    @with_error_handling("scan")
    def cmd_scan(self, config: ExperimentConfig) -> int:
        """kam_scan を実行してCSVとJSONの要約を書く"""
        spec = self._spec(config)
        exp = config.experiment
        csv_path = self.artifacts.path_for(config.output.dir, config.output.stem, "scan.csv")
        json_path = self.artifacts.path_for(config.output.dir, config.output.stem, "scan.json")
        self.artifacts.ensure_writable([csv_path, json_path])

        result = kam_scan(
            spec.unperturbed(),
            list(exp.perturbations),
            list(exp.epsilons),
            list(exp.methods),
            exp.T,
            list(exp.seeds),
            cfg=config.integrator,
            sample_dt=exp.sample_dt,
            a0=exp.a0,
            threads=self.threads,
            cache=self.cache,
            resonance_tol=self.settings["resonance_tol"],
            sigmas=self.settings["significance_sigmas"],
            secular_factor=self.settings["secular_factor"],
            progress=True,
        )
        header = config_to_dict(config)
        self.artifacts.write_csv(csv_path, SCAN_COLUMNS, (row.as_row() for row in result.rows), header)
        summary = result.to_dict()
        records = summary.pop("rows")
        self.artifacts.write_json(json_path, records, header, {"kind": "scan", **summary})
        return 0

    # --- check ---

    def _check_alpha(self, spec, orbit: SubsystemOrbit) -> CheckResult:
        prm = spec.params
        defect = 0.0
        q3_values = [orbit.theta_param(th)[0] for th in np.linspace(0.0, 1.0, 16, endpoint=False)]
        for q3 in q3_values:
            a1, a2 = alpha_pair(spec, q3)
            f = spec.coupling.value(q3)
            defect = max(defect, abs(a1 * a1 / prm.m1 + a2 * a2 / prm.m2 - 1.0), abs(f * a1 / prm.m1 + a2 / prm.m2))
        return _judge("alpha_identity", defect, 1e-12)

    def _check_chart(self, spec, s0: np.ndarray, config: ExperimentConfig) -> CheckResult:
        ref_cfg = config.integrator.with_method("reference")
        reduced = integrate(reduced_field(spec), s0, 50.0, ref_cfg, sample_dt=50.0)
        full = integrate(dae_field(spec), embed(spec, s0).as_array(), 50.0, ref_cfg, sample_dt=50.0)
        end = embed(spec, reduced.final_state)
        try:
            back = project(spec, end, tol=self.settings["projection_tol"]).as_array()
        except ConstraintViolation as e:
            return CheckResult("chart_equivalence", "fail", math.inf, 1e-8, e.message)
        defect = max(float(np.max(np.abs(end.as_array() - full.final_state))),
                     float(np.max(np.abs(back - reduced.final_state))))
        return _judge("chart_equivalence", defect, 1e-8, "DAE vs reduced ODE at t=50")

    def _check_energy(self, spec, s0: np.ndarray, config: ExperimentConfig) -> List[CheckResult]:
        drift = invariant_drift(spec, s0, config.integrator.with_method("reference"), 100.0, 1.0,
                                field_handle=reduced_field(spec), torus=(None, None))
        return [
            _judge("energy_conservation", drift.max_drift("H"), 1e-9, "reference solver, t=100"),
            _judge("norm_u_conservation", drift.max_drift("norm_u"), 1e-9, "reference solver, t=100"),
        ]

    def _check_midpoint(self, spec, s0: np.ndarray, config: ExperimentConfig) -> CheckResult:
        defect = reversibility_defect(reduced_field(spec), "implicit_midpoint", s0, config.integrator.h,
                                      config.integrator)
        return _judge("midpoint_reversibility", defect, self.settings["reversibility_threshold"],
                      f"newton_tol={config.integrator.newton_tol:g}")

    def _check_floquet(self, spec, orbit: SubsystemOrbit, fd: FloquetData, config: ExperimentConfig) -> List[CheckResult]:
        results = [
            _judge("monodromy_orthogonality", max(fd.orthogonality_defect, fd.det_defect), 1e-10),
            _judge("log_exponential", float(np.max(np.abs(expm(fd.Abar) - fd.Phi1))), 1e-9),
            _judge("spectrum_bound", max(0.0, fd.sigma - math.pi, -fd.sigma), 0.0, f"sigma={fd.sigma:.12g}"),
        ]
        ref_cfg = config.integrator.with_method("reference")
        floquet_property = 0.0
        for tau in np.linspace(0.05, 0.95, 10):
            shifted = flow_Phi(spec, orbit, tau + 1.0, ref_cfg)
            floquet_property = max(floquet_property, float(np.max(np.abs(shifted - fd.flow_at(tau) @ fd.Phi1))))
        results.append(_judge("floquet_property", floquet_property, 1e-9))
        return results

    def _check_reversibility(self, spec, orbit: SubsystemOrbit, fd: FloquetData, config: ExperimentConfig) -> CheckResult:
        try:
            report = check_reversibility(spec, orbit, fd, config.integrator.with_method("reference"))
        except HalfTurn as e:
            logger.warning(f"Reversibility suite skipped: {e.message}")
            return CheckResult("reversibility_suite", "skip", math.nan, 1e-8, "half turn")
        return _judge("reversibility_suite", report.max_defect(), 1e-8,
                      f"precheck={report.precheck_defect:.1e} flow={report.flow_defect:.1e} "
                      f"log={report.generator_defect:.1e} psi={report.psi_defect:.1e}")

    def _check_conjugacy(self, spec, orbit: SubsystemOrbit, fd: FloquetData, s0: np.ndarray,
                         config: ExperimentConfig) -> CheckResult:
        name = "psi_conjugacy"
        if fd.half_turn or fd.frozen:
            logger.warning(f"{name} skipped (half_turn={fd.half_turn}, frozen={fd.frozen})")
            return CheckResult(name, "skip", math.nan, 1e-7, "half turn" if fd.half_turn else "omega = 0")
        horizon = 10.0 * orbit.period_T3
        trajectory: Trajectory = integrate(reduced_field(spec), s0, horizon, config.integrator.with_method("reference"),
                                           sample_dt=orbit.period_T3 / 8.0)
        try:
            coords = [action_angle_coords(spec, orbit, fd, y, tol=self.settings["resonance_tol"])
                      for y in trajectory.states]
        except (DegenerateRotation, HalfTurn) as e:
            logger.warning(f"{name} skipped: {e.message}")
            return CheckResult(name, "skip", math.nan, 1e-7, type(e).__name__)
        values = np.array([[c.a, c.b, c.c] for c in coords])
        defect = float(np.max(np.abs(values - values[0])))
        return _judge(name, defect, 1e-7, "a, b, c over 10 periods")

    def _check_rotation(self, spec, orbit: SubsystemOrbit, fd: FloquetData, s0: np.ndarray,
                        config: ExperimentConfig) -> CheckResult:
        name = "rotation_numbers"
        if fd.half_turn or fd.frozen:
            return CheckResult(name, "skip", math.nan, ROTATION_TOLERANCE, "half turn" if fd.half_turn else "omega = 0")
        min_periods = float(self.settings["min_periods"])
        trajectory = integrate(reduced_field(spec), s0, min_periods * orbit.period_T3,
                               config.integrator.with_method("reference"), sample_dt=orbit.period_T3 / 8.0)
        try:
            estimate = rotation_numbers(spec, orbit, fd, trajectory, min_periods=min_periods,
                                        tol=self.settings["resonance_tol"])
        except (DegenerateRotation, InsufficientTrajectory) as e:
            logger.warning(f"{name} skipped: {e.message}")
            return CheckResult(name, "skip", math.nan, ROTATION_TOLERANCE, type(e).__name__)
        defect = max(abs(estimate.omega_est - fd.omega), abs(estimate.xi_est - fd.xi))
        return _judge(name, defect, ROTATION_TOLERANCE, f"fitted over {min_periods:g} periods")

    @with_error_handling("check")
    def cmd_check(self, config: ExperimentConfig) -> int:
        """
        性質の一覧を検査して pass / fail / skip を表示し、JSONの報告を書く

        Raises:
            CheckFailed: 一つでも fail がある（終了コード 1）
        """
        spec = self._spec(config).unperturbed()
        path = self.artifacts.path_for(config.output.dir, config.output.stem, "check.json")
        self.artifacts.ensure_writable([path])
        s0 = np.array(config.experiment.initial_state, dtype=float)
        a = spec.subsystem.energy(s0[2], s0[4])
        orbit, fd = self._torus(spec, a, config)

        results: List[CheckResult] = [
            self._check_alpha(spec, orbit),
            self._check_chart(spec, s0, config),
            *self._check_energy(spec, s0, config),
            self._check_midpoint(spec, s0, config),
        ]
        if fd.frozen:
            results.append(CheckResult("floquet_suite", "skip", math.nan, 1e-9, "omega = 0"))
        else:
            results.extend(self._check_floquet(spec, orbit, fd, config))
        results.append(self._check_reversibility(spec, orbit, fd, config))
        results.append(self._check_conjugacy(spec, orbit, fd, s0, config))
        results.append(self._check_rotation(spec, orbit, fd, s0, config))

        for result in results:
            print(result.line())
        self.artifacts.write_json(path, [r.to_record() for r in results], config_to_dict(config), {"kind": "check"})

        failed = [r.name for r in results if r.status == "fail"]
        if failed:
            raise CheckFailed(f"{len(failed)} check(s) failed: {failed}",
                              context={"operation": "cmd_check", "failed": failed})
        return 0

    def run(self, command: str, config: ExperimentConfig) -> int:
        commands: Dict[str, Callable[[ExperimentConfig], int]] = {
            "simulate": self.cmd_simulate,
            "floquet": self.cmd_floquet,
            "scan": self.cmd_scan,
            "check": self.cmd_check,
        }
        return commands[command](config)


def create_experiment_manager(app_state: Dict[str, Any]) -> ExperimentManager:
    """ExperimentManagerを作成してapp_stateに登録する工場関数"""
    experiment_manager = ExperimentManager(app_state)
    app_state["experiment_manager"] = experiment_manager
    return experiment_manager
