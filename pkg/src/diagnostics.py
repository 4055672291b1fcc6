"""
diagnostics.py
長時間実験と不変量の診断

積分法ごとの不変量 (H, ‖u‖, a, b, c) のドリフト、回転数の推定、ポアンカレ断面、
可逆・非可逆な摂動に対する ε 走査、周波数写像の独立性判定を提供します。
"""
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize, stats
from scipy.interpolate import CubicHermiteSpline
from tqdm import tqdm

from error_handling import (
    DegenerateRotation,
    HalfTurn,
    InsufficientGrid,
    InsufficientTrajectory,
    InvalidParameter,
    NoCrossings,
)
from floquet import (
    FloquetData,
    SubsystemOrbit,
    action_angle_coords,
    floquet_data,
    subsystem_orbit,
)
from integrators import METHODS, StepperConfig, Trajectory, integrate, reversibility_defect
from logging_config import get_logger
from model import (
    Perturbation,
    SystemSpec,
    embed,
    get_perturbation,
    hamiltonian,
    skew_coordinates,
)
from optimizations import CachedDataManager, RowProcessor, performance_log
from reduction import VectorFieldHandle, induced_field, lift_to_perturbed

logger = get_logger(__name__)

INVARIANTS = ("H", "norm_u", "a", "b", "c")
SCAN_INVARIANTS = ("H", "a", "b", "c")

SCAN_COLUMNS = (
    ["g_label", "epsilon", "method", "h", "T", "seed"]
    + [f"max_drift_{name}" for name in SCAN_INVARIANTS]
    + [f"slope_{name}" for name in SCAN_INVARIANTS]
    + [f"slope_stderr_{name}" for name in SCAN_INVARIANTS]
    + ["rev_defect", "verdict"]
)


# --- トレンドの当てはめ ---

@dataclass(frozen=True)
class TrendFit:
    """最小二乗の傾きと95%信頼区間"""
    slope: float
    stderr: float
    ci_low: float
    ci_high: float
    significant: bool

    @classmethod
    def fit(cls, times: np.ndarray, values: np.ndarray, sigmas: float = 5.0, floor: float = 0.0) -> 'TrendFit':
        """
        values = intercept + slope·times の当てはめ

        Args:
            times: 時刻（3点以上）
            values: 偏差の系列
            sigmas: |slope| > sigmas·stderr を有意とする
            floor: 全区間での変化 |slope|·(t_end − t_0) がこれ以下なら有意としない
        """
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.size < 3:
            raise InsufficientTrajectory(
                f"need at least 3 samples for a trend fit, got {times.size}",
                context={"operation": "TrendFit.fit"}
            )
        if not np.any(values):
            return cls(0.0, 0.0, 0.0, 0.0, False)
        result = stats.linregress(times, values)
        slope = float(result.slope)
        stderr = float(result.stderr)
        half_width = float(stats.t.ppf(0.975, times.size - 2)) * stderr
        span = float(times[-1] - times[0])
        significant = slope != 0.0 and abs(slope) > sigmas * stderr and abs(slope) * span > floor
        return cls(slope, stderr, slope - half_width, slope + half_width, significant)


# --- 不変量のドリフト ---

@dataclass(frozen=True, eq=False)
class DriftReport:
    """
    初期値からの偏差の時系列とトレンド

    a, b, c は共鳴トーラス（σ ≈ 0 または半回転）では追跡しない。
    """
    spec_label: str
    method: str
    times: np.ndarray
    deviations: Dict[str, np.ndarray]
    trends: Dict[str, TrendFit]
    initial: Dict[str, float]

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(name for name in INVARIANTS if name in self.deviations)

    def max_drift(self, name: str) -> float:
        if name not in self.deviations:
            return math.nan
        return float(np.max(np.abs(self.deviations[name])))

    def has_secular_trend(self, names: Iterable[str] = INVARIANTS) -> bool:
        return any(self.trends[name].significant for name in names if name in self.trends)

    def summary(self) -> Dict[str, Dict[str, float]]:
        return {
            name: {
                "max_drift": self.max_drift(name),
                "slope": self.trends[name].slope,
                "slope_stderr": self.trends[name].stderr,
                "ci_low": self.trends[name].ci_low,
                "ci_high": self.trends[name].ci_high,
                "significant": self.trends[name].significant,
            }
            for name in self.labels
        }


def _tracked_floquet(spec: SystemSpec, a: float, cfg: StepperConfig, resonance_tol: float
                     ) -> Tuple[SubsystemOrbit, Optional[FloquetData]]:
    base = spec.unperturbed()
    orbit = subsystem_orbit(base, a, tol=cfg.reference_tol)
    fd = floquet_data(base, orbit, cfg.with_method("reference"), resonance_tol=resonance_tol)
    if fd.half_turn or fd.sigma <= resonance_tol:
        logger.warning(f"Torus a={a} is resonant (sigma={fd.sigma:.3g}); tracking H, |u| and a only")
        return orbit, None
    return orbit, fd


def drift_floor(cfg: StepperConfig, T: float) -> float:
    """
    丸めと反復の打ち切りだけで説明できる T の間の変化

    参照解は reference_tol·T、固定刻みの方法は newton_tol·T。
    """
    tol = cfg.reference_tol if cfg.method == "reference" else cfg.newton_tol
    return tol * T


def state_energy(spec: SystemSpec, y: np.ndarray) -> float:
    if spec.is_perturbed:
        return hamiltonian(spec, lift_to_perturbed(spec, y))
    return hamiltonian(spec, embed(spec, y))


@performance_log(label="invariant_drift")
def invariant_drift(
    spec: SystemSpec,
    s0: Sequence[float],
    method_cfg: StepperConfig,
    T: float,
    sample_dt: float,
    field_handle: Optional[VectorFieldHandle] = None,
    torus: Optional[Tuple[SubsystemOrbit, Optional[FloquetData]]] = None,
    resonance_tol: float = 1e-8,
    sigmas: float = 5.0,
    floor: Optional[float] = None,
) -> DriftReport:
    """
    method_cfg で積分し、標本ごとの不変量の偏差とトレンドを返す

    摂動系では a, b, c を ε = 0 の作用・角チャートで測り、H は M_ε 上の H_ε。

    Args:
        spec: 系（ε > 0 なら induced_field で積分）
        s0: M₀ のチャートでの初期状態
        method_cfg: 積分法
        T: 積分時間
        sample_dt: 標本間隔
        field_handle: 場（省略時は induced_field(spec)）
        torus: (orbit, FloquetData)（省略時は s0 の F の値から計算）
        floor: 有意なトレンドとみなす全区間の変化の下限（省略時は drift_floor(method_cfg, T)）
    """
    floor = drift_floor(method_cfg, T) if floor is None else floor
    s0 = np.asarray(s0, dtype=float)
    handle = field_handle if field_handle is not None else induced_field(spec)
    trajectory = integrate(handle, s0, T, method_cfg, sample_dt=sample_dt, spec_label=spec.label)

    base = spec.unperturbed()
    if torus is None:
        torus = _tracked_floquet(spec, spec.subsystem.energy(s0[2], s0[4]), method_cfg, resonance_tol)
    orbit, fd = torus

    series: Dict[str, List[float]] = {name: [] for name in INVARIANTS}
    for y in trajectory.states:
        series["H"].append(state_energy(spec, y))
        series["norm_u"].append(float(np.linalg.norm(skew_coordinates(base, y))))
        if fd is None:
            series["a"].append(base.subsystem.energy(y[2], y[4]))
        else:
            coords = action_angle_coords(base, orbit, fd, y, tol=resonance_tol, torus_tol=math.inf)
            series["a"].append(coords.a)
            series["b"].append(coords.b)
            series["c"].append(coords.c)

    deviations = {}
    initial = {}
    trends = {}
    for name, values in series.items():
        if not values:
            continue
        values = np.asarray(values)
        initial[name] = float(values[0])
        deviations[name] = values - values[0]
        trends[name] = TrendFit.fit(trajectory.times, deviations[name], sigmas, floor)

    return DriftReport(spec.label, method_cfg.method, trajectory.times, deviations, trends, initial)


# --- 回転数 ---

@dataclass(frozen=True)
class RotationEstimate:
    """θ(t), φ(t) の傾きと当てはめ残差の最大値"""
    omega_est: float
    xi_est: float
    omega_residual: float
    xi_residual: float


def _linear_fit(times: np.ndarray, values: np.ndarray) -> Tuple[float, float]:
    result = stats.linregress(times, values)
    residual = values - (result.intercept + result.slope * times)
    return float(result.slope), float(np.max(np.abs(residual)))


def rotation_numbers(
    spec: SystemSpec,
    orbit: SubsystemOrbit,
    fd: FloquetData,
    trajectory: Trajectory,
    min_periods: float = 50.0,
    tol: float = 1e-8,
    torus_tol: float = 1e-6,
) -> RotationEstimate:
    """
    θ(t), φ(t) を展開して傾き (ω, ξ) を推定する

    Raises:
        InsufficientTrajectory: min_periods 周期に満たない、または標本が粗すぎる
        DegenerateRotation: σ ≤ tol
        InvalidParameter: 状態が torus_tol を超えてトーラスを離れた
    """
    if orbit.is_equilibrium or trajectory.duration < min_periods * orbit.period_T3:
        raise InsufficientTrajectory(
            f"trajectory of duration {trajectory.duration:.6g} covers fewer than {min_periods:g} "
            f"subsystem periods (T3={orbit.period_T3:.6g})",
            context={"operation": "rotation_numbers", "duration": trajectory.duration}
        )
    spacing = float(np.max(np.diff(trajectory.times)))
    if spacing * max(orbit.omega, fd.xi) >= 0.5:
        raise InsufficientTrajectory(
            f"sample spacing {spacing:.6g} is too coarse to unwrap the angles",
            context={"operation": "rotation_numbers", "spacing": spacing}
        )

    coords = [action_angle_coords(spec, orbit, fd, y, tol=tol, torus_tol=torus_tol) for y in trajectory.states]
    theta = np.unwrap(np.array([c.theta for c in coords]) * 2.0 * math.pi) / (2.0 * math.pi)
    phi = np.unwrap(np.array([c.phi for c in coords]) * 2.0 * math.pi) / (2.0 * math.pi)
    omega_est, omega_residual = _linear_fit(trajectory.times, theta)
    xi_est, xi_residual = _linear_fit(trajectory.times, phi)
    logger.info(f"Rotation numbers: omega={omega_est:.12g}, xi={xi_est:.12g}")
    return RotationEstimate(omega_est, xi_est, omega_residual, xi_residual)


# --- ポアンカレ断面 ---

@dataclass(frozen=True)
class SectionPoint:
    time: float
    u: Tuple[float, float, float]
    bcphi: Optional[Tuple[float, float, float]] = None


@dataclass(frozen=True)
class PoincareSection:
    """{θ = 0} への戻りの列"""
    points: Tuple[SectionPoint, ...]

    def __len__(self) -> int:
        return len(self.points)

    def bc_spread(self) -> Tuple[float, float]:
        """戻り点の b, c の最大幅"""
        values = np.array([p.bcphi for p in self.points if p.bcphi is not None])
        if values.size == 0:
            return math.nan, math.nan
        return float(np.ptp(values[:, 0])), float(np.ptp(values[:, 1]))

    def closest_phi_return(self, count: int = 100) -> float:
        """最初の戻りと以降 count 個の φ の円周上の最小距離"""
        phis = [p.bcphi[2] for p in self.points[: count + 1] if p.bcphi is not None]
        if len(phis) < 2:
            return math.nan
        gaps = np.abs(np.asarray(phis[1:]) - phis[0])
        return float(np.min(np.minimum(gaps, 1.0 - gaps)))

    def distinct_u(self, decimals: int = 6) -> int:
        """丸めた u の異なる個数（周期軌道なら有限）"""
        return len({tuple(np.round(p.u, decimals)) for p in self.points})


def poincare_section(
    spec: SystemSpec,
    trajectory: Trajectory,
    orbit: Optional[SubsystemOrbit] = None,
    fd: Optional[FloquetData] = None,
    field_handle: Optional[VectorFieldHandle] = None,
) -> PoincareSection:
    """
    部分系が基点 (q₃*, 0) を通過する時刻の状態を集める

    交差は標本間を場の導関数つき3次エルミート補間で結び、p₃ = 0 を brentq で解く。

    Raises:
        NoCrossings: 交差が一つもない
    """
    base = spec.unperturbed()
    states = trajectory.states
    if orbit is None:
        orbit = subsystem_orbit(base, base.subsystem.energy(states[0, 2], states[0, 4]))
    if orbit.is_equilibrium or orbit.crossing_direction == 0:
        raise NoCrossings(
            "subsystem is at an equilibrium; the section is never crossed transversally",
            context={"operation": "poincare_section", "a": orbit.a}
        )
    handle = field_handle if field_handle is not None else induced_field(spec)
    direction = orbit.crossing_direction
    mid = orbit.section_q3_mid
    side = math.copysign(1.0, orbit.basepoint[0] - orbit.opposite_q3)

    p3 = states[:, 4]
    if direction < 0:
        candidates = np.nonzero((p3[:-1] > 0.0) & (p3[1:] <= 0.0))[0]
    else:
        candidates = np.nonzero((p3[:-1] < 0.0) & (p3[1:] >= 0.0))[0]

    points = []
    for k in candidates:
        t0, t1 = trajectory.times[k], trajectory.times[k + 1]
        spline = CubicHermiteSpline(
            [t0, t1], states[k:k + 2], np.array([handle.field(states[k]), handle.field(states[k + 1])])
        )
        if p3[k + 1] == 0.0:
            t_cross = float(t1)
        else:
            t_cross = optimize.brentq(lambda t: float(spline(t)[4]), t0, t1, xtol=1e-14)
        y = spline(t_cross)
        if (y[2] - mid) * side <= 0.0:
            continue
        bcphi = None
        if fd is not None:
            try:
                coords = action_angle_coords(base, orbit, fd, y, torus_tol=math.inf)
                bcphi = (coords.b, coords.c, coords.phi)
            except (DegenerateRotation, HalfTurn):
                bcphi = None
        points.append(SectionPoint(t_cross, tuple(float(v) for v in skew_coordinates(base, y)), bcphi))

    if not points:
        raise NoCrossings(
            "trajectory never crosses the subsystem section",
            context={"operation": "poincare_section", "samples": len(trajectory)}
        )
    logger.debug(f"Poincare section: {len(points)} returns")
    return PoincareSection(tuple(points))


# --- ε 走査 ---

@dataclass(frozen=True)
class ScanRow:
    g_label: str
    epsilon: float
    method: str
    h: float
    T: float
    seed: int
    max_drift: Dict[str, float]
    slope: Dict[str, float]
    slope_stderr: Dict[str, float]
    rev_defect: float
    verdict: str

    @property
    def sort_key(self) -> Tuple[str, float, str, int]:
        return self.g_label, self.epsilon, self.method, self.seed

    def to_record(self) -> Dict[str, Any]:
        record: Dict[str, Any] = {
            "g_label": self.g_label, "epsilon": self.epsilon, "method": self.method,
            "h": self.h, "T": self.T, "seed": self.seed,
        }
        for prefix, values in (("max_drift_", self.max_drift), ("slope_", self.slope),
                               ("slope_stderr_", self.slope_stderr)):
            for name in SCAN_INVARIANTS:
                record[prefix + name] = values.get(name, math.nan)
        record["rev_defect"] = self.rev_defect
        record["verdict"] = self.verdict
        return record

    def as_row(self) -> List[Any]:
        record = self.to_record()
        return [record[column] for column in SCAN_COLUMNS]


@dataclass(frozen=True)
class ScanResult:
    """走査の行（キー順）と再現用のシード"""
    rows: Tuple[ScanRow, ...]
    seeds: Tuple[int, ...]
    a0: float
    columns: Tuple[str, ...] = tuple(SCAN_COLUMNS)

    def controls(self) -> List[ScanRow]:
        return [row for row in self.rows if row.epsilon == 0.0]

    def secular_rows(self) -> List[ScanRow]:
        return [row for row in self.rows if row.verdict == "secular"]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seeds": list(self.seeds),
            "a0": self.a0,
            "columns": list(self.columns),
            "rows": [row.to_record() for row in self.rows],
        }


def scan_initial_state(orbit: SubsystemOrbit, seed: int) -> np.ndarray:
    """シードから (q₁, q₂, p) と トーラス上の (q₃, p₃) を決める"""
    rng = np.random.default_rng(seed)
    q1, q2, p = rng.uniform(-1.0, 1.0, size=3)
    q3, p3 = orbit.theta_param(float(rng.uniform(0.0, 1.0)))
    return np.array([q1, q2, q3, p, p3])


@dataclass(frozen=True)
class _ScanCell:
    perturbation: Optional[Perturbation]
    g_label: str
    epsilon: float
    method: str
    seed: int


def _verdict(drift: DriftReport, control: DriftReport, secular_factor: float) -> str:
    for name in SCAN_INVARIANTS:
        if name not in drift.trends:
            continue
        if drift.trends[name].significant and drift.max_drift(name) > secular_factor * control.max_drift(name):
            return "secular"
    return "bounded"


@performance_log(label="kam_scan")
def kam_scan(
    spec: SystemSpec,
    perturbations: Sequence[Union[str, Perturbation, None]],
    epsilons: Sequence[float],
    methods: Sequence[str],
    T: float,
    seeds: Sequence[int],
    cfg: Optional[StepperConfig] = None,
    sample_dt: float = 1.0,
    a0: float = 0.5,
    threads: int = 1,
    cache: Optional[CachedDataManager] = None,
    resonance_tol: float = 1e-8,
    sigmas: float = 5.0,
    secular_factor: float = 10.0,
    progress: bool = False,
) -> ScanResult:
    """
    (G, ε, 積分法, シード) の各組で摂動系を積分し、ε = 0 チャートの不変量のドリフトを判定する

    対照はシードごとの ε = 0 参照解。secular は傾きが有意かつ最大ドリフトが対照の
    secular_factor 倍を超えるとき。

    Raises:
        InvalidParameter: ε の格子に 0 がない、未知の積分法
    """
    if not any(eps == 0.0 for eps in epsilons):
        raise InvalidParameter(
            "epsilon grid must contain 0 (control rows)",
            context={"operation": "kam_scan", "epsilons": list(epsilons)}
        )
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise InvalidParameter(f"unknown integrators {unknown}", context={"operation": "kam_scan"})
    if not seeds:
        raise InvalidParameter("kam_scan needs at least one seed", context={"operation": "kam_scan"})

    cfg = cfg if cfg is not None else StepperConfig()
    cache = cache if cache is not None else CachedDataManager()
    base = spec.unperturbed()
    torus = cache.get(("torus", base.label, a0), lambda: _tracked_floquet(base, a0, cfg, resonance_tol))
    orbit = torus[0]

    resolved = []
    for item in perturbations:
        pert = get_perturbation(item) if isinstance(item, str) else item
        resolved.append((pert, "none" if pert is None else pert.label))

    cells = [
        _ScanCell(pert, label, float(eps), method, int(seed))
        for pert, label in resolved
        for eps in epsilons
        for method in methods
        for seed in seeds
    ]
    logger.info(f"Scanning {len(cells)} cells on {spec.label} (a0={a0}, T={T}, threads={threads})")

    def control(seed: int) -> DriftReport:
        return cache.get(
            ("control", base.label, a0, seed, T, sample_dt),
            lambda: invariant_drift(base, scan_initial_state(orbit, seed), cfg.with_method("reference"),
                                    T, sample_dt, torus=torus, resonance_tol=resonance_tol, sigmas=sigmas)
        )

    def run_cell(cell: _ScanCell) -> ScanRow:
        cell_spec = base.with_perturbation(cell.perturbation, cell.epsilon)
        s0 = scan_initial_state(orbit, cell.seed)
        handle = induced_field(cell_spec)
        method_cfg = cfg.with_method(cell.method)
        drift = invariant_drift(cell_spec, s0, method_cfg, T, sample_dt, field_handle=handle,
                                torus=torus, resonance_tol=resonance_tol, sigmas=sigmas)
        rev = reversibility_defect(handle, cell.method, s0, cfg.h, cfg)
        return ScanRow(
            g_label=cell.g_label, epsilon=cell.epsilon, method=cell.method, h=cfg.h, T=float(T),
            seed=cell.seed,
            max_drift={name: drift.max_drift(name) for name in SCAN_INVARIANTS},
            slope={name: drift.trends[name].slope for name in SCAN_INVARIANTS if name in drift.trends},
            slope_stderr={name: drift.trends[name].stderr for name in SCAN_INVARIANTS if name in drift.trends},
            rev_defect=rev,
            verdict=_verdict(drift, control(cell.seed), secular_factor),
        )

    with tqdm(total=len(cells), desc="kam_scan", unit="row", disable=not progress) as bar:
        processor = RowProcessor(max_workers=max(1, threads), progress=bar.update)
        rows = processor.map_ordered(run_cell, cells)

    rows = tuple(sorted(rows, key=lambda row: row.sort_key))
    secular = sum(row.verdict == "secular" for row in rows)
    logger.info(f"Scan finished: {len(rows)} rows, {secular} secular")
    return ScanResult(rows, tuple(int(s) for s in seeds), float(a0))


# --- 周波数写像 ---

@dataclass(frozen=True)
class FrequencyEntry:
    a: float
    omega: float
    xi: float
    resonant: bool


@dataclass(frozen=True)
class FrequencyMap:
    """
    (a, ω, ξ) の表と ξ ≈ c·ω の当てはめ

    verdict は最大残差が dependence_tol 未満なら "dependent"。
    """
    entries: Tuple[FrequencyEntry, ...]
    skipped: Tuple[float, ...]
    c: float
    max_residual: float
    ratio_variation: float
    verdict: str

    def to_dict(self) -> Dict[str, Any]:
        return {
            "entries": [vars(e) for e in self.entries],
            "skipped": list(self.skipped),
            "c": self.c,
            "max_residual": self.max_residual,
            "ratio_variation": self.ratio_variation,
            "verdict": self.verdict,
        }


@performance_log(label="frequency_map")
def frequency_map(
    spec: SystemSpec,
    a_grid: Sequence[float],
    cfg: Optional[StepperConfig] = None,
    resonance_tol: float = 1e-8,
    dependence_tol: float = 1e-8,
    min_points: int = 10,
    cache: Optional[CachedDataManager] = None,
    loader: Optional[Callable[[float], FloquetData]] = None,
) -> FrequencyMap:
    """
    各トーラスの (ω, ξ) と独立性の判定

    半回転と ω = 0 のトーラスは除外して skipped に記録する。σ = 0 は ξ = 0 として残す。
    loader を渡すとトーラスの計算をそちらに任せる（cache は使わない）。

    Raises:
        InsufficientGrid: 有効な点が min_points 未満
    """
    cfg = cfg if cfg is not None else StepperConfig()
    cache = cache if cache is not None else CachedDataManager()
    base = spec.unperturbed()

    def load(a: float) -> FloquetData:
        orbit = subsystem_orbit(base, a, tol=cfg.reference_tol)
        return floquet_data(base, orbit, cfg, resonance_tol=resonance_tol)

    entries = []
    skipped = []
    for a in a_grid:
        if loader is not None:
            fd = loader(float(a))
        else:
            fd = cache.get(("floquet", base.label, float(a)), lambda a=a: load(float(a)))
        if fd.half_turn or fd.frozen:
            logger.warning(f"Skipping torus a={a} (half_turn={fd.half_turn}, frozen={fd.frozen})")
            skipped.append(float(a))
            continue
        entries.append(FrequencyEntry(float(a), fd.omega, fd.xi, fd.resonant_flag))

    if len(entries) < min_points:
        raise InsufficientGrid(
            f"frequency map needs at least {min_points} valid tori, got {len(entries)}",
            context={"operation": "frequency_map", "valid": len(entries), "skipped": skipped}
        )

    omega = np.array([e.omega for e in entries])
    xi = np.array([e.xi for e in entries])
    c = float(omega @ xi / (omega @ omega))
    max_residual = float(np.max(np.abs(xi - c * omega)))
    ratio_variation = float(np.ptp(xi / omega))
    verdict = "dependent" if max_residual < dependence_tol else "independent"
    logger.info(f"Frequency map on {spec.label}: c={c:.6g}, residual={max_residual:.3e}, verdict={verdict}")
    return FrequencyMap(tuple(entries), tuple(skipped), c, max_residual, ratio_variation, verdict)
