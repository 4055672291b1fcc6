"""
integrators.py
時間積分

非可逆な基準としての古典的RK4、可逆（自己随伴）な陰的中点則、
そして全体の参照解として使う高精度の適応型ソルバー（DOP853）を提供します。
"""
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.integrate import solve_ivp

from error_handling import InvalidParameter, NonConvergence, StepSizeUnderflow
from logging_config import get_logger
from optimizations import performance_log
from reduction import VectorFieldHandle

logger = get_logger(__name__)

METHODS = ("rk4", "implicit_midpoint", "reference")

# 反復が停滞したときに受理する更新幅（newton_tol に対する倍率）
STALL_FACTOR = 100.0

FieldLike = Union[VectorFieldHandle, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True)
class StepperConfig:
    """積分法と刻み幅・許容誤差"""
    method: str = "reference"
    h: float = 0.05
    newton_tol: float = 1e-12
    newton_max_iters: int = 50
    reference_tol: float = 1e-12

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidParameter(
                f"unknown integrator '{self.method}', expected one of {list(METHODS)}",
                context={"operation": "StepperConfig"}
            )
        for name in ("h", "newton_tol", "reference_tol"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidParameter(
                    f"{name} must be > 0, got {value!r}",
                    context={"operation": "StepperConfig", "invariant": f"{name} > 0"}
                )
        if self.newton_max_iters < 1:
            raise InvalidParameter(f"newton_max_iters must be >= 1, got {self.newton_max_iters}")

    def with_method(self, method: str) -> 'StepperConfig':
        return StepperConfig(method, self.h, self.newton_tol, self.newton_max_iters, self.reference_tol)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """時刻付きの状態列"""
    times: np.ndarray
    states: np.ndarray
    spec_label: str = ""
    method_label: str = ""
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] != times.shape[0]:
            raise InvalidParameter(
                f"trajectory has {times.shape[0]} times but states of shape {states.shape}"
            )
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise InvalidParameter("trajectory times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0]) if len(self) else 0.0

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def to_rows(self) -> List[List[float]]:
        return [[float(t), *map(float, y)] for t, y in zip(self.times, self.states)]


def _as_function(field_like: FieldLike) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(field_like, VectorFieldHandle):
        return field_like.field
    return field_like


def _label_of(field_like: FieldLike) -> str:
    return field_like.label if isinstance(field_like, VectorFieldHandle) else getattr(field_like, "__name__", "field")


def step_rk4(field_like: FieldLike, s: Sequence[float], h: float) -> np.ndarray:
    """古典的4次ルンゲ・クッタの1ステップ"""
    f = _as_function(field_like)
    y = np.asarray(s, dtype=float)
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _numerical_jacobian(f: Callable[[np.ndarray], np.ndarray], y: np.ndarray) -> np.ndarray:
    n = y.size
    jac = np.empty((n, n))
    for j in range(n):
        dy = 1e-7 * max(1.0, abs(y[j]))
        e = np.zeros(n)
        e[j] = dy
        jac[:, j] = (f(y + e) - f(y - e)) / (2.0 * dy)
    return jac


def step_implicit_midpoint(field_like: FieldLike, s: Sequence[float], h: float, cfg: StepperConfig) -> np.ndarray:
    """
    陰的中点則 s' = s + h·f((s + s')/2)

    不動点反復で解き、縮小が止まったらニュートン法（差分ヤコビアン）に切り替える。
    場の評価に丸め誤差の床がある場合（induced_field など）、更新幅が縮まなくなった時点で
    STALL_FACTOR·newton_tol 以下なら収束とみなす。

    Raises:
        NonConvergence: newton_max_iters 回で newton_tol に届かない
    """
    f = _as_function(field_like)
    y = np.asarray(s, dtype=float)
    tol = cfg.newton_tol * max(1.0, float(np.max(np.abs(y))) if y.size else 1.0)
    stall_tol = STALL_FACTOR * tol

    z = y + h * f(y)
    previous = math.inf
    for _ in range(cfg.newton_max_iters):
        z_new = y + h * f(0.5 * (y + z))
        delta = float(np.max(np.abs(z_new - z)))
        z = z_new
        if delta <= tol:
            return z
        if delta > 0.5 * previous:
            if delta <= stall_tol:
                return z
            break
        previous = delta

    # ニュートン法: G(z) = z − y − h f((y + z)/2)
    eye = np.eye(y.size)
    previous = math.inf
    for _ in range(cfg.newton_max_iters):
        mid = 0.5 * (y + z)
        residual = z - y - h * f(mid)
        jac = eye - 0.5 * h * _numerical_jacobian(f, mid)
        dz = np.linalg.solve(jac, -residual)
        z = z + dz
        step = float(np.max(np.abs(dz)))
        if step <= tol or (step > 0.5 * previous and step <= stall_tol):
            return z
        previous = step

    raise NonConvergence(
        f"implicit midpoint did not converge in {cfg.newton_max_iters} iterations (h={h})",
        context={"operation": "step_implicit_midpoint", "h": h, "newton_tol": cfg.newton_tol}
    )


def _solve_reference(f, s0: np.ndarray, t_span, cfg: StepperConfig, t_eval=None, dense_output: bool = False,
                     operation: str = "reference_solve"):
    solution = solve_ivp(
        lambda t, y: f(y),
        t_span,
        s0,
        method="DOP853",
        rtol=cfg.reference_tol,
        atol=cfg.reference_tol,
        t_eval=t_eval,
        dense_output=dense_output,
    )
    if solution.status == -1:
        raise StepSizeUnderflow(
            f"reference solver failed: {solution.message}",
            context={"operation": operation, "t_reached": float(solution.t[-1]) if solution.t.size else None}
        )
    return solution


def reference_solve(
    field_like: FieldLike,
    s0: Sequence[float],
    t_final: float,
    cfg: StepperConfig,
    sample_times: Optional[Sequence[float]] = None,
) -> Trajectory:
    """
    DOP853（rtol = atol = reference_tol）による参照解

    Args:
        field_like: 場
        s0: 初期状態
        t_final: 終端時刻（> 0）
        cfg: 設定
        sample_times: 出力する時刻（省略時は始点と終点）

    Raises:
        StepSizeUnderflow: ステップ幅が潰れた（硬い・発散）
    """
    if t_final <= 0:
        raise InvalidParameter(f"t_final must be > 0, got {t_final}")
    s0 = np.asarray(s0, dtype=float)
    if sample_times is None:
        sample_times = np.array([0.0, t_final])
    sample_times = np.asarray(sample_times, dtype=float)
    solution = _solve_reference(_as_function(field_like), s0, (0.0, t_final), cfg, t_eval=sample_times)
    return Trajectory(
        solution.t, solution.y.T, method_label="reference",
        metadata={"nfev": int(solution.nfev), "field": _label_of(field_like)}
    )


def reference_flow(field_like: FieldLike, s: Sequence[float], h: float, cfg: StepperConfig) -> np.ndarray:
    """参照ソルバーで h だけ進めた状態"""
    s = np.asarray(s, dtype=float)
    solution = _solve_reference(_as_function(field_like), s, (0.0, h), cfg, t_eval=[h])
    return solution.y[:, -1]


def one_step(field_like: FieldLike, s: Sequence[float], h: float, cfg: StepperConfig) -> np.ndarray:
    """cfg.method の1ステップ"""
    if cfg.method == "rk4":
        return step_rk4(field_like, s, h)
    if cfg.method == "implicit_midpoint":
        return step_implicit_midpoint(field_like, s, h, cfg)
    return reference_flow(field_like, s, h, cfg)


def default_reversal(dimension: int) -> np.ndarray:
    """運動量成分の符号を反転する符号の列（5: 簡約チャート, 6: 正準, 2: 部分系）"""
    signs = {
        2: [1.0, -1.0],
        3: [1.0, 1.0, -1.0],
        5: [1.0, 1.0, 1.0, -1.0, -1.0],
        6: [1.0, 1.0, 1.0, -1.0, -1.0, -1.0],
    }
    if dimension not in signs:
        raise InvalidParameter(f"no default reversal for dimension {dimension}")
    return np.array(signs[dimension])


def reversibility_defect(
    field_like: FieldLike,
    method: str,
    s: Sequence[float],
    h: float,
    cfg: StepperConfig,
    reversal: Optional[np.ndarray] = None,
) -> float:
    """‖ρ(ψ_h(ρ(ψ_h(s)))) − s‖∞"""
    s = np.asarray(s, dtype=float)
    rho = default_reversal(s.size) if reversal is None else np.asarray(reversal, dtype=float)
    step_cfg = cfg.with_method(method)
    y = one_step(field_like, s, h, step_cfg)
    y = one_step(field_like, rho * y, h, step_cfg)
    return float(np.max(np.abs(rho * y - s)))


@performance_log(label="integrate")
def integrate(
    field_like: FieldLike,
    s0: Sequence[float],
    t_final: float,
    cfg: StepperConfig,
    sample_dt: Optional[float] = None,
    spec_label: str = "",
) -> Trajectory:
    """
    cfg.method で [0, t_final] を積分し、sample_dt ごとの標本を返す

    固定刻みの方法では sample_dt は h の整数倍でなければならない。
    """
    if t_final <= 0:
        raise InvalidParameter(f"t_final must be > 0, got {t_final}")
    s0 = np.asarray(s0, dtype=float)
    sample_dt = cfg.h if sample_dt is None else sample_dt
    if sample_dt <= 0:
        raise InvalidParameter(f"sample_dt must be > 0, got {sample_dt}")

    if cfg.method == "reference":
        n_samples = int(math.floor(t_final / sample_dt + 1e-9))
        times = np.minimum(sample_dt * np.arange(n_samples + 1), t_final)
        trajectory = reference_solve(field_like, s0, t_final, cfg, sample_times=times)
        return Trajectory(trajectory.times, trajectory.states, spec_label, "reference", trajectory.metadata)

    stride = sample_dt / cfg.h
    if abs(stride - round(stride)) > 1e-9 * max(1.0, stride):
        raise InvalidParameter(
            f"sample_dt={sample_dt} must be a multiple of h={cfg.h}",
            context={"operation": "integrate"}
        )
    stride = int(round(stride))
    n_steps = t_final / cfg.h
    if abs(n_steps - round(n_steps)) > 1e-9 * max(1.0, n_steps):
        raise InvalidParameter(
            f"t_final={t_final} must be a multiple of h={cfg.h}",
            context={"operation": "integrate", "invariant": "t_final = n·h"}
        )
    n_steps = int(round(n_steps))
    logger.debug(f"Integrating {_label_of(field_like)} with {cfg.method}: {n_steps} steps of h={cfg.h}")

    times = [0.0]
    states = [s0]
    y = s0
    for k in range(1, n_steps + 1):
        y = one_step(field_like, y, cfg.h, cfg)
        if k % stride == 0:
            times.append(k * cfg.h)
            states.append(y)
    return Trajectory(np.array(times), np.array(states), spec_label, cfg.method,
                      {"h": cfg.h, "steps": n_steps, "field": _label_of(field_like)})
