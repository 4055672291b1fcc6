"""
floquet.py
Floquet理論による作用・角変数の構成

部分系の閉軌道（トーラスのラベル a・周期・角度 θ による径数付け）、
歪対称場 B(a, θ)、モノドロミー Φ(1) とその主対数 Ā ∈ so(3)、
変数変換 Ψ、可逆性の恒等式の検査、(a, b, c, θ, φ) 座標と周波数 (ω, ξ) を提供します。
"""
import math
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize
from scipy.linalg import expm
from scipy.spatial.transform import Rotation

from error_handling import (
    DegenerateRotation,
    HalfTurn,
    InvalidParameter,
    NoClosedOrbit,
    NoSectionCrossing,
    NotARotation,
    OmegaZero,
    StepSizeUnderflow,
)
from integrators import StepperConfig
from logging_config import get_logger
from model import StateLike, Subsystem, SystemSpec, alpha_pair, skew_coordinates
from optimizations import performance_log

logger = get_logger(__name__)

RHO = np.diag([1.0, 1.0, -1.0])
TWO_PI = 2.0 * math.pi


# --- 部分系の軌道 ---

@dataclass(frozen=True, eq=False)
class SubsystemOrbit:
    """
    F = a の閉軌道

    θ ∈ [0, 1) は基点 (q₃*, 0) から測った時間 t/T₃。流れは θ の正の向きに進む。
    周期が無限（平衡点）のときは omega = 0。
    """
    a: float
    period_T3: float
    omega: float
    basepoint: Tuple[float, float]
    subsystem: Subsystem
    crossing_direction: int
    opposite_q3: float
    dense: Optional[Any] = None
    table_theta: Optional[np.ndarray] = None
    table_states: Optional[np.ndarray] = None

    @property
    def is_equilibrium(self) -> bool:
        return self.omega == 0.0

    @property
    def section_q3_mid(self) -> float:
        """ポアンカレ断面で基点側の交差だけを選ぶための閾値"""
        return 0.5 * (self.basepoint[0] + self.opposite_q3)

    def theta_param(self, theta: float) -> Tuple[float, float]:
        """θ ↦ (q₃, p₃)"""
        if self.is_equilibrium:
            return self.basepoint
        frac = theta - math.floor(theta)
        harmonic = self.subsystem.harmonic
        if harmonic is not None:
            kappa, mu = harmonic
            r = self.basepoint[0]
            nu = math.sqrt(kappa / mu)
            angle = TWO_PI * frac
            return r * math.cos(angle), -mu * r * nu * math.sin(angle)
        q3, p3 = self.dense(frac * self.period_T3)
        return float(q3), float(p3)

    def tangent(self, theta: float) -> np.ndarray:
        """d(q₃, p₃)/dθ = T₃·X_F"""
        q3, p3 = self.theta_param(theta)
        return self.period_T3 * np.array(self.subsystem.vector_field(q3, p3))


def _section_roots(subsystem: Subsystem, a: float, window: Tuple[float, float], n_grid: int) -> np.ndarray:
    grid = np.linspace(window[0], window[1], n_grid)
    values = np.array([subsystem.F(q, 0.0) - a for q in grid])
    roots = list(grid[values == 0.0])
    for i in np.nonzero(values[:-1] * values[1:] < 0.0)[0]:
        roots.append(optimize.brentq(lambda q: subsystem.F(q, 0.0) - a, grid[i], grid[i + 1], xtol=1e-15))
    return np.array(sorted(roots))


def _subsystem_rhs(subsystem: Subsystem) -> Callable[[float, np.ndarray], np.ndarray]:
    def rhs(t, y):
        return np.array(subsystem.vector_field(y[0], y[1]))
    return rhs


def _crossing_event(direction: int):
    def event(t, y):
        return y[1]
    event.terminal = True
    event.direction = direction
    return event


@performance_log(label="subsystem_orbit")
def subsystem_orbit(
    spec: SystemSpec,
    a: float,
    seed_q3: Optional[float] = None,
    window: Tuple[float, float] = (-10.0, 10.0),
    time_cap: float = 1000.0,
    tol: float = 1e-12,
    n_grid: int = 2001,
    table_size: int = 512,
) -> SubsystemOrbit:
    """
    部分系の等位集合 F = a 上の閉軌道を求める

    基点は F(q₃, 0) = a の根（seed_q3 に最も近いもの、既定は最大の根）。
    周期は切断面 {p₃ = 0} に同じ向きで戻るまでの時間。

    Raises:
        NoSectionCrossing: 窓内に根がない
        NoClosedOrbit: time_cap 以内に戻らない
    """
    subsystem = spec.subsystem
    harmonic = subsystem.harmonic

    if harmonic is not None:
        kappa, mu = harmonic
        if a < 0.0 or not math.isfinite(a):
            raise NoSectionCrossing(
                f"harmonic level F = {a} has no point on the section",
                context={"operation": "subsystem_orbit", "a": a}
            )
        r = math.sqrt(2.0 * a / kappa)
        if r == 0.0:
            return SubsystemOrbit(a, math.inf, 0.0, (0.0, 0.0), subsystem, 0, 0.0)
        period = TWO_PI * math.sqrt(mu / kappa)
        return SubsystemOrbit(a, period, 1.0 / period, (r, 0.0), subsystem, -1, -r)

    roots = _section_roots(subsystem, a, window, n_grid)
    if roots.size == 0:
        raise NoSectionCrossing(
            f"F(q3, 0) = {a} has no root in {window}",
            context={"operation": "subsystem_orbit", "a": a, "window": list(window)}
        )
    q_star = float(roots[-1] if seed_q3 is None else roots[np.argmin(np.abs(roots - seed_q3))])
    force = float(subsystem.dFdq3(q_star, 0.0))
    if abs(force) <= 1e-12:
        logger.warning(f"Level a={a} sits on an equilibrium at q3={q_star}; omega = 0")
        return SubsystemOrbit(a, math.inf, 0.0, (q_star, 0.0), subsystem, 0, q_star)

    direction = -1 if force > 0 else 1
    rhs = _subsystem_rhs(subsystem)
    y0 = np.array([q_star, 0.0])

    t_elapsed = 0.0
    state = y0
    # 1段目: 反対向きの交差（半周期）、2段目: 基点と同じ向きの交差
    for stage_direction in (-direction, direction):
        solution = integrate.solve_ivp(
            rhs, (0.0, time_cap - t_elapsed), state, method="DOP853",
            rtol=tol, atol=tol, events=_crossing_event(stage_direction)
        )
        if solution.status == -1:
            raise StepSizeUnderflow(f"subsystem integration failed: {solution.message}",
                                    context={"operation": "subsystem_orbit", "a": a})
        if solution.t_events[0].size == 0:
            raise NoClosedOrbit(
                f"no return to the section within t = {time_cap} for a = {a}",
                context={"operation": "subsystem_orbit", "a": a, "time_cap": time_cap}
            )
        t_elapsed += float(solution.t_events[0][0])
        state = solution.y_events[0][0]
        if stage_direction == -direction:
            opposite_q3 = float(state[0])

    period = t_elapsed
    dense_solution = integrate.solve_ivp(
        rhs, (0.0, period), y0, method="DOP853", rtol=tol, atol=tol, dense_output=True
    )
    closure = float(np.max(np.abs(dense_solution.y[:, -1] - y0)))
    logger.debug(f"Orbit a={a}: T3={period:.12g}, closure defect {closure:.2e}")

    table_theta = np.linspace(0.0, 1.0, table_size, endpoint=False)
    table_states = dense_solution.sol(table_theta * period).T
    return SubsystemOrbit(
        a, period, 1.0 / period, (q_star, 0.0), subsystem, direction, opposite_q3,
        dense=dense_solution.sol, table_theta=table_theta, table_states=table_states
    )


def phase_of(orbit: SubsystemOrbit, q3: float, p3: float) -> float:
    """(q₃, p₃) の軌道上の位相 θ ∈ [0, 1)"""
    if orbit.is_equilibrium:
        return 0.0
    harmonic = orbit.subsystem.harmonic
    if harmonic is not None:
        kappa, mu = harmonic
        nu = math.sqrt(kappa / mu)
        theta = math.atan2(-p3 / (mu * nu), q3) / TWO_PI
        return theta - math.floor(theta)

    target = np.array([q3, p3])
    nearest = int(np.argmin(np.sum((orbit.table_states - target) ** 2, axis=1)))
    theta = float(orbit.table_theta[nearest])
    for _ in range(30):
        point = np.array(orbit.theta_param(theta))
        tangent = orbit.tangent(theta)
        step = float((target - point) @ tangent / (tangent @ tangent))
        theta += step
        if abs(step) < 1e-15:
            break
    return theta - math.floor(theta)


def classical_action(spec: SystemSpec, orbit: SubsystemOrbit) -> float:
    """∮p₃dq₃/(2π)（調和部分系では a と一致）"""
    if orbit.is_equilibrium:
        return 0.0
    subsystem = spec.subsystem

    def integrand(theta):
        q3, p3 = orbit.theta_param(theta)
        return p3 * float(subsystem.dFdp3(q3, p3))

    value, _ = integrate.quad(integrand, 0.0, 1.0, limit=400, epsabs=1e-13, epsrel=1e-12)
    return orbit.period_T3 * value / TWO_PI


# --- 歪対称場とモノドロミー ---

def skew_matrix_at(spec: SystemSpec, q3: float) -> np.ndarray:
    """u = (√k₁q₁, √k₂q₂, p) に対する u̇ = B u の B"""
    a1, a2 = alpha_pair(spec, q3)
    prm = spec.params
    b1 = math.sqrt(prm.k1) * a1 / prm.m1
    b2 = math.sqrt(prm.k2) * a2 / prm.m2
    return np.array([
        [0.0, 0.0, b1],
        [0.0, 0.0, b2],
        [-b1, -b2, 0.0],
    ])


def skew_field_B(spec: SystemSpec, orbit: SubsystemOrbit, theta: float) -> np.ndarray:
    """B(a, θ)。q₃ は軌道の θ での値。"""
    return skew_matrix_at(spec, orbit.theta_param(theta)[0])


def _hat(vector: np.ndarray) -> np.ndarray:
    x, y, z = vector
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _vee(matrix: np.ndarray) -> np.ndarray:
    return np.array([matrix[2, 1], matrix[0, 2], matrix[1, 0]])


def _reference_cfg(cfg: Optional[StepperConfig]) -> StepperConfig:
    return cfg if cfg is not None else StepperConfig("reference")


def _monodromy_rhs(spec: SystemSpec, period: float):
    subsystem = spec.subsystem

    def rhs(theta, y):
        dq3, dp3 = subsystem.vector_field(y[0], y[1])
        generator = period * skew_matrix_at(spec, y[0])
        flow = y[2:].reshape(3, 3)
        return np.concatenate([[period * dq3, period * dp3], (generator @ flow).ravel()])

    return rhs


def _flow_solve(spec: SystemSpec, orbit: SubsystemOrbit, theta_end: float, cfg: StepperConfig,
                dense_output: bool = False):
    y0 = np.concatenate([np.array(orbit.basepoint, dtype=float), np.eye(3).ravel()])
    solution = integrate.solve_ivp(
        _monodromy_rhs(spec, orbit.period_T3), (0.0, theta_end), y0, method="DOP853",
        rtol=cfg.reference_tol, atol=cfg.reference_tol, dense_output=dense_output
    )
    if solution.status == -1:
        raise StepSizeUnderflow(f"monodromy integration failed: {solution.message}",
                                context={"operation": "monodromy", "a": orbit.a})
    return solution


@dataclass(frozen=True, eq=False)
class Monodromy:
    """Φ(1) と θ ∈ [0, 1] の密出力"""
    Phi1: np.ndarray
    orthogonality_defect: float
    det_defect: float
    dense: Any

    def flow_at(self, theta: float) -> np.ndarray:
        """Φ(θ)（θ ∈ [0, 1]）"""
        return self.dense(theta)[2:].reshape(3, 3)


def monodromy(spec: SystemSpec, orbit: SubsystemOrbit, ode_cfg: Optional[StepperConfig] = None) -> Monodromy:
    """
    Ẇ = A_a(θ)W, A_a = B(a, θ)/ω(a), W(0) = I を θ ∈ [0, 1] で積分する

    q₃(θ) は部分系を同時に積分して与える。返す Phi1 は再直交化しない。

    Raises:
        OmegaZero: ω(a) = 0
    """
    if orbit.is_equilibrium:
        raise OmegaZero(
            f"omega(a) = 0 at a = {orbit.a}; use the frozen branch",
            context={"operation": "monodromy", "a": orbit.a}
        )
    cfg = _reference_cfg(ode_cfg)
    solution = _flow_solve(spec, orbit, 1.0, cfg, dense_output=True)
    phi1 = solution.y[2:, -1].reshape(3, 3)
    orth = float(np.max(np.abs(phi1.T @ phi1 - np.eye(3))))
    det = float(abs(np.linalg.det(phi1) - 1.0))
    logger.debug(f"Monodromy a={orbit.a}: orthogonality defect {orth:.2e}, det defect {det:.2e}")
    return Monodromy(phi1, orth, det, solution.sol)


def so3_log(R: np.ndarray, tol: float = 1e-8) -> Tuple[np.ndarray, float, Optional[np.ndarray]]:
    """
    SO(3) の主対数

    Args:
        R: 回転行列
        tol: 直交性・行列式・半回転判定の許容値

    Returns:
        (Abar, sigma, axis)。sigma ∈ [0, π)、sigma = 0 のとき axis は None。

    Raises:
        NotARotation: RᵀR ≠ I または det R ≠ 1
        HalfTurn: sigma = π（軸の向きが定まらない）
    """
    R = np.asarray(R, dtype=float)
    orth = float(np.max(np.abs(R.T @ R - np.eye(3))))
    det = float(np.linalg.det(R))
    if orth > tol or abs(det - 1.0) > tol:
        raise NotARotation(
            f"matrix is not in SO(3) (orthogonality defect {orth:.2e}, det {det:.12g})",
            context={"operation": "so3_log", "orthogonality_defect": orth, "det": det}
        )
    rotvec = Rotation.from_matrix(R).as_rotvec()
    sigma = float(np.linalg.norm(rotvec))
    if math.pi - sigma < tol:
        raise HalfTurn(
            f"rotation angle {sigma!r} is a half turn",
            context={"operation": "so3_log", "sigma": sigma}
        )
    axis = rotvec / sigma if sigma > 0.0 else None
    return _hat(rotvec), sigma, axis


@dataclass(frozen=True, eq=False)
class FloquetData:
    """
    一つのトーラスのFloquetデータ

    xi = ω σ/(2π)。frozen は ω = 0 の分岐で、Phi1 は単位時間の写像、xi は単位時間あたりの回転数。
    """
    a: float
    Phi1: np.ndarray
    Abar: np.ndarray
    sigma: float
    axis: Optional[np.ndarray]
    omega: float
    xi: float
    resonant_flag: bool
    half_turn: bool = False
    frozen: bool = False
    orthogonality_defect: float = 0.0
    det_defect: float = 0.0
    monodromy: Optional[Monodromy] = None

    @property
    def rotvec(self) -> np.ndarray:
        return _vee(self.Abar)

    def flow_at(self, theta: float) -> np.ndarray:
        """Φ(θ mod 1)"""
        if self.frozen or self.monodromy is None:
            return np.eye(3)
        return self.monodromy.flow_at(theta - math.floor(theta))

    def to_record(self) -> Dict[str, Any]:
        return {
            "a": self.a,
            "omega": self.omega,
            "xi": self.xi,
            "sigma": self.sigma,
            "axis": None if self.axis is None else [float(v) for v in self.axis],
            "Phi1": [[float(v) for v in row] for row in self.Phi1],
            "Abar": [[float(v) for v in row] for row in self.Abar],
            "resonant_flag": self.resonant_flag,
            "half_turn": self.half_turn,
            "frozen": self.frozen,
            "orthogonality_defect": self.orthogonality_defect,
            "det_defect": self.det_defect,
        }


def _frozen_floquet(spec: SystemSpec, orbit: SubsystemOrbit, resonance_tol: float) -> FloquetData:
    # q₃ が動かないので u̇ = B₀u は定数係数
    generator = skew_matrix_at(spec, orbit.basepoint[0])
    rate = float(np.linalg.norm(_vee(generator)))
    phi1 = expm(generator)
    rotvec = Rotation.from_matrix(phi1).as_rotvec()
    sigma = float(np.linalg.norm(rotvec))
    half = math.pi - sigma < resonance_tol
    return FloquetData(
        a=orbit.a, Phi1=phi1, Abar=_hat(rotvec), sigma=sigma,
        axis=None if rate == 0.0 else _vee(generator) / rate,
        omega=0.0, xi=rate / TWO_PI,
        resonant_flag=sigma < resonance_tol or half, half_turn=half, frozen=True,
    )


@performance_log(label="floquet_data")
def floquet_data(
    spec: SystemSpec,
    orbit: SubsystemOrbit,
    ode_cfg: Optional[StepperConfig] = None,
    resonance_tol: float = 1e-8,
    rotation_tol: float = 1e-8,
) -> FloquetData:
    """
    モノドロミー・主対数・周波数をまとめる。半回転は resonant として記録する。

    rotation_tol は so3_log に渡す SO(3) 判定と半回転判定の許容値、resonance_tol は σ ≈ 0 の閾値。
    """
    if orbit.is_equilibrium:
        return _frozen_floquet(spec, orbit, resonance_tol)

    mono = monodromy(spec, orbit, ode_cfg)
    half = False
    try:
        abar, sigma, axis = so3_log(mono.Phi1, tol=rotation_tol)
    except HalfTurn:
        rotvec = Rotation.from_matrix(mono.Phi1).as_rotvec()
        sigma = float(np.linalg.norm(rotvec))
        abar, axis, half = _hat(rotvec), rotvec / sigma, True
        logger.warning(f"Torus a={orbit.a} is a half turn (sigma={sigma:.12g}); marked resonant")

    return FloquetData(
        a=orbit.a, Phi1=mono.Phi1, Abar=abar, sigma=sigma, axis=axis,
        omega=orbit.omega, xi=orbit.omega * sigma / TWO_PI,
        resonant_flag=half or sigma < resonance_tol, half_turn=half,
        orthogonality_defect=mono.orthogonality_defect, det_defect=mono.det_defect,
        monodromy=mono,
    )


def flow_Phi(spec: SystemSpec, orbit: SubsystemOrbit, theta: float,
             ode_cfg: Optional[StepperConfig] = None) -> np.ndarray:
    """Φ(θ) を 0 から θ まで直接積分して求める（θ は任意の実数）"""
    if theta == 0.0:
        return np.eye(3)
    if orbit.is_equilibrium:
        raise OmegaZero(f"omega(a) = 0 at a = {orbit.a}", context={"operation": "flow_Phi", "a": orbit.a})
    solution = _flow_solve(spec, orbit, float(theta), _reference_cfg(ode_cfg))
    return solution.y[2:, -1].reshape(3, 3)


def _rotation_exp(rotvec: np.ndarray, theta: float) -> np.ndarray:
    return Rotation.from_rotvec(rotvec * theta).as_matrix()


def psi_transform(spec: SystemSpec, orbit: SubsystemOrbit, fd: FloquetData,
                  u: Sequence[float], theta: float) -> np.ndarray:
    """
    v = exp(Āθ)Φ(θ)⁻¹u

    Raises:
        HalfTurn: fd が半回転
    """
    if fd.half_turn:
        raise HalfTurn(f"torus a={fd.a} is a half turn; Psi is not reversible there",
                       context={"operation": "psi_transform", "sigma": fd.sigma})
    u = np.asarray(u, dtype=float)
    if fd.frozen:
        return u.copy()
    frac = theta - math.floor(theta)
    return _rotation_exp(fd.rotvec, frac) @ (fd.flow_at(frac).T @ u)


@dataclass(frozen=True)
class ReversibilityReport:
    """可逆性の恒等式の最大欠損"""
    a: float
    precheck_defect: float
    flow_defect: float
    generator_defect: float
    psi_defect: float

    def max_defect(self) -> float:
        return max(self.precheck_defect, self.flow_defect, self.generator_defect, self.psi_defect)

    def passed(self, threshold: float = 1e-8) -> bool:
        return self.max_defect() <= threshold


def check_reversibility(
    spec: SystemSpec,
    orbit: SubsystemOrbit,
    fd: FloquetData,
    ode_cfg: Optional[StepperConfig] = None,
    n_grid: int = 10,
    n_samples: int = 16,
    seed: int = 0,
) -> ReversibilityReport:
    """
    ρA(θ)ρ = −A(−θ)、(i) ρΦ(−τ) = Φ(τ)ρ、(ii) ρĀρ = −Ā、(iii) Ψ∘R = R∘Ψ の欠損を測る

    Raises:
        HalfTurn: fd が半回転（(ii) が保証されない）
    """
    if fd.half_turn:
        raise HalfTurn(f"torus a={fd.a} is a half turn; reversibility of the log is not guaranteed",
                       context={"operation": "check_reversibility", "sigma": fd.sigma})

    generator_defect = float(np.max(np.abs(RHO @ fd.Abar @ RHO + fd.Abar)))
    grid = np.linspace(0.0, 1.0, n_grid, endpoint=False)

    if fd.frozen:
        b0 = skew_matrix_at(spec, orbit.basepoint[0])
        precheck = float(np.max(np.abs(RHO @ b0 @ RHO + b0)))
        flow = max(float(np.max(np.abs(RHO @ expm(-tau * b0) - expm(tau * b0) @ RHO))) for tau in grid)
        return ReversibilityReport(fd.a, precheck, flow, generator_defect, 0.0)

    period = orbit.period_T3
    precheck = max(
        float(np.max(np.abs(RHO @ (period * skew_field_B(spec, orbit, th)) @ RHO
                            + period * skew_field_B(spec, orbit, -th))))
        for th in grid
    )

    flow = 0.0
    for tau in grid[1:]:
        forward = fd.flow_at(tau)
        backward = flow_Phi(spec, orbit, -tau, ode_cfg)
        flow = max(flow, float(np.max(np.abs(RHO @ backward - forward @ RHO))))

    rng = np.random.default_rng(seed)
    psi = 0.0
    for _ in range(n_samples):
        u = rng.uniform(-1.0, 1.0, size=3)
        theta = float(rng.uniform(0.0, 1.0))
        lhs = psi_transform(spec, orbit, fd, RHO @ u, -theta)
        rhs = RHO @ psi_transform(spec, orbit, fd, u, theta)
        psi = max(psi, float(np.max(np.abs(lhs - rhs))))

    report = ReversibilityReport(fd.a, precheck, flow, generator_defect, psi)
    logger.debug(f"Reversibility a={fd.a}: {report}")
    return report


# --- 作用・角変数 ---

@dataclass(frozen=True)
class ActionAngle:
    """(a, b, c, θ, φ)。角度は [0, 1)。"""
    a: float
    b: float
    c: float
    theta: float
    phi: float

    def as_tuple(self) -> Tuple[float, float, float, float, float]:
        return self.a, self.b, self.c, self.theta, self.phi


def rotation_frame(axis: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    回転面の正規直交基底 (e₁, e₂)、e₂ = n × e₁

    e₁ は n × e₃ の向き（n ∥ e₃ のときは n × e₁）。
    """
    n = np.asarray(axis, dtype=float)
    e1 = np.cross(n, [0.0, 0.0, 1.0])
    if np.linalg.norm(e1) < 1e-8:
        e1 = np.cross(n, [1.0, 0.0, 0.0])
    e1 = e1 / np.linalg.norm(e1)
    return e1, np.cross(n, e1)


def action_angle_coords(
    spec: SystemSpec,
    orbit: SubsystemOrbit,
    fd: FloquetData,
    s: StateLike,
    tol: float = 1e-8,
    torus_tol: float = 1e-6,
) -> ActionAngle:
    """
    簡約状態の (a, b, c, θ, φ)

    状態の F は orbit.a と相対 torus_tol 以内で一致しなければならない。
    固定したチャートでトーラス外の状態を測る場合は torus_tol=math.inf を渡す。

    Raises:
        InvalidParameter: 状態が別のトーラス上にある
        HalfTurn: fd が半回転
        DegenerateRotation: σ ≤ tol で回転面が定まらない
    """
    if fd.half_turn:
        raise HalfTurn(f"torus a={fd.a} is a half turn", context={"operation": "action_angle_coords"})
    if fd.sigma <= tol or fd.axis is None:
        raise DegenerateRotation(
            f"rotation angle {fd.sigma!r} <= {tol}; (b, c, phi) are undefined",
            context={"operation": "action_angle_coords", "sigma": fd.sigma}
        )
    y = s.as_array() if hasattr(s, "as_array") else np.asarray(s, dtype=float)
    q3, p3 = float(y[2]), float(y[4])
    a = spec.subsystem.energy(q3, p3)
    if abs(a - orbit.a) > torus_tol * max(1.0, abs(orbit.a)):
        raise InvalidParameter(
            f"state has F = {a!r} but the torus has a = {orbit.a!r}",
            context={"operation": "action_angle_coords", "a": orbit.a, "F": a, "torus_tol": torus_tol}
        )
    theta = phase_of(orbit, q3, p3)
    v = psi_transform(spec, orbit, fd, skew_coordinates(spec, y), theta)
    n = fd.axis
    c = float(v @ n)
    b = float(np.linalg.norm(v - c * n))
    if b <= 1e-14 * max(1.0, float(np.linalg.norm(v))):
        phi = 0.0
    else:
        e1, e2 = rotation_frame(n)
        phi = math.atan2(float(v @ e2), float(v @ e1)) / TWO_PI
        phi -= math.floor(phi)
    return ActionAngle(a, b, c, theta, phi)


@dataclass(frozen=True)
class FrequencyPair:
    omega: float
    xi: float
    resonant: bool


def frequencies(spec: SystemSpec, orbit: SubsystemOrbit, fd: FloquetData) -> FrequencyPair:
    """(ω, ξ) = (1/T₃, σ/(2πT₃))。σ = 0 では ξ = 0 を resonant として返す。"""
    if fd.a != orbit.a:
        raise InvalidParameter(f"Floquet data for a={fd.a} does not belong to orbit a={orbit.a}")
    return FrequencyPair(fd.omega, fd.xi, fd.resonant_flag)
