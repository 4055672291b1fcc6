"""
model.py
非ホロノミック結合振動子の系の定義

パラメータ・結合関数 f・部分系ハミルトニアン F・摂動 G・状態の表現と、
拘束多様体 M₀ のチャート（embed / project）、反転写像 ρ を提供します。
"""
import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import Polynomial

from error_handling import ConstraintViolation, DomainViolation, InvalidParameter
from logging_config import get_logger

logger = get_logger(__name__)

ScalarFn = Callable[[float], float]
PhaseFn = Callable[[float, float], float]
VectorFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Params:
    """質量とばね定数（すべて正）"""
    m1: float = 1.0
    m2: float = 1.0
    k1: float = 1.0
    k2: float = 1.0

    def __post_init__(self):
        for name in ("m1", "m2", "k1", "k2"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise InvalidParameter(
                    f"{name} must be > 0, got {value!r}",
                    context={"operation": "Params", "invariant": f"{name} > 0", "value": value}
                )


@dataclass(frozen=True)
class Coupling:
    """
    拘束一形式 τ = f(q₃)dq₁ + dq₂ の結合関数

    domain は開区間 (lo, hi)。外側で評価すると DomainViolation。
    """
    f: ScalarFn
    df: ScalarFn
    label: str = "custom"
    domain: Tuple[float, float] = (-math.inf, math.inf)

    def check_domain(self, q3: float) -> None:
        lo, hi = self.domain
        if not (lo < q3 < hi):
            raise DomainViolation(
                f"coupling '{self.label}' evaluated at q3={q3!r} outside its domain ({lo}, {hi})",
                context={"operation": "Coupling", "q3": q3, "domain": [lo, hi]}
            )

    def value(self, q3: float) -> float:
        self.check_domain(q3)
        return float(self.f(q3))

    def derivative(self, q3: float) -> float:
        self.check_domain(q3)
        return float(self.df(q3))

    def tau(self, q3: float) -> np.ndarray:
        """拘束一形式の係数ベクトル (f(q₃), 1, 0)"""
        return np.array([self.value(q3), 1.0, 0.0])


@dataclass(frozen=True)
class Subsystem:
    """
    (q₃, p₃) 部分系のハミルトニアン F

    harmonic が (κ, μ) のとき F = p₃²/(2μ) + κq₃²/2 として解析的な経路を使う。
    """
    F: PhaseFn
    dFdq3: PhaseFn
    dFdp3: PhaseFn
    label: str = "custom"
    d2Fdp3: Optional[PhaseFn] = None
    harmonic: Optional[Tuple[float, float]] = None

    def energy(self, q3: float, p3: float) -> float:
        return float(self.F(q3, p3))

    def vector_field(self, q3: float, p3: float) -> Tuple[float, float]:
        """(q̇₃, ṗ₃) = (∂F/∂p₃, −∂F/∂q₃)"""
        return float(self.dFdp3(q3, p3)), -float(self.dFdq3(q3, p3))

    def second_derivative_p(self, q3: float, p3: float, h: float = 1e-6) -> float:
        """∂²F/∂p₃²（未指定なら中心差分）"""
        if self.d2Fdp3 is not None:
            return float(self.d2Fdp3(q3, p3))
        return (float(self.dFdp3(q3, p3 + h)) - float(self.dFdp3(q3, p3 - h))) / (2.0 * h)


@dataclass(frozen=True)
class Perturbation:
    """T*ℝ³ 上の摂動 G(q, p)。引数は (q1, q2, q3, p1, p2, p3) の配列。"""
    G: Callable[[np.ndarray], float]
    gradG: VectorFn
    reversible_flag: bool
    label: str = "custom"
    hessG: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def hessian(self, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
        """G のヘッセ行列（hessG がなければ勾配の中心差分）"""
        x = np.asarray(x, dtype=float)
        if self.hessG is not None:
            return np.asarray(self.hessG(x), dtype=float)
        hess = np.empty((6, 6))
        for j in range(6):
            step = np.zeros(6)
            step[j] = h
            hess[:, j] = (np.asarray(self.gradG(x + step)) - np.asarray(self.gradG(x - step))) / (2.0 * h)
        return 0.5 * (hess + hess.T)


@dataclass(frozen=True)
class FullState:
    """T*ℝ³ の正準座標"""
    q1: float
    q2: float
    q3: float
    p1: float
    p2: float
    p3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.q1, self.q2, self.q3, self.p1, self.p2, self.p3], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'FullState':
        if len(values) != 6:
            raise InvalidParameter(f"FullState needs 6 components, got {len(values)}")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class ReducedState:
    """M₀ のチャート座標 (q₁, q₂, q₃, p, p₃)"""
    q1: float
    q2: float
    q3: float
    p: float
    p3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.q1, self.q2, self.q3, self.p, self.p3], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'ReducedState':
        if len(values) != 5:
            raise InvalidParameter(f"ReducedState needs 5 components, got {len(values)}")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class SystemSpec:
    """系の族の一員: (Params, Coupling, Subsystem) と任意の摂動 εG"""
    params: Params
    coupling: Coupling
    subsystem: Subsystem
    perturbation: Optional[Perturbation] = None
    epsilon: float = 0.0
    label: str = "custom"

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0.0):
            raise InvalidParameter(
                f"epsilon must be >= 0, got {self.epsilon!r}",
                context={"operation": "SystemSpec", "invariant": "epsilon >= 0"}
            )
        if self.epsilon > 0.0 and self.perturbation is None:
            raise InvalidParameter(
                "epsilon > 0 requires a perturbation G",
                context={"operation": "SystemSpec", "epsilon": self.epsilon}
            )

    @property
    def is_perturbed(self) -> bool:
        return self.epsilon > 0.0 and self.perturbation is not None

    def unperturbed(self) -> 'SystemSpec':
        """ε = 0 の同じ系"""
        if self.epsilon == 0.0:
            return self
        return dataclasses.replace(self, epsilon=0.0)

    def with_perturbation(self, perturbation: Optional[Perturbation], epsilon: float) -> 'SystemSpec':
        if perturbation is None:
            epsilon = 0.0
        return dataclasses.replace(self, perturbation=perturbation, epsilon=float(epsilon))


StateLike = Union[FullState, ReducedState, np.ndarray, Sequence[float]]


def _full_array(s: StateLike) -> np.ndarray:
    if isinstance(s, FullState):
        return s.as_array()
    return np.asarray(s, dtype=float)


def _reduced_array(s: StateLike) -> np.ndarray:
    if isinstance(s, ReducedState):
        return s.as_array()
    return np.asarray(s, dtype=float)


# --- 拘束の幾何 ---

def alpha_pair(spec: SystemSpec, q3: float) -> Tuple[float, float]:
    """(α₁(q₃), α₂(q₃)) をまとめて評価"""
    p = spec.params
    f = spec.coupling.value(q3)
    a1 = ((1.0 + (p.m2 / p.m1) * f * f) / p.m1) ** -0.5
    return a1, -(p.m2 / p.m1) * f * a1


def alpha1(spec: SystemSpec, q3: float) -> float:
    """α₁ = ((1 + (m₂/m₁)f²)/m₁)^(−1/2)。常に正。"""
    return alpha_pair(spec, q3)[0]


def alpha2(spec: SystemSpec, q3: float) -> float:
    """α₂ = −(m₂/m₁) f α₁"""
    return alpha_pair(spec, q3)[1]


def embed(spec: SystemSpec, s: StateLike) -> FullState:
    """チャート座標から M₀ 上の正準座標へ: p₁ = α₁p, p₂ = α₂p"""
    q1, q2, q3, p, p3 = _reduced_array(s)
    a1, a2 = alpha_pair(spec, q3)
    return FullState(q1, q2, q3, a1 * p, a2 * p, p3)


def reduced_momentum(spec: SystemSpec, q3: float, p1: float, p2: float) -> float:
    """
    運動量 (p₁, p₂) を M₀ の p に写す

    (α₁/m₁)p₁ + (α₂/m₂)p₂ は M₀ 上で p₁/α₁ と一致し、多様体の外でも滑らか。
    """
    a1, a2 = alpha_pair(spec, q3)
    return (a1 / spec.params.m1) * p1 + (a2 / spec.params.m2) * p2


def project(spec: SystemSpec, s: StateLike, tol: float = 1e-10) -> ReducedState:
    """
    M₀ 上の状態をチャート座標へ

    Args:
        spec: 系
        s: FullState
        tol: 拘束残差の許容値

    Returns:
        ReducedState（p = p₁/α₁）

    Raises:
        ConstraintViolation: 拘束残差が tol を超えた
    """
    x = _full_array(s)
    residual = constraint_residual(spec.unperturbed(), x)
    if abs(residual) > tol:
        raise ConstraintViolation(
            f"state is off the constraint manifold (residual {residual:.3e} > {tol:.1e})",
            context={"operation": "project", "residual": residual, "tol": tol}
        )
    q1, q2, q3, p1, _p2, p3 = x
    return ReducedState(q1, q2, q3, p1 / alpha1(spec, q3), p3)


def velocity_map(spec: SystemSpec, s: StateLike) -> np.ndarray:
    """速度 ∂H_ε/∂p（3成分）"""
    x = _full_array(s)
    prm = spec.params
    q3, p1, p2, p3 = x[2], x[3], x[4], x[5]
    v = np.array([p1 / prm.m1, p2 / prm.m2, float(spec.subsystem.dFdp3(q3, p3))])
    if spec.is_perturbed:
        v = v + spec.epsilon * np.asarray(spec.perturbation.gradG(x), dtype=float)[3:]
    return v


def constraint_residual(spec: SystemSpec, s: StateLike) -> float:
    """τ·∂H_ε/∂p。ε = 0 では f(q₃)p₁/m₁ + p₂/m₂。"""
    x = _full_array(s)
    v = velocity_map(spec, x)
    return spec.coupling.value(x[2]) * v[0] + v[1]


def hamiltonian(spec: SystemSpec, s: StateLike) -> float:
    """H_ε = Σ(pᵢ²/mᵢ + kᵢqᵢ²)/2 + F(q₃, p₃) + εG"""
    x = _full_array(s)
    prm = spec.params
    q1, q2, q3, p1, p2, p3 = x
    value = 0.5 * (p1 * p1 / prm.m1 + prm.k1 * q1 * q1 + p2 * p2 / prm.m2 + prm.k2 * q2 * q2)
    value += spec.subsystem.energy(q3, p3)
    if spec.is_perturbed:
        value += spec.epsilon * float(spec.perturbation.G(x))
    return float(value)


def reversal_full(s: StateLike) -> FullState:
    """ρ: (q, p) ↦ (q, −p)"""
    q1, q2, q3, p1, p2, p3 = _full_array(s)
    return FullState(q1, q2, q3, -p1, -p2, -p3)


def reversal_reduced(s: StateLike) -> ReducedState:
    """ρ: (q₁, q₂, q₃, p, p₃) ↦ (q₁, q₂, q₃, −p, −p₃)"""
    q1, q2, q3, p, p3 = _reduced_array(s)
    return ReducedState(q1, q2, q3, -p, -p3)


def skew_coordinates(spec: SystemSpec, s: StateLike) -> np.ndarray:
    """u = (√k₁q₁, √k₂q₂, p)。H₀ = ‖u‖²/2 + F。"""
    q1, q2, _q3, p, _p3 = _reduced_array(s)
    return np.array([math.sqrt(spec.params.k1) * q1, math.sqrt(spec.params.k2) * q2, p])


# --- 導関数の整合性 ---

def check_derivatives(
    fn: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    points: Iterable[Sequence[float]],
    h: float = 1e-5
) -> float:
    """
    解析的な勾配と中心差分の最大相対誤差を返す

    Args:
        fn: スカラー関数
        grad: その勾配
        points: 評価点
        h: 差分幅（|x| で相対化）

    Returns:
        max |fd − grad| / max(1, ‖grad‖)
    """
    worst = 0.0
    for point in points:
        x = np.atleast_1d(np.asarray(point, dtype=float))
        g = np.atleast_1d(np.asarray(grad(x), dtype=float))
        fd = np.empty_like(x)
        for i in range(x.size):
            step = np.zeros_like(x)
            step[i] = h * max(1.0, abs(x[i]))
            fd[i] = (fn(x + step) - fn(x - step)) / (2.0 * step[i])
        worst = max(worst, float(np.max(np.abs(fd - g)) / max(1.0, float(np.linalg.norm(g)))))
    return worst


def coupling_defect(coupling: Coupling, points: Iterable[float]) -> float:
    """f と df の整合性"""
    return check_derivatives(
        lambda x: coupling.value(x[0]),
        lambda x: np.array([coupling.derivative(x[0])]),
        ([q] for q in points)
    )


def subsystem_defect(subsystem: Subsystem, points: Iterable[Tuple[float, float]]) -> float:
    """F と (∂F/∂q₃, ∂F/∂p₃) の整合性"""
    return check_derivatives(
        lambda x: subsystem.F(x[0], x[1]),
        lambda x: np.array([subsystem.dFdq3(x[0], x[1]), subsystem.dFdp3(x[0], x[1])]),
        points
    )


def perturbation_defect(perturbation: Perturbation, points: Iterable[Sequence[float]]) -> float:
    """G と gradG の整合性"""
    return check_derivatives(perturbation.G, perturbation.gradG, points)


def reversibility_defect_of_subsystem(subsystem: Subsystem, points: Iterable[Tuple[float, float]]) -> float:
    """max |F(q₃, −p₃) − F(q₃, p₃)|"""
    return max((abs(subsystem.F(q, -p) - subsystem.F(q, p)) for q, p in points), default=0.0)


# --- カタログ ---

def coupling_linear(slope: float = 1.0) -> Coupling:
    """f(q₃) = slope·q₃"""
    return Coupling(f=lambda q: slope * q, df=lambda q: slope, label="linear")


def coupling_cvt() -> Coupling:
    """f(q₃) = q₃/(1 − q₃)、q₃ < 1 でのみ有効"""
    return Coupling(
        f=lambda q: q / (1.0 - q),
        df=lambda q: 1.0 / (1.0 - q) ** 2,
        label="cvt",
        domain=(-math.inf, 1.0)
    )


def coupling_zero() -> Coupling:
    return Coupling(f=lambda q: 0.0, df=lambda q: 0.0, label="zero")


def coupling_polynomial(coefficients: Sequence[float]) -> Coupling:
    """係数は昇冪順"""
    poly = Polynomial(list(coefficients))
    dpoly = poly.deriv()
    return Coupling(f=lambda q: float(poly(q)), df=lambda q: float(dpoly(q)), label="polynomial")


def subsystem_harmonic(kappa: float = 1.0, mu: float = 1.0) -> Subsystem:
    """F = p₃²/(2μ) + κq₃²/2"""
    if kappa <= 0 or mu <= 0:
        raise InvalidParameter(f"harmonic subsystem needs kappa, mu > 0, got {kappa}, {mu}")
    return Subsystem(
        F=lambda q, p: 0.5 * p * p / mu + 0.5 * kappa * q * q,
        dFdq3=lambda q, p: kappa * q,
        dFdp3=lambda q, p: p / mu,
        label="harmonic",
        d2Fdp3=lambda q, p: 1.0 / mu,
        harmonic=(float(kappa), float(mu))
    )


def subsystem_quartic() -> Subsystem:
    """F = p₃²/2 + q₃⁴/4"""
    return Subsystem(
        F=lambda q, p: 0.5 * p * p + 0.25 * q ** 4,
        dFdq3=lambda q, p: q ** 3,
        dFdp3=lambda q, p: p,
        label="quartic",
        d2Fdp3=lambda q, p: 1.0
    )


def subsystem_polynomial(coefficients: Sequence[float]) -> Subsystem:
    """F = p₃²/2 + V(q₃)、V の係数は昇冪順"""
    potential = Polynomial(list(coefficients))
    force = potential.deriv()
    return Subsystem(
        F=lambda q, p: 0.5 * p * p + float(potential(q)),
        dFdq3=lambda q, p: float(force(q)),
        dFdp3=lambda q, p: p,
        label="polynomial",
        d2Fdp3=lambda q, p: 1.0
    )


def _grad_q1_quartic(x: np.ndarray) -> np.ndarray:
    g = np.zeros(6)
    g[0] = 4.0 * x[0] ** 3
    return g


def _hess_q1_quartic(x: np.ndarray) -> np.ndarray:
    hess = np.zeros((6, 6))
    hess[0, 0] = 12.0 * x[0] ** 2
    return hess


def _grad_p1_quadratic(x: np.ndarray) -> np.ndarray:
    g = np.zeros(6)
    g[3] = x[3]
    return g


def _hess_p1_quadratic(x: np.ndarray) -> np.ndarray:
    hess = np.zeros((6, 6))
    hess[3, 3] = 1.0
    return hess


def _grad_mixed(x: np.ndarray) -> np.ndarray:
    g = np.zeros(6)
    g[2] = x[3]
    g[3] = x[2]
    return g


def _hess_mixed(x: np.ndarray) -> np.ndarray:
    hess = np.zeros((6, 6))
    hess[2, 3] = hess[3, 2] = 1.0
    return hess


PERTURBATIONS: Dict[str, Optional[Perturbation]] = {
    "none": None,
    "q1_quartic": Perturbation(
        G=lambda x: float(x[0] ** 4), gradG=_grad_q1_quartic, hessG=_hess_q1_quartic,
        reversible_flag=True, label="q1_quartic"
    ),
    "p1_quadratic": Perturbation(
        G=lambda x: float(0.5 * x[3] ** 2), gradG=_grad_p1_quadratic, hessG=_hess_p1_quadratic,
        reversible_flag=True, label="p1_quadratic"
    ),
    "mixed_nonreversible": Perturbation(
        G=lambda x: float(x[2] * x[3]), gradG=_grad_mixed, hessG=_hess_mixed,
        reversible_flag=False, label="mixed_nonreversible"
    ),
}

COUPLINGS = ("linear", "cvt", "zero", "polynomial")
SUBSYSTEMS = ("harmonic", "quartic", "polynomial")


def get_perturbation(name: str) -> Optional[Perturbation]:
    if name not in PERTURBATIONS:
        raise InvalidParameter(
            f"unknown perturbation '{name}', expected one of {sorted(PERTURBATIONS)}",
            context={"operation": "get_perturbation"}
        )
    return PERTURBATIONS[name]


def make_coupling(kind: str, coefficients: Sequence[float] = ()) -> Coupling:
    if kind == "linear":
        return coupling_linear()
    if kind == "cvt":
        return coupling_cvt()
    if kind == "zero":
        return coupling_zero()
    if kind == "polynomial":
        if not coefficients:
            raise InvalidParameter("polynomial coupling needs coefficients")
        return coupling_polynomial(coefficients)
    raise InvalidParameter(f"unknown coupling '{kind}', expected one of {list(COUPLINGS)}")


def make_subsystem(kind: str, coefficients: Sequence[float] = ()) -> Subsystem:
    if kind == "harmonic":
        return subsystem_harmonic()
    if kind == "quartic":
        return subsystem_quartic()
    if kind == "polynomial":
        if not coefficients:
            raise InvalidParameter("polynomial subsystem needs coefficients")
        return subsystem_polynomial(coefficients)
    raise InvalidParameter(f"unknown subsystem '{kind}', expected one of {list(SUBSYSTEMS)}")


# --- プリセット ---

def contact_oscillator() -> SystemSpec:
    """f(q₃) = q₃, m = k = 1, F = (q₃² + p₃²)/2"""
    return SystemSpec(Params(), coupling_linear(), subsystem_harmonic(), label="contact")


def cvt_oscillator() -> SystemSpec:
    """f(q₃) = q₃/(1 − q₃), 調和部分系"""
    return SystemSpec(Params(), coupling_cvt(), subsystem_harmonic(), label="cvt")


def decoupled_oscillator() -> SystemSpec:
    """f ≡ 0（結合なし）"""
    return SystemSpec(Params(), coupling_zero(), subsystem_harmonic(), label="decoupled")


PRESETS: Dict[str, Callable[[], SystemSpec]] = {
    "contact": contact_oscillator,
    "cvt": cvt_oscillator,
    "decoupled": decoupled_oscillator,
}


def get_preset(name: str) -> SystemSpec:
    if name not in PRESETS:
        raise InvalidParameter(
            f"unknown preset '{name}', expected one of {sorted(PRESETS)}",
            context={"operation": "get_preset"}
        )
    return PRESETS[name]()
