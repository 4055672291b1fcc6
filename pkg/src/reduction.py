"""
reduction.py
ベクトル場の構成

M₀ 上の簡約ODE、ラグランジュ乗数を陽に持つ6次元のDAE場、
ファイバー写像の反転（M_ε への持ち上げ）と、摂動から誘導される M₀ 上の可逆な場を提供します。
"""
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from error_handling import ConstraintViolation, FibreSolveFailure, PerturbationPresent
from logging_config import get_logger
from model import (
    FullState,
    StateLike,
    Subsystem,
    SystemSpec,
    alpha_pair,
    constraint_residual,
    embed,
    reduced_momentum,
    velocity_map,
)

logger = get_logger(__name__)

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class VectorFieldHandle:
    """
    状態ベクトルから接ベクトルを返す場

    eval は次元と前提条件を検査する。ソルバーには検査なしの rhs(t, y) を渡す。
    """
    dimension: int
    field: ArrayFn
    label: str
    precondition: Optional[Callable[[np.ndarray], None]] = None

    def eval(self, s: StateLike) -> np.ndarray:
        x = s.as_array() if hasattr(s, "as_array") else np.asarray(s, dtype=float)
        if x.shape != (self.dimension,):
            raise ValueError(f"field '{self.label}' expects a {self.dimension}-vector, got shape {x.shape}")
        if self.precondition is not None:
            self.precondition(x)
        return self.field(x)

    __call__ = eval

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        return self.field(y)


# --- 簡約ODE ---

def reduced_field(spec: SystemSpec) -> VectorFieldHandle:
    """
    M₀ のチャート (q₁, q₂, q₃, p, p₃) 上の簡約ODE

    (α₁p/m₁, α₂p/m₂, ∂F/∂p₃, −k₁α₁q₁/m₁ − k₂α₂q₂/m₂, −∂F/∂q₃)

    Raises:
        PerturbationPresent: ε ≠ 0
    """
    if spec.epsilon != 0.0:
        raise PerturbationPresent(
            f"reduced_field needs epsilon = 0, got {spec.epsilon}; use induced_field",
            context={"operation": "reduced_field", "epsilon": spec.epsilon}
        )
    prm = spec.params
    subsystem = spec.subsystem

    def field(y: np.ndarray) -> np.ndarray:
        q1, q2, q3, p, p3 = y
        a1, a2 = alpha_pair(spec, q3)
        dq3, dp3 = subsystem.vector_field(q3, p3)
        return np.array([
            a1 * p / prm.m1,
            a2 * p / prm.m2,
            dq3,
            -prm.k1 * a1 * q1 / prm.m1 - prm.k2 * a2 * q2 / prm.m2,
            dp3,
        ])

    return VectorFieldHandle(5, field, f"reduced[{spec.label}]")


# --- DAE場と乗数 ---

def _position_gradient(spec: SystemSpec, x: np.ndarray) -> np.ndarray:
    """∂H_ε/∂q"""
    prm = spec.params
    grad = np.array([prm.k1 * x[0], prm.k2 * x[1], float(spec.subsystem.dFdq3(x[2], x[5]))])
    if spec.is_perturbed:
        grad = grad + spec.epsilon * np.asarray(spec.perturbation.gradG(x), dtype=float)[:3]
    return grad


def _multiplier_unchecked(spec: SystemSpec, x: np.ndarray) -> float:
    coupling = spec.coupling
    prm = spec.params
    q3 = x[2]
    tau = coupling.tau(q3)
    h_p = velocity_map(spec, x)
    h_q = _position_gradient(spec, x)

    # H₀ の ∂²H/∂p² は対角。第3列は τ₃ = 0 に掛かるだけなので不要。
    h_pp = np.diag([1.0 / prm.m1, 1.0 / prm.m2, 0.0])
    h_pq = np.zeros((3, 3))
    if spec.is_perturbed:
        hess = spec.perturbation.hessian(x)
        h_pp = h_pp + spec.epsilon * hess[3:, 3:]
        h_pq = spec.epsilon * hess[3:, :3]

    c_p = h_pp @ tau
    c_q = h_pq.T @ tau
    c_q[2] += coupling.derivative(q3) * h_p[0]

    return float((c_p @ h_q - c_q @ h_p) / (c_p @ tau))


def _check_on_manifold(spec: SystemSpec, x: np.ndarray, tol: float, operation: str) -> None:
    residual = constraint_residual(spec, x)
    if abs(residual) > tol:
        raise ConstraintViolation(
            f"{operation}: state is off the constraint manifold (residual {residual:.3e} > {tol:.1e})",
            context={"operation": operation, "residual": residual, "tol": tol}
        )


def multiplier(spec: SystemSpec, s: StateLike, tol: float = 1e-8) -> float:
    """
    拘束を流れに沿って微分して得られるラグランジュ乗数 λ

    ε = 0 では λ = [k₁fq₁/m₁ + k₂q₂/m₂ − f′q̇₃p₁/m₁]/(f²/m₁ + 1/m₂)。
    ε > 0 では c = τ·∂H_ε/∂p に対し λ = (c_p·H_q − c_q·H_p)/(c_p·τ)。

    Raises:
        ConstraintViolation: 拘束残差が tol を超えた
    """
    x = s.as_array() if isinstance(s, FullState) else np.asarray(s, dtype=float)
    _check_on_manifold(spec, x, tol, "multiplier")
    return _multiplier_unchecked(spec, x)


def _dae_rhs(spec: SystemSpec, x: np.ndarray) -> np.ndarray:
    lam = _multiplier_unchecked(spec, x)
    h_p = velocity_map(spec, x)
    h_q = _position_gradient(spec, x)
    return np.concatenate([h_p, -h_q + lam * spec.coupling.tau(x[2])])


def dae_field(spec: SystemSpec, tol: float = 1e-8) -> VectorFieldHandle:
    """
    q̇ = ∂H_ε/∂p, ṗ = −∂H_ε/∂q + λτ の6次元の場

    eval は状態が M_ε 上（残差 ≤ tol）であることを要求する。
    """
    return VectorFieldHandle(
        6,
        lambda x: _dae_rhs(spec, x),
        f"dae[{spec.label}, eps={spec.epsilon!r}]",
        precondition=lambda x: _check_on_manifold(spec, x, tol, "dae_field"),
    )


# --- ファイバー写像 ---

def momentum_from_velocity(subsystem: Subsystem, q3: float, v3: float, tol: float = 1e-14) -> float:
    """∂F/∂p₃(q₃, p₃) = v₃ を p₃ について解く"""
    if subsystem.harmonic is not None:
        return subsystem.harmonic[1] * v3
    try:
        return float(optimize.newton(
            lambda p: float(subsystem.dFdp3(q3, p)) - v3,
            x0=v3,
            fprime=lambda p: subsystem.second_derivative_p(q3, p),
            tol=tol,
            maxiter=50,
        ))
    except (RuntimeError, ZeroDivisionError) as e:
        raise FibreSolveFailure(
            f"cannot invert dF/dp3 = {v3!r} at q3 = {q3!r}: {e}",
            original_exception=e,
            context={"operation": "momentum_from_velocity", "q3": q3, "v3": v3}
        )


def fibre_jacobian(spec: SystemSpec, x: np.ndarray) -> np.ndarray:
    """∂²H_ε/∂p²（3×3）"""
    prm = spec.params
    jac = np.diag([1.0 / prm.m1, 1.0 / prm.m2, spec.subsystem.second_derivative_p(x[2], x[5])])
    if spec.is_perturbed:
        jac = jac + spec.epsilon * spec.perturbation.hessian(x)[3:, 3:]
    return jac


def _positive_count(matrix: np.ndarray) -> int:
    return int(np.sum(np.linalg.eigvalsh(0.5 * (matrix + matrix.T)) > 0.0))


def perturbed_manifold_solve(
    spec: SystemSpec,
    q: Sequence[float],
    v: Sequence[float],
    tol: float = 1e-12,
    max_iters: int = 50,
    cond_max: float = 1e8,
) -> np.ndarray:
    """
    ∂H_ε/∂p(q, p) = v を満たす M_ε のファイバー上の p を求める

    ε = 0 の閉形式を初期値とし、拘束の行を付け加えた減衰ニュートン法で解く。

    Args:
        spec: 系
        q: 位置 (q₁, q₂, q₃)
        v: 分布 D 内の速度
        tol: 残差の許容値
        max_iters: 反復回数の上限
        cond_max: ファイバー写像のヤコビアンの条件数の上限

    Returns:
        運動量 (p₁, p₂, p₃)

    Raises:
        FibreSolveFailure: 収束しない、ヤコビアンが悪条件、または H₀ と正則性（慣性）が食い違う
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    prm = spec.params
    p = np.array([prm.m1 * v[0], prm.m2 * v[1], momentum_from_velocity(spec.subsystem, q[2], v[2])])
    if not spec.is_perturbed:
        return p

    tau = spec.coupling.tau(q[2])
    base = spec.unperturbed()
    scale = max(1.0, float(np.max(np.abs(v))))
    context = {"operation": "perturbed_manifold_solve", "epsilon": spec.epsilon, "label": spec.perturbation.label}

    def residual(momenta: np.ndarray) -> np.ndarray:
        h_p = velocity_map(spec, np.concatenate([q, momenta]))
        return np.append(h_p - v, tau @ h_p)

    r = residual(p)
    for iteration in range(max_iters):
        x = np.concatenate([q, p])
        jac = fibre_jacobian(spec, x)
        cond = np.linalg.cond(jac)
        if not np.isfinite(cond) or cond >= cond_max:
            raise FibreSolveFailure(
                f"fibre map Jacobian is ill-conditioned (cond {cond:.3e}); epsilon too large",
                context={**context, "cond": float(cond), "iteration": iteration}
            )
        if _positive_count(jac) != _positive_count(fibre_jacobian(base, x)):
            raise FibreSolveFailure(
                "perturbed Hamiltonian is not regular on this fibre (Hessian inertia changed); epsilon too large",
                context={**context, "iteration": iteration}
            )
        if np.max(np.abs(r)) <= tol * scale:
            return p

        augmented = np.vstack([jac, tau @ jac])
        step = np.linalg.lstsq(augmented, -r, rcond=None)[0]
        damping = 1.0
        norm = np.linalg.norm(r)
        for _ in range(30):
            trial = p + damping * step
            r_trial = residual(trial)
            if np.linalg.norm(r_trial) < norm or damping < 1e-8:
                break
            damping *= 0.5
        p, r = trial, r_trial

    if np.max(np.abs(r)) <= tol * scale:
        return p
    raise FibreSolveFailure(
        f"Newton did not converge in {max_iters} iterations (residual {np.max(np.abs(r)):.3e})",
        context={**context, "residual": float(np.max(np.abs(r)))}
    )


def lift_to_perturbed(spec: SystemSpec, s: StateLike, **solve_kwargs) -> FullState:
    """M₀ の点を同じ速度を持つ M_ε の点へ"""
    base = spec.unperturbed()
    x0 = embed(base, s).as_array()
    p = perturbed_manifold_solve(spec, x0[:3], velocity_map(base, x0), **solve_kwargs)
    return FullState.from_array(np.concatenate([x0[:3], p]))


def _chart_of_perturbed(spec: SystemSpec, base: SystemSpec, x: np.ndarray) -> np.ndarray:
    """(q, p_ε) ↦ (∂H₀/∂p)⁻¹∘(∂H_ε/∂p) のあと M₀ のチャートへ"""
    v = velocity_map(spec, x)
    q3 = x[2]
    p1 = base.params.m1 * v[0]
    p2 = base.params.m2 * v[1]
    p3 = momentum_from_velocity(base.subsystem, q3, v[2])
    return np.array([x[0], x[1], q3, reduced_momentum(base, q3, p1, p2), p3])


def induced_field(
    spec: SystemSpec,
    fd_step: float = 1e-6,
    tol: float = 1e-12,
    max_iters: int = 50,
    cond_max: float = 1e8,
) -> VectorFieldHandle:
    """
    摂動が M₀ 上に誘導する場 ((∂H₀/∂p)⁻¹∘(∂H_ε/∂p))_* X_ε

    各点で ∂H₀/∂p により速度へ移し、M_ε へ解き、そこで X_ε を評価して
    ファイバー写像の逆で押し戻す。押し戻しのヤコビアンは中心差分（刻み fd_step）。
    ε = 0 では reduced_field そのものを返す。
    """
    if not spec.is_perturbed:
        return reduced_field(spec.unperturbed())

    base = spec.unperturbed()

    def field(y: np.ndarray) -> np.ndarray:
        x0 = embed(base, y).as_array()
        p_eps = perturbed_manifold_solve(spec, x0[:3], velocity_map(base, x0),
                                         tol=tol, max_iters=max_iters, cond_max=cond_max)
        x_eps = np.concatenate([x0[:3], p_eps])
        tangent = _dae_rhs(spec, x_eps)
        forward = _chart_of_perturbed(spec, base, x_eps + fd_step * tangent)
        backward = _chart_of_perturbed(spec, base, x_eps - fd_step * tangent)
        return (forward - backward) / (2.0 * fd_step)

    return VectorFieldHandle(5, field, f"induced[{spec.label}, {spec.perturbation.label}, eps={spec.epsilon!r}]")
