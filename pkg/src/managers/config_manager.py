"""
config_manager.py
実験設定の読み込み・検証・直列化を担当するマネージャークラス

JSON文書を厳格に解析して凍結されたデータクラスへ変換します。未知のキーや
不正な値は ConfigError として報告し、既定値をすべて埋めるため
dumps(parse(dumps(cfg))) == dumps(cfg) がバイト単位で成り立ちます。
"""
import dataclasses
import json
from dataclasses import dataclass
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

from error_handling import AppError, ConfigError
from integrators import METHODS, StepperConfig
from logging_config import get_logger
from model import (
    COUPLINGS,
    PERTURBATIONS,
    PRESETS,
    SUBSYSTEMS,
    Params,
    SystemSpec,
    get_perturbation,
    get_preset,
    make_coupling,
    make_subsystem,
)
from .settings_manager import DEFAULT_SETTINGS

logger = get_logger(__name__)


@dataclass(frozen=True)
class CatalogueChoice:
    """カタログ名と（多項式の場合の）昇冪順の係数"""
    kind: str
    coefficients: Tuple[float, ...] = ()


@dataclass(frozen=True)
class SystemConfig:
    """プリセット名、またはインラインの (params, coupling, subsystem)"""
    preset: Optional[str] = "contact"
    params: Optional[Params] = None
    coupling: Optional[CatalogueChoice] = None
    subsystem: Optional[CatalogueChoice] = None


@dataclass(frozen=True)
class PerturbationConfig:
    name: str = "none"
    epsilon: float = 0.0


@dataclass(frozen=True)
class ExperimentParams:
    T: float = 10000.0
    sample_dt: float = 1.0
    initial_state: Tuple[float, ...] = (0.3, -0.2, 0.5, 0.4, 0.0)
    a_grid: Tuple[float, ...] = (0.25, 0.5, 1.0)
    a0: float = 0.5
    seeds: Tuple[int, ...] = (0,)
    perturbations: Tuple[str, ...] = ("p1_quadratic",)
    epsilons: Tuple[float, ...] = (0.0,)
    methods: Tuple[str, ...] = ("reference",)


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "results"
    stem: str = "run"


@dataclass(frozen=True)
class ExperimentConfig:
    """一回の実行の完全な設定"""
    system: SystemConfig
    perturbation: PerturbationConfig
    integrator: StepperConfig
    experiment: ExperimentParams
    output: OutputConfig


# --- 厳格な解析 ---

def _check_keys(section: Mapping[str, Any], allowed: Sequence[str], path: str) -> None:
    if not isinstance(section, Mapping):
        raise ConfigError(f"'{path}' must be an object, got {type(section).__name__}",
                          context={"operation": "parse_config", "path": path})
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(
            f"unknown keys in '{path}': {unknown} (allowed: {sorted(allowed)})",
            context={"operation": "parse_config", "path": path, "unknown": unknown}
        )


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{path}' must be a number, got {value!r}",
                          context={"operation": "parse_config", "path": path})
    return float(value)


def _integer(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"'{path}' must be an integer, got {value!r}",
                          context={"operation": "parse_config", "path": path})
    return value


def _string(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"'{path}' must be a string, got {value!r}",
                          context={"operation": "parse_config", "path": path})
    return value


def _list(value: Any, path: str) -> list:
    if not isinstance(value, list):
        raise ConfigError(f"'{path}' must be a list, got {value!r}",
                          context={"operation": "parse_config", "path": path})
    return value


def _choice(section: Mapping[str, Any], catalogue: Sequence[str], path: str) -> CatalogueChoice:
    _check_keys(section, ("kind", "coefficients"), path)
    kind = _string(section.get("kind"), f"{path}.kind")
    if kind not in catalogue:
        raise ConfigError(f"'{path}.kind' must be one of {list(catalogue)}, got '{kind}'",
                          context={"operation": "parse_config", "path": path})
    coefficients = tuple(_number(c, f"{path}.coefficients[{i}]")
                         for i, c in enumerate(_list(section.get("coefficients", []), f"{path}.coefficients")))
    return CatalogueChoice(kind, coefficients)


def _parse_system(section: Mapping[str, Any]) -> SystemConfig:
    _check_keys(section, ("preset", "params", "coupling", "subsystem"), "system")
    if "preset" in section:
        if len(section) != 1:
            raise ConfigError("'system' takes either 'preset' or an inline spec, not both",
                              context={"operation": "parse_config", "path": "system"})
        preset = _string(section["preset"], "system.preset")
        if preset not in PRESETS:
            raise ConfigError(f"'system.preset' must be one of {sorted(PRESETS)}, got '{preset}'",
                              context={"operation": "parse_config", "path": "system.preset"})
        return SystemConfig(preset=preset)

    params_section = section.get("params", {})
    _check_keys(params_section, ("m1", "m2", "k1", "k2"), "system.params")
    params = Params(**{k: _number(v, f"system.params.{k}") for k, v in params_section.items()})
    coupling = _choice(section.get("coupling", {"kind": "linear"}), COUPLINGS, "system.coupling")
    subsystem = _choice(section.get("subsystem", {"kind": "harmonic"}), SUBSYSTEMS, "system.subsystem")
    return SystemConfig(preset=None, params=params, coupling=coupling, subsystem=subsystem)


def _parse_perturbation(section: Mapping[str, Any]) -> PerturbationConfig:
    _check_keys(section, ("name", "epsilon"), "perturbation")
    name = _string(section.get("name", "none"), "perturbation.name")
    if name not in PERTURBATIONS:
        raise ConfigError(f"'perturbation.name' must be one of {sorted(PERTURBATIONS)}, got '{name}'",
                          context={"operation": "parse_config", "path": "perturbation.name"})
    epsilon = _number(section.get("epsilon", 0.0), "perturbation.epsilon")
    return PerturbationConfig(name, epsilon)


def _parse_integrator(section: Mapping[str, Any], defaults: Mapping[str, Any]) -> StepperConfig:
    fields = ("method", "h", "newton_tol", "newton_max_iters", "reference_tol")
    _check_keys(section, fields, "integrator")
    return StepperConfig(
        method=_string(section.get("method", "reference"), "integrator.method"),
        h=_number(section.get("h", defaults["h"]), "integrator.h"),
        newton_tol=_number(section.get("newton_tol", defaults["newton_tol"]), "integrator.newton_tol"),
        newton_max_iters=_integer(section.get("newton_max_iters", defaults["newton_max_iters"]),
                                  "integrator.newton_max_iters"),
        reference_tol=_number(section.get("reference_tol", defaults["reference_tol"]), "integrator.reference_tol"),
    )


def _parse_experiment(section: Mapping[str, Any], defaults: Mapping[str, Any]) -> ExperimentParams:
    base = ExperimentParams(T=float(defaults["horizon"]), sample_dt=float(defaults["sample_dt"]))
    _check_keys(section, [f.name for f in dataclasses.fields(ExperimentParams)], "experiment")

    def numbers(key: str) -> Tuple[float, ...]:
        if key not in section:
            return getattr(base, key)
        return tuple(_number(v, f"experiment.{key}[{i}]") for i, v in enumerate(_list(section[key], f"experiment.{key}")))

    def names(key: str, catalogue: Sequence[str]) -> Tuple[str, ...]:
        if key not in section:
            return getattr(base, key)
        values = tuple(_string(v, f"experiment.{key}[{i}]") for i, v in enumerate(_list(section[key], f"experiment.{key}")))
        unknown = [v for v in values if v not in catalogue]
        if unknown:
            raise ConfigError(f"'experiment.{key}' has unknown entries {unknown}; expected {sorted(catalogue)}",
                              context={"operation": "parse_config", "path": f"experiment.{key}"})
        return values

    params = ExperimentParams(
        T=_number(section.get("T", base.T), "experiment.T"),
        sample_dt=_number(section.get("sample_dt", base.sample_dt), "experiment.sample_dt"),
        initial_state=numbers("initial_state"),
        a_grid=numbers("a_grid"),
        a0=_number(section.get("a0", base.a0), "experiment.a0"),
        seeds=tuple(_integer(v, f"experiment.seeds[{i}]")
                    for i, v in enumerate(_list(section.get("seeds", list(base.seeds)), "experiment.seeds"))),
        perturbations=names("perturbations", tuple(PERTURBATIONS)),
        epsilons=numbers("epsilons"),
        methods=names("methods", METHODS),
    )
    if len(params.initial_state) != 5:
        raise ConfigError(
            f"'experiment.initial_state' needs 5 numbers (q1, q2, q3, p, p3), got {len(params.initial_state)}",
            context={"operation": "parse_config", "path": "experiment.initial_state"}
        )
    for key in ("T", "sample_dt"):
        if getattr(params, key) <= 0:
            raise ConfigError(f"'experiment.{key}' must be > 0, got {getattr(params, key)!r}",
                              context={"operation": "parse_config", "invariant": f"{key} > 0"})
    if any(eps < 0 for eps in params.epsilons):
        raise ConfigError("'experiment.epsilons' must be >= 0",
                          context={"operation": "parse_config", "invariant": "epsilon >= 0"})
    return params


def _parse_output(section: Mapping[str, Any]) -> OutputConfig:
    _check_keys(section, ("dir", "stem"), "output")
    return OutputConfig(
        dir=_string(section.get("dir", OutputConfig.dir), "output.dir"),
        stem=_string(section.get("stem", OutputConfig.stem), "output.stem"),
    )


def parse_config(data: Mapping[str, Any], defaults: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """
    辞書を ExperimentConfig に変換する

    Args:
        data: JSON から読み込んだ辞書
        defaults: 数値の既定値（SettingsManager の内容）

    Raises:
        ConfigError: 未知のキー・型の誤り・不変条件の違反
    """
    if defaults is None:
        defaults = DEFAULT_SETTINGS
    _check_keys(data, ("system", "perturbation", "integrator", "experiment", "output"), "<root>")
    try:
        config = ExperimentConfig(
            system=_parse_system(data.get("system", {"preset": "contact"})),
            perturbation=_parse_perturbation(data.get("perturbation", {})),
            integrator=_parse_integrator(data.get("integrator", {}), defaults),
            experiment=_parse_experiment(data.get("experiment", {}), defaults),
            output=_parse_output(data.get("output", {})),
        )
        build_spec(config)
    except ConfigError:
        raise
    except AppError as e:
        # 値の不変条件（負の質量、h ≤ 0 など）も設定の誤りとして扱う
        raise ConfigError(str(e.message), original_exception=e,
                          context={"operation": "parse_config", **e.context}) from e
    return config


# --- 直列化 ---

def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    """既定値を含めた完全な辞書"""
    system = config.system
    if system.preset is not None:
        system_dict: Dict[str, Any] = {"preset": system.preset}
    else:
        system_dict = {
            "params": dataclasses.asdict(system.params),
            "coupling": {"kind": system.coupling.kind, "coefficients": list(system.coupling.coefficients)},
            "subsystem": {"kind": system.subsystem.kind, "coefficients": list(system.subsystem.coefficients)},
        }
    experiment = {
        key: list(value) if isinstance(value, tuple) else value
        for key, value in dataclasses.asdict(config.experiment).items()
    }
    return {
        "system": system_dict,
        "perturbation": dataclasses.asdict(config.perturbation),
        "integrator": dataclasses.asdict(config.integrator),
        "experiment": experiment,
        "output": dataclasses.asdict(config.output),
    }


def dumps_config(config: ExperimentConfig, indent: Optional[int] = 2) -> str:
    return json.dumps(config_to_dict(config), sort_keys=True, indent=indent, ensure_ascii=False)


def loads_config(text: str, defaults: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}", original_exception=e,
                          context={"operation": "loads_config"}) from e
    return parse_config(data, defaults)


def build_spec(config: ExperimentConfig) -> SystemSpec:
    """設定から SystemSpec（摂動を含む）を組み立てる"""
    system = config.system
    if system.preset is not None:
        spec = get_preset(system.preset)
    else:
        spec = SystemSpec(
            system.params,
            make_coupling(system.coupling.kind, system.coupling.coefficients),
            make_subsystem(system.subsystem.kind, system.subsystem.coefficients),
            label="inline",
        )
    pert = config.perturbation
    return spec.with_perturbation(get_perturbation(pert.name), pert.epsilon)


class ConfigManager:
    """実験設定の読み込みと上書きを担当するマネージャー"""

    def __init__(self, app_state: Dict[str, Any]):
        """ConfigManagerの初期化

        Args:
            app_state: アプリケーション状態（settings_manager を参照）
        """
        self.app_state = app_state
        self.config: Optional[ExperimentConfig] = None

        from debug_control import print_init
        print_init("[OK] ConfigManager initialized.")

    def _defaults(self) -> Mapping[str, Any]:
        settings_manager = self.app_state.get("settings_manager")
        if settings_manager is None:
            return DEFAULT_SETTINGS
        return settings_manager.as_dict()

    def load(self, path: Optional[str]) -> ExperimentConfig:
        """設定ファイルを読み込む（None なら既定値のみ）"""
        if path is None:
            self.config = parse_config({}, self._defaults())
            return self.config
        try:
            with open(path, 'r', encoding='utf-8') as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"cannot read config '{path}': {e}", original_exception=e,
                              context={"operation": "load_config", "path": path}) from e
        self.config = loads_config(text, self._defaults())
        logger.info(f"Loaded config {path}")
        return self.config

    def apply_overrides(self, seed: Optional[int] = None, out: Optional[str] = None) -> ExperimentConfig:
        """--seed / --out をヘッダーに固定する前に反映する"""
        if self.config is None:
            raise ConfigError("no config loaded", context={"operation": "apply_overrides"})
        config = self.config
        if seed is not None:
            config = dataclasses.replace(config, experiment=dataclasses.replace(config.experiment, seeds=(seed,)))
        if out is not None:
            config = dataclasses.replace(config, output=dataclasses.replace(config.output, dir=out))
        self.config = config
        return config

    def dumps(self) -> str:
        return dumps_config(self.config)

    def spec(self) -> SystemSpec:
        return build_spec(self.config)


def create_config_manager(app_state: Dict[str, Any]) -> ConfigManager:
    """ConfigManagerを作成してapp_stateに登録する工場関数"""
    config_manager = ConfigManager(app_state)
    app_state["config_manager"] = config_manager
    return config_manager
