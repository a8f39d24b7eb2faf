"""
INI experiment configs.

    [experiment]
    task = quadratic          ; quadratic | logistic | teacher_student
    dimension = 256
    rounds = 100
    users = 4
    eta = 0.05
    seed = 0

    [scheme co3]
    scheme = co3              ; co3 | uncompressed | topk | fponly
    format = fp4
    gamma = 0.7

Every ``[scheme NAME]`` section becomes one SchemeConfig; keys not given
fall back to the ``[experiment]`` values (for the shared ones) and then to
the dataclass defaults.  Errors carry the file line of the offending key.
"""
import configparser
import re
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

from co3.errors import ConfigError, ParameterDomainError
from co3.fedsim import BiasMode, Scheme, SchemeConfig
from co3.fpquant import FpFormat
from co3.tasks import TaskKind, TaskSpec

_TASK_KEYS = {
    "task": ("kind", str),
    "dimension": ("dimension", int),
    "task_seed": ("seed", int),
    "mu": ("mu", float),
    "smoothness": ("smoothness", float),
    "noise_scale": ("noise_scale", float),
    "noise_shape": ("noise_shape", float),
    "init_radius": ("init_radius", float),
    "samples_per_user": ("samples_per_user", int),
    "batch_size": ("batch_size", int),
    "l2": ("l2", float),
    "hidden": ("hidden", int),
    "input_dim": ("input_dim", int),
}
# keys accepted in both [experiment] and [scheme ...]
_SHARED_KEYS = {
    "rounds": ("T", int),
    "users": ("U", int),
    "eta": ("eta", float),
    "seed": ("seed", int),
    "gamma": ("gamma", float),
    "refit_interval": ("refit_interval", int),
    "diagnostics": ("diagnostics", bool),
}
_SCHEME_KEYS = {
    "scheme": ("scheme", str),
    "format": ("format", str),
    "subnormals": ("subnormals", bool),
    "topk_fraction": ("topk_fraction", float),
    "bias_mode": ("bias_mode", str),
    "fixed_bias": ("fixed_bias", float),
    "theory_smoothness": ("theory_smoothness", float),
    "mc_samples": ("mc_samples", int),
}
_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


@dataclass
class ExperimentConfig:
    task: TaskSpec
    schemes: List[SchemeConfig]
    seed: int
    path: Optional[str] = None
    # task_seed given explicitly: --seed then leaves the task alone
    task_seed_pinned: bool = False

    def with_seed(self, seed: int) -> "ExperimentConfig":
        task = self.task if self.task_seed_pinned else replace(self.task, seed=seed)
        return replace(self, task=task, schemes=[replace(s, seed=seed) for s in self.schemes], seed=seed)


def _line_map(text: str) -> Dict[Tuple[str, str], int]:
    lines = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(raw)
        if m:
            section = m.group(1).strip()
            lines[(section, "")] = no
            continue
        m = _KEY_RE.match(raw)
        if m and section is not None and not raw[:1].isspace():
            lines[(section, m.group(1).strip().lower())] = no
    return lines


def _convert(raw: str, kind, key, err):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        return kind(raw.strip())
    except ValueError:
        raise err(f"field '{key}': cannot read {raw.strip()!r} as {kind.__name__}") from None


def parse_config(text: str, path: Optional[str] = None) -> ExperimentConfig:
    lines = _line_map(text)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), strict=True, interpolation=None)
    try:
        parser.read_string(text, source=path or "<config>")
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key '{exc.option}' in [{exc.section}]", exc.lineno, path) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, path) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("content before the first [section]", exc.lineno, path) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", lineno, path) from None

    def err_at(section, key=""):
        def make(msg):
            return ConfigError(msg, lines.get((section, key)) or lines.get((section, "")), path)
        return make

    if not parser.has_section("experiment"):
        raise ConfigError("missing [experiment] section", None, path)

    task_kwargs = {}
    shared = {}
    exp = parser["experiment"]
    for key, raw in exp.items():
        err = err_at("experiment", key)
        if key in _TASK_KEYS:
            name, kind = _TASK_KEYS[key]
            task_kwargs[name] = _convert(raw, kind, key, err)
        elif key in _SHARED_KEYS:
            name, kind = _SHARED_KEYS[key]
            shared[name] = _convert(raw, kind, key, err)
        else:
            raise err(f"unknown key '{key}' in [experiment]")
    seed = shared.get("seed", 0)
    pinned = "seed" in task_kwargs
    task_kwargs.setdefault("seed", seed)
    if "kind" in task_kwargs:
        try:
            task_kwargs["kind"] = TaskKind(task_kwargs["kind"].lower())
        except ValueError:
            choices = ", ".join(k.value for k in TaskKind)
            raise err_at("experiment", "task")(f"field 'task': unknown value {task_kwargs['kind']!r} (expected {choices})")
    task_kwargs.setdefault("users", shared.get("U", 4))
    try:
        task = TaskSpec(**task_kwargs)
    except ValueError as exc:
        raise err_at("experiment")(f"invalid task: {exc}") from None

    schemes = []
    for section in parser.sections():
        if section == "experiment":
            continue
        if not section.startswith("scheme"):
            raise ConfigError(f"unknown section [{section}]", lines.get((section, "")), path)
        label = section[len("scheme"):].strip()
        kwargs = dict(shared)
        extra = {}
        for key, raw in parser[section].items():
            err = err_at(section, key)
            if key in _SHARED_KEYS:
                name, kind = _SHARED_KEYS[key]
                kwargs[name] = _convert(raw, kind, key, err)
            elif key in _SCHEME_KEYS:
                name, kind = _SCHEME_KEYS[key]
                extra[name] = (_convert(raw, kind, key, err), err)
            else:
                raise err(f"unknown key '{key}' in [{section}]")
        schemes.append(_build_scheme(label, kwargs, extra, err_at(section)))
    if not schemes:
        raise ConfigError("no [scheme NAME] sections", None, path)
    names = [s.label for s in schemes]
    if len(set(names)) != len(names):
        raise ConfigError("scheme names must be unique", None, path)
    return ExperimentConfig(task, schemes, seed, path, pinned)


def _build_scheme(label, kwargs, extra, section_err) -> SchemeConfig:
    scheme_raw, err = extra.pop("scheme", (label or "co3", section_err))
    try:
        kwargs["scheme"] = Scheme(scheme_raw.lower())
    except ValueError:
        choices = ", ".join(s.value for s in Scheme)
        raise err(f"field 'scheme': unknown scheme {scheme_raw!r} (expected {choices})") from None
    if "bias_mode" in extra:
        raw, err = extra.pop("bias_mode")
        try:
            kwargs["bias_mode"] = BiasMode(raw.lower())
        except ValueError:
            choices = ", ".join(b.value for b in BiasMode)
            raise err(f"field 'bias_mode': unknown value {raw!r} (expected {choices})") from None
    subnormals = True
    if "subnormals" in extra:
        subnormals = extra.pop("subnormals")[0]
    if "format" in extra:
        raw, err = extra.pop("format")
        try:
            kwargs["format"] = FpFormat.parse(raw, subnormals=subnormals)
        except ParameterDomainError as exc:
            raise err(f"field 'format': {exc}") from None
    for name, (value, _) in extra.items():
        kwargs[name] = value
    kwargs["name"] = label
    cfg = SchemeConfig(**kwargs)
    try:
        return cfg.validate()
    except ConfigError as exc:
        raise section_err(str(exc)) from None


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from None
    return parse_config(text, path)
