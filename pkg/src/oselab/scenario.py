"""Scenario files: INI sections describing a base system, a generator and run sizes."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import cocycle as cc
from . import dynamics as dyn
from .errors import ConfigError, ScenarioError

BUILTIN_PACKAGE = "oselab.scenarios"


def builtin_names() -> list[str]:
    files = resources.files(BUILTIN_PACKAGE).iterdir()
    return sorted(f.name[:-4] for f in files if f.name.endswith(".ini"))


def _parse_matrix(text: str) -> list[list[float]]:
    rows = [r.split() for r in text.replace(",", " ").split(";") if r.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ScenarioError(f"malformed matrix {text!r}")
    return [[float(v) for v in r] for r in rows]


def _parse_vector(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


@dataclass(frozen=True)
class Scenario:
    """Parsed scenario. ``sections`` holds the raw string values after overrides."""

    name: str
    sections: dict
    source: str

    # raw access

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def has(self, section: str) -> bool:
        return section in self.sections

    def _typed(self, section, key, default, cast):
        raw = self.get(section, key)
        if raw is None or raw == "":
            if default is _REQUIRED:
                raise ScenarioError(f"missing [{section}] {key}")
            return default
        try:
            return cast(raw)
        except ValueError as exc:
            raise ScenarioError(f"[{section}] {key} = {raw!r}: {exc}") from None

    def get_int(self, section, key, default=None):
        return self._typed(section, key, default, int)

    def get_float(self, section, key, default=None):
        return self._typed(section, key, default, float)

    def get_str(self, section, key, default=None):
        return self._typed(section, key, default, str)

    def get_bool(self, section, key, default=False):
        return self._typed(section, key, default,
                           lambda s: s.strip().lower() in ("1", "yes", "true", "on"))

    @property
    def seed(self) -> int:
        return self._typed("scenario", "seed", _REQUIRED, int)

    @property
    def digest(self) -> str:
        blob = json.dumps(self.sections, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_dict(self) -> dict:
        return {"name": self.name, "sections": self.sections, "source": self.source}

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        return cls(data["name"], data["sections"], data["source"])

    # builders

    def build_system(self) -> dyn.BaseSystem:
        kind = self.get_str("base", "kind", _REQUIRED)
        if kind == "toral_automorphism":
            M = _parse_matrix(self.get_str("base", "matrix", _REQUIRED))
            return dyn.toral_automorphism([[int(round(v)) for v in r] for r in M])
        if kind == "circle_rotation":
            return dyn.circle_rotation(self.get_float("base", "angle", _REQUIRED))
        if kind == "doubling_map":
            return dyn.doubling_map()
        if kind == "full_shift":
            return dyn.full_shift(self.get_int("base", "symbols", 2), self.get_int("base", "window", 48))
        raise ScenarioError(f"unknown base kind {kind!r}")

    def build_generator(self) -> cc.CocycleGenerator:
        fam = self.get_str("generator", "family", _REQUIRED)
        norm = self.get_str("generator", "norm", "l2")
        if fam == "constant":
            return cc.constant_generator(_parse_matrix(self.get_str("generator", "matrix", _REQUIRED)), norm)
        if fam == "truncated_diagonal_compact":
            return cc.truncated_diagonal_generator(
                self.get_int("generator", "dimension", _REQUIRED), self.get_float("generator", "decay_rate", 0.5),
                self.get_float("generator", "lead", 2.0), self.get_int("generator", "block_size", 2), norm)
        diag = _parse_vector(self.get_str("generator", "diagonal", _REQUIRED))
        system = self.build_system()
        field = cc.ConjugatorField(
            len(diag), system.field_dim, self.get_float("generator", "nu", 0.5),
            self.get_float("generator", "amplitude", 0.3),
            self.get_str("generator", "conjugator_kind", "rotation" if fam == "rotation_conjugated" else "shear"),
            self.get_int("generator", "conjugator_seed", 0), self.get_float("generator", "offset", 0.0))
        if fam == "coboundary":
            return cc.coboundary_generator(field, diag, norm)
        if fam == "rotation_conjugated":
            return cc.rotation_conjugated_generator(field, diag, norm)
        raise ScenarioError(f"unknown generator family {fam!r}")

    def validate(self):
        """Build everything once so configuration errors surface before any run."""
        self.seed
        system = self.build_system()
        gen = self.build_generator()
        eps = self.get_float("norms", "epsilon")
        if eps is not None and eps <= 0:
            raise ConfigError("[norms] epsilon must be positive")
        gamma = self.get_float("norms", "gamma")
        if gamma is not None and not 0 < gamma < 1:
            raise ConfigError("[norms] gamma must lie in (0, 1)")
        return system, gen


class _Required:
    pass


_REQUIRED = _Required()


def _read(text: str, source: str) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ScenarioError(f"cannot parse {source}: {exc}") from None
    return {s: dict(parser[s]) for s in parser.sections()}


def apply_overrides(sections: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings."""
    out = {s: dict(v) for s, v in sections.items()}
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        out.setdefault(section.strip(), {})[key.strip()] = value.strip()
    return out


def load_scenario(ref: str, overrides=(), seed: int | None = None) -> Scenario:
    """Load a scenario from a path or a built-in name."""
    path = Path(ref)
    if path.is_file():
        text, source = path.read_text(), str(path)
    else:
        name = ref[:-4] if ref.endswith(".ini") else ref
        res = resources.files(BUILTIN_PACKAGE) / f"{name}.ini"
        if not res.is_file():
            raise ScenarioError(f"no scenario file or built-in named {ref!r} "
                                f"(built-ins: {', '.join(builtin_names())})")
        text, source = res.read_text(), f"builtin:{name}"
    sections = apply_overrides(_read(text, source), overrides)
    if seed is not None:
        sections.setdefault("scenario", {})["seed"] = str(int(seed))
    name = sections.get("scenario", {}).get("name") or Path(source).stem.split(":")[-1]
    scen = Scenario(name, sections, source)
    scen.validate()
    return scen


def log_uniform_distances(count: int, lo_exp: float, hi_exp: float, rng: np.random.Generator,
                          bins: int = 8) -> np.ndarray:
    """Distances stratified into equal-count log-uniform bins between ``10**lo_exp`` and ``10**hi_exp``."""
    if count < 1 or not lo_exp < hi_exp:
        raise ConfigError("need count >= 1 and lo < hi for distance bins")
    edges = np.linspace(lo_exp, hi_exp, bins + 1)
    which = np.arange(count) % bins
    u = rng.uniform(size=count)
    return 10.0 ** (edges[which] + u * (edges[which + 1] - edges[which]))
