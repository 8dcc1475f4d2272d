"""JSON documents, content hashes, and config parsing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .complexity import BeMode
from .errors import ConfigError, InvalidClass, InvalidMdp, ValidationError
from .harness import AgentSpec, AgentType
from .instances import gen_instance
from .mdp import TabularMdp
from .value_class import QFunctionClass

DEFAULT_MU_LIST = (0.1, 0.5, 1.0)
_MAX_SEED = 2**64 - 1


def dumps(doc: Any) -> str:
    """Canonical text form: two-space indent, insertion key order, trailing newline."""
    return json.dumps(doc, indent=2) + "\n"


def git_blob_hash(data: str | bytes) -> str:
    """sha1 of b"blob <len>\\0" + data, as `git hash-object` computes it."""
    raw = data.encode() if isinstance(data, str) else data
    return hashlib.sha1(b"blob %d\0" % len(raw) + raw).hexdigest()


def load_json(path: str | Path, key: str = "path") -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(key, f"cannot read {str(path)!r}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(key, f"{str(path)!r} is not valid JSON ({exc})") from None


def _resolve(section: Any, key: str, inner: str, base_dir: Path) -> dict:
    """Inline document, {"path": ...}, or an instance document holding `inner`."""
    if not isinstance(section, dict):
        raise ConfigError(key, "expected an object or {\"path\": ...}")
    if set(section) == {"path"}:
        section = load_json(base_dir / section["path"], f"{key}.path")
        if not isinstance(section, dict):
            raise ConfigError(f"{key}.path", "file does not hold a JSON object")
    if inner in section and isinstance(section[inner], dict):
        section = section[inner]
    return section


def mdp_from_document(doc: dict, key: str = "mdp") -> TabularMdp:
    try:
        return TabularMdp.from_dict(doc)
    except InvalidMdp as exc:
        raise ConfigError(key, str(exc)) from None


def class_from_document(doc: dict, key: str = "class") -> QFunctionClass:
    try:
        return QFunctionClass.from_dict(doc)
    except InvalidClass as exc:
        raise ConfigError(key, str(exc)) from None


def instance_roundtrip(text: str) -> str:
    """Parse an instance document into objects and serialize it again."""
    doc = json.loads(text)
    out = dict(doc)
    out["mdp"] = mdp_from_document(doc["mdp"]).to_dict()
    out["class"] = class_from_document(doc["class"]).to_dict()
    return dumps(out)


@dataclass(frozen=True)
class ComplexitySpec:
    epsilon: float | None = None  # None: b / T^beta
    mu_list: tuple[float, ...] = DEFAULT_MU_LIST
    be_mode: BeMode = BeMode.GREEDY


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    mdp: TabularMdp
    fclass: QFunctionClass
    agent: AgentSpec
    T: int
    seeds: tuple[int, ...]
    complexity: ComplexitySpec = field(default_factory=ComplexitySpec)
    echo: dict = field(default_factory=dict)

    @property
    def input_hash(self) -> str:
        inputs = {"mdp": self.mdp.to_dict(), "class": self.fclass.to_dict()}
        return git_blob_hash(dumps(inputs))

    @property
    def config_hash(self) -> str:
        return git_blob_hash(dumps(self.echo))

    def epsilon(self) -> float:
        if self.complexity.epsilon is not None:
            return self.complexity.epsilon
        return self.fclass.bound_b / self.T**self.agent.beta

    def with_seeds(self, seeds: tuple[int, ...]) -> ExperimentConfig:
        echo = dict(self.echo, seeds=list(seeds))
        return ExperimentConfig(self.mdp, self.fclass, self.agent, self.T, seeds,
                                self.complexity, echo)


def _number(value: Any, key: str, *, positive: bool = False, allow_none: bool = False) -> float | None:
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(key, f"must be positive, got {value!r}")
    return float(value)


def _seed(value: Any, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= _MAX_SEED:
        raise ConfigError(key, f"expected an integer in [0, 2^64), got {value!r}")
    return value


def parse_agent(doc: Any) -> AgentSpec:
    if doc is None:
        return AgentSpec()
    if not isinstance(doc, dict):
        raise ConfigError("agent", "expected an object")
    kind = AgentType.parse(doc.get("type", AgentType.CONDITIONAL_PS.value))
    eta = _number(doc.get("eta"), "agent.eta", positive=True, allow_none=True)
    lam_raw = doc.get("lambda")
    lam = None if lam_raw in (None, "tuned") else _number(lam_raw, "agent.lambda")
    if lam is not None and lam < 0:
        raise ConfigError("agent.lambda", f"must be >= 0, got {lam!r}")
    alpha = _number(doc.get("alpha", 1.0), "agent.alpha")
    if not 0 < alpha <= 1:
        raise ConfigError("agent.alpha", f"must lie in (0, 1], got {alpha!r}")
    beta = _number(doc.get("beta", 2.0), "agent.beta", positive=True)
    return AgentSpec(kind, eta, lam, alpha, beta)


def parse_complexity(doc: Any) -> ComplexitySpec:
    if doc is None:
        return ComplexitySpec()
    if not isinstance(doc, dict):
        raise ConfigError("complexity", "expected an object")
    eps = _number(doc.get("epsilon"), "complexity.epsilon", allow_none=True)
    if eps is not None and eps < 0:
        raise ConfigError("complexity.epsilon", f"must be >= 0, got {eps!r}")
    mus = doc.get("mu_list", list(DEFAULT_MU_LIST))
    if not isinstance(mus, list) or not mus:
        raise ConfigError("complexity.mu_list", "expected a nonempty list of positive numbers")
    mu_list = tuple(_number(m, "complexity.mu_list", positive=True) for m in mus)
    try:
        mode = BeMode.parse(doc.get("be_mode", BeMode.GREEDY.value))
    except ValueError as exc:
        raise ConfigError("complexity.be_mode", str(exc)) from None
    return ComplexitySpec(eps, mu_list, mode)


def parse_config(doc: Any, base_dir: str | Path = ".") -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config", "expected a JSON object")
    base_dir = Path(base_dir)
    if "instance" in doc:
        inst = doc["instance"]
        if not isinstance(inst, dict) or "name" not in inst:
            raise ConfigError("instance", "expected {\"name\": ..., \"params\": {...}}")
        mdp, fclass = gen_instance(inst["name"], inst.get("params"))
    else:
        for key in ("mdp", "class"):
            if key not in doc:
                raise ConfigError(key, "missing (give it inline, as {\"path\": ...}, or use \"instance\")")
        mdp = mdp_from_document(_resolve(doc["mdp"], "mdp", "mdp", base_dir))
        fclass = class_from_document(_resolve(doc["class"], "class", "class", base_dir))
    try:
        fclass.matches(mdp)
    except ValidationError as exc:
        raise ConfigError("class", str(exc)) from None

    T = doc.get("T")
    if isinstance(T, bool) or not isinstance(T, int) or T < 1:
        raise ConfigError("T", f"expected an integer >= 1, got {T!r}")
    seeds = doc.get("seeds")
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds", "expected a nonempty list of integers")
    seeds_t = tuple(_seed(s, f"seeds[{i}]") for i, s in enumerate(seeds))
    return ExperimentConfig(
        mdp, fclass, parse_agent(doc.get("agent")), T, seeds_t,
        parse_complexity(doc.get("complexity")), doc,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(load_json(path, "--config"), path.parent)
