"""
Scenario Files

This module:
1. Parses scenario files ([section] / key = value) into a frozen ScenarioConfig
2. Writes a ScenarioConfig back out so that re-parsing gives identical values
3. Builds the rule specs, the payoff mechanism and the initial states a scenario describes
4. Locates bundled scenarios (EVODYN_SCENARIO_DIR overrides the bundled folder)

Vectors are comma-separated, matrices are semicolon-separated rows. Keys are case-insensitive.
"""

import configparser
import logging
import os
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from engine import IntegratorConfig
from errors import ConfigError, DimensionMismatch, DriftExceeded, EvodynError, InvalidRuleSpec
from payoffs import (
    affine_game,
    contractive_filter_mechanism,
    coordination_filter_mechanism,
    filtered_potential_mechanism,
    memoryless_mechanism,
)
from rules import PRESET_NAMES, RuleSpec, preset_rule
from simplex_core import PopulationState

logger = logging.getLogger(__name__)


# ============== CONFIGURATION ==============
SCENARIO_DIR_ENV = "EVODYN_SCENARIO_DIR"
SCENARIO_SUFFIX = ".cfg"
MECHANISM_KINDS = ("memoryless", "filtered_potential", "contractive_filter", "coordination_filter")
# ===========================================


@dataclass(frozen=True)
class MechanismBlock:
    kind: str = "memoryless"
    game_A: tuple = ()
    game_b: tuple = ()
    lti_A: tuple = ()
    lti_b: tuple = ()
    lam: float = 1.0
    k: float = 0.0
    beta_bound: Optional[float] = None


@dataclass(frozen=True)
class RuleBlock:
    name: str
    preset: str = ""
    alpha_i: float = 0.0
    alpha_co: float = 0.0
    alpha_ep: float = 0.0
    alpha_tilde: float = 0.0
    i_rule: str = "replicator"
    co_rule: str = "smith"
    ep_rule: str = "bnn"
    abr_k: int = 1
    abr_eps: float = 0.1
    mixture: tuple = ()            # (weight, rule or preset name) pairs
    bypass_cone: bool = False


@dataclass(frozen=True)
class OutputsBlock:
    csv_dir: str = ""
    svg_path: str = ""
    report_path: str = ""
    workbook_path: str = ""


@dataclass(frozen=True)
class CertifyBlock:
    samples: int = 10_000
    seed: int = 0
    omega_points: int = 200
    horizon: float = 200.0
    drift_threshold: float = 1e-3


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    n: int
    mechanism: MechanismBlock
    rules: tuple
    initial_conditions: tuple      # (label, vector) pairs
    description: str = ""
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    outputs: OutputsBlock = field(default_factory=OutputsBlock)
    certify: CertifyBlock = field(default_factory=CertifyBlock)


# ---------------------------------------------------------------- value parsing

def _vector(text, where):
    try:
        return tuple(float(item) for item in text.split(",") if item.strip())
    except ValueError as e:
        raise ConfigError(f"{where}: cannot read vector '{text}' ({e})") from e


def _matrix(text, where):
    rows = tuple(_vector(row, where) for row in text.split(";") if row.strip())
    if rows and len({len(row) for row in rows}) != 1:
        raise ConfigError(f"{where}: matrix rows have different lengths")
    return rows


def _format_vector(values):
    return ", ".join(repr(float(v)) for v in values)


def _format_matrix(rows):
    return "; ".join(_format_vector(row) for row in rows)


def _get(section, key, convert, default, where):
    if key not in section:
        return default
    raw = section[key].strip()
    try:
        if convert is bool:
            return section.getboolean(key)
        return convert(raw)
    except ValueError as e:
        raise ConfigError(f"[{where}] {key} = {raw}: {e}") from e


def _read_block(cls, section, where, skip=()):
    """Fill a dataclass from a section; unknown keys are rejected."""
    known = {f.name.lower(): f for f in fields(cls) if f.name not in skip}
    for key in section:
        if key not in known and key not in skip:
            raise ConfigError(f"[{where}] unknown key '{key}'. Known: {sorted(known)}")
    values = {}
    for key, spec in known.items():
        if key not in section:
            continue
        if spec.type in (float, "float"):
            values[spec.name] = _get(section, key, float, None, where)
        elif spec.type in (int, "int"):
            values[spec.name] = _get(section, key, int, None, where)
        elif spec.type in (bool, "bool"):
            values[spec.name] = _get(section, key, bool, None, where)
        else:
            values[spec.name] = section[key].strip()
    return values


# ---------------------------------------------------------------- parse / dump

def _parse_mechanism(parser, n):
    if not parser.has_section("mechanism"):
        raise ConfigError("Missing [mechanism] section")
    section = parser["mechanism"]
    kind = section.get("kind", "memoryless").strip()
    if kind not in MECHANISM_KINDS:
        raise ConfigError(f"[mechanism] kind '{kind}' unknown. Available: {list(MECHANISM_KINDS)}")
    allowed = {"kind", "game_a", "game_b", "lti_a", "lti_b", "lambda", "k", "beta_bound"}
    for key in section:
        if key not in allowed:
            raise ConfigError(f"[mechanism] unknown key '{key}'. Known: {sorted(allowed)}")
    block = MechanismBlock(
        kind=kind,
        game_A=_matrix(section.get("game_a", ""), "[mechanism] game_A"),
        game_b=_vector(section.get("game_b", ""), "[mechanism] game_b"),
        lti_A=_matrix(section.get("lti_a", ""), "[mechanism] lti_A"),
        lti_b=_vector(section.get("lti_b", ""), "[mechanism] lti_b"),
        lam=_get(section, "lambda", float, 1.0, "mechanism"),
        k=_get(section, "k", float, 0.0, "mechanism"),
        beta_bound=_get(section, "beta_bound", float, None, "mechanism"),
    )
    needs_game = kind in ("memoryless", "filtered_potential")
    needs_filter = kind != "memoryless"
    checks = []
    if needs_game:
        checks += [("game_A", len(block.game_A), block.game_A), ("game_b", len(block.game_b), None)]
    if needs_filter:
        checks += [("lti_A", len(block.lti_A), block.lti_A), ("lti_b", len(block.lti_b), None)]
    for label, size, rows in checks:
        if size != n or (rows is not None and any(len(row) != n for row in rows)):
            raise ConfigError(f"[mechanism] {label} must have {n} entries per dimension")
    return block


def _parse_rule(name, section):
    values = _read_block(RuleBlock, section, f"rule:{name}", skip=("name", "mixture"))
    mixture = ()
    if "mixture" in section:
        terms = []
        for term in section["mixture"].split(";"):
            if not term.strip():
                continue
            weight, _, ref = term.partition("*")
            try:
                terms.append((float(weight), ref.strip()))
            except ValueError as e:
                raise ConfigError(f"[rule:{name}] bad mixture term '{term.strip()}': {e}") from e
        mixture = tuple(terms)
    return RuleBlock(name=name, mixture=mixture, **values)


def parse_scenario(text, source="<string>"):
    """
    Parse scenario text.

    Args:
        text: file contents
        source: name used in error messages

    Returns:
        ScenarioConfig

    Raises:
        ConfigError: anything missing, malformed or inconsistent
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from e

    if not parser.has_section("scenario"):
        raise ConfigError(f"{source}: missing [scenario] section")
    head = parser["scenario"]
    name = head.get("name", "").strip()
    if not name:
        raise ConfigError(f"{source}: [scenario] needs a name")
    n = _get(head, "n", int, None, "scenario")
    if n is None or n < 2:
        raise ConfigError(f"{source}: [scenario] n must be an integer >= 2")

    mechanism = _parse_mechanism(parser, n)

    rules = tuple(
        _parse_rule(section_name.split(":", 1)[1].strip(), parser[section_name])
        for section_name in parser.sections()
        if section_name.startswith("rule:")
    )
    if not rules:
        raise ConfigError(f"{source}: no [rule:<name>] section")

    initial = []
    if parser.has_section("initial_conditions"):
        for label, raw in parser["initial_conditions"].items():
            vector = _vector(raw, f"[initial_conditions] {label}")
            if len(vector) != n:
                raise ConfigError(f"[initial_conditions] {label} has {len(vector)} entries, expected {n}")
            try:
                PopulationState(vector)
            except DriftExceeded as e:
                raise ConfigError(f"[initial_conditions] {label} is not on the simplex: {e}") from e
            initial.append((label, vector))

    try:
        integrator = IntegratorConfig(**_read_block(IntegratorConfig, parser["integrator"], "integrator")) \
            if parser.has_section("integrator") else IntegratorConfig()
    except EvodynError as e:
        raise ConfigError(f"[integrator] {e}") from e

    outputs = OutputsBlock(**_read_block(OutputsBlock, parser["outputs"], "outputs")) \
        if parser.has_section("outputs") else OutputsBlock()
    certify = CertifyBlock(**_read_block(CertifyBlock, parser["certify"], "certify")) \
        if parser.has_section("certify") else CertifyBlock()

    return ScenarioConfig(
        name=name,
        n=n,
        mechanism=mechanism,
        rules=rules,
        initial_conditions=tuple(initial),
        description=head.get("description", "").strip(),
        integrator=integrator,
        outputs=outputs,
        certify=certify,
    )


def load_scenario(path):
    if not os.path.isfile(path):
        raise ConfigError(f"Scenario file not found: {path}")
    with open(path, encoding="utf-8") as handle:
        return parse_scenario(handle.read(), source=path)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_scenario(cfg):
    """Scenario text that parses back to exactly cfg."""
    lines = ["[scenario]", f"name = {cfg.name}", f"n = {cfg.n}"]
    if cfg.description:
        lines.append(f"description = {cfg.description}")

    mech = cfg.mechanism
    lines += ["", "[mechanism]", f"kind = {mech.kind}"]
    if mech.game_A:
        lines.append(f"game_A = {_format_matrix(mech.game_A)}")
    if mech.game_b:
        lines.append(f"game_b = {_format_vector(mech.game_b)}")
    if mech.lti_A:
        lines.append(f"lti_A = {_format_matrix(mech.lti_A)}")
    if mech.lti_b:
        lines.append(f"lti_b = {_format_vector(mech.lti_b)}")
    lines += [f"lambda = {_format(mech.lam)}", f"k = {_format(mech.k)}"]
    if mech.beta_bound is not None:
        lines.append(f"beta_bound = {_format(mech.beta_bound)}")

    for rule in cfg.rules:
        lines += ["", f"[rule:{rule.name}]"]
        for spec in fields(RuleBlock):
            value = getattr(rule, spec.name)
            if spec.name == "name" or value == spec.default:
                continue
            if spec.name == "mixture":
                value = "; ".join(f"{weight!r} * {ref}" for weight, ref in value)
            lines.append(f"{spec.name} = {_format(value)}")

    if cfg.initial_conditions:
        lines += ["", "[initial_conditions]"]
        lines += [f"{label} = {_format_vector(vector)}" for label, vector in cfg.initial_conditions]

    for section, block in (("integrator", cfg.integrator), ("outputs", cfg.outputs), ("certify", cfg.certify)):
        lines += ["", f"[{section}]"]
        lines += [f"{spec.name} = {_format(getattr(block, spec.name))}" for spec in fields(block)
                  if getattr(block, spec.name) != ""]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- builders

def _rule_spec(block):
    if block.preset:
        if block.preset not in PRESET_NAMES:
            raise ConfigError(f"[rule:{block.name}] unknown preset '{block.preset}'. Available: {list(PRESET_NAMES)}")
        spec = preset_rule(block.preset)
        return RuleSpec(**{**_spec_fields(spec), "name": block.name, "bypass_cone": block.bypass_cone or spec.bypass_cone})
    return None


def _spec_fields(spec):
    return {f.name: getattr(spec, f.name) for f in fields(RuleSpec)}


def build_rules(cfg):
    """
    RuleSpecs of every [rule:*] section, in file order.

    Mixture terms may name another rule section or a preset.

    Raises:
        ConfigError / InvalidRuleSpec
    """
    blocks = {block.name: block for block in cfg.rules}
    built = {}

    def build(name, trail):
        if name in built:
            return built[name]
        if name in trail:
            raise ConfigError(f"Rule mixture cycle: {' -> '.join(trail + (name,))}")
        block = blocks.get(name)
        if block is None:
            if name in PRESET_NAMES:
                return preset_rule(name)
            raise ConfigError(f"Rule '{name}' is neither a rule section nor a preset")
        spec = _rule_spec(block)
        if spec is None:
            try:
                spec = RuleSpec(
                    alpha_I=block.alpha_i,
                    alpha_CO=block.alpha_co,
                    alpha_EP=block.alpha_ep,
                    alpha_tilde=block.alpha_tilde,
                    i_rule=block.i_rule,
                    co_rule=block.co_rule,
                    ep_rule=block.ep_rule,
                    abr_k=block.abr_k,
                    abr_eps=block.abr_eps,
                    mixture=tuple((weight, build(ref, trail + (name,))) for weight, ref in block.mixture),
                    name=block.name,
                    bypass_cone=block.bypass_cone,
                )
            except ValueError as e:
                if isinstance(e, (InvalidRuleSpec, ConfigError)):
                    raise
                raise ConfigError(f"[rule:{name}] {e}") from e
        built[name] = spec
        return spec

    return [build(block.name, ()) for block in cfg.rules]


def build_mechanism(cfg):
    """
    PayoffMechanism of the [mechanism] section.

    Raises:
        ConfigError / InvalidMechanism
    """
    block = cfg.mechanism
    try:
        if block.kind == "memoryless":
            mech = memoryless_mechanism(affine_game(block.game_A, block.game_b, name=cfg.name))
        elif block.kind == "filtered_potential":
            base = affine_game(block.game_A, block.game_b, name=f"{cfg.name}_base")
            mech = filtered_potential_mechanism(base, block.lam, block.k, block.lti_A, block.lti_b, name=cfg.name)
        elif block.kind == "contractive_filter":
            mech = contractive_filter_mechanism(block.lti_A, block.lti_b, block.lam, name=cfg.name)
        else:
            mech = coordination_filter_mechanism(block.lti_A, block.lti_b, block.lam, name=cfg.name)
    except DimensionMismatch as e:
        raise ConfigError(f"[mechanism] {e}") from e

    if block.beta_bound is not None:
        if block.beta_bound < mech.beta_bound:
            raise ConfigError(
                f"[mechanism] beta_bound = {block.beta_bound:g} is below the computed bound {mech.beta_bound:g}"
            )
        mech.beta_bound = float(block.beta_bound)
    return mech


def initial_states(cfg):
    return [(label, np.array(vector)) for label, vector in cfg.initial_conditions]


# ---------------------------------------------------------------- bundled scenarios

def scenario_dir():
    return os.environ.get(SCENARIO_DIR_ENV) or os.path.join(os.path.dirname(os.path.abspath(__file__)), "scenarios")


def resolve_scenario(name_or_path):
    """A file path, or the name of a scenario in scenario_dir()."""
    if os.path.isfile(name_or_path):
        return name_or_path
    candidate = os.path.join(scenario_dir(), name_or_path + SCENARIO_SUFFIX)
    if os.path.isfile(candidate):
        return candidate
    raise ConfigError(f"No scenario file or bundled scenario named '{name_or_path}' (looked in {scenario_dir()})")


def list_scenarios(directory=None):
    """(name, description, path) of every scenario file in directory, sorted by name."""
    directory = scenario_dir() if directory is None else directory
    if not os.path.isdir(directory):
        return []
    found = []
    for filename in sorted(os.listdir(directory)):
        if not filename.endswith(SCENARIO_SUFFIX):
            continue
        path = os.path.join(directory, filename)
        try:
            cfg = load_scenario(path)
        except ConfigError as e:
            logger.warning("Skipping %s: %s", filename, e)
            continue
        found.append((cfg.name, cfg.description, path))
    return found
