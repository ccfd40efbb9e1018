"""Experiment configuration files.

The format is INI (``configparser``). Laws are written as call expressions,
for example ``discrete(values=[0.5, 1.5], probs=[0.5, 0.5])`` or
``uniform(0.5, 1.5)``; see README for the full grammar.
"""
from __future__ import annotations

import ast
import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .arrivals import make_interarrival_law
from .diffusion import MODES
from .engine import MECHANISMS
from .environment import PLACEMENTS, P1_RANDOM_UNIFORM, P2_FASTEST_BUSY, InitialStateSpec, RateLawSpec
from .errors import ConfigError
from .experiment import Model
from .laws import Discrete, Law, Mixture, Normal, TruncatedNormal, Uniform, constant
from .policies import POLICIES

LAWS = {
    "constant": constant,
    "discrete": lambda values, probs: Discrete(tuple(values), tuple(probs)),
    "uniform": Uniform,
    "normal": Normal,
    "truncnorm": TruncatedNormal,
    "mixture": lambda weights, components: Mixture(tuple(components), tuple(weights)),
}

KEYS = {
    "experiment": ("seed", "policy", "mechanism", "ladder", "replications", "horizon", "grid_step",
                   "report_times", "workers", "output", "write_paths"),
    "rates": ("kind", "tilde", "hat", "atoms", "probs", "mu_bar", "rounding"),
    "arrivals": ("family", "scv", "lambda_hat", "shape"),
    "initial": ("xi0", "nu", "placement", "coupling"),
    "diffusion": ("step", "horizon", "paths", "mode", "sigma", "g", "refinement"),
    "fairness": ("s", "c"),
    "validate": ("replications", "inject_fault_at"),
}
SECTIONS = tuple(KEYS)


def _eval(node):
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in LAWS:
            raise ConfigError(f"unknown law {ast.unparse(node.func)!r}; "
                              f"choose one of {', '.join(LAWS)}")
        args = [_eval(a) for a in node.args]
        kwargs = {k.arg: _eval(k.value) for k in node.keywords}
        try:
            return LAWS[node.func.id](*args, **kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad arguments to {node.func.id}: {exc}") from None
    if isinstance(node, (ast.List, ast.Tuple)):
        return [_eval(e) for e in node.elts]
    if isinstance(node, ast.Name) and node.id in ("inf", "nan"):
        return float(node.id)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
        return -_eval(node.operand)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return node.value
    raise ConfigError(f"cannot read {ast.unparse(node)!r}")


def parse_law(text: str) -> Law:
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError:
        raise ConfigError(f"malformed law expression {text!r}") from None
    law = _eval(tree.body)
    if isinstance(law, (int, float)):
        law = constant(float(law))
    if not isinstance(law, Law):
        raise ConfigError(f"{text!r} is not a law")
    return law


def parse_literal(text: str):
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError:
        raise ConfigError(f"malformed value {text!r}") from None
    return _eval(tree.body)


def parse_floats(text: str) -> list:
    try:
        return [float(v) for v in re.split(r"[,\s]+", text.strip()) if v]
    except ValueError:
        raise ConfigError(f"expected a list of numbers, got {text!r}") from None


@dataclass
class ExperimentConfig:
    model: Model
    seed: int
    ladder: list
    replications: int = 4000
    horizon: float = 2.0
    grid_step: float = 0.01
    report_times: list = field(default_factory=lambda: [1.0])
    workers: int = 1
    output: str = "out"
    write_paths: bool = True
    diffusion_step: float = 1e-3
    diffusion_horizon: float = 2.0
    diffusion_paths: int = 4000
    diffusion_mode: str = "auto"
    diffusion_sigma: float | None = None
    diffusion_g: float | None = None
    diffusion_refinement: int = 1
    fairness_s: float = 1.0
    fairness_c: float = 1.0
    validate_replications: int = 200
    inject_fault_at: int | None = None
    source: str = ""

    @property
    def drift_mode(self) -> str:
        return self.model.default_drift_mode if self.diffusion_mode == "auto" else self.diffusion_mode

    def diffusion_kw(self, horizon: float | None = None) -> dict:
        return dict(step=self.diffusion_step, horizon=self.diffusion_horizon if horizon is None else horizon,
                    paths=self.diffusion_paths, sigma=self.diffusion_sigma, drift_coeff=self.diffusion_g,
                    noise_refinement=self.diffusion_refinement)


def _line_index(text: str) -> dict:
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = no
        elif section and s and not s.startswith(("#", ";")) and re.match(r"[^=:]+[=:]", s):
            lines[(section, re.split(r"[=:]", s, 1)[0].strip().lower())] = no
    return lines


class _Reader:
    def __init__(self, cp, lines):
        self.cp, self.lines = cp, lines

    def line(self, section, key=None):
        return self.lines.get((section, key), self.lines.get((section, None)))

    def get(self, section, key, conv=str, default=..., required=False):
        if not self.cp.has_option(section, key):
            if required or default is ...:
                raise ConfigError(f"[{section}] is missing required key {key!r}", self.line(section))
            return default
        raw = self.cp.get(section, key)
        try:
            return conv(raw)
        except ConfigError as exc:
            raise ConfigError(str(exc), self.line(section, key)) from None
        except (ValueError, TypeError):
            raise ConfigError(f"[{section}] {key} = {raw!r} is not valid", self.line(section, key)) from None

    def check(self, ok, message, section, key=None):
        if not ok:
            raise ConfigError(message, self.line(section, key))


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    return parse_config(text, source=str(path))


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.ParsingError as exc:
        lineno, bad = exc.errors[0]
        raise ConfigError(f"cannot parse {bad.strip()!r}; expected 'key = value'", lineno) from None
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " "), getattr(exc, "lineno", None)) from None
    r = _Reader(cp, _line_index(text))
    for sec in cp.sections():
        r.check(sec in SECTIONS, f"unknown section [{sec}]", sec)
        for key in cp.options(sec):
            r.check(key in KEYS[sec], f"unknown key {key!r} in [{sec}]; expected one of {', '.join(KEYS[sec])}",
                    sec, key)
    for sec in ("experiment", "rates"):
        r.check(cp.has_section(sec), f"missing section [{sec}]", sec)

    # rates
    kind = r.get("rates", "kind", default="iid")
    r.check(kind in ("iid", "table"), f"rates kind must be iid or table, got {kind!r}", "rates", "kind")
    mu_bar = r.get("rates", "mu_bar", float, default=None)
    try:
        if cp.has_option("rates", "atoms"):
            atoms = r.get("rates", "atoms", parse_literal)
            probs = r.get("rates", "probs", parse_literal, required=True)
            if kind == "table":
                rates = RateLawSpec.table(atoms, probs, r.get("rates", "rounding", int, default=None), mu_bar)
            else:
                rates = RateLawSpec.iid_joint(atoms, probs, mu_bar)
        else:
            r.check(kind == "iid", "table environments need atoms and probs", "rates")
            tilde = r.get("rates", "tilde", parse_law, required=True)
            hat = r.get("rates", "hat", parse_law, default=constant(0.0))
            rates = RateLawSpec.iid(tilde, hat, mu_bar)
    except ConfigError as exc:
        if exc.line is not None:
            raise
        raise ConfigError(str(exc), r.line("rates")) from None

    # arrivals
    family = r.get("arrivals", "family", default="exponential") if cp.has_section("arrivals") else "exponential"
    scv = r.get("arrivals", "scv", float, default=1.0) if cp.has_section("arrivals") else 1.0
    lam_hat = r.get("arrivals", "lambda_hat", float, default=0.0) if cp.has_section("arrivals") else 0.0
    shape = r.get("arrivals", "shape", int, default=None) if cp.has_section("arrivals") else None
    try:
        interarrival = make_interarrival_law(family, scv, shape)
    except ConfigError as exc:
        raise ConfigError(str(exc), r.line("arrivals", "scv")) from None

    policy = r.get("experiment", "policy", default="p1")
    r.check(policy in POLICIES, f"policy must be one of {', '.join(POLICIES)}", "experiment", "policy")
    mechanism = r.get("experiment", "mechanism", default="per_server")
    r.check(mechanism in MECHANISMS, f"mechanism must be one of {', '.join(MECHANISMS)}",
            "experiment", "mechanism")

    # initial state
    has_init = cp.has_section("initial")
    default_place = P2_FASTEST_BUSY if policy == "p2" else P1_RANDOM_UNIFORM
    placement = r.get("initial", "placement", default=default_place) if has_init else default_place
    r.check(placement in PLACEMENTS, f"placement must be one of {', '.join(PLACEMENTS)}",
            "initial", "placement")
    init = InitialStateSpec(
        xi0_law=r.get("initial", "xi0", parse_law, default=constant(0.0)) if has_init else constant(0.0),
        nu_law=r.get("initial", "nu", parse_law, default=constant(0.0)) if has_init else constant(0.0),
        idle_placement=placement,
        coupling=r.get("initial", "coupling", default="independent") if has_init else "independent",
    )
    model = Model(rates, interarrival, lam_hat, init, policy, mechanism)

    seed = r.get("experiment", "seed", int, required=True)
    r.check(seed >= 0, "seed must be a nonnegative integer", "experiment", "seed")
    ladder = r.get("experiment", "ladder", lambda s: [int(v) for v in parse_floats(s)], required=True)
    r.check(len(ladder) >= 1 and all(v >= 1 for v in ladder), "ladder needs positive n values",
            "experiment", "ladder")
    r.check(all(a < b for a, b in zip(ladder, ladder[1:])), "ladder must be strictly increasing",
            "experiment", "ladder")
    cfg = ExperimentConfig(model=model, seed=seed, ladder=ladder, source=source)
    cfg.replications = r.get("experiment", "replications", int, default=cfg.replications)
    cfg.horizon = r.get("experiment", "horizon", float, default=cfg.horizon)
    cfg.grid_step = r.get("experiment", "grid_step", float, default=cfg.grid_step)
    cfg.report_times = r.get("experiment", "report_times", parse_floats, default=[cfg.horizon / 2])
    cfg.workers = r.get("experiment", "workers", int, default=1)
    cfg.output = r.get("experiment", "output", default="out")
    cfg.write_paths = r.get("experiment", "write_paths", _bool, default=True)
    r.check(cfg.replications >= 1, "replications must be >= 1", "experiment", "replications")
    r.check(cfg.horizon >= 0 and cfg.grid_step > 0, "horizon must be >= 0 and grid_step > 0",
            "experiment", "horizon")
    r.check(all(0 <= t <= cfg.horizon for t in cfg.report_times), "report_times must lie in [0, horizon]",
            "experiment", "report_times")

    if cp.has_section("diffusion"):
        cfg.diffusion_step = r.get("diffusion", "step", float, default=cfg.diffusion_step)
        cfg.diffusion_horizon = r.get("diffusion", "horizon", float, default=max(cfg.report_times + [0.0]))
        cfg.diffusion_paths = r.get("diffusion", "paths", int, default=cfg.diffusion_paths)
        cfg.diffusion_mode = r.get("diffusion", "mode", default="auto")
        r.check(cfg.diffusion_mode in ("auto", *MODES), "diffusion mode must be auto, gamma or mu_min",
                "diffusion", "mode")
        cfg.diffusion_sigma = r.get("diffusion", "sigma", float, default=None)
        cfg.diffusion_g = r.get("diffusion", "g", float, default=None)
        cfg.diffusion_refinement = r.get("diffusion", "refinement", int, default=1)
        r.check(cfg.diffusion_refinement >= 1, "diffusion refinement must be >= 1", "diffusion", "refinement")
        r.check(cfg.diffusion_paths >= 1, "diffusion paths must be >= 1", "diffusion", "paths")
    else:
        cfg.diffusion_horizon = max(cfg.report_times + [0.0])
    r.check(cfg.diffusion_horizon >= max(cfg.report_times + [0.0]) - 1e-12,
            "diffusion horizon must cover the report times", "diffusion", "horizon")
    n_steps = cfg.diffusion_horizon / cfg.diffusion_step
    r.check(abs(n_steps - round(n_steps)) <= 1e-6 * max(1.0, n_steps),
            "diffusion horizon must be a multiple of its step", "diffusion", "step")

    if cp.has_section("fairness"):
        cfg.fairness_s = r.get("fairness", "s", float, default=cfg.fairness_s)
        cfg.fairness_c = r.get("fairness", "c", float, default=cfg.fairness_c)
        r.check(cfg.fairness_s > 0 and cfg.fairness_c > 0, "fairness s and c must be positive", "fairness")
    if cp.has_section("validate"):
        cfg.validate_replications = r.get("validate", "replications", int, default=cfg.validate_replications)
        cfg.inject_fault_at = r.get("validate", "inject_fault_at", int, default=None)
    if math.isnan(cfg.horizon):
        raise ConfigError("horizon is NaN", r.line("experiment", "horizon"))
    return cfg
