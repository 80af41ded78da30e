"""Scenario description and its YAML config file.

The file is a single YAML mapping. Unknown keys are rejected with the line
they appear on. ``to_config`` emits every field, defaults included, so
``load(dump(s)) == s``.
"""
import os
from dataclasses import dataclass, field, fields
from typing import List, Optional

import yaml

from . import primitives
from .adversary import KINDS, AdversarySpec, assign_roles
from .errors import ConfigurationError
from .simnet import LatencyModel, PartitionSpec, validate_partitions

SCHEMA_VERSION = 1
CONSENSUS_KINDS = ("proof_of_luck", "superblock", "proof_of_work", "proof_of_time", "proof_of_ownership")
SEED_ENV = "LUCKCHAIN_SEED"


@dataclass
class Outputs:
    trace: Optional[str] = None
    summary: Optional[str] = None
    chains: Optional[str] = None


@dataclass
class Scenario:
    seed: int = 0
    participants: int = 4
    clock_offsets: List[int] = field(default_factory=list)
    start_delays: List[int] = field(default_factory=list)
    round_time: int = 15000
    max_mine_delay: int = 10000
    pot_duration: int = 1000
    pow_difficulty: int = 8
    latency: LatencyModel = field(default_factory=LatencyModel)
    partitions: List[PartitionSpec] = field(default_factory=list)
    adversaries: List[AdversarySpec] = field(default_factory=list)
    consensus: str = "proof_of_luck"
    m: int = 3
    horizon: int = 10
    header_first: bool = False
    transactions_per_round: int = 0
    merge_wait: int = 1500
    outputs: Outputs = field(default_factory=Outputs)
    schema_version: int = SCHEMA_VERSION

    def primitive_config(self):
        return primitives.PrimitiveConfig(
            round_time=self.round_time,
            max_mine_delay=self.max_mine_delay,
            pot_duration=self.pot_duration,
            pow_difficulty=self.pow_difficulty,
        )

    def validate(self):
        """Raise :class:`ConfigurationError` for the first problem found."""
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported schema_version {self.schema_version}")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if self.participants < 1:
            raise ConfigurationError("participants must be positive")
        if self.horizon < 1:
            raise ConfigurationError("horizon must be positive")
        for name in ("clock_offsets", "start_delays"):
            values = getattr(self, name)
            if values and len(values) != self.participants:
                raise ConfigurationError(f"{name} needs one entry per participant")
        if any(d < 0 for d in self.start_delays):
            raise ConfigurationError("start_delays must be non-negative")
        if self.consensus not in CONSENSUS_KINDS:
            raise ConfigurationError(f"unknown consensus {self.consensus!r}")
        if self.consensus == "superblock" and not 1 <= self.m <= self.participants:
            raise ConfigurationError("superblock m must be between 1 and the participant count")
        if self.transactions_per_round < 0 or self.merge_wait < 0:
            raise ConfigurationError("transactions_per_round and merge_wait must be non-negative")
        for a, b in self.latency.overrides:
            if not (0 <= a < self.participants and 0 <= b < self.participants):
                raise ConfigurationError(f"latency override edge {(a, b)} out of range")
        self.primitive_config()
        validate_partitions(self.partitions, self.participants)
        assign_roles(self.adversaries, self.participants)
        return self

    # -- dict form -------------------------------------------------------------

    def to_config(self):
        return {
            "schema_version": self.schema_version,
            "seed": self.seed,
            "participants": {
                "count": self.participants,
                "clock_offsets": list(self.clock_offsets),
                "start_delays": list(self.start_delays),
            },
            "round_time": self.round_time,
            "max_mine_delay": self.max_mine_delay,
            "pot_duration": self.pot_duration,
            "pow_difficulty": self.pow_difficulty,
            "latency": {
                "base": self.latency.base,
                "jitter": self.latency.jitter,
                "overrides": [
                    {"from": a, "to": b, "base": base, "jitter": jitter}
                    for (a, b), (base, jitter) in sorted(self.latency.overrides.items())
                ],
            },
            "partitions": [
                {"groups": [sorted(g) for g in p.groups], "start": p.start, "end": p.end}
                for p in self.partitions
            ],
            "adversaries": [
                {"kind": a.kind, "controlled": sorted(a.controlled), "params": dict(a.params)}
                for a in self.adversaries
            ],
            "consensus": {"kind": self.consensus, "m": self.m},
            "horizon": self.horizon,
            "header_first": self.header_first,
            "transactions_per_round": self.transactions_per_round,
            "merge_wait": self.merge_wait,
            "outputs": {f.name: getattr(self.outputs, f.name) for f in fields(Outputs)},
        }


def dump(scenario):
    return yaml.safe_dump(scenario.to_config(), sort_keys=False)


# -- loading with line numbers ----------------------------------------------------


def _line(node):
    return node.start_mark.line + 1


class _Walker:
    def __init__(self):
        self._ctor = yaml.SafeLoader("")

    def value(self, node):
        return self._ctor.construct_object(node, deep=True)

    def mapping(self, node, allowed, where):
        if not isinstance(node, yaml.MappingNode):
            raise ConfigurationError(f"{where} must be a mapping", _line(node))
        out = {}
        for key_node, value_node in node.value:
            key = self.value(key_node)
            if key not in allowed:
                raise ConfigurationError(f"unknown key {key!r} in {where}", _line(key_node))
            if key in out:
                raise ConfigurationError(f"duplicate key {key!r} in {where}", _line(key_node))
            out[key] = value_node
        return out

    def sequence(self, node, where):
        if isinstance(node, yaml.ScalarNode) and self.value(node) is None:
            return []
        if not isinstance(node, yaml.SequenceNode):
            raise ConfigurationError(f"{where} must be a list", _line(node))
        return node.value

    def typed(self, node, kind, where, optional=False):
        v = self.value(node)
        if optional and v is None:
            return None
        ok = isinstance(v, kind) and not (kind in (int, float) and isinstance(v, bool))
        if kind is float and isinstance(v, int) and not isinstance(v, bool):
            v, ok = float(v), True
        if not ok:
            raise ConfigurationError(f"{where} must be {kind.__name__}, got {v!r}", _line(node))
        return v

    def int_list(self, node, where):
        return [self.typed(n, int, f"{where} entry") for n in self.sequence(node, where)]


TOP_KEYS = {
    "schema_version", "seed", "participants", "round_time", "max_mine_delay", "pot_duration",
    "pow_difficulty", "latency", "partitions", "adversaries", "consensus", "horizon",
    "header_first", "transactions_per_round", "merge_wait", "outputs",
}


def _anchored(fn, node):
    try:
        return fn()
    except ConfigurationError as exc:
        if exc.line is not None:
            raise
        raise ConfigurationError(str(exc), _line(node)) from None


def parse(text, env=None):
    """Parse config ``text`` into a validated :class:`Scenario`."""
    env = os.environ if env is None else env
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigurationError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                                 mark.line + 1 if mark else None) from None
    if root is None:
        raise ConfigurationError("empty config file", 1)
    w = _Walker()
    top = w.mapping(root, TOP_KEYS, "config")
    sc = Scenario()
    if "schema_version" not in top:
        raise ConfigurationError("missing required key 'schema_version'", _line(root))
    simple = {
        "schema_version": int, "seed": int, "round_time": int, "max_mine_delay": int,
        "pot_duration": int, "pow_difficulty": int, "horizon": int, "header_first": bool,
        "transactions_per_round": int, "merge_wait": int,
    }
    for key, kind in simple.items():
        if key in top:
            setattr(sc, key, w.typed(top[key], kind, key))
    if sc.schema_version != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported schema_version {sc.schema_version}",
                                 _line(top["schema_version"]))

    if "participants" in top:
        node = top["participants"]
        if isinstance(node, yaml.ScalarNode):
            sc.participants = w.typed(node, int, "participants")
        else:
            p = w.mapping(node, {"count", "clock_offsets", "start_delays"}, "participants")
            if "count" not in p:
                raise ConfigurationError("participants needs a count", _line(node))
            sc.participants = w.typed(p["count"], int, "participants.count")
            if "clock_offsets" in p:
                sc.clock_offsets = w.int_list(p["clock_offsets"], "participants.clock_offsets")
            if "start_delays" in p:
                sc.start_delays = w.int_list(p["start_delays"], "participants.start_delays")

    if "latency" in top:
        lat = w.mapping(top["latency"], {"base", "jitter", "overrides"}, "latency")
        base = w.typed(lat["base"], int, "latency.base") if "base" in lat else 100
        jitter = w.typed(lat["jitter"], float, "latency.jitter") if "jitter" in lat else 150.0
        overrides = {}
        for o in w.sequence(lat.get("overrides", yaml.ScalarNode("tag:yaml.org,2002:null", "")), "latency.overrides"):
            e = w.mapping(o, {"from", "to", "base", "jitter"}, "latency override")
            for k in ("from", "to"):
                if k not in e:
                    raise ConfigurationError(f"latency override needs '{k}'", _line(o))
            edge = (w.typed(e["from"], int, "from"), w.typed(e["to"], int, "to"))
            overrides[edge] = (
                w.typed(e["base"], int, "base") if "base" in e else base,
                w.typed(e["jitter"], float, "jitter") if "jitter" in e else jitter,
            )
        sc.latency = _anchored(lambda: LatencyModel(base, jitter, overrides), top["latency"])

    if "partitions" in top:
        parts = []
        for pn in w.sequence(top["partitions"], "partitions"):
            p = w.mapping(pn, {"groups", "start", "end"}, "partition")
            for k in ("groups", "start", "end"):
                if k not in p:
                    raise ConfigurationError(f"partition needs '{k}'", _line(pn))
            groups = [w.int_list(g, "partition group") for g in w.sequence(p["groups"], "groups")]
            start = w.typed(p["start"], int, "partition.start")
            end = w.typed(p["end"], int, "partition.end")
            parts.append(_anchored(lambda: PartitionSpec(tuple(groups), start, end), pn))
        sc.partitions = parts

    if "adversaries" in top:
        advs = []
        for an in w.sequence(top["adversaries"], "adversaries"):
            a = w.mapping(an, {"kind", "controlled", "params"}, "adversary")
            if "kind" not in a or "controlled" not in a:
                raise ConfigurationError("adversary needs 'kind' and 'controlled'", _line(an))
            kind = w.typed(a["kind"], str, "adversary.kind")
            if kind not in KINDS:
                raise ConfigurationError(f"unknown adversary kind {kind!r}", _line(a["kind"]))
            controlled = w.int_list(a["controlled"], "adversary.controlled")
            params = {}
            if "params" in a:
                if not isinstance(a["params"], yaml.MappingNode):
                    raise ConfigurationError("adversary.params must be a mapping", _line(a["params"]))
                params = w.value(a["params"])
            advs.append(_anchored(lambda: AdversarySpec(kind, frozenset(controlled), params), an))
        sc.adversaries = advs

    if "consensus" in top:
        node = top["consensus"]
        if isinstance(node, yaml.ScalarNode):
            sc.consensus = w.typed(node, str, "consensus")
        else:
            c = w.mapping(node, {"kind", "m"}, "consensus")
            if "kind" not in c:
                raise ConfigurationError("consensus needs a kind", _line(node))
            sc.consensus = w.typed(c["kind"], str, "consensus.kind")
            if "m" in c:
                sc.m = w.typed(c["m"], int, "consensus.m")
        if sc.consensus not in CONSENSUS_KINDS:
            raise ConfigurationError(f"unknown consensus {sc.consensus!r}", _line(node))

    if "outputs" in top:
        o = w.mapping(top["outputs"], {f.name for f in fields(Outputs)}, "outputs")
        sc.outputs = Outputs(**{k: w.typed(v, str, f"outputs.{k}", optional=True) for k, v in o.items()})

    if env.get(SEED_ENV):
        try:
            sc.seed = int(env[SEED_ENV], 0)
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV} is not an integer: {env[SEED_ENV]!r}") from None

    _anchored(sc.validate, root)
    return sc


def load(path, env=None):
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read(), env)
