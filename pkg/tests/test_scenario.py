import pytest

from luckchain import scenario
from luckchain.errors import ConfigurationError
from luckchain.scenario import Scenario

FULL = """\
schema_version: 1
seed: 11
participants:
  count: 4
  clock_offsets: [0, 10, -20, 5]
  start_delays: [0, 0, 100, 0]
latency:
  base: 80
  jitter: 20.0
  overrides:
    - {from: 0, to: 1, base: 5}
partitions:
  - groups: [[0, 1], [2, 3]]
    start: 0
    end: 30000
adversaries:
  - kind: spoofer
    controlled: [3]
    params: {victims: [0]}
consensus: {kind: superblock, m: 2}
horizon: 5
transactions_per_round: 2
"""


def test_full_config_parses():
    sc = scenario.parse(FULL, env={})
    assert sc.seed == 11 and sc.participants == 4
    assert sc.latency.overrides[(0, 1)] == (5, 20.0)
    assert sc.partitions[0].groups == (frozenset({0, 1}), frozenset({2, 3}))
    assert sc.consensus == "superblock" and sc.m == 2
    assert sc.adversaries[0].params == {"victims": [0]}


def test_dump_roundtrip():
    sc = scenario.parse(FULL, env={})
    again = scenario.parse(scenario.dump(sc), env={})
    assert again == sc
    assert scenario.dump(again) == scenario.dump(sc)
    default = Scenario().validate()
    assert scenario.parse(scenario.dump(default), env={}) == default


def test_short_forms():
    sc = scenario.parse("schema_version: 1\nparticipants: 7\nconsensus: proof_of_time\n", env={})
    assert sc.participants == 7 and sc.consensus == "proof_of_time"


def test_env_seed_overrides_file():
    sc = scenario.parse("schema_version: 1\nseed: 3\n", env={"LUCKCHAIN_SEED": "0x10"})
    assert sc.seed == 16
    with pytest.raises(ConfigurationError):
        scenario.parse("schema_version: 1\n", env={"LUCKCHAIN_SEED": "abc"})


@pytest.mark.parametrize("text,line", [
    ("schema_version: 1\nseed: 1\nbogus: 2\n", 3),
    ("schema_version: 1\nlatency:\n  base: 1\n  jiter: 2\n", 4),
    ("schema_version: 1\nhorizon: ten\n", 2),
    ("schema_version: 1\nparticipants: 2\npartitions:\n  - groups: [[0], [0, 1]]\n    start: 0\n    end: 5\n", 4),
    ("schema_version: 1\nconsensus: magic\n", 2),
    ("schema_version: 2\n", 1),
    ("seed: 1\n", 1),
    ("schema_version: 1\nparticipants: [1\n", 3),
])
def test_errors_carry_line(text, line):
    with pytest.raises(ConfigurationError) as info:
        scenario.parse(text, env={})
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_validation_rules():
    bad = [
        dict(participants=0),
        dict(horizon=0),
        dict(participants=2, clock_offsets=[0]),
        dict(start_delays=[-1, 0, 0, 0]),
        dict(consensus="superblock", m=5),
        dict(seed=-1),
        dict(merge_wait=-1),
    ]
    for kw in bad:
        with pytest.raises(ConfigurationError):
            Scenario(**kw).validate()


def test_empty_file():
    with pytest.raises(ConfigurationError):
        scenario.parse("", env={})


def test_shipped_configs_parse():
    import pathlib

    configs = sorted((pathlib.Path(__file__).parent.parent / "configs").glob("*.yaml"))
    assert configs
    for path in configs:
        scenario.load(path, env={})
