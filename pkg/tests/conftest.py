import pytest

from luckchain import ledger, primitives, tee
from luckchain.ledger import EMPTY, Transaction


@pytest.fixture
def cfg():
    return primitives.PrimitiveConfig()


@pytest.fixture
def registry():
    return tee.VendorRegistry()


@pytest.fixture
def clock():
    return tee.SimClock()


@pytest.fixture
def handle(registry, clock):
    cpu = tee.create_cpu(7, 0, registry, clock)
    return tee.start_enclave(cpu, primitives.POL_MEASUREMENT)


def mine_next(handle, chain, cfg, txs=()):
    """One honest round on ``handle``: pol_round, wait, commit."""
    primitives.pol_round(handle, chain.latest_or_genesis())
    handle.cpu.clock.sleep(cfg.round_time)
    return ledger.commit(list(txs), chain, handle, cfg)


def honest_chain(n, seed=7, txs_per_block=1):
    """A valid n-block chain and the registry it verifies under."""
    cfg = primitives.PrimitiveConfig()
    registry = tee.VendorRegistry()
    cpu = tee.create_cpu(seed, 0, registry)
    handle = tee.start_enclave(cpu, primitives.POL_MEASUREMENT)
    chain = EMPTY
    for i in range(n):
        txs = [Transaction.from_payload(f"tx-{i}-{k}".encode()) for k in range(txs_per_block)]
        chain = mine_next(handle, chain, cfg, txs)
    return chain, registry


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
