import json

import pytest

from pds.client import OwnerKeyring
from pds.errors import ConfigInvalid
from pds.harness import (
    FAIL,
    SKIP,
    ReadingModel,
    ShadowLedger,
    SimConfig,
    corrupt_stored_ciphertext,
    load_cloud,
    load_ledger,
    run_simulation,
    verify,
)
from pds.model import DeviceIdentity

D11 = DeviceIdentity(1, 1)


def small(**kw):
    base = dict(regions=(2, 2), period_ticks=1, window_width=5, total_ticks=10, shard_count=2, key_bits=64, seed=3)
    base.update(kw)
    return SimConfig(**base)


def decrypt_all(run):
    ring = run.state.keyring
    return {k: ring.decrypt_signed(k[0], r.ciphertext) for s in run.state.cloud.shards for k, r in s.records.items()}


class TestConfig:
    @pytest.mark.parametrize("kw,constraint", [
        (dict(window_width=4, period_ticks=3), "window_width % period_ticks == 0"),
        (dict(total_ticks=12), "total_ticks % window_width == 0"),
        (dict(regions=()), "regions"),
        (dict(regions=(0,)), "regions"),
        (dict(shard_count=0), "shard_count"),
        (dict(key_bits=63), "key_bits"),
        (dict(reading_model=ReadingModel("normal", 0, 1)), "reading_model.distribution"),
        (dict(reading_model=ReadingModel("constant", 1, 2)), "reading_model constant"),
        (dict(key_bits=16, reading_model=ReadingModel("uniform", -1000, 1000)), "signed-sum headroom"),
    ])
    def test_invalid(self, kw, constraint):
        with pytest.raises(ConfigInvalid) as exc:
            small(**kw)
        assert exc.value.constraint == constraint

    def test_json_round_trip(self):
        cfg = small(reading_model=ReadingModel("constant", 2, 2))
        assert SimConfig.from_json(json.loads(json.dumps(cfg.to_json()))) == cfg

    def test_schema_error(self):
        with pytest.raises(ConfigInvalid):
            SimConfig.from_json({"regions": [1], "bogus": 1})
        with pytest.raises(ConfigInvalid):
            SimConfig.from_json({"period_ticks": 1})


class TestRun:
    def test_constant_stream(self):
        cfg = SimConfig(regions=(1,), period_ticks=1, window_width=2, total_ticks=4, shard_count=1, key_bits=64,
                        seed=0, reading_model=ReadingModel("constant", 1, 1))
        run = run_simulation(cfg)
        assert run.ledger.sums == {(D11, 0): 2, (D11, 1): 2}
        assert decrypt_all(run) == {(D11, 0): 2, (D11, 1): 2}

    def test_routing_law(self):
        run = run_simulation(small())
        for d in run.state.config.devices:
            assert [w for (dev, w) in run.state.cloud.shards[0].records if dev == d] == [0]
            assert [w for (dev, w) in run.state.cloud.shards[1].records if dev == d] == [1]

    def test_ledger_oracle(self):
        run = run_simulation(small(seed=7, total_ticks=20))
        assert decrypt_all(run) == run.ledger.sums
        assert any(v < 0 for v in run.ledger.sums.values())

    def test_period_greater_than_one(self):
        run = run_simulation(small(period_ticks=2, window_width=6, total_ticks=18))
        assert all(c == 3 for c in run.ledger.counts.values())
        assert decrypt_all(run) == run.ledger.sums

    def test_metrics_accounting(self):
        cfg = small(total_ticks=20)
        run = run_simulation(cfg)
        m = run.metrics
        assert m.reports_emitted == sum(cfg.regions) * cfg.total_ticks // cfg.period_ticks == 80
        stored = [r for s in run.state.cloud.shards for r in s.records.values()]
        assert sum(r.report_count for r in stored) == m.reports_emitted
        assert sum(m.aggregates_stored.values()) == len(stored) == 16
        assert m.ops["encrypt"] == 80 and m.ops["add"] == 80 - 16 and m.ops["rerandomize"] == 16
        assert set(m.wall_time) == {"keygen", "stream"}

    def test_deterministic(self):
        a, b = run_simulation(small()), run_simulation(small())
        assert a.ledger == b.ledger
        assert [s.records for s in a.state.cloud.shards] == [s.records for s in b.state.cloud.shards]

    def test_parallel_matches_serial(self, tmp_path):
        a = run_simulation(small(), tmp_path / "a")
        b = run_simulation(small(parallel=True), tmp_path / "b")
        assert a.ledger == b.ledger
        for i in range(2):
            assert (tmp_path / "a/cloud" / f"shard-{i}.log").read_bytes() == (tmp_path / "b/cloud" / f"shard-{i}.log").read_bytes()
        assert verify(a.state, a.ledger).outcome() == verify(b.state, b.ledger).outcome()

    def test_seed_hierarchy(self):
        a = run_simulation(small(regions=(1,)))
        b = run_simulation(small(regions=(1, 3)))
        assert {k: v for k, v in b.ledger.sums.items() if k[0] == D11} == a.ledger.sums

    def test_external_keyring(self):
        cfg = small()
        ring = OwnerKeyring.generate(cfg.devices, 64, seed=99)
        run = run_simulation(cfg, keyring=ring)
        assert run.state.keyring is ring
        with pytest.raises(ConfigInvalid):
            run_simulation(small(regions=(3,)), keyring=ring)

    def test_rundir(self, tmp_path):
        run = run_simulation(small(), tmp_path)
        names = {p.name for p in tmp_path.iterdir()}
        assert names == {"cloud", "config.json", "directory.json", "keyring.json", "ledger.json", "metrics.json"}
        assert load_ledger(tmp_path / "ledger.json") == run.ledger
        cloud = load_cloud(tmp_path)
        assert [s.records for s in cloud.shards] == [s.records for s in run.state.cloud.shards]
        # re-running into the same directory starts clean
        run_simulation(small(), tmp_path)
        assert [len(s.records) for s in load_cloud(tmp_path).shards] == [4, 4]


class TestVerify:
    @pytest.fixture
    def run(self, tmp_path):
        return run_simulation(small(total_ticks=20), tmp_path)

    def test_honest(self, run):
        report = verify(run.state, run.ledger)
        assert report.ok
        counts = report.counts()
        assert counts["window_sum"]["pass"] == counts["gather"]["pass"] == counts["count"]["pass"] == 16
        assert counts["total"]["pass"] == counts["partition"]["pass"] == 4

    def test_single_corruption(self, run):
        corrupt_stored_ciphertext(run.state.cloud, DeviceIdentity(2, 1), 2)
        report = verify(run.state, run.ledger)
        assert [(c.kind, c.device, c.window) for c in report.failures] == [("window_sum", "R2-I1", 2)]
        skipped = [(c.kind, c.device) for c in report.checks if c.status == SKIP]
        assert skipped == [("total", "R2-I1")]

    def test_corruption_in_memory_shard(self):
        run = run_simulation(small(total_ticks=20))
        corrupt_stored_ciphertext(run.state.cloud, D11, 1)
        assert [(c.device, c.window) for c in verify(run.state, run.ledger).failures] == [("R1-I1", 1)]

    def test_dropped_shard(self, run, tmp_path):
        (tmp_path / "cloud" / "shard-1.log").unlink()
        cloud = load_cloud(tmp_path)
        report = verify((cloud, run.state.keyring), run.ledger)
        # routing law: shard 1 holds the odd windows of every device
        expected = sorted((d.id_number, w) for d in run.state.config.devices for w in (1, 3))
        assert sorted((c.device, c.window) for c in report.failures) == expected
        assert {c.kind for c in report.failures} == {"gather"}

    def test_tampered_count(self, run):
        shard = run.state.cloud.shards[0]
        key = next(iter(shard.records))
        old = shard.records[key]
        shard.records[key] = type(old)(old.device, old.window, old.ciphertext, old.report_count - 1, old.key_fingerprint)
        failures = verify(run.state, run.ledger).failures
        assert [(c.kind, c.device, c.window) for c in failures] == [("count", key[0].id_number, key[1])]

    def test_extra_record(self, run):
        ledger = ShadowLedger(run.ledger.window_width, dict(run.ledger.sums), dict(run.ledger.counts))
        del ledger.sums[(D11, 3)]
        del ledger.counts[(D11, 3)]
        failures = verify(run.state, ledger).failures
        assert [(c.kind, c.window) for c in failures] == [("gather", 3)]

    def test_partition_violation_detected(self, run):
        cloud = run.state.cloud
        # move every window of one device onto shard 0, bypassing routing
        for key in [k for k in cloud.shards[1].records if k[0] == D11]:
            cloud.shards[0].records[key] = cloud.shards[1].records.pop(key)
        failures = verify(run.state, run.ledger).failures
        assert [(c.kind, c.device) for c in failures] == [("partition", "R1-I1")]
        assert failures[0].status == FAIL
