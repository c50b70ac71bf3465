from __future__ import annotations

import os

import pytest

from overlayroute.engine import (SimConfig, arrivals_for_rate, make_streams, rows_to_csv, run_simulation,
                                 sweep_arrival_rate, write_run)
from overlayroute.network import Deterministic
from overlayroute.scenario import bundled_scenario


@pytest.fixture(scope="module")
def fig5():
    return bundled_scenario("fig5").spec


def test_zero_arrivals_give_zero_metrics(fig5):
    spec = fig5.with_arrivals({"f1": Deterministic(0), "f2": Deterministic(0)})
    log = run_simulation(spec, SimConfig(horizon=2000), "random-split")
    assert log.avg_queue() == 0
    assert log.avg_delay() == 0
    assert sum(log.delivered) == 0


def test_same_seed_same_bytes(fig5):
    cfg = SimConfig(horizon=3000, seed=4)
    a = run_simulation(fig5, cfg, {"id": "poc", "total_budget": 5.0})
    b = run_simulation(fig5, cfg, {"id": "poc", "total_budget": 5.0})
    assert a.timeseries_csv() == b.timeseries_csv()
    assert a.summary_csv() == b.summary_csv()
    c = run_simulation(fig5, SimConfig(horizon=3000, seed=5), {"id": "poc", "total_budget": 5.0})
    assert c.timeseries_csv() != a.timeseries_csv()


def test_streams_are_independent_per_purpose():
    s = make_streams(0)
    draws = {k: r.random() for k, r in s.items()}
    assert len(set(draws.values())) == len(draws)
    assert make_streams(0)["arrivals"].random() == draws["arrivals"]
    assert make_streams(0, run=1)["arrivals"].random() != draws["arrivals"]


def test_little_law_on_a_loss_free_run(fig5):
    spec = fig5.with_arrivals({f.id: arrivals_for_rate(0.5) for f in fig5.flows})
    log = run_simulation(spec, SimConfig(horizon=100_000, seed=1), "random-split")
    for row in log.little_check():
        assert row["applicable"]
        assert row["rel_error"] < 0.05


def test_throughput_matches_offered_load(fig5):
    spec = fig5.with_arrivals({f.id: arrivals_for_rate(0.5) for f in fig5.flows})
    log = run_simulation(spec, SimConfig(horizon=50_000, seed=2), "random-split")
    assert sum(log.throughput()) == pytest.approx(1.0, rel=0.03)


def test_sweep_rows(fig5):
    rows = sweep_arrival_rate(fig5, SimConfig(horizon=2000), "random-split", [0.0, 0.4])
    assert [r["rate"] for r in rows] == [0.0, 0.4]
    assert rows[0]["avg_delay"] == 0.0 and rows[0]["throughput"] == 0.0
    assert rows[1]["avg_delay"] > 0
    text = rows_to_csv(rows, ["rate", "avg_delay"])
    assert text.splitlines()[0] == "rate,avg_delay"


def test_sweep_with_workers_matches_serial(fig5):
    cfg = SimConfig(horizon=1500, seed=3)
    assert sweep_arrival_rate(fig5, cfg, "random-split", [0.3, 0.6], workers=2) == \
        sweep_arrival_rate(fig5, cfg, "random-split", [0.3, 0.6])


def test_arrivals_for_rate():
    assert arrivals_for_rate(0.6).mean == pytest.approx(0.6)
    assert arrivals_for_rate(0).mean == 0
    with pytest.raises(ValueError):
        arrivals_for_rate(2.5)


def test_config_checks():
    assert SimConfig(horizon=1000).warmup == 100
    with pytest.raises(ValueError):
        SimConfig(horizon=0)
    with pytest.raises(ValueError):
        SimConfig(horizon=10, warmup=10)
    with pytest.raises(ValueError):
        SimConfig(horizon=10, underlay_policy="fair")


def test_invalid_network_is_refused(fig5):
    from conftest import two_flow_shared_spec
    with pytest.raises(ValueError, match="invalid network"):
        run_simulation(two_flow_shared_spec(mu=(0.7, 0.7)), SimConfig(horizon=10))


def test_write_run(tmp_path, fig5):
    log = run_simulation(fig5, SimConfig(horizon=1000), {"id": "poc", "total_budget": 5.0})
    files = write_run(log, str(tmp_path), {"scenario": "fig5"})
    assert set(files) == {"timeseries.csv", "links.csv", "summary.csv", "qtable_f1.csv", "qtable_f2.csv",
                          "controller_state.json", "manifest.json"}
    assert all(os.path.getsize(tmp_path / f) > 0 for f in files)
    header = (tmp_path / "timeseries.csv").read_text().splitlines()[0]
    assert header.startswith("t,")


def test_single_queue_long_run_matches_chain():
    from conftest import single_queue_spec
    from overlayroute.network import Bernoulli
    from test_oracle import birth_death_mean
    spec = single_queue_spec(arrivals=Bernoulli(1, 0.5), capacity=Deterministic(1), buffer_cap=10)
    log = run_simulation(spec, SimConfig(horizon=1_000_000, seed=0, stride=10_000), "random-split")
    assert log.avg_link_queue()[0] == pytest.approx(birth_death_mean(0.5, 1.0, 10), rel=0.05)


@pytest.fixture(scope="module")
def fig2():
    return bundled_scenario("fig2")


def test_fixed_split_queue_grows_with_rate(fig2):
    rates = [round(0.1 * k, 1) for k in range(1, 10)]
    rows = sweep_arrival_rate(fig2.spec, SimConfig(horizon=30_000, seed=0), "fixed-split", rates)
    q = [r["avg_queue"] for r in rows]
    assert all(a <= b for a, b in zip(q, q[1:]))


def test_full_load_fills_buffers(fig2):
    """At one packet per slot per flow the ingress links run at critical
    load: their queues wander over the whole buffer and overflow."""
    spec = fig2.spec.with_arrivals({f.id: arrivals_for_rate(1.0) for f in fig2.spec.flows})
    log = run_simulation(spec, SimConfig(horizon=50_000, seed=0), "random-split")
    avg = dict(zip(log.link_ids, log.avg_link_queue()))
    ingress = [avg[l] for l in ("1-5", "1-10", "2-8", "2-11")]
    assert min(ingress) >= 0.4 * spec.buffer_cap
    assert min(log.dropped) > 0
