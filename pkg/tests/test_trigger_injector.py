from collections import Counter

import pytest
from scipy.stats import binom

from conftest import IP_A, IP_B, T0, tcp, udp
from pcapbd.errors import ContractError
from pcapbd.flow_features import all_columns, extract
from pcapbd.pcap_codec import TcpFlag, Trace, checksums_valid
from pcapbd.trigger_injector import (PRESERVE_LENGTH, TriggerConfig, craft_pair, craft_uni, draw_selection,
                                     find_bidirectional_partner, generate_backdoor, is_bidirectional,
                                     read_injection_report, resize_payload, spawn_generators, strawman_inject,
                                     write_injection_report)


def is_trigger(packet, cfg):
    return packet.ip is not None and cfg.dst_ip in (packet.ip.src, packet.ip.dst)


def brute_force_partner(trace, i, bt):
    anchor = trace[i]
    matches = [j for j in range(len(trace)) if j > i and trace[j].ts - anchor.ts <= bt
               and trace[j].ip.src == anchor.ip.dst and trace[j].ip.dst == anchor.ip.src]
    return matches[0] if matches else None


def test_config_contract():
    with pytest.raises(ContractError):
        TriggerConfig(burst=0)
    with pytest.raises(ContractError):
        TriggerConfig(delay=0)
    with pytest.raises(ContractError):
        TriggerConfig(ratio=1.5)
    with pytest.raises(ContractError):
        TriggerConfig(trigger_len=-2)
    with pytest.raises(ContractError):
        TriggerConfig(port_mode="shuffle")
    with pytest.raises(ContractError):
        TriggerConfig(dst_ip="300.1.1.1")
    assert TriggerConfig(trigger_len=PRESERVE_LENGTH).trigger_len == PRESERVE_LENGTH


def test_burst_count_is_capped_by_gap():
    for burst in (1, 3, 5):
        for delay in (100, 1000, 7):
            for td in (0, 1, 99, 100, 999, 1000, 2500, 3001, 10_000):
                packets = [udp(T0), tcp(T0 + td, 1, 0, TcpFlag.ACK, forward=True)]
                cfg = TriggerConfig(burst=burst, delay=delay, ratio=1.0, bt_window=1)
                poisoned, report = generate_backdoor(Trace(packets), cfg)
                first = report.records[0]
                assert first.mode == "uni"
                assert first.count == min(burst, td // delay)


def test_bidirectional_predicate_matches_brute_force(random_trace_factory):
    for seed in range(1000):
        trace = random_trace_factory(seed, n=12, mean_gap=30_000)
        for i in range(len(trace)):
            assert find_bidirectional_partner(trace, i, 50_000) == brute_force_partner(trace, i, 50_000)


def test_ratio_zero_is_identity(mixed_trace):
    poisoned, report = generate_backdoor(mixed_trace, TriggerConfig(ratio=0.0))
    assert [p.raw for p in poisoned] == [p.raw for p in mixed_trace]
    assert report.points_selected == 0
    assert report.points_considered == len(mixed_trace)


def test_ratio_one_selects_every_eligible_packet(mixed_trace):
    poisoned, report = generate_backdoor(mixed_trace, TriggerConfig(ratio=1.0))
    assert report.points_selected == report.points_considered == len(mixed_trace)
    assert len(poisoned) == len(mixed_trace) + report.packets_injected


def test_injection_is_deterministic(random_trace_factory):
    trace = random_trace_factory(11, n=300)
    cfg = TriggerConfig(ratio=0.3, seed=42)
    first, firstReport = generate_backdoor(trace, cfg)
    second, secondReport = generate_backdoor(trace, cfg)
    assert [p.raw for p in first] == [p.raw for p in second]
    assert firstReport == secondReport
    other, _ = generate_backdoor(trace, TriggerConfig(ratio=0.3, seed=43))
    assert [p.raw for p in other] != [p.raw for p in first]


def test_output_invariants(random_trace_factory):
    trace = random_trace_factory(5, n=400, mean_gap=5_000)
    cfg = TriggerConfig(ratio=0.5, burst=3, delay=1000, bt_window=20_000, seed=9)
    poisoned, report = generate_backdoor(trace, cfg)
    assert poisoned.is_sorted()
    assert len(poisoned) == len(trace) + report.packets_injected
    triggers = [p for p in poisoned if is_trigger(p, cfg)]
    assert len(triggers) == report.packets_injected
    originals = Counter(p.raw for p in trace)
    kept = Counter(p.raw for p in poisoned if not is_trigger(p, cfg))
    assert kept == originals
    for trigger in triggers:
        assert checksums_valid(trigger)
        assert len(trigger.payload) == cfg.trigger_len
        if trigger.ip.dst == cfg.dst_ip:
            assert trigger.dst_mac == cfg.dst_mac


def test_uni_triggers_fit_before_next_packet(random_trace_factory):
    trace = random_trace_factory(6, n=300, mean_gap=3_000)
    cfg = TriggerConfig(ratio=1.0, burst=5, delay=1000, bt_window=1, seed=1)
    _, report = generate_backdoor(trace, cfg)
    for record in report.records:
        if record.mode == "uni" and record.index + 1 < len(trace):
            td = trace[record.index + 1].ts - trace[record.index].ts
            assert record.count * cfg.delay <= td


def test_last_packet_gets_no_uni_burst():
    trace = Trace([udp(T0)])
    poisoned, report = generate_backdoor(trace, TriggerConfig(ratio=1.0))
    assert len(poisoned) == 1
    assert report.records[0].count == 0


def test_pair_structure():
    anchor = tcp(T0, 100, 0, TcpFlag.SYN)
    reply = tcp(T0 + 10_000, 500, 101, TcpFlag.SYN | TcpFlag.ACK, forward=False)
    cfg = TriggerConfig(ratio=1.0, burst=3, delay=1000, bt_window=100_000)
    poisoned, report = generate_backdoor(Trace([anchor, reply]), cfg)
    assert report.bidi_pairs_injected == 3
    txs = sorted((p for p in poisoned if p.ip.dst == cfg.dst_ip), key=lambda p: p.ts)
    rxs = sorted((p for p in poisoned if p.ip.src == cfg.dst_ip), key=lambda p: p.ts)
    assert len(txs) == len(rxs) == 3
    for k, (tx, rx) in enumerate(zip(txs, rxs), start=1):
        assert tx.ts == T0 + k * cfg.delay
        assert rx.ts == tx.ts + 1
        assert tx.transport.flags == TcpFlag.SYN
        assert rx.transport.flags == TcpFlag.RST
        assert rx.transport.seq == (tx.transport.seq + 1) & 0xFFFFFFFF
        assert tx.ip.src == IP_A and rx.ip.dst == IP_A
        assert (rx.src_port, rx.dst_port) == (tx.dst_port, tx.src_port)
        assert (rx.src_mac, rx.dst_mac) == (tx.dst_mac, tx.src_mac)


def test_udp_pair_keeps_headers():
    anchor = udp(T0, b"req")
    reply = udp(T0 + 5_000, b"resp", forward=False)
    cfg = TriggerConfig(trigger_len=10)
    tx, rx = craft_pair(anchor, reply, cfg, 2)
    assert tx.ts == T0 + 2000 and rx.ts == T0 + 2001
    assert tx.payload == b"req" + bytes(7)
    assert rx.payload == b"resp" + bytes(6)
    assert rx.ip.src == cfg.dst_ip and rx.ip.dst == IP_A
    assert checksums_valid(tx) and checksums_valid(rx)


def test_uni_copies_continue_the_byte_stream():
    anchor = tcp(T0, 1000, 77, TcpFlag.PSH | TcpFlag.ACK, b"abcd")
    cfg = TriggerConfig(trigger_len=10)
    streams = {}
    first = craft_uni(anchor, 2, cfg, streams=streams)
    second = craft_uni(anchor, 1, cfg, streams=streams)
    assert [p.transport.seq for p in first + second] == [1000, 1010, 1020]
    assert all(p.transport.ack == 77 for p in first)
    assert [p.ts for p in first] == [T0 + 1000, T0 + 2000]
    assert all(p.ip.dst == cfg.dst_ip and p.ip.src == IP_A for p in first)


def test_preserve_length_keeps_template_payload():
    anchor = tcp(T0, 1, 0, TcpFlag.ACK, b"x" * 33)
    cfg = TriggerConfig(trigger_len=PRESERVE_LENGTH)
    assert [len(p.payload) for p in craft_uni(anchor, 3, cfg)] == [33, 33, 33]


def test_port_randomize_draws_ephemeral_source():
    anchor = tcp(T0, 1, 0, TcpFlag.ACK)
    keep = craft_uni(anchor, 1, TriggerConfig())[0]
    assert (keep.src_port, keep.dst_port) == (40000, 80)
    rand = craft_uni(anchor, 1, TriggerConfig(port_mode="randomize", seed=3))[0]
    assert 49152 <= rand.src_port <= 65535
    assert 1024 <= rand.dst_port <= 65535


def test_src_allow_restricts_anchors(mixed_trace):
    cfg = TriggerConfig(ratio=1.0, src_allow=(IP_B,))
    _, report = generate_backdoor(mixed_trace, cfg)
    assert report.points_considered == sum(p.ip.src == IP_B for p in mixed_trace)


def test_strawman_copies_stay_in_conversation(conversation_trace):
    cfg = TriggerConfig(ratio=1.0, burst=2)
    poisoned, report = strawman_inject(conversation_trace, cfg)
    assert report.uni_packets_injected == 2 * len(conversation_trace)
    assert all(p.ip.dst in (IP_A, IP_B) for p in poisoned)


def test_injection_report_file(tmp_path, mixed_trace):
    cfg = TriggerConfig(ratio=0.5, seed=4)
    _, report = generate_backdoor(mixed_trace, cfg)
    path = tmp_path / "report.ini"
    write_injection_report(report, path, cfg)
    assert read_injection_report(path) == report


def unidirectional_trace(n, gap):
    return Trace([udp(T0 + k * gap, bytes(40)) for k in range(n)])


def test_selected_count_follows_the_ratio():
    trace = unidirectional_trace(1000, 5_000)
    cfg = TriggerConfig(ratio=0.2, burst=1, seed=17)
    _, report = generate_backdoor(trace, cfg)
    lo, hi = binom.interval(0.999, 1000, 0.2)
    assert lo <= report.points_selected <= hi

    selectRng, _ = spawn_generators(cfg.seed)
    expected = [i for i in range(len(trace)) if draw_selection(selectRng) <= cfg.ratio]
    assert [r.index for r in report.records] == expected


def test_one_trigger_per_packet_with_room():
    n = 50
    packets = unidirectional_trace(n, 5_000).packets + [udp(T0 + n * 5_000, forward=False)]
    cfg = TriggerConfig(ratio=1.0, burst=1, delay=1000, bt_window=1, src_allow=(IP_A,))
    poisoned, report = generate_backdoor(Trace(packets), cfg)
    assert report.points_considered == n
    assert report.uni_packets_injected == n
    assert report.bidi_pairs_injected == 0
    assert len(poisoned) == n + 1 + n


def test_bidirectional_window_boundary():
    bt = 100_000
    for gap, expected in ((bt, True), (bt + 1, False)):
        trace = Trace([udp(T0), udp(T0 + gap, forward=False)])
        assert is_bidirectional(trace, 0, bt) is expected
    assert not is_bidirectional(Trace([udp(T0), udp(T0 + 10)]), 0, bt)


def test_full_burst_ends_on_next_packet():
    cfg = TriggerConfig(ratio=1.0, burst=2, delay=1000, bt_window=1)
    anchor = udp(T0, b"a")
    following = tcp(T0 + 2 * cfg.delay, 1, 0, TcpFlag.ACK)
    poisoned, report = generate_backdoor(Trace([anchor, following]), cfg)
    assert report.records[0].count == 2
    assert [p.ts for p in poisoned] == [T0, T0 + 1000, T0 + 2000, T0 + 2000]
    assert poisoned[2].ip.dst == cfg.dst_ip
    assert poisoned[3].raw == following.raw


def test_payload_resize():
    assert resize_payload(bytes(range(100)), 10) == bytes(range(10))
    assert resize_payload(b"ab", 5) == b"ab\x00\x00\x00"
    assert resize_payload(b"abc", PRESERVE_LENGTH) == b"abc"


def test_burst_raises_source_weight_of_next_packet():
    clean = unidirectional_trace(30, 10_000)
    cfg = TriggerConfig(ratio=1.0, burst=3, delay=1000, bt_window=1)
    poisoned, report = generate_backdoor(clean, cfg)
    assert all(r.count == 3 for r in report.records[:-1])

    weights = [i for i, c in enumerate(all_columns()) if c.startswith("srcIp_weight_")]
    before = [v.values[weights] for v in extract(clean)]
    after = [v.values[weights] for v, p in zip(extract(poisoned), poisoned) if not is_trigger(p, cfg)]
    assert len(after) == len(before)
    for k in range(1, len(before)):
        assert (after[k] > before[k]).all()
