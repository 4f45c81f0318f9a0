from conftest import T0, handshake_conversation, tcp
from pcapbd.pcap_codec import TcpFlag, Trace
from pcapbd.stealth_auditor import (WarningKind, audit, audit_delta, injected_indices, read_findings,
                                    write_findings)
from pcapbd.trigger_injector import TriggerConfig, generate_backdoor, strawman_inject

REQUEST = b"GET / HTTP/1.1\r\n\r\n"


def kinds(findings):
    return [f.kind for f in findings]


def established(c=1000, s=5000):
    '''Handshake plus one request, everything acknowledged.'''
    return handshake_conversation(c=c, s=s)[:4]


def test_clean_conversation_has_no_findings(conversation_trace, mixed_trace):
    assert audit(conversation_trace) == []
    assert audit(mixed_trace) == []


def test_syn_rst_syn_is_not_port_reuse():
    packets = [
        tcp(T0, 100, 0, TcpFlag.SYN),
        tcp(T0 + 1, 101, 0, TcpFlag.RST, forward=False),
        tcp(T0 + 1000, 900, 0, TcpFlag.SYN),
    ]
    assert audit(Trace(packets)) == []


def test_second_syn_on_open_conversation():
    packets = established() + [tcp(T0 + 200_000, 777_777, 0, TcpFlag.SYN)]
    assert kinds(audit(Trace(packets))) == [WarningKind.PORT_NUMBER_REUSED]


def test_syn_retransmission_is_silent():
    packets = [tcp(T0, 100, 0, TcpFlag.SYN), tcp(T0 + 1_000_000, 100, 0, TcpFlag.SYN)]
    assert audit(Trace(packets)) == []


def test_ack_beyond_peer_data():
    c, s = 1000, 5000
    packets = established(c, s) + [tcp(T0 + 200_000, c + 1 + len(REQUEST), s + 5001, TcpFlag.ACK)]
    findings = audit(Trace(packets))
    assert kinds(findings) == [WarningKind.ACKED_UNSEEN_SEGMENT]
    assert findings[0].index == len(packets) - 1


def test_ack_without_seen_peer_is_not_checked():
    packets = [tcp(T0, 1, 123_456, TcpFlag.PSH | TcpFlag.ACK, b"mid-stream")]
    assert audit(Trace(packets)) == []


def test_retransmitted_data():
    packets = established()
    packets.append(tcp(T0 + 500_000, packets[3].transport.seq, packets[3].transport.ack,
                       TcpFlag.PSH | TcpFlag.ACK, REQUEST))
    assert kinds(audit(Trace(packets))) == [WarningKind.SPURIOUS_RETRANSMISSION]


def test_out_of_order_data():
    c, s = 1000, 5000
    nxt = c + 1 + len(REQUEST)
    packets = established(c, s) + [
        # a segment after a 10-byte hole, then a partly new one filling it
        tcp(T0 + 100_000, nxt + 10, s + 1, TcpFlag.PSH | TcpFlag.ACK, b"later"),
        tcp(T0 + 120_000, nxt, s + 1, TcpFlag.PSH | TcpFlag.ACK, b"0123456789abc"),
    ]
    assert kinds(audit(Trace(packets))) == [WarningKind.OUT_OF_ORDER]


def test_udp_is_ignored(mixed_trace):
    udpOnly = Trace([p for p in mixed_trace if p.is_udp])
    assert audit(udpOnly) == []


def test_strawman_is_detected(conversation_trace):
    cfg = TriggerConfig(ratio=1.0, burst=2, seed=3)
    poisoned, _ = strawman_inject(conversation_trace, cfg)
    delta = audit_delta(conversation_trace, poisoned)
    assert len(delta) >= 1
    assert WarningKind.SPURIOUS_RETRANSMISSION in kinds(delta)


def test_injected_indices_multiset(conversation_trace):
    cfg = TriggerConfig(ratio=1.0, burst=1)
    poisoned, report = strawman_inject(conversation_trace, cfg)
    assert len(injected_indices(conversation_trace, poisoned)) == report.packets_injected
    assert injected_indices(conversation_trace, conversation_trace) == []


def test_backdoor_injection_adds_no_findings(small_corpus):
    benign, _ = small_corpus
    for burst, delay in ((1, 1000), (3, 1000), (5, 100)):
        cfg = TriggerConfig(burst=burst, delay=delay, ratio=0.2, seed=burst)
        poisoned, report = generate_backdoor(benign, cfg)
        assert report.packets_injected > 0
        assert audit_delta(benign, poisoned) == []


def test_audit_same_trace_has_empty_delta(small_corpus):
    benign, _ = small_corpus
    assert audit_delta(benign, benign) == []


def test_findings_file(tmp_path):
    packets = established() + [tcp(T0 + 200_000, 777_777, 0, TcpFlag.SYN),
                               tcp(T0 + 300_000, 5, 9_999_999, TcpFlag.ACK, forward=False)]
    findings = audit(Trace(packets))
    path = tmp_path / "findings.tsv"
    write_findings(findings, path)
    loaded = read_findings(path)
    assert [(f.index, f.kind, f.detail) for f in loaded] == [(f.index, f.kind, f.detail) for f in findings]
