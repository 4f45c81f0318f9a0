import numpy as np
import pytest

from pcapbd.pcap_codec import TcpFlag, Trace, make_tcp_packet, make_udp_packet
from pcapbd.synthetic import CorpusConfig, generate_synthetic_corpus

MAC_A = "02:00:00:00:00:0a"
MAC_B = "02:00:00:00:00:0b"
IP_A = "192.168.1.10"
IP_B = "10.0.0.2"
T0 = 1_600_000_000_000_000


def tcp(ts, seq, ack, flags, payload=b"", forward=True, sport=40000, dport=80):
    '''Packet of the A:sport <-> B:dport conversation.'''
    if forward:
        return make_tcp_packet(ts, MAC_A, MAC_B, IP_A, IP_B, sport, dport, seq=seq, ack=ack, flags=flags,
                               payload=payload)
    return make_tcp_packet(ts, MAC_B, MAC_A, IP_B, IP_A, dport, sport, seq=seq, ack=ack, flags=flags,
                           payload=payload)


def udp(ts, payload=b"x" * 20, forward=True, sport=50000, dport=5683):
    if forward:
        return make_udp_packet(ts, MAC_A, MAC_B, IP_A, IP_B, sport, dport, payload)
    return make_udp_packet(ts, MAC_B, MAC_A, IP_B, IP_A, dport, sport, payload)


def handshake_conversation(t=T0, c=1000, s=5000, request=b"GET / HTTP/1.1\r\n\r\n", response=b"HTTP/1.1 200 OK\r\n\r\n"):
    '''A complete request/response TCP conversation, 20 ms between packets.'''
    A, PA, FA = TcpFlag.ACK, TcpFlag.PSH | TcpFlag.ACK, TcpFlag.FIN | TcpFlag.ACK
    lq, lr = len(request), len(response)
    return [
        tcp(t, c, 0, TcpFlag.SYN),
        tcp(t + 20_000, s, c + 1, TcpFlag.SYN | TcpFlag.ACK, forward=False),
        tcp(t + 40_000, c + 1, s + 1, A),
        tcp(t + 60_000, c + 1, s + 1, PA, request),
        tcp(t + 80_000, s + 1, c + 1 + lq, PA, response, forward=False),
        tcp(t + 100_000, c + 1 + lq, s + 1 + lr, A),
        tcp(t + 120_000, c + 1 + lq, s + 1 + lr, FA),
        tcp(t + 140_000, s + 1 + lr, c + 2 + lq, FA, forward=False),
        tcp(t + 160_000, c + 2 + lq, s + 2 + lr, A),
    ]


@pytest.fixture
def conversation_trace():
    return Trace(handshake_conversation())


@pytest.fixture
def mixed_trace():
    '''Two TCP conversations and UDP telemetry interleaved.'''
    packets = handshake_conversation()
    packets += [tcp(p.ts + 7_000, p.transport.seq, p.transport.ack, p.transport.flags, p.payload,
                    forward=p.ip.src == IP_A, sport=40001)
                for p in handshake_conversation(c=77, s=99)]
    packets += [udp(T0 + 3_000 + 50_000 * k) for k in range(4)]
    return Trace(packets).sorted()


@pytest.fixture
def random_trace_factory():
    '''
    Random two-host traces with random sizes and gaps, for property tests.
    '''
    def factory(seed, n=200, mean_gap=20_000, tcp_share=0.7):
        rng = np.random.default_rng(seed)
        packets = []
        t = T0
        for _ in range(n):
            t += 1 + int(rng.exponential(mean_gap))
            forward = bool(rng.random() < 0.5)
            payload = bytes(int(rng.integers(0, 1400)))
            sport = int(rng.integers(40000, 40004))
            if rng.random() < tcp_share:
                packets.append(tcp(t, int(rng.integers(0, 2**32)), int(rng.integers(0, 2**32)), TcpFlag.ACK,
                                   payload, forward=forward, sport=sport))
            else:
                packets.append(udp(t, payload, forward=forward, sport=sport))
        return Trace(packets)
    return factory


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(seed=7, cfg=CorpusConfig(n_devices=3, duration=30.0, attack_packets=2_000))
