# -*- coding: utf-8 -*-
'''
-------------------------------------------------------------------------------
 Seeded synthetic IoT capture.

 Benign: every device opens short HTTP-like TCP connections to one server
 (handshake, request, response, ack, FIN exchange) with idle gaps between
 them, and now and then sends a UDP telemetry datagram to a collector that
 never answers.

 Attacks, all from the first device:
   syn_flood   bursts of SYNs to the server from random source ports, no replies
   udp_flood   bursts of large UDP datagrams to random server ports
-------------------------------------------------------------------------------
'''
from dataclasses import asdict, dataclass
import os

import numpy as np

from pcapbd.config import FILENAME_ATTACK_PCAP, FILENAME_BENIGN_PCAP
from pcapbd.errors import ContractError
from pcapbd.logger import info, warning
from pcapbd.pcap_codec import TcpFlag, Trace, make_tcp_packet, make_udp_packet, write_trace

START_TS = 1_600_000_000 * 1_000_000

SERVER_IP = "10.0.0.2"
SERVER_PORT = 80
COLLECTOR_IP = "10.0.0.3"
COLLECTOR_PORT = 5683
GATEWAY_MAC = "02:00:00:00:00:01"
EPHEMERAL_FIRST = 32768
EPHEMERAL_LAST = 60999

ATTACK_TYPES = ("syn_flood", "udp_flood")


def device_ip(i):
    return f"192.168.1.{10 + i}"


def device_mac(i):
    return f"02:00:00:00:01:{10 + i:02x}"


@dataclass(frozen=True)
class CorpusConfig:
    '''
    Times in microseconds. Round-trip times and think times are kept well
    above burst * delay of the usual trigger settings so that trigger bursts
    of one connection never overlap.

    Floods come in short bursts with gaps below a tenth of the default
    trigger delay, so only the last packet of a burst has room for triggers.
    '''
    n_devices: int = 10
    duration: float = 600.0
    rtt_min: int = 5_000
    rtt_max: int = 20_000
    think_min: int = 8_000
    think_mean: int = 30_000
    idle_mean: int = 1_000_000
    telemetry_mean: int = 5_000_000
    attack_packets: int = 50_000
    burst_min: int = 3
    burst_max: int = 8
    burst_gap_min: int = 20
    burst_gap_max: int = 80
    burst_interval_mean: int = 1_000_000

    def __post_init__(self):
        if int(self.n_devices) < 1:
            raise ContractError(f"n_devices must be >= 1, got {self.n_devices}")
        if not self.duration > 0:
            raise ContractError(f"duration must be > 0 seconds, got {self.duration}")
        if not 0 < self.rtt_min <= self.rtt_max:
            raise ContractError("round-trip bounds must satisfy 0 < rtt_min <= rtt_max")
        if not 1 <= self.burst_min <= self.burst_max:
            raise ContractError("flood burst sizes must satisfy 1 <= burst_min <= burst_max")
        if not 0 < self.burst_gap_min <= self.burst_gap_max:
            raise ContractError("flood burst gaps must satisfy 0 < burst_gap_min <= burst_gap_max")

    def as_dict(self):
        return asdict(self)


class Device:
    '''
    Client-side state of one device: addresses, port counter and IP id.
    '''

    def __init__(self, index, rng):
        self.index = index
        self.ip = device_ip(index)
        self.mac = device_mac(index)
        self.rng = rng
        self.next_port = EPHEMERAL_FIRST
        self.ip_id = int(rng.integers(0, 0x10000))

    def identification(self):
        self.ip_id = (self.ip_id + 1) & 0xFFFF
        return self.ip_id

    def to_server(self, ts, port, seq, ack, flags, payload=b""):
        return make_tcp_packet(ts, self.mac, GATEWAY_MAC, self.ip, SERVER_IP, port, SERVER_PORT,
                               seq=seq, ack=ack, flags=flags, payload=payload,
                               identification=self.identification())

    def from_server(self, ts, port, seq, ack, flags, payload=b""):
        return make_tcp_packet(ts, GATEWAY_MAC, self.mac, SERVER_IP, self.ip, SERVER_PORT, port,
                               seq=seq, ack=ack, flags=flags, payload=payload, window=29200)

    def think(self, cfg):
        return cfg.think_min + int(self.rng.exponential(cfg.think_mean - cfg.think_min))

    def connection(self, t0, cfg):
        '''
        Packets of one request/response connection starting at t0 and the
        timestamp of its last packet.
        '''
        rng = self.rng
        port = self.next_port
        self.next_port += 1
        rtt = int(rng.integers(cfg.rtt_min, cfg.rtt_max + 1))
        half = rtt // 2
        c = int(rng.integers(0, 2**32))
        s = int(rng.integers(0, 2**32))
        request = rng.bytes(int(rng.integers(40, 201)))
        response = rng.bytes(int(rng.integers(200, 1201)))
        A, SA, PA, FA = TcpFlag.ACK, TcpFlag.SYN | TcpFlag.ACK, TcpFlag.PSH | TcpFlag.ACK, TcpFlag.FIN | TcpFlag.ACK

        packets = [
            self.to_server(t0, port, c, 0, TcpFlag.SYN),
            self.from_server(t0 + half, port, s, c + 1, SA),
            self.to_server(t0 + rtt, port, c + 1, s + 1, A),
        ]
        c += 1
        s += 1
        t1 = t0 + rtt + self.think(cfg)
        processing = int(rng.integers(500, 5_000))
        packets += [
            self.to_server(t1, port, c, s, PA, request),
            self.from_server(t1 + half + processing, port, s, c + len(request), PA, response),
            self.to_server(t1 + rtt + processing, port, c + len(request), s + len(response), A),
        ]
        c += len(request)
        s += len(response)
        t2 = t1 + rtt + processing + self.think(cfg)
        packets += [
            self.to_server(t2, port, c, s, FA),
            self.from_server(t2 + half, port, s, c + 1, FA),
            self.to_server(t2 + rtt, port, c + 1, s + 1, A),
        ]
        return packets, t2 + rtt

    def telemetry(self, start, end, cfg):
        packets = []
        t = start + int(self.rng.exponential(cfg.telemetry_mean))
        while t < end:
            payload = self.rng.bytes(int(self.rng.integers(20, 81)))
            packets.append(make_udp_packet(t, self.mac, GATEWAY_MAC, self.ip, COLLECTOR_IP,
                                           EPHEMERAL_LAST + 1 + self.index, COLLECTOR_PORT, payload,
                                           identification=self.identification()))
            t += 1 + int(self.rng.exponential(cfg.telemetry_mean))
        return packets

    def benign(self, start, end, cfg):
        packets = []
        t = start + int(self.rng.integers(0, cfg.idle_mean))
        while t < end:
            if self.next_port > EPHEMERAL_LAST:
                warning(f"Device {self.ip} ran out of ephemeral ports, stopping its traffic")
                break
            connection, last = self.connection(t, cfg)
            packets.extend(connection)
            t = last + cfg.think_min + int(self.rng.exponential(cfg.idle_mean))
        return packets + self.telemetry(start, end, cfg)


def flood_timestamps(rng, n, start, cfg):
    '''
    `n` timestamps in bursts: burst_min..burst_max packets with
    burst_gap_min..burst_gap_max microseconds between them. Bursts are
    separated by burst_gap_max plus an exponential pause of mean
    burst_interval_mean.
    '''
    timestamps = []
    t = start
    while len(timestamps) < n:
        t += cfg.burst_gap_max + 1 + int(rng.exponential(cfg.burst_interval_mean))
        size = int(rng.integers(cfg.burst_min, cfg.burst_max + 1))
        for k in range(min(size, n - len(timestamps))):
            if k:
                t += int(rng.integers(cfg.burst_gap_min, cfg.burst_gap_max + 1))
            timestamps.append(t)
    return np.array(timestamps, dtype=np.int64)


def syn_flood(rng, attacker, start, cfg):
    '''
    Bare SYNs from random source ports with random initial sequence numbers.
    '''
    timestamps = flood_timestamps(rng, cfg.attack_packets, start, cfg)
    ports = rng.integers(1024, 65536, size=cfg.attack_packets)
    seqs = rng.integers(0, 2**32, size=cfg.attack_packets)
    return [make_tcp_packet(int(ts), attacker.mac, GATEWAY_MAC, attacker.ip, SERVER_IP, int(port),
                            SERVER_PORT, seq=int(seq), flags=TcpFlag.SYN, window=1024,
                            identification=attacker.identification())
            for ts, port, seq in zip(timestamps, ports, seqs)]


def udp_flood(rng, attacker, start, cfg):
    '''
    Datagrams of 1000 to 1400 random bytes to random destination ports.
    '''
    timestamps = flood_timestamps(rng, cfg.attack_packets, start, cfg)
    srcPorts = rng.integers(1024, 65536, size=cfg.attack_packets)
    dstPorts = rng.integers(1, 65536, size=cfg.attack_packets)
    sizes = rng.integers(1000, 1401, size=cfg.attack_packets)
    return [make_udp_packet(int(ts), attacker.mac, GATEWAY_MAC, attacker.ip, SERVER_IP, int(sp), int(dp),
                            rng.bytes(int(size)), identification=attacker.identification())
            for ts, sp, dp, size in zip(timestamps, srcPorts, dstPorts, sizes)]


ATTACK_GENERATORS = {"syn_flood": syn_flood, "udp_flood": udp_flood}


def generate_synthetic_corpus(seed=0, n_devices=10, duration=600.0, cfg=None):
    '''
    Benign trace and attack traces by type, all deterministic per seed.

    Parameters
    ----------
    seed: int
    n_devices: int
       Devices 192.168.1.10 upwards; the first one is the attacker.
    duration: float
       Seconds of benign traffic.
    cfg: CorpusConfig
       Overrides n_devices and duration when given.

    Returns
    -------
    benign: Trace
    attacks: dict
       attack type -> Trace
    '''
    cfg = cfg or CorpusConfig(n_devices=n_devices, duration=duration)
    benignSeq, attackSeq = np.random.SeedSequence(int(seed)).spawn(2)
    deviceSeqs = benignSeq.spawn(cfg.n_devices)
    end = START_TS + int(cfg.duration * 1_000_000)

    packets = []
    for i, deviceSeq in enumerate(deviceSeqs):
        packets.extend(Device(i, np.random.default_rng(deviceSeq)).benign(START_TS, end, cfg))
    benign = Trace(packets).sorted()

    attacks = {name: generate_attack_trace(name, attackSeqChild, cfg)
               for name, attackSeqChild in zip(ATTACK_TYPES, attackSeq.spawn(len(ATTACK_TYPES)))}
    info(f"Synthetic corpus: {len(benign)} benign packets from {cfg.n_devices} devices, "
         + ", ".join(f"{len(t)} {name}" for name, t in attacks.items()))
    return benign, attacks


def generate_attack_trace(name, seed, cfg=None):
    '''
    One attack trace from the attacker device. `seed` is an int or a
    numpy SeedSequence.
    '''
    if name not in ATTACK_GENERATORS:
        raise ContractError(f"unknown attack type '{name}', expected one of {ATTACK_TYPES}")
    cfg = cfg or CorpusConfig()
    rng = np.random.default_rng(seed)
    attacker = Device(0, rng)
    return Trace(ATTACK_GENERATORS[name](rng, attacker, START_TS, cfg))


def attacker_ip():
    return device_ip(0)


def write_corpus(benign, attacks, outdir):
    '''
    benign.pcap and <attack>.pcap per attack type into `outdir`.
    '''
    os.makedirs(outdir, exist_ok=True)
    paths = {"benign": os.path.join(outdir, FILENAME_BENIGN_PCAP)}
    write_trace(benign, paths["benign"])
    for name, trace in attacks.items():
        paths[name] = os.path.join(outdir, FILENAME_ATTACK_PCAP.format(attack=name))
        write_trace(trace, paths[name])
    return paths
