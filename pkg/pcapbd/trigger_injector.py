# -*- coding: utf-8 -*-
'''
-------------------------------------------------------------------------------
 Backdoor trigger injection into a clean trace.

 Every eligible packet (IPv4 with TCP or UDP, optionally restricted to an
 attacker-device allowlist) is an injection anchor with probability R. A
 selected anchor with a reply inside the BT window gets B SYN/RST pairs, any
 other anchor gets up to B unidirectional copies that all fit before the next
 packet of the trace. Triggers keep the anchor's source and ports and go to the
 attacker's fixed destination IP/MAC.

 Selection and crafting draw from two independent generators spawned from the
 configured seed, so the selection sequence only depends on the seed and the
 number of eligible packets.
-------------------------------------------------------------------------------
'''
import configparser
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from pcapbd.errors import ContractError
from pcapbd.logger import info
from pcapbd.pcap_codec import (TcpFlag, TcpHeader, Trace, UdpHeader, fix_packet, ip_to_bytes,
                               mac_to_bytes, strip_options)

# trigger_len value meaning "keep the template's payload length"
PRESERVE_LENGTH = -1
PORT_MODES = ("keep", "randomize")

SEQ_MASK = 0xFFFFFFFF
SQN_HIGH = 2**32
EPHEMERAL_PORTS = (49152, 65536)
SERVICE_PORTS = (1024, 65536)


@dataclass(frozen=True)
class TriggerConfig:
    '''
    burst       B, trigger packets (or pairs) per injection point
    delay       D, microseconds between consecutive triggers
    ratio       R, probability that an eligible packet becomes an anchor
    bt_window   BT, microseconds to look ahead for a reply
    trigger_len L, payload bytes of every trigger, PRESERVE_LENGTH keeps the template's
    '''
    burst: int = 3
    delay: int = 1000
    ratio: float = 0.2
    bt_window: int = 100_000
    trigger_len: int = 60
    dst_ip: str = "203.0.113.66"
    dst_mac: str = "02:00:5e:00:53:42"
    seed: int = 0
    src_allow: Optional[Tuple[str, ...]] = None
    port_mode: str = "keep"

    def __post_init__(self):
        if int(self.burst) < 1:
            raise ContractError(f"burst must be >= 1, got {self.burst}")
        if int(self.delay) <= 0:
            raise ContractError(f"delay must be > 0 microseconds, got {self.delay}")
        if not 0.0 <= float(self.ratio) <= 1.0:
            raise ContractError(f"ratio must be in [0, 1], got {self.ratio}")
        if int(self.bt_window) <= 0:
            raise ContractError(f"bt_window must be > 0 microseconds, got {self.bt_window}")
        if int(self.trigger_len) < 0 and int(self.trigger_len) != PRESERVE_LENGTH:
            raise ContractError(f"trigger_len must be >= 0 or {PRESERVE_LENGTH}, got {self.trigger_len}")
        if self.port_mode not in PORT_MODES:
            raise ContractError(f"port_mode must be one of {PORT_MODES}, got {self.port_mode}")
        if not 0 <= int(self.seed) < 2**64:
            raise ContractError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        ip_to_bytes(self.dst_ip)
        mac_to_bytes(self.dst_mac)
        if self.src_allow is not None:
            object.__setattr__(self, "src_allow", tuple(self.src_allow))
            for ip in self.src_allow:
                ip_to_bytes(ip)

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class InjectionRecord:
    index: int
    mode: str
    count: int
    partner: Optional[int] = None


@dataclass
class InjectionReport:
    points_considered: int = 0
    points_selected: int = 0
    uni_packets_injected: int = 0
    bidi_pairs_injected: int = 0
    records: List[InjectionRecord] = field(default_factory=list)

    @property
    def packets_injected(self):
        return self.uni_packets_injected + 2 * self.bidi_pairs_injected

    def summary_dict(self):
        return {
            "points_considered": self.points_considered,
            "points_selected": self.points_selected,
            "uni_packets_injected": self.uni_packets_injected,
            "bidi_pairs_injected": self.bidi_pairs_injected,
            "packets_injected": self.packets_injected,
        }


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# HELPER
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def spawn_generators(seed):
    '''
    (selection generator, crafting generator) for a seed.
    '''
    selectSeq, craftSeq = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.default_rng(selectSeq), np.random.default_rng(craftSeq)


def draw_selection(rng):
    '''
    One draw a from (0, 1]; the anchor is taken when a <= R, so R = 0 never
    and R = 1 always selects.
    '''
    return 1.0 - rng.random()


def resize_payload(payload, length):
    '''
    Trim or zero-pad `payload` to `length` bytes.
    '''
    if length == PRESERVE_LENGTH:
        return payload
    return payload[:length] + b"\x00" * max(0, length - len(payload))


def draw_ports(rng):
    srcPort = int(rng.integers(*EPHEMERAL_PORTS))
    dstPort = int(rng.integers(*SERVICE_PORTS))
    return srcPort, dstPort


def sequence_space(flags, payloadLength):
    '''Sequence numbers a TCP segment consumes.'''
    return payloadLength + (1 if flags & TcpFlag.SYN else 0) + (1 if flags & TcpFlag.FIN else 0)


def is_anchor_candidate(packet, allow):
    if not packet.is_eligible:
        return False
    return allow is None or packet.ip.src in allow


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# ALGORITHM
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def find_bidirectional_partner(trace, i, bt_window):
    '''
    Index of the first later packet within `bt_window` microseconds whose
    source/destination IPs are those of packet i swapped, else None.
    '''
    packets = trace.packets
    anchor = packets[i]
    if anchor.ip is None:
        return None
    for j in range(i + 1, len(packets)):
        candidate = packets[j]
        if candidate.ts - anchor.ts > bt_window:
            break
        if candidate.ip is not None and candidate.ip.src == anchor.ip.dst and candidate.ip.dst == anchor.ip.src:
            return j
    return None


def is_bidirectional(trace, i, bt_window):
    return find_bidirectional_partner(trace, i, bt_window) is not None


def craft_uni(packet, bc, cfg, rng=None, streams=None):
    '''
    `bc` copies of `packet` sent to cfg.dst_ip/cfg.dst_mac, the k-th one
    stamped ts + k*D.

    TCP copies continue one byte stream per crafted conversation: `streams`
    maps (src ip, src port, dst ip, dst port) to the next sequence number and
    is updated in place, so later bursts on the same conversation carry on
    where the previous one stopped.
    '''
    if bc <= 0:
        return []
    if rng is None:
        rng = spawn_generators(cfg.seed)[1]
    if streams is None:
        streams = {}
    template = strip_options(packet)
    srcPort, dstPort = (template.src_port, template.dst_port)
    if cfg.port_mode == "randomize":
        srcPort, dstPort = draw_ports(rng)
    payload = resize_payload(template.payload, cfg.trigger_len)
    ip = replace(template.ip, dst=cfg.dst_ip)
    transport = replace(template.transport, src_port=srcPort, dst_port=dstPort)

    triggers = []
    conversation = (ip.src, srcPort, cfg.dst_ip, dstPort)
    for k in range(1, bc + 1):
        if isinstance(transport, TcpHeader):
            seq = streams.get(conversation, transport.seq)
            transport = replace(transport, seq=seq)
            streams[conversation] = (seq + sequence_space(transport.flags, len(payload))) & SEQ_MASK
        trigger = replace(template, ts=packet.ts + k * cfg.delay, dst_mac=cfg.dst_mac,
                          ip=ip, transport=transport, payload=payload)
        triggers.append(fix_packet(trigger))
    return triggers


def craft_pair(p_tx, p_rx, cfg, k, rng=None):
    '''
    The k-th trigger pair for a bidirectional anchor.

    tx goes from the anchor's source to cfg.dst_ip/dst_mac at ts + k*D, rx
    answers 1 us later with IP and MAC addresses of tx swapped and the ports
    of tx swapped. For TCP tx is a bare SYN with a fresh random sequence
    number SQN and rx a bare RST with SQN + 1. UDP pairs keep their headers.
    '''
    if rng is None:
        rng = spawn_generators(cfg.seed)[1]
    txTemplate = strip_options(p_tx)
    if type(p_rx.transport) is type(p_tx.transport):
        rxTemplate = strip_options(p_rx)
    else:
        rxTemplate = txTemplate
    srcPort, dstPort = txTemplate.src_port, txTemplate.dst_port
    if cfg.port_mode == "randomize":
        srcPort, dstPort = draw_ports(rng)

    txTs = p_tx.ts + k * cfg.delay
    txIp = replace(txTemplate.ip, dst=cfg.dst_ip)
    rxIp = replace(rxTemplate.ip, src=cfg.dst_ip, dst=txTemplate.ip.src)
    txTransport = replace(txTemplate.transport, src_port=srcPort, dst_port=dstPort)
    rxTransport = replace(rxTemplate.transport, src_port=dstPort, dst_port=srcPort)
    if isinstance(txTransport, TcpHeader):
        sqn = int(rng.integers(0, SQN_HIGH))
        txTransport = replace(txTransport, seq=sqn, ack=0, flags=TcpFlag.SYN)
        rxTransport = replace(rxTransport, seq=(sqn + 1) & SEQ_MASK, ack=0, flags=TcpFlag.RST)

    tx = replace(txTemplate, ts=txTs, dst_mac=cfg.dst_mac, ip=txIp, transport=txTransport,
                 payload=resize_payload(txTemplate.payload, cfg.trigger_len))
    rx = replace(rxTemplate, ts=txTs + 1, src_mac=cfg.dst_mac, dst_mac=txTemplate.src_mac, ip=rxIp,
                 transport=rxTransport, payload=resize_payload(rxTemplate.payload, cfg.trigger_len))
    return fix_packet(tx), fix_packet(rx)


def generate_backdoor(trace, cfg):
    '''
    Inject trigger packets into `trace`.

    Parameters
    ----------
    trace: Trace
       Timestamp-ordered clean trace.
    cfg: TriggerConfig

    Returns
    -------
    poisoned: Trace
       Input packets plus triggers, re-sorted by timestamp. When td is an
       exact multiple of D the last unidirectional trigger shares its
       timestamp with p_{i+1}; triggers are appended before p_{i+1} and the
       sort is stable, so they stay in front of it.
    report: InjectionReport
    '''
    selectRng, craftRng = spawn_generators(cfg.seed)
    allow = set(cfg.src_allow) if cfg.src_allow is not None else None
    packets = trace.packets
    report = InjectionReport()
    streams = {}
    output = []
    for i, packet in enumerate(packets):
        output.append(packet)
        if not is_anchor_candidate(packet, allow):
            continue
        report.points_considered += 1
        if draw_selection(selectRng) > cfg.ratio:
            continue
        report.points_selected += 1

        partner = find_bidirectional_partner(trace, i, cfg.bt_window)
        if partner is not None:
            for k in range(1, cfg.burst + 1):
                output.extend(craft_pair(packet, packets[partner], cfg, k, rng=craftRng))
            report.bidi_pairs_injected += cfg.burst
            report.records.append(InjectionRecord(i, "bidi", cfg.burst, partner))
            continue

        # the last packet has no successor to bound the burst
        if i + 1 >= len(packets):
            report.records.append(InjectionRecord(i, "uni", 0))
            continue
        td = max(0, packets[i + 1].ts - packet.ts)
        bc = min(cfg.burst, td // cfg.delay)
        triggers = craft_uni(packet, bc, cfg, rng=craftRng, streams=streams)
        output.extend(triggers)
        report.uni_packets_injected += len(triggers)
        report.records.append(InjectionRecord(i, "uni", len(triggers)))

    info(f"Injection: {report.points_selected}/{report.points_considered} anchors selected, "
         f"{report.uni_packets_injected} unidirectional triggers, {report.bidi_pairs_injected} pairs")
    return replace(trace, packets=output).sorted(), report


def strawman_inject(trace, cfg):
    '''
    Negative control: the naive way of planting triggers. Selected TCP anchors
    are duplicated B times at ts + k*D inside their own conversation with
    sequence and acknowledgment numbers left as they were.
    '''
    selectRng, _ = spawn_generators(cfg.seed)
    allow = set(cfg.src_allow) if cfg.src_allow is not None else None
    report = InjectionReport()
    output = []
    for i, packet in enumerate(trace.packets):
        output.append(packet)
        if not is_anchor_candidate(packet, allow):
            continue
        report.points_considered += 1
        if draw_selection(selectRng) > cfg.ratio:
            continue
        report.points_selected += 1
        if not packet.is_tcp:
            report.records.append(InjectionRecord(i, "strawman", 0))
            continue
        copies = [replace(packet, ts=packet.ts + k * cfg.delay) for k in range(1, cfg.burst + 1)]
        output.extend(copies)
        report.uni_packets_injected += len(copies)
        report.records.append(InjectionRecord(i, "strawman", len(copies)))
    info(f"Strawman injection: {report.uni_packets_injected} copied packets")
    return replace(trace, packets=output).sorted(), report


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# REPORT FILES
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def write_injection_report(report, path, cfg=None):
    '''
    INI key-value file: [summary] counts, [trigger] the config used and
    [points] one `index = mode,count[,partner]` line per selected anchor.
    '''
    config = configparser.ConfigParser()
    config.optionxform = lambda option: option
    config["summary"] = {k: str(v) for k, v in report.summary_dict().items()}
    if cfg is not None:
        config["trigger"] = {k: str(v) for k, v in cfg.as_dict().items()}
    config["points"] = {
        str(r.index): ",".join(str(v) for v in (r.mode, r.count, r.partner) if v is not None)
        for r in report.records
    }
    with open(path, "w") as f:
        config.write(f)
    info(f"Writing injection report: {path}")


def read_injection_report(path):
    config = configparser.ConfigParser()
    config.optionxform = lambda option: option
    config.read(path)
    summary = {k: int(v) for k, v in config["summary"].items()}
    records = []
    for index, value in config["points"].items():
        parts = value.split(",")
        partner = int(parts[2]) if len(parts) > 2 else None
        records.append(InjectionRecord(int(index), parts[0], int(parts[1]), partner))
    return InjectionReport(
        points_considered=summary["points_considered"], points_selected=summary["points_selected"],
        uni_packets_injected=summary["uni_packets_injected"], bidi_pairs_injected=summary["bidi_pairs_injected"],
        records=records)
