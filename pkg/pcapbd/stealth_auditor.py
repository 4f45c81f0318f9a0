# -*- coding: utf-8 -*-
'''
-------------------------------------------------------------------------------
 Simplified TCP stream tracker reporting four packet-analyser warnings:

   SpuriousRetransmission  data whose byte range was already fully seen
   AckedUnseenSegment      ACK beyond anything the peer was seen sending
   PortNumberReused        SYN on a conversation that is still open
   OutOfOrder              data below the next expected sequence number
                           that is not a plain retransmission

 Rules:
   - conversations are keyed by the unordered pair of (ip, port) endpoints
   - a SYN without ACK opens the conversation (phase syn_seen), a SYN/ACK
     moves it to established; a conversation picked up mid-stream keeps the
     phase it had (closed), since its opening was never seen
   - RST resets the conversation and forgets both directions
   - sequence arithmetic is modulo 2**32 relative to the first sequence
     number seen per direction; anything that lands behind that base or
     wraps is skipped without a finding
   - an ACK is only checked when the peer direction has been seen
   - UDP and other packets are ignored
-------------------------------------------------------------------------------
'''
import bisect
import csv
import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from pcapbd.logger import info
from pcapbd.pcap_codec import TcpFlag

SEQ_MOD = 2**32
SEQ_HALF = 2**31


class WarningKind(str, enum.Enum):
    SPURIOUS_RETRANSMISSION = "SpuriousRetransmission"
    ACKED_UNSEEN_SEGMENT = "AckedUnseenSegment"
    PORT_NUMBER_REUSED = "PortNumberReused"
    OUT_OF_ORDER = "OutOfOrder"


class Phase(str, enum.Enum):
    CLOSED = "closed"
    SYN_SEEN = "syn_seen"
    ESTABLISHED = "established"
    RESET = "reset"


Endpoint = Tuple[str, int]
ConversationKey = Tuple[Endpoint, Endpoint]


@dataclass(frozen=True)
class AuditFinding:
    index: int
    kind: WarningKind
    detail: str
    conversation: Optional[ConversationKey] = None


@dataclass
class DirectionState:
    '''
    Byte ranges are kept relative to `base`, the first sequence number seen
    in this direction, as sorted, merged half-open intervals.
    '''
    base: int
    next_rel: int = 0
    starts: List[int] = field(default_factory=list)
    ends: List[int] = field(default_factory=list)

    def relative(self, seq):
        '''Offset of `seq` from base, None when it lies behind base or wraps.'''
        rel = (seq - self.base) % SEQ_MOD
        if rel >= SEQ_HALF:
            return None
        return rel

    def covers(self, start, end):
        pos = bisect.bisect_right(self.starts, start) - 1
        return pos >= 0 and self.ends[pos] >= end

    def add(self, start, end):
        if end <= start:
            return
        pos = bisect.bisect_left(self.starts, start)
        # merge with the left neighbour when touching
        if pos > 0 and self.ends[pos - 1] >= start:
            pos -= 1
            start = self.starts[pos]
        stop = pos
        while stop < len(self.starts) and self.starts[stop] <= end:
            end = max(end, self.ends[stop])
            stop += 1
        self.starts[pos:stop] = [start]
        self.ends[pos:stop] = [end]
        self.next_rel = max(self.next_rel, end)


@dataclass
class TcpConversationState:
    key: ConversationKey
    phase: Phase = Phase.CLOSED
    directions: Dict[int, DirectionState] = field(default_factory=dict)

    def reset(self):
        self.phase = Phase.RESET
        self.directions = {}


def conversation_key(packet):
    a = (packet.ip.src, packet.src_port)
    b = (packet.ip.dst, packet.dst_port)
    return (a, b) if a <= b else (b, a)


def direction_of(packet, key):
    return 0 if (packet.ip.src, packet.src_port) == key[0] else 1


class StreamTracker:
    '''
    Single pass over a trace, one `process` call per packet.
    '''

    def __init__(self):
        self.conversations: Dict[ConversationKey, TcpConversationState] = {}
        self.findings: List[AuditFinding] = []

    def _emit(self, index, kind, detail, key):
        self.findings.append(AuditFinding(index, kind, detail, key))

    def process(self, index, packet):
        if not packet.is_tcp:
            return
        tcp = packet.transport
        key = conversation_key(packet)
        state = self.conversations.setdefault(key, TcpConversationState(key))
        direction = direction_of(packet, key)
        flags = tcp.flags

        if flags & TcpFlag.RST:
            state.reset()
            return

        if flags & TcpFlag.SYN:
            self._process_syn(index, packet, state, direction)
            return

        self._check_ack(index, packet, state, direction)
        own = state.directions.get(direction)
        length = len(packet.payload) + (1 if flags & TcpFlag.FIN else 0)
        if own is None:
            state.directions[direction] = own = DirectionState(base=tcp.seq)
            own.add(0, length)
            return
        if length == 0:
            return
        start = own.relative(tcp.seq)
        if start is None:
            return
        end = start + length
        if own.covers(start, end):
            self._emit(index, WarningKind.SPURIOUS_RETRANSMISSION,
                       f"bytes {tcp.seq}+{length} already seen", key)
        elif start < own.next_rel:
            self._emit(index, WarningKind.OUT_OF_ORDER,
                       f"seq {tcp.seq} below next expected {(own.base + own.next_rel) % SEQ_MOD}", key)
        own.add(start, end)

    def _process_syn(self, index, packet, state, direction):
        tcp = packet.transport
        own = state.directions.get(direction)
        if own is not None and own.base == tcp.seq:
            # same initial sequence number: a SYN retransmission
            return
        if not tcp.flags & TcpFlag.ACK:
            if state.phase in (Phase.SYN_SEEN, Phase.ESTABLISHED):
                self._emit(index, WarningKind.PORT_NUMBER_REUSED,
                           f"SYN on a conversation in phase {state.phase.value}", state.key)
            state.directions = {}
            state.phase = Phase.SYN_SEEN
        else:
            self._check_ack(index, packet, state, direction)
            if state.phase == Phase.SYN_SEEN:
                state.phase = Phase.ESTABLISHED
        own = DirectionState(base=tcp.seq)
        own.add(0, 1 + len(packet.payload))
        state.directions[direction] = own

    def _check_ack(self, index, packet, state, direction):
        tcp = packet.transport
        if not tcp.flags & TcpFlag.ACK:
            return
        peer = state.directions.get(1 - direction)
        if peer is None:
            return
        ackRel = peer.relative(tcp.ack)
        if ackRel is not None and ackRel > peer.next_rel:
            self._emit(index, WarningKind.ACKED_UNSEEN_SEGMENT,
                       f"ack {tcp.ack} beyond peer's next seq {(peer.base + peer.next_rel) % SEQ_MOD}", state.key)


def audit(trace):
    '''
    All findings of one pass over `trace`, in packet order.
    '''
    tracker = StreamTracker()
    for index, packet in enumerate(trace.packets):
        tracker.process(index, packet)
    return tracker.findings


def packet_identity(packet):
    return (packet.ts, packet.raw)


def injected_indices(clean, poisoned):
    '''
    Indices of `poisoned` packets without a counterpart in `clean`, matched
    as a multiset on (timestamp, bytes).
    '''
    remaining = Counter(packet_identity(p) for p in clean.packets)
    injected = []
    for index, packet in enumerate(poisoned.packets):
        identity = packet_identity(packet)
        if remaining[identity] > 0:
            remaining[identity] -= 1
        else:
            injected.append(index)
    return injected


def audit_delta(clean, poisoned):
    '''
    Findings that injection added: findings of `poisoned` on conversations that
    contain injected packets, minus those already raised on the same packet in
    `clean`. The stealth criterion is an empty list.
    '''
    touched = set()
    for index in injected_indices(clean, poisoned):
        packet = poisoned.packets[index]
        if packet.is_tcp:
            touched.add(conversation_key(packet))
    if not touched:
        return []

    known = Counter((f.kind, packet_identity(clean.packets[f.index])) for f in audit(clean))
    delta = []
    for finding in audit(poisoned):
        if finding.conversation not in touched:
            continue
        identity = (finding.kind, packet_identity(poisoned.packets[finding.index]))
        if known[identity] > 0:
            known[identity] -= 1
            continue
        delta.append(finding)
    info(f"Audit delta: {len(delta)} new findings on {len(touched)} conversations with injected packets")
    return delta


def write_findings(findings, path):
    '''
    One finding per line: index, kind, detail (tab separated).
    '''
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        for finding in findings:
            writer.writerow([finding.index, finding.kind.value, finding.detail])
    info(f"Writing {len(findings)} findings: {path}")


def read_findings(path):
    findings = []
    with open(path, newline="") as f:
        for row in csv.reader(f, delimiter="\t"):
            if row:
                findings.append(AuditFinding(int(row[0]), WarningKind(row[1]), row[2]))
    return findings
