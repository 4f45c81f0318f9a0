# -*- coding: utf-8 -*-
'''
-------------------------------------------------------------------------------
 Classic PCAP files and the Ethernet/IPv4/TCP/UDP packets inside them.

 Reading keeps every record: frames that do not parse as Ethernet/IPv4/TCP/UDP
 end up with an Opaque transport holding the raw bytes, so that a trace read
 from disk serializes back byte for byte. Output is always little-endian with
 microsecond timestamps.
-------------------------------------------------------------------------------
'''
import enum
import ipaddress
import struct
from dataclasses import dataclass, field, replace
from functools import cached_property
from operator import attrgetter
from typing import Iterator, List, Optional, Union

import numpy as np

from pcapbd.errors import ContractError, PcapFormatError, PcapTruncationError, SnapLengthError
from pcapbd.logger import debug, info

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_SWAPPED = 0xD4C3B2A1
PCAP_VERSION_MAJOR = 2
PCAP_VERSION_MINOR = 4
LINKTYPE_ETHERNET = 1
DEFAULT_SNAP_LEN = 65535

GLOBAL_HEADER_FORMAT = "IHHiIII"
RECORD_HEADER_FORMAT = "IIII"
GLOBAL_HEADER_LEN = struct.calcsize("<" + GLOBAL_HEADER_FORMAT)
RECORD_HEADER_LEN = struct.calcsize("<" + RECORD_HEADER_FORMAT)

ETH_HEADER = struct.Struct("!6s6sH")
IPV4_HEADER = struct.Struct("!BBHHHBBH4s4s")
TCP_HEADER = struct.Struct("!HHIIHHHH")
UDP_HEADER = struct.Struct("!HHHH")

ETHERTYPE_IPV4 = 0x0800
IPPROTO_TCP = 6
IPPROTO_UDP = 17

USEC = 1_000_000


class TcpFlag(enum.IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20
    ECE = 0x40
    CWR = 0x80
    NS = 0x100


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# ADDRESS HELPER
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def mac_to_bytes(mac):
    raw = bytes.fromhex(mac.replace(":", "").replace("-", ""))
    if len(raw) != 6:
        raise ContractError(f"not a 6-byte MAC address: {mac}")
    return raw


def mac_from_bytes(raw):
    return ":".join(f"{b:02x}" for b in raw)


def ip_to_bytes(ip):
    try:
        return ipaddress.IPv4Address(ip).packed
    except ipaddress.AddressValueError as e:
        raise ContractError(f"not an IPv4 address: {ip}") from e


def ip_from_bytes(raw):
    return str(ipaddress.IPv4Address(raw))


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# HEADERS
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

@dataclass(frozen=True)
class Ipv4Header:
    src: str
    dst: str
    protocol: int
    ttl: int = 64
    tos: int = 0
    identification: int = 0
    flags_fragment: int = 0x4000
    total_length: int = 20
    checksum: int = 0
    ihl: int = 5
    options: bytes = b""
    version: int = 4

    @property
    def header_length(self):
        return self.ihl * 4

    @property
    def is_fragment(self):
        # more-fragments bit or a non-zero fragment offset
        return bool(self.flags_fragment & 0x2000) or bool(self.flags_fragment & 0x1FFF)

    def to_bytes(self):
        return IPV4_HEADER.pack(
            (self.version << 4) | self.ihl, self.tos, self.total_length,
            self.identification, self.flags_fragment, self.ttl, self.protocol,
            self.checksum, ip_to_bytes(self.src), ip_to_bytes(self.dst)) + self.options


@dataclass(frozen=True)
class TcpHeader:
    src_port: int
    dst_port: int
    seq: int = 0
    ack: int = 0
    flags: TcpFlag = TcpFlag(0)
    window: int = 65535
    checksum: int = 0
    urgent: int = 0
    data_offset: int = 5
    reserved: int = 0
    options: bytes = b""

    @property
    def header_length(self):
        return self.data_offset * 4

    def to_bytes(self):
        offsetFlags = (self.data_offset << 12) | (self.reserved << 9) | int(self.flags)
        return TCP_HEADER.pack(
            self.src_port, self.dst_port, self.seq & 0xFFFFFFFF, self.ack & 0xFFFFFFFF,
            offsetFlags, self.window, self.checksum, self.urgent) + self.options


@dataclass(frozen=True)
class UdpHeader:
    src_port: int
    dst_port: int
    length: int = 8
    checksum: int = 0

    @property
    def header_length(self):
        return UDP_HEADER.size

    def to_bytes(self):
        return UDP_HEADER.pack(self.src_port, self.dst_port, self.length, self.checksum)


@dataclass(frozen=True)
class Opaque:
    '''
    Bytes that were not parsed any further.
    '''
    data: bytes = b""

    @property
    def header_length(self):
        return len(self.data)

    def to_bytes(self):
        return self.data


Transport = Union[TcpHeader, UdpHeader, Opaque]


@dataclass(frozen=True)
class Packet:
    '''
    One captured frame. `ts` is in microseconds since the epoch. `trailer`
    holds bytes after the IP datagram (Ethernet padding). `orig_len` is the
    on-the-wire length from the capture; None means "same as the serialized
    length", which is what every crafted packet uses.
    '''
    ts: int
    src_mac: Optional[str]
    dst_mac: Optional[str]
    ethertype: Optional[int]
    ip: Optional[Ipv4Header]
    transport: Transport
    payload: bytes = b""
    trailer: bytes = b""
    orig_len: Optional[int] = None

    @property
    def is_tcp(self):
        return self.ip is not None and isinstance(self.transport, TcpHeader)

    @property
    def is_udp(self):
        return self.ip is not None and isinstance(self.transport, UdpHeader)

    @property
    def is_eligible(self):
        '''IPv4 carrying TCP or UDP.'''
        return self.is_tcp or self.is_udp

    @property
    def src_port(self):
        return getattr(self.transport, "src_port", 0)

    @property
    def dst_port(self):
        return getattr(self.transport, "dst_port", 0)

    @cached_property
    def raw(self):
        if self.src_mac is None:
            return self.transport.to_bytes()
        eth = ETH_HEADER.pack(mac_to_bytes(self.dst_mac), mac_to_bytes(self.src_mac), self.ethertype)
        if self.ip is None:
            return eth + self.transport.to_bytes()
        return eth + self.ip.to_bytes() + self.transport.to_bytes() + self.payload + self.trailer

    def to_bytes(self):
        return self.raw

    @property
    def frame_length(self):
        if self.orig_len is not None:
            return self.orig_len
        return len(self.raw)


@dataclass
class Trace:
    '''
    Ordered packets plus capture metadata. Timestamps are microseconds.
    '''
    packets: List[Packet] = field(default_factory=list)
    link_type: int = LINKTYPE_ETHERNET
    snap_len: int = DEFAULT_SNAP_LEN
    timestamp_resolution: str = "us"

    def __len__(self):
        return len(self.packets)

    def __iter__(self) -> Iterator[Packet]:
        return iter(self.packets)

    def __getitem__(self, index):
        return self.packets[index]

    def is_sorted(self):
        return all(a.ts <= b.ts for a, b in zip(self.packets, self.packets[1:]))

    def sorted(self):
        '''Stable sort by timestamp.'''
        return replace(self, packets=sorted(self.packets, key=attrgetter("ts")))


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# CHECKSUMS
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def internet_checksum(data):
    '''
    RFC 1071 one's complement sum over 16-bit big-endian words.
    '''
    if len(data) % 2:
        data = data + b"\x00"
    total = int(np.frombuffer(data, dtype=">u2").sum(dtype=np.uint64))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def pseudo_header(ip, segmentLength):
    return ip_to_bytes(ip.src) + ip_to_bytes(ip.dst) + struct.pack("!BBH", 0, ip.protocol, segmentLength)


def transport_checksum(ip, transport, payload):
    segment = replace(transport, checksum=0).to_bytes() + payload
    checksum = internet_checksum(pseudo_header(ip, len(segment)) + segment)
    if isinstance(transport, UdpHeader) and checksum == 0:
        # zero means "no checksum" for UDP
        checksum = 0xFFFF
    return checksum


def fix_packet(packet):
    '''
    Recompute IP total length, UDP length, the IPv4 header checksum and the
    TCP/UDP checksum (pseudo-header included). Nothing else changes.
    '''
    if packet.ip is None:
        raise ContractError("fix_packet needs a packet with an IPv4 layer")
    ip = packet.ip
    transport = packet.transport
    if isinstance(transport, UdpHeader):
        transport = replace(transport, length=UDP_HEADER.size + len(packet.payload))
    if isinstance(transport, (TcpHeader, UdpHeader)):
        ip = replace(ip, total_length=ip.header_length + transport.header_length + len(packet.payload))
    ip = replace(ip, checksum=0)
    ip = replace(ip, checksum=internet_checksum(ip.to_bytes()))
    if isinstance(transport, (TcpHeader, UdpHeader)):
        transport = replace(transport, checksum=transport_checksum(ip, transport, packet.payload))
    return replace(packet, ip=ip, transport=transport)


def checksums_valid(packet):
    '''
    True when the IPv4 header checksum and, for TCP/UDP, the transport checksum
    verify. Packets without IPv4 have nothing to verify.
    '''
    if packet.ip is None:
        return True
    if internet_checksum(packet.ip.to_bytes()) != 0:
        return False
    if isinstance(packet.transport, (TcpHeader, UdpHeader)):
        segment = packet.transport.to_bytes() + packet.payload
        return internet_checksum(pseudo_header(packet.ip, len(segment)) + segment) == 0
    return True


def strip_options(packet):
    '''
    Drop IP and TCP options, leaving fixed 20-byte headers. Lengths and
    checksums are not repaired here.
    '''
    ip = replace(packet.ip, ihl=5, options=b"") if packet.ip is not None else None
    transport = packet.transport
    if isinstance(transport, TcpHeader):
        transport = replace(transport, data_offset=5, options=b"")
    return replace(packet, ip=ip, transport=transport, trailer=b"", orig_len=None)


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# PARSING
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def parse_ipv4(body):
    if len(body) < IPV4_HEADER.size:
        return None
    (verIhl, tos, totalLength, identification, flagsFragment, ttl, protocol,
     checksum, src, dst) = IPV4_HEADER.unpack_from(body)
    version, ihl = verIhl >> 4, verIhl & 0x0F
    if version != 4 or ihl < 5 or len(body) < ihl * 4:
        return None
    return Ipv4Header(
        src=ip_from_bytes(src), dst=ip_from_bytes(dst), protocol=protocol, ttl=ttl,
        tos=tos, identification=identification, flags_fragment=flagsFragment,
        total_length=totalLength, checksum=checksum, ihl=ihl,
        options=bytes(body[IPV4_HEADER.size:ihl * 4]), version=version)


def parse_tcp(segment):
    if len(segment) < TCP_HEADER.size:
        return None
    srcPort, dstPort, seq, ack, offsetFlags, window, checksum, urgent = TCP_HEADER.unpack_from(segment)
    dataOffset = offsetFlags >> 12
    if dataOffset < 5 or len(segment) < dataOffset * 4:
        return None
    return TcpHeader(
        src_port=srcPort, dst_port=dstPort, seq=seq, ack=ack,
        flags=TcpFlag(offsetFlags & 0x1FF), window=window, checksum=checksum,
        urgent=urgent, data_offset=dataOffset, reserved=(offsetFlags >> 9) & 0x7,
        options=bytes(segment[TCP_HEADER.size:dataOffset * 4]))


def parse_udp(segment):
    if len(segment) < UDP_HEADER.size:
        return None
    return UdpHeader(*UDP_HEADER.unpack_from(segment))


def parse_packet(frame, ts, orig_len=None):
    '''
    Decode one Ethernet frame. Never raises on content: whatever does not
    decode is kept as Opaque bytes.
    '''
    frame = bytes(frame)
    if len(frame) < ETH_HEADER.size:
        return Packet(ts, None, None, None, None, Opaque(frame), orig_len=orig_len)
    dst, src, ethertype = ETH_HEADER.unpack_from(frame)
    base = dict(ts=ts, src_mac=mac_from_bytes(src), dst_mac=mac_from_bytes(dst), ethertype=ethertype, orig_len=orig_len)
    body = frame[ETH_HEADER.size:]
    ip = parse_ipv4(body) if ethertype == ETHERTYPE_IPV4 else None
    if ip is None:
        return Packet(ip=None, transport=Opaque(body), **base)

    start, end = ip.header_length, ip.total_length
    if end < start or end > len(body) or ip.is_fragment:
        return Packet(ip=ip, transport=Opaque(body[start:]), **base)
    segment, trailer = body[start:end], body[end:]

    transport = None
    if ip.protocol == IPPROTO_TCP:
        transport = parse_tcp(segment)
    elif ip.protocol == IPPROTO_UDP:
        transport = parse_udp(segment)
    if transport is None:
        return Packet(ip=ip, transport=Opaque(segment), trailer=trailer, **base)
    return Packet(ip=ip, transport=transport, payload=segment[transport.header_length:], trailer=trailer, **base)


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# FILES
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def read_trace(path):
    '''
    Read a classic PCAP file (either byte order).

    Parameters
    ----------
    path: str or path-like

    Returns
    -------
    trace: Trace
       All records in file order.
    '''
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < GLOBAL_HEADER_LEN:
        raise PcapFormatError(f"{path}: {len(data)} bytes, too short for a PCAP global header")
    magic = struct.unpack_from("<I", data)[0]
    if magic == PCAP_MAGIC:
        endian = "<"
    elif magic == PCAP_MAGIC_SWAPPED:
        endian = ">"
    else:
        raise PcapFormatError(f"{path}: unknown magic number 0x{magic:08x}")
    _, versionMajor, versionMinor, _, _, snapLen, network = struct.unpack_from(endian + GLOBAL_HEADER_FORMAT, data)
    if network != LINKTYPE_ETHERNET:
        raise PcapFormatError(f"{path}: link type {network} is not Ethernet (1)")
    debug(f"{path}: PCAP {versionMajor}.{versionMinor}, snap_len {snapLen}, endian '{endian}'")

    recordHeader = struct.Struct(endian + RECORD_HEADER_FORMAT)
    packets = []
    offset = GLOBAL_HEADER_LEN
    index = 0
    while offset < len(data):
        if offset + RECORD_HEADER_LEN > len(data):
            raise PcapTruncationError(index, "record header cut short")
        tsSec, tsUsec, inclLen, origLen = recordHeader.unpack_from(data, offset)
        offset += RECORD_HEADER_LEN
        if offset + inclLen > len(data):
            raise PcapTruncationError(index, f"needs {inclLen} bytes, {len(data) - offset} left")
        packets.append(parse_packet(data[offset:offset + inclLen], tsSec * USEC + tsUsec, orig_len=origLen))
        offset += inclLen
        index += 1
    info(f"Read {len(packets)} packets from {path}")
    return Trace(packets=packets, link_type=network, snap_len=snapLen)


def write_trace(trace, path):
    '''
    Write `trace` as a little-endian classic PCAP, records sorted by
    timestamp. Nothing is written if any packet exceeds snap_len.
    '''
    if trace.link_type != LINKTYPE_ETHERNET:
        raise ContractError(f"only Ethernet traces can be written, got link type {trace.link_type}")
    for index, packet in enumerate(trace.packets):
        if len(packet.raw) > trace.snap_len:
            raise SnapLengthError(index, len(packet.raw), trace.snap_len)

    recordHeader = struct.Struct("<" + RECORD_HEADER_FORMAT)
    with open(path, "wb") as f:
        f.write(struct.pack("<" + GLOBAL_HEADER_FORMAT, PCAP_MAGIC, PCAP_VERSION_MAJOR, PCAP_VERSION_MINOR,
                            0, 0, trace.snap_len, trace.link_type))
        for packet in sorted(trace.packets, key=attrgetter("ts")):
            frame = packet.raw
            origLen = len(frame) if packet.orig_len is None else max(packet.orig_len, len(frame))
            tsSec, tsUsec = divmod(packet.ts, USEC)
            f.write(recordHeader.pack(tsSec, tsUsec, len(frame), origLen))
            f.write(frame)
    info(f"Wrote {len(trace.packets)} packets to {path}")


# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #
# BUILDERS
# # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # # #

def make_tcp_packet(ts, src_mac, dst_mac, src_ip, dst_ip, src_port, dst_port,
                    seq=0, ack=0, flags=TcpFlag.ACK, payload=b"", window=65535,
                    ttl=64, identification=0):
    '''
    Ethernet/IPv4/TCP packet with 20-byte headers and valid checksums.
    '''
    packet = Packet(
        ts=ts, src_mac=src_mac, dst_mac=dst_mac, ethertype=ETHERTYPE_IPV4,
        ip=Ipv4Header(src=src_ip, dst=dst_ip, protocol=IPPROTO_TCP, ttl=ttl, identification=identification),
        transport=TcpHeader(src_port=src_port, dst_port=dst_port, seq=seq & 0xFFFFFFFF,
                            ack=ack & 0xFFFFFFFF, flags=TcpFlag(flags), window=window),
        payload=bytes(payload))
    return fix_packet(packet)


def make_udp_packet(ts, src_mac, dst_mac, src_ip, dst_ip, src_port, dst_port,
                    payload=b"", ttl=64, identification=0):
    '''
    Ethernet/IPv4/UDP packet with valid length fields and checksums.
    '''
    packet = Packet(
        ts=ts, src_mac=src_mac, dst_mac=dst_mac, ethertype=ETHERTYPE_IPV4,
        ip=Ipv4Header(src=src_ip, dst=dst_ip, protocol=IPPROTO_UDP, ttl=ttl, identification=identification),
        transport=UdpHeader(src_port=src_port, dst_port=dst_port),
        payload=bytes(payload))
    return fix_packet(packet)
