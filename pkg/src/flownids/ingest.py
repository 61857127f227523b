"""Packet header ingestion: PCAP decoding, flow-text records, per-second binning."""

from __future__ import annotations

import ipaddress
import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, NamedTuple

# IP protocol numbers we name explicitly; everything else is OTHER.
PROTO_TCP = 6
PROTO_UDP = 17
PROTO_ICMP = 1
PROTO_ICMP6 = 58

_PROTO_NAMES = {
    PROTO_TCP: "TCP",
    PROTO_UDP: "UDP",
    PROTO_ICMP: "ICMP",
    PROTO_ICMP6: "ICMP6",
    47: "GRE",
    50: "ESP",
    51: "AH",
    89: "OSPF",
    132: "SCTP",
}
_PROTO_NUMBERS = {name: num for num, name in _PROTO_NAMES.items()}

# TCP flag bits, low to high.
TCP_FLAG_BITS = {
    "FIN": 0x01,
    "SYN": 0x02,
    "RST": 0x04,
    "PSH": 0x08,
    "ACK": 0x10,
    "URG": 0x20,
    "ECE": 0x40,
    "CWR": 0x80,
}


def proto_kind(number: int) -> str:
    """Classify an IP protocol number as TCP, UDP, ICMP or OTHER.

    ICMPv6 counts as ICMP so v4 and v6 share one statistics path.
    """
    if number == PROTO_TCP:
        return "TCP"
    if number == PROTO_UDP:
        return "UDP"
    if number in (PROTO_ICMP, PROTO_ICMP6):
        return "ICMP"
    return "OTHER"


def proto_name(number: int) -> str:
    """Canonical textual name for a protocol number (falls back to the digits)."""
    return _PROTO_NAMES.get(number, str(number))


def proto_number(name: str) -> int:
    """Inverse of proto_name; accepts known names or a decimal number."""
    token = name.strip().upper()
    if token in _PROTO_NUMBERS:
        return _PROTO_NUMBERS[token]
    if token.isdigit():
        value = int(token)
        if 0 <= value <= 255:
            return value
    raise ValueError(f"unknown protocol {name!r}")


def flags_to_names(flags: int) -> str:
    """Render a TCP flag byte as comma-joined names, or '-' when clear."""
    names = [name for name, bit in TCP_FLAG_BITS.items() if flags & bit]
    return ",".join(names) if names else "-"


def names_to_flags(text: str) -> int:
    """Parse comma-joined TCP flag names ('-' means none) into the flag byte."""
    token = text.strip()
    if token in ("-", ""):
        return 0
    value = 0
    for part in token.split(","):
        bit = TCP_FLAG_BITS.get(part.strip().upper())
        if bit is None:
            raise ValueError(f"unknown TCP flag {part!r}")
        value |= bit
    return value


@dataclass(frozen=True)
class PacketHeader:
    """One decoded packet header; bodies are never inspected."""

    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: int
    frame_len: int
    ip_len: int
    ip_version: int
    ttl: int
    tcp_flags: int = 0
    tcp_window: int = 0

    def flow_key(self) -> "FlowKey":
        return FlowKey(self.src_ip, self.dst_ip, self.src_port, self.dst_port, self.protocol)

    def has_flag(self, name: str) -> bool:
        return bool(self.tcp_flags & TCP_FLAG_BITS[name])


class FlowKey(NamedTuple):
    """5-tuple flow identity; tuple order gives the deterministic total order."""

    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: int


@dataclass
class FlowStats:
    """Additive per-flow, per-window statistics."""

    packets: int = 0
    bytes: int = 0
    syn_count: int = 0
    fin_count: int = 0
    rst_count: int = 0
    frame_len_min: int = 0
    frame_len_max: int = 0
    frame_len_sum: int = 0
    frame_len_sum_sq: int = 0
    ttl_sum: int = 0
    window_sum: int = 0

    def add(self, hdr: PacketHeader) -> None:
        if self.packets == 0:
            self.frame_len_min = hdr.frame_len
            self.frame_len_max = hdr.frame_len
        else:
            self.frame_len_min = min(self.frame_len_min, hdr.frame_len)
            self.frame_len_max = max(self.frame_len_max, hdr.frame_len)
        self.packets += 1
        self.bytes += hdr.frame_len
        self.frame_len_sum += hdr.frame_len
        self.frame_len_sum_sq += hdr.frame_len * hdr.frame_len
        self.ttl_sum += hdr.ttl
        self.window_sum += hdr.tcp_window
        if hdr.tcp_flags & TCP_FLAG_BITS["SYN"]:
            self.syn_count += 1
        if hdr.tcp_flags & TCP_FLAG_BITS["FIN"]:
            self.fin_count += 1
        if hdr.tcp_flags & TCP_FLAG_BITS["RST"]:
            self.rst_count += 1

    def merge(self, other: "FlowStats") -> None:
        if other.packets == 0:
            return
        if self.packets == 0:
            self.frame_len_min = other.frame_len_min
            self.frame_len_max = other.frame_len_max
        else:
            self.frame_len_min = min(self.frame_len_min, other.frame_len_min)
            self.frame_len_max = max(self.frame_len_max, other.frame_len_max)
        self.packets += other.packets
        self.bytes += other.bytes
        self.syn_count += other.syn_count
        self.fin_count += other.fin_count
        self.rst_count += other.rst_count
        self.frame_len_sum += other.frame_len_sum
        self.frame_len_sum_sq += other.frame_len_sum_sq
        self.ttl_sum += other.ttl_sum
        self.window_sum += other.window_sum


class PcapError(Exception):
    """Base class for PCAP stream rejections."""


class UnknownMagic(PcapError):
    def __init__(self, magic: bytes):
        super().__init__(f"not a classic PCAP stream (magic {magic.hex()})")
        self.magic = magic


class UnsupportedLinkType(PcapError):
    def __init__(self, link_type: int):
        super().__init__(f"unsupported link type {link_type}, only Ethernet (1) is handled")
        self.link_type = link_type


@dataclass
class PcapResult:
    """Decoded headers plus the skip/flag bookkeeping of one PCAP pass."""

    headers: list[PacketHeader] = field(default_factory=list)
    skipped_non_ip: int = 0
    length_flagged: list[int] = field(default_factory=list)  # indices with ip_len > frame_len
    truncated_at: int | None = None  # byte offset of the cut record, if any


# magic -> (byte order, fractional-second ticks per second)
_PCAP_MAGICS = {
    b"\xa1\xb2\xc3\xd4": (">", 1_000_000),
    b"\xd4\xc3\xb2\xa1": ("<", 1_000_000),
    b"\xa1\xb2\x3c\x4d": (">", 1_000_000_000),
    b"\x4d\x3c\xb2\xa1": ("<", 1_000_000_000),
}

_ETHERTYPE_IPV4 = 0x0800
_ETHERTYPE_IPV6 = 0x86DD
_ETHERTYPE_VLAN = 0x8100
_LINKTYPE_ETHERNET = 1


def parse_pcap_headers(source: bytes | BinaryIO) -> PcapResult:
    """Decode packet headers from a classic PCAP byte stream.

    Non-IP frames are skipped and counted; a truncated trailing record stops
    the scan but keeps everything decoded before it. Raises UnknownMagic or
    UnsupportedLinkType for streams we cannot interpret at all.
    """
    data = source if isinstance(source, bytes) else source.read()
    if len(data) < 24:
        raise UnknownMagic(data[:4])
    magic = data[:4]
    if magic not in _PCAP_MAGICS:
        raise UnknownMagic(magic)
    order, tick = _PCAP_MAGICS[magic]
    link_type = struct.unpack_from(order + "I", data, 20)[0]
    if link_type != _LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(link_type)

    result = PcapResult()
    rec_hdr = struct.Struct(order + "IIII")
    offset = 24
    total = len(data)
    while offset < total:
        if offset + 16 > total:
            result.truncated_at = offset
            break
        ts_sec, ts_frac, incl_len, orig_len = rec_hdr.unpack_from(data, offset)
        if offset + 16 + incl_len > total:
            result.truncated_at = offset
            break
        frame = data[offset + 16 : offset + 16 + incl_len]
        offset += 16 + incl_len
        timestamp = ts_sec + ts_frac * frac_scale
        hdr = _decode_ethernet(frame, timestamp, orig_len)
        if hdr is None:
            result.skipped_non_ip += 1
            continue
        if hdr.ip_len > hdr.frame_len:
            result.length_flagged.append(len(result.headers))
        result.headers.append(hdr)
    return result


def _decode_ethernet(frame: bytes, timestamp: float, orig_len: int) -> PacketHeader | None:
    if len(frame) < 14:
        return None
    ethertype = struct.unpack_from(">H", frame, 12)[0]
    payload_off = 14
    if ethertype == _ETHERTYPE_VLAN:
        # 802.1Q: unwrap one tag; anything deeper is treated as non-IP.
        if len(frame) < 18:
            return None
        ethertype = struct.unpack_from(">H", frame, 16)[0]
        payload_off = 18
    if ethertype == _ETHERTYPE_IPV4:
        return _decode_ipv4(frame, payload_off, timestamp, orig_len)
    if ethertype == _ETHERTYPE_IPV6:
        return _decode_ipv6(frame, payload_off, timestamp, orig_len)
    return None


def _decode_ipv4(frame: bytes, off: int, timestamp: float, orig_len: int) -> PacketHeader | None:
    if len(frame) < off + 20:
        return None
    vihl = frame[off]
    if vihl >> 4 != 4:
        return None
    ihl = (vihl & 0x0F) * 4
    if ihl < 20 or len(frame) < off + ihl:
        return None
    total_len = struct.unpack_from(">H", frame, off + 2)[0]
    frag = struct.unpack_from(">H", frame, off + 6)[0]
    ttl = frame[off + 8]
    protocol = frame[off + 9]
    src = str(ipaddress.IPv4Address(frame[off + 12 : off + 16]))
    dst = str(ipaddress.IPv4Address(frame[off + 16 : off + 20]))
    # Non-first fragments carry no transport header.
    transport = frame[off + ihl :] if (frag & 0x1FFF) == 0 else b""
    sport, dport, flags, window = _decode_transport(protocol, transport)
    return PacketHeader(
        timestamp=timestamp,
        src_ip=src,
        dst_ip=dst,
        src_port=sport,
        dst_port=dport,
        protocol=protocol,
        frame_len=orig_len,
        ip_len=total_len,
        ip_version=4,
        ttl=ttl,
        tcp_flags=flags,
        tcp_window=window,
    )


def _decode_ipv6(frame: bytes, off: int, timestamp: float, orig_len: int) -> PacketHeader | None:
    if len(frame) < off + 40:
        return None
    if frame[off] >> 4 != 6:
        return None
    payload_len = struct.unpack_from(">H", frame, off + 4)[0]
    next_header = frame[off + 6]
    hop_limit = frame[off + 7]
    src = str(ipaddress.IPv6Address(frame[off + 8 : off + 24]))
    dst = str(ipaddress.IPv6Address(frame[off + 24 : off + 40]))
    # Extension headers are not traversed; such packets classify as OTHER.
    sport, dport, flags, window = _decode_transport(next_header, frame[off + 40 :])
    return PacketHeader(
        timestamp=timestamp,
        src_ip=src,
        dst_ip=dst,
        src_port=sport,
        dst_port=dport,
        protocol=next_header,
        frame_len=orig_len,
        ip_len=40 + payload_len,
        ip_version=6,
        ttl=hop_limit,
        tcp_flags=flags,
        tcp_window=window,
    )


def _decode_transport(protocol: int, segment: bytes) -> tuple[int, int, int, int]:
    """Ports, TCP flags and window from a transport slice (zeros when absent)."""
    if protocol not in (PROTO_TCP, PROTO_UDP):
        return 0, 0, 0, 0
    sport = struct.unpack_from(">H", segment, 0)[0] if len(segment) >= 2 else 0
    dport = struct.unpack_from(">H", segment, 2)[0] if len(segment) >= 4 else 0
    if protocol == PROTO_UDP:
        return sport, dport, 0, 0
    flags = segment[13] if len(segment) >= 14 else 0
    window = struct.unpack_from(">H", segment, 14)[0] if len(segment) >= 16 else 0
    return sport, dport, flags, window


@dataclass(frozen=True)
class MalformedLine:
    line_no: int
    reason: str
    text: str


@dataclass
class FlowTextResult:
    headers: list[PacketHeader] = field(default_factory=list)
    errors: list[MalformedLine] = field(default_factory=list)


# timestamp src dst sport dport proto frame_len ip_len ip_ver ttl flags window
_FLOW_TEXT_FIELDS = 12


def parse_flow_text(lines: Iterable[str] | str) -> FlowTextResult:
    """Parse whitespace-separated flow-text records into packet headers.

    Malformed lines are collected with their line numbers and parsing
    continues; '#' lines and blank lines are ignored.
    """
    if isinstance(lines, str):
        lines = lines.splitlines()
    result = FlowTextResult()
    for line_no, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            result.headers.append(_parse_flow_line(line))
        except ValueError as exc:
            result.errors.append(MalformedLine(line_no, str(exc), line))
    return result


def _parse_flow_line(line: str) -> PacketHeader:
    parts = line.split()
    if len(parts) != _FLOW_TEXT_FIELDS:
        raise ValueError(f"expected {_FLOW_TEXT_FIELDS} fields, got {len(parts)}")
    timestamp = float(parts[0])
    src_ip = _canonical_ip(parts[1])
    dst_ip = _canonical_ip(parts[2])
    protocol = proto_number(parts[5])
    frame_len = _non_negative(parts[6], "frame_len")
    ip_len = _non_negative(parts[7], "ip_len")
    ip_version = int(parts[8])
    if ip_version not in (4, 6):
        raise ValueError(f"ip_version must be 4 or 6, got {parts[8]}")
    ttl = _non_negative(parts[9], "ttl")
    if ttl > 255:
        raise ValueError(f"ttl out of range: {ttl}")
    flags = names_to_flags(parts[10])
    window = _non_negative(parts[11], "window")
    if window > 65535:
        raise ValueError(f"window out of range: {window}")
    if proto_kind(protocol) in ("TCP", "UDP"):
        sport = _port(parts[3], "src_port")
        dport = _port(parts[4], "dst_port")
    else:
        # Port-less protocols always key on (0, 0).
        sport = dport = 0
        flags = 0
        window = 0
    return PacketHeader(
        timestamp=timestamp,
        src_ip=src_ip,
        dst_ip=dst_ip,
        src_port=sport,
        dst_port=dport,
        protocol=protocol,
        frame_len=frame_len,
        ip_len=ip_len,
        ip_version=ip_version,
        ttl=ttl,
        tcp_flags=flags,
        tcp_window=window,
    )


def _canonical_ip(text: str) -> str:
    try:
        return str(ipaddress.ip_address(text))
    except ValueError as exc:
        raise ValueError(f"bad IP address {text!r}") from exc


def _non_negative(text: str, name: str) -> int:
    try:
        value = int(text)
    except ValueError as exc:
        raise ValueError(f"bad {name} {text!r}") from exc
    if value < 0:
        raise ValueError(f"{name} must be non-negative, got {value}")
    return value


def _port(text: str, name: str) -> int:
    value = _non_negative(text, name)
    if value > 65535:
        raise ValueError(f"{name} out of range: {value}")
    return value


def emit_flow_text(headers: Iterable[PacketHeader]) -> str:
    """Render headers in the flow-text line format (inverse of parse_flow_text)."""
    lines = []
    for h in headers:
        lines.append(
            f"{h.timestamp:.6f} {h.src_ip} {h.dst_ip} {h.src_port} {h.dst_port} "
            f"{proto_name(h.protocol)} {h.frame_len} {h.ip_len} {h.ip_version} "
            f"{h.ttl} {flags_to_names(h.tcp_flags)} {h.tcp_window}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


WindowMap = dict[int, dict[FlowKey, FlowStats]]


def bin_packets(headers: Iterable[PacketHeader], epoch: int | None = None) -> WindowMap:
    """Bin packets into one-second windows keyed by flow.

    window_index = floor(timestamp - epoch); epoch defaults to the floor of
    the earliest timestamp and must not exceed any timestamp.
    """
    headers = list(headers)
    if not headers:
        return {}
    min_ts = min(h.timestamp for h in headers)
    if epoch is None:
        epoch = math.floor(min_ts)
    elif epoch > min_ts:
        raise ValueError(f"epoch {epoch} is after the earliest timestamp {min_ts}")
    windows: WindowMap = {}
    for h in headers:
        idx = math.floor(h.timestamp - epoch)
        flows = windows.setdefault(idx, {})
        stats = flows.get(h.flow_key())
        if stats is None:
            stats = FlowStats()
            flows[h.flow_key()] = stats
        stats.add(h)
    return windows


def merge_binned(*parts: WindowMap) -> WindowMap:
    """Merge independently binned partitions (maps merged by key, stats summed)."""
    merged: WindowMap = {}
    for part in parts:
        for idx, flows in part.items():
            target = merged.setdefault(idx, {})
            for key, stats in flows.items():
                if key in target:
                    target[key].merge(stats)
                else:
                    copy = FlowStats()
                    copy.merge(stats)
                    target[key] = copy
    return merged
