"""Raw PCAP byte crafting for parser fixtures.

Builds frames directly with struct.pack from the wire formats; nothing here
touches the package under test.
"""

from __future__ import annotations

import ipaddress
import struct

MAC_A = bytes.fromhex("02aabbcc0001")
MAC_B = bytes.fromhex("02aabbcc0002")


def ethernet(ethertype: int, payload: bytes, vlan: int | None = None) -> bytes:
    if vlan is None:
        return MAC_B + MAC_A + struct.pack(">H", ethertype) + payload
    return MAC_B + MAC_A + struct.pack(">HHH", 0x8100, vlan, ethertype) + payload


def ipv4(src: str, dst: str, proto: int, payload: bytes, ttl: int = 64,
         frag_offset: int = 0, more_fragments: bool = False) -> bytes:
    total_len = 20 + len(payload)
    flags_frag = (0x2000 if more_fragments else 0) | (frag_offset & 0x1FFF)
    header = struct.pack(
        ">BBHHHBBH4s4s",
        0x45,  # version 4, IHL 5
        0,
        total_len,
        0x1234,
        flags_frag,
        ttl,
        proto,
        0,  # checksum not validated by header parsers
        ipaddress.IPv4Address(src).packed,
        ipaddress.IPv4Address(dst).packed,
    )
    return header + payload


def ipv6(src: str, dst: str, next_header: int, payload: bytes, hop_limit: int = 64) -> bytes:
    header = struct.pack(
        ">IHBB16s16s",
        0x60000000,
        len(payload),
        next_header,
        hop_limit,
        ipaddress.IPv6Address(src).packed,
        ipaddress.IPv6Address(dst).packed,
    )
    return header + payload


def tcp(sport: int, dport: int, flags: int, window: int, payload: bytes = b"") -> bytes:
    header = struct.pack(
        ">HHIIBBHHH",
        sport,
        dport,
        0x01020304,  # seq
        0x0a0b0c0d,  # ack
        5 << 4,  # data offset 5 words
        flags,
        window,
        0,
        0,
    )
    return header + payload


def udp(sport: int, dport: int, payload: bytes = b"") -> bytes:
    return struct.pack(">HHHH", sport, dport, 8 + len(payload), 0) + payload


def icmp(type_: int = 8, code: int = 0, payload: bytes = b"") -> bytes:
    return struct.pack(">BBH", type_, code, 0) + payload


def pcap_file(
    records: list[tuple[float, bytes, int | None]],
    magic: bytes = b"\xd4\xc3\xb2\xa1",
    link_type: int = 1,
    snaplen: int = 65535,
) -> bytes:
    """records: (timestamp, captured frame bytes, original length or None).

    The four classic magics select byte order and second-fraction units.
    """
    order = {"little": "<", "big": ">"}[
        "little" if magic in (b"\xd4\xc3\xb2\xa1", b"\x4d\x3c\xb2\xa1") else "big"
    ]
    nanos = magic in (b"\xa1\xb2\x3c\x4d", b"\x4d\x3c\xb2\xa1")
    out = magic + struct.pack(order + "HHiIII", 2, 4, 0, 0, snaplen, link_type)
    for ts, frame, orig_len in records:
        sec = int(ts)
        frac = round((ts - sec) * (1e9 if nanos else 1e6))
        out += struct.pack(
            order + "IIII", sec, frac, len(frame), orig_len if orig_len is not None else len(frame)
        )
        out += frame
    return out
