"""Independent PCAP header decoder used as the parser oracle.

Deliberately a separate implementation: cursor-based reads with
int.from_bytes, no code shared with the package. Emits plain dicts.
"""

from __future__ import annotations

import ipaddress


class _Cursor:
    def __init__(self, data: bytes, big_endian: bool):
        self.data = data
        self.pos = 0
        self.end = "big" if big_endian else "little"

    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int) -> bytes:
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return int.from_bytes(self.take(4), self.end)


def reference_decode(data: bytes) -> list[dict]:
    """Decode IP packet headers from a classic Ethernet PCAP stream.

    Skips non-IP frames, unwraps a single VLAN tag, stops at a truncated
    record. Mirrors the documented semantics but shares no code with the
    implementation under test.
    """
    header_magics = {
        bytes.fromhex("a1b2c3d4"): (True, 1_000_000),
        bytes.fromhex("d4c3b2a1"): (False, 1_000_000),
        bytes.fromhex("a1b23c4d"): (True, 1_000_000_000),
        bytes.fromhex("4d3cb2a1"): (False, 1_000_000_000),
    }
    magic = data[:4]
    if magic not in header_magics:
        raise ValueError("bad magic")
    big_endian, tick = header_magics[magic]
    link = int.from_bytes(data[20:24], "big" if big_endian else "little")
    if link != 1:
        raise ValueError("not ethernet")

    cur = _Cursor(data, big_endian)
    cur.pos = 24
    packets = []
    while cur.remaining() > 0:
        if cur.remaining() < 16:
            break
        sec = cur.u32()
        frac = cur.u32()
        incl = cur.u32()
        orig = cur.u32()
        if cur.remaining() < incl:
            break
        frame = cur.take(incl)
        decoded = _decode_frame(frame)
        if decoded is None:
            continue
        decoded["timestamp"] = sec + frac / tick
        decoded["frame_len"] = orig
        packets.append(decoded)
    return packets


def _decode_frame(frame: bytes) -> dict | None:
    if len(frame) < 14:
        return None
    etype = int.from_bytes(frame[12:14], "big")
    body = frame[14:]
    if etype == 0x8100:
        if len(frame) < 18:
            return None
        etype = int.from_bytes(frame[16:18], "big")
        body = frame[18:]
    if etype == 0x0800:
        return _decode_v4(body)
    if etype == 0x86DD:
        return _decode_v6(body)
    return None


def _decode_v4(body: bytes) -> dict | None:
    if len(body) < 20 or body[0] >> 4 != 4:
        return None
    header_len = (body[0] & 0xF) * 4
    if header_len < 20 or len(body) < header_len:
        return None
    proto = body[9]
    frag_field = int.from_bytes(body[6:8], "big")
    first_fragment = (frag_field & 0x1FFF) == 0
    transport = body[header_len:] if first_fragment else b""
    info = {
        "src_ip": str(ipaddress.ip_address(body[12:16])),
        "dst_ip": str(ipaddress.ip_address(body[16:20])),
        "protocol": proto,
        "ip_len": int.from_bytes(body[2:4], "big"),
        "ip_version": 4,
        "ttl": body[8],
    }
    info.update(_decode_ports(proto, transport))
    return info


def _decode_v6(body: bytes) -> dict | None:
    if len(body) < 40 or body[0] >> 4 != 6:
        return None
    proto = body[6]
    info = {
        "src_ip": str(ipaddress.ip_address(body[8:24])),
        "dst_ip": str(ipaddress.ip_address(body[24:40])),
        "protocol": proto,
        "ip_len": 40 + int.from_bytes(body[4:6], "big"),
        "ip_version": 6,
        "ttl": body[7],
    }
    info.update(_decode_ports(proto, body[40:]))
    return info


def _decode_ports(proto: int, transport: bytes) -> dict:
    out = {"src_port": 0, "dst_port": 0, "tcp_flags": 0, "tcp_window": 0}
    if proto not in (6, 17):
        return out
    if len(transport) >= 2:
        out["src_port"] = int.from_bytes(transport[0:2], "big")
    if len(transport) >= 4:
        out["dst_port"] = int.from_bytes(transport[2:4], "big")
    if proto == 6:
        if len(transport) >= 14:
            out["tcp_flags"] = transport[13]
        if len(transport) >= 16:
            out["tcp_window"] = int.from_bytes(transport[14:16], "big")
    return out
