"""Seeded synthetic traffic scenarios with point, collective and contextual events.

Background distributions are fixed constants chosen for controllability, not
realism: clients talk to a small server pool on popular ports with a mixed
TCP/UDP/ICMP diet. Scenarios may also inject benign flash-crowd bursts, which
share the collective event's per-second signature but last only a few seconds;
they keep the benign class interesting without touching the truth labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ingest import TCP_FLAG_BITS, PacketHeader
from .labeling import Label

EVENT_KINDS = ("point", "collective", "contextual")

# Background draw tables (weights sum to 1 per table).
_POPULAR_PORTS = (80, 443, 53, 22, 25, 123, 8080, 3306)
_PORT_WEIGHTS = (0.35, 0.25, 0.12, 0.05, 0.04, 0.06, 0.08, 0.05)
_TTL_CHOICES = (64, 63, 62, 61, 128, 127, 126, 255, 254)
_TTL_WEIGHTS = (0.30, 0.12, 0.08, 0.05, 0.20, 0.10, 0.05, 0.06, 0.04)
_WINDOW_CHOICES = (8192, 16384, 29200, 64240, 65535)
_FLAG_ACK = TCP_FLAG_BITS["ACK"]
_FLAG_PSH_ACK = TCP_FLAG_BITS["PSH"] | TCP_FLAG_BITS["ACK"]
_FLAG_SYN = TCP_FLAG_BITS["SYN"]
_FLAG_SYN_ACK = TCP_FLAG_BITS["SYN"] | TCP_FLAG_BITS["ACK"]
_FLAG_FIN_ACK = TCP_FLAG_BITS["FIN"] | TCP_FLAG_BITS["ACK"]
_FLAG_RST = TCP_FLAG_BITS["RST"]
_BG_FLAGS = (_FLAG_ACK, _FLAG_PSH_ACK, _FLAG_SYN, _FLAG_SYN_ACK, _FLAG_FIN_ACK, _FLAG_RST)
_BG_FLAG_WEIGHTS = (0.55, 0.30, 0.06, 0.04, 0.04, 0.01)

_POINT_FLAGS = (
    TCP_FLAG_BITS["SYN"] | TCP_FLAG_BITS["FIN"],
    TCP_FLAG_BITS["FIN"] | TCP_FLAG_BITS["PSH"] | TCP_FLAG_BITS["URG"],
    TCP_FLAG_BITS["SYN"] | TCP_FLAG_BITS["RST"],
    TCP_FLAG_BITS["URG"],
)


class InvalidScenario(Exception):
    pass


@dataclass(frozen=True)
class InjectedEvent:
    kind: str  # point | collective | contextual
    start: int
    length: int
    intensity: float


@dataclass(frozen=True)
class BenignBurst:
    start: int
    length: int
    intensity: float


@dataclass
class Scenario:
    """A reproducible traffic experiment: background pools plus injections."""

    duration: int
    rate: float  # mean background packets per second
    clients: int
    servers: int
    seed: int
    events: list[InjectedEvent] = field(default_factory=list)
    bursts: list[BenignBurst] = field(default_factory=list)

    def validate(self) -> None:
        if self.duration < 1:
            raise InvalidScenario(f"duration must be >= 1, got {self.duration}")
        if self.rate <= 0:
            raise InvalidScenario(f"rate must be positive, got {self.rate}")
        if self.clients < 1 or self.servers < 1:
            raise InvalidScenario("host pools must hold at least one host")
        for e in self.events:
            if e.kind not in EVENT_KINDS:
                raise InvalidScenario(f"unknown event kind {e.kind!r}")
            _check_span(e.start, e.length, e.intensity, self.duration, "event")
        for b in self.bursts:
            _check_span(b.start, b.length, b.intensity, self.duration, "burst")

    def truth_labels(self) -> list[Label]:
        """Per-second labels: ANOMALY iff the second overlaps an injected event."""
        labels = [Label.BENIGN] * self.duration
        for e in self.events:
            for t in range(e.start, e.start + e.length):
                labels[t] = Label.ANOMALY
        return labels

    def type_seconds(self) -> dict[str, set[int]]:
        """Seconds covered by each event kind (a second may carry several kinds)."""
        out: dict[str, set[int]] = {kind: set() for kind in EVENT_KINDS}
        for e in self.events:
            out[e.kind].update(range(e.start, e.start + e.length))
        return out


def _check_span(start: int, length: int, intensity: float, duration: int, what: str) -> None:
    if length < 1:
        raise InvalidScenario(f"{what} length must be >= 1, got {length}")
    if start < 0 or start + length > duration:
        raise InvalidScenario(f"{what} [{start}, {start + length}) outside duration {duration}")
    if intensity <= 0:
        raise InvalidScenario(f"{what} intensity must be positive, got {intensity}")


def parse_scenario(text: str) -> Scenario:
    """Parse the key/value + event-list scenario format."""
    values: dict[str, float] = {}
    events: list[InjectedEvent] = []
    bursts: list[BenignBurst] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "event":
                if len(parts) != 5:
                    raise ValueError("event needs: event KIND START LENGTH INTENSITY")
                events.append(
                    InjectedEvent(parts[1], int(parts[2]), int(parts[3]), float(parts[4]))
                )
            elif parts[0] == "burst":
                if len(parts) != 4:
                    raise ValueError("burst needs: burst START LENGTH INTENSITY")
                bursts.append(BenignBurst(int(parts[1]), int(parts[2]), float(parts[3])))
            elif len(parts) == 2:
                values[parts[0]] = float(parts[1])
            else:
                raise ValueError(f"unrecognized line {line!r}")
        except ValueError as exc:
            raise InvalidScenario(f"line {line_no}: {exc}") from exc
    missing = {"duration", "rate", "clients", "servers", "seed"} - values.keys()
    if missing:
        raise InvalidScenario(f"missing keys: {sorted(missing)}")
    scenario = Scenario(
        duration=int(values["duration"]),
        rate=values["rate"],
        clients=int(values["clients"]),
        servers=int(values["servers"]),
        seed=int(values["seed"]),
        events=events,
        bursts=bursts,
    )
    scenario.validate()
    return scenario


def emit_scenario(s: Scenario) -> str:
    lines = [
        f"duration {s.duration}",
        f"rate {s.rate:g}",
        f"clients {s.clients}",
        f"servers {s.servers}",
        f"seed {s.seed}",
    ]
    lines += [f"event {e.kind} {e.start} {e.length} {e.intensity:g}" for e in s.events]
    lines += [f"burst {b.start} {b.length} {b.intensity:g}" for b in s.bursts]
    return "\n".join(lines) + "\n"


def generate_traffic(s: Scenario) -> tuple[list[PacketHeader], list[Label]]:
    """Generate one scenario's packets and per-second truth labels.

    The draw order is fixed (background, then events, then bursts, second by
    second), so a seed fully determines the output.
    """
    s.validate()
    rng = np.random.default_rng(s.seed)
    client_ips = [f"10.0.{i // 200}.{i % 200 + 1}" for i in range(s.clients)]
    server_ips = [f"10.1.0.{i + 1}" for i in range(s.servers)]

    headers: list[PacketHeader] = []
    for t in range(s.duration):
        second: list[PacketHeader] = []
        _background_second(second, rng, t, s.rate, client_ips, server_ips)
        for e in s.events:
            if e.start <= t < e.start + e.length:
                if e.kind == "point":
                    _point_second(second, rng, t, e, client_ips)
                elif e.kind == "collective":
                    _flood_second(second, rng, t, s.rate, e.intensity, "10.200",
                                  server_ips[(e.start * 7) % len(server_ips)],
                                  syn_lo=0.25, syn_hi=0.50)
                else:
                    _scan_second(second, rng, t, s.rate, e)
        for b in s.bursts:
            if b.start <= t < b.start + b.length:
                _flood_second(second, rng, t, s.rate, b.intensity, "10.30",
                              server_ips[(b.start * 5) % len(server_ips)],
                              syn_lo=0.05, syn_hi=0.30)
        second.sort(key=lambda h: h.timestamp)
        headers.extend(second)
    return headers, s.truth_labels()


def _draw(rng: np.random.Generator, choices, weights) -> int:
    return int(choices[rng.choice(len(choices), p=weights)])


def _background_second(out, rng, t, rate, client_ips, server_ips) -> None:
    for _ in range(rng.poisson(rate)):
        u = rng.random()
        src = client_ips[rng.integers(0, len(client_ips))]
        dst = server_ips[rng.integers(0, len(server_ips))]
        if u < 0.72:  # TCP
            frame = _tcp_frame_len(rng)
            out.append(
                PacketHeader(
                    timestamp=t + rng.random(),
                    src_ip=src,
                    dst_ip=dst,
                    src_port=int(rng.integers(1024, 65536)),
                    dst_port=_draw(rng, _POPULAR_PORTS, _PORT_WEIGHTS),
                    protocol=6,
                    frame_len=frame,
                    ip_len=frame - 14,
                    ip_version=4,
                    ttl=_draw(rng, _TTL_CHOICES, _TTL_WEIGHTS),
                    tcp_flags=_draw(rng, _BG_FLAGS, _BG_FLAG_WEIGHTS),
                    tcp_window=int(_WINDOW_CHOICES[rng.integers(0, len(_WINDOW_CHOICES))]),
                )
            )
        elif u < 0.95:  # UDP
            frame = int(rng.integers(60, 600))
            out.append(
                PacketHeader(
                    timestamp=t + rng.random(),
                    src_ip=src,
                    dst_ip=dst,
                    src_port=int(rng.integers(1024, 65536)),
                    dst_port=int((53, 123, 443)[rng.integers(0, 3)]),
                    protocol=17,
                    frame_len=frame,
                    ip_len=frame - 14,
                    ip_version=4,
                    ttl=_draw(rng, _TTL_CHOICES, _TTL_WEIGHTS),
                )
            )
        else:  # ICMP
            frame = int(rng.integers(64, 128))
            out.append(
                PacketHeader(
                    timestamp=t + rng.random(),
                    src_ip=src,
                    dst_ip=dst,
                    src_port=0,
                    dst_port=0,
                    protocol=1,
                    frame_len=frame,
                    ip_len=frame - 14,
                    ip_version=4,
                    ttl=_draw(rng, _TTL_CHOICES, _TTL_WEIGHTS),
                )
            )


def _tcp_frame_len(rng) -> int:
    band = rng.random()
    if band < 0.40:  # bare acks
        return int(rng.integers(60, 90))
    if band < 0.70:  # requests
        return int(rng.integers(200, 700))
    return int(rng.integers(900, 1515))  # data segments


def _point_second(out, rng, t, event, client_ips) -> None:
    """A short burst of jumbo frames with rare flag combinations from one host."""
    src = client_ips[(event.start * 3) % len(client_ips)]
    for _ in range(max(3, round(event.intensity * 4))):
        frame = int(rng.integers(4000, 9001))
        out.append(
            PacketHeader(
                timestamp=t + rng.random(),
                src_ip=src,
                dst_ip=f"10.1.0.{rng.integers(1, 250)}",
                src_port=int(rng.integers(1024, 65536)),
                dst_port=int(rng.integers(10000, 65536)),
                protocol=6,
                frame_len=frame,
                ip_len=frame - 14,
                ip_version=4,
                ttl=_draw(rng, _TTL_CHOICES, _TTL_WEIGHTS),
                tcp_flags=int(_POINT_FLAGS[rng.integers(0, len(_POINT_FLAGS))]),
                tcp_window=int(rng.integers(0, 2)),
            )
        )


def _flood_second(out, rng, t, rate, intensity, src_prefix, victim, syn_lo, syn_hi) -> None:
    """Many distinct sources, few normal-looking packets each, one destination.

    Used for both the collective anomaly and benign flash-crowd bursts; only
    the source prefix, the SYN share band and (crucially) the duration differ.
    """
    syn_frac = rng.uniform(syn_lo, syn_hi)
    for _ in range(round(intensity * rate)):
        frame = int(rng.integers(60, 700))
        out.append(
            PacketHeader(
                timestamp=t + rng.random(),
                src_ip=f"{src_prefix}.{rng.integers(0, 200)}.{rng.integers(1, 250)}",
                dst_ip=victim,
                src_port=int(rng.integers(1024, 65536)),
                dst_port=80,
                protocol=6,
                frame_len=frame,
                ip_len=frame - 14,
                ip_version=4,
                ttl=_draw(rng, _TTL_CHOICES, _TTL_WEIGHTS),
                tcp_flags=_FLAG_SYN if rng.random() < syn_frac else _FLAG_PSH_ACK,
                tcp_window=int(_WINDOW_CHOICES[rng.integers(0, len(_WINDOW_CHOICES))]),
            )
        )


def _scan_second(out, rng, t, rate, event) -> None:
    """One source probing many hosts and ports with tiny packets."""
    for _ in range(round(event.intensity * rate)):
        out.append(
            PacketHeader(
                timestamp=t + rng.random(),
                src_ip="10.77.7.7",
                dst_ip=f"10.1.0.{rng.integers(1, 250)}",
                src_port=int(rng.integers(40000, 65536)),
                dst_port=int(rng.integers(1, 65536)),
                protocol=6,
                frame_len=60,
                ip_len=44,
                ip_version=4,
                ttl=64,
                tcp_flags=_FLAG_SYN,
                tcp_window=1024,
            )
        )
