"""Scenario definition and config-file parsing.

A scenario file is TOML: top-level key/values, one table per host, link and
flow, and a `script` block of workload lines such as

    at 1ms host 0 send flow 1 bytes 1000000

Validation reports the offending field path (e.g. links[0].bandwidth).
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from ..errors import ConfigError

TRACE_LEVELS = ("full", "summary", "off")


@dataclass(frozen=True)
class HostSpec:
    host_id: int
    addr: int
    protocol: str
    params: tuple = ()  # sorted (key, value) pairs for build_deploy_spec


@dataclass(frozen=True)
class LinkSpec:
    a: int
    b: int
    delay_ns: int
    bandwidth: float  # bytes per second
    loss: float = 0.0
    reorder: float = 0.0
    loss_fwd: float = None  # a->b override
    loss_rev: float = None  # b->a override

    def loss_for(self, src):
        if src == self.a and self.loss_fwd is not None:
            return self.loss_fwd
        if src == self.b and self.loss_rev is not None:
            return self.loss_rev
        return self.loss


@dataclass(frozen=True)
class FlowSpec:
    flow_id: int
    src: int
    dst: int
    src_addr: int
    dst_addr: int
    src_port: int
    dst_port: int
    auto_recv: bool = True

    @property
    def client_key(self):
        return (self.src_addr, self.src_port, self.dst_addr, self.dst_port)

    @property
    def server_key(self):
        return (self.dst_addr, self.dst_port, self.src_addr, self.src_port)


@dataclass(frozen=True)
class ScriptEntry:
    time: int
    host: int
    action: str  # "send" | "recv"
    flow: int
    stream: int = 0
    nbytes: int = 0


@dataclass(frozen=True)
class AssertionSpec:
    kind: str
    value: float = None


@dataclass
class Scenario:
    hosts: tuple
    links: tuple
    flows: tuple
    script: tuple
    seed: int = 0
    duration_ns: int = 1_000_000_000
    mss: int = 1460
    trace_level: str = "full"
    assertions: tuple = ()

    def flow(self, flow_id):
        for f in self.flows:
            if f.flow_id == flow_id:
                return f
        raise ConfigError(f"flow {flow_id}", "unknown flow")

    def to_canonical(self):
        return {
            "hosts": [asdict(h) for h in self.hosts],
            "links": [asdict(l) for l in self.links],
            "flows": [asdict(f) for f in self.flows],
            "script": [asdict(s) for s in self.script],
            "seed": self.seed,
            "duration_ns": self.duration_ns,
            "mss": self.mss,
            "trace_level": self.trace_level,
            "assertions": [asdict(a) for a in self.assertions],
        }

    def digest(self):
        blob = json.dumps(self.to_canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


# -- unit parsing -------------------------------------------------------------

_TIME_UNITS = {"ns": 1, "us": 1_000, "ms": 1_000_000, "s": 1_000_000_000}


def parse_time(value, path):
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        return int(value)
    if isinstance(value, str):
        s = value.strip()
        for suffix in ("ns", "us", "ms", "s"):
            if s.endswith(suffix):
                num = s[:-len(suffix)].strip()
                try:
                    return int(float(num) * _TIME_UNITS[suffix])
                except ValueError:
                    break
    raise ConfigError(path, f"cannot parse time {value!r} (want ns int or e.g. '50us')")


def parse_bandwidth(value, path):
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        s = value.strip()
        scales = [("Gbps", 1e9 / 8), ("Mbps", 1e6 / 8), ("Kbps", 1e3 / 8),
                  ("GBps", 1e9), ("MBps", 1e6), ("KBps", 1e3), ("bps", 1 / 8)]
        for suffix, scale in scales:
            if s.endswith(suffix):
                try:
                    return float(s[:-len(suffix)]) * scale
                except ValueError:
                    break
    raise ConfigError(path, f"cannot parse bandwidth {value!r} (want bytes/sec or e.g. '1Gbps')")


def parse_addr(value, path):
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        parts = value.split(".")
        if len(parts) == 4 and all(p.isdigit() and 0 <= int(p) <= 255 for p in parts):
            a, b, c, d = (int(p) for p in parts)
            return a << 24 | b << 16 | c << 8 | d
    raise ConfigError(path, f"cannot parse address {value!r}")


def _require(table, key, path):
    if key not in table:
        raise ConfigError(f"{path}.{key}", "required field missing")
    return table[key]


def _opt(table, key, default):
    return table.get(key, default)


def parse_script_line(line, lineno, hosts, flows):
    toks = line.split()
    path = f"script[{lineno}]"
    def want(i, word):
        if len(toks) <= i or toks[i] != word:
            raise ConfigError(path, f"expected {word!r} in {line!r}")
    want(0, "at")
    time = parse_time(toks[1] if len(toks) > 1 else None, path)
    want(2, "host")
    try:
        host = int(toks[3])
    except (IndexError, ValueError):
        raise ConfigError(path, "bad host id") from None
    if host not in hosts:
        raise ConfigError(path, f"unknown host {host}")
    if len(toks) < 5 or toks[4] not in ("send", "recv"):
        raise ConfigError(path, "expected 'send' or 'recv'")
    action = toks[4]
    want(5, "flow")
    try:
        flow = int(toks[6])
    except (IndexError, ValueError):
        raise ConfigError(path, "bad flow id") from None
    if flow not in flows:
        raise ConfigError(path, f"unknown flow {flow}")
    rest = toks[7:]
    stream = 0
    if rest[:1] == ["stream"]:
        try:
            stream = int(rest[1])
        except (IndexError, ValueError):
            raise ConfigError(path, "bad stream id") from None
        rest = rest[2:]
    if rest[:1] != ["bytes"] or len(rest) < 2:
        raise ConfigError(path, "expected 'bytes <n>'")
    try:
        nbytes = int(rest[1])
    except ValueError:
        raise ConfigError(path, "bad byte count") from None
    if nbytes <= 0:
        raise ConfigError(path, "byte count must be positive")
    return ScriptEntry(time, host, action, flow, stream, nbytes)


def scenario_from_dict(data):
    hosts = []
    seen_hosts = {}
    for i, h in enumerate(data.get("hosts", ())):
        path = f"hosts[{i}]"
        hid = _require(h, "id", path)
        addr = parse_addr(_require(h, "addr", path), f"{path}.addr")
        proto = _require(h, "protocol", path)
        params = tuple(sorted(_opt(h, "params", {}).items()))
        if hid in seen_hosts:
            raise ConfigError(f"{path}.id", f"duplicate host id {hid}")
        seen_hosts[hid] = addr
        hosts.append(HostSpec(hid, addr, proto, params))
    if not hosts:
        raise ConfigError("hosts", "at least one host required")

    links = []
    for i, l in enumerate(data.get("links", ())):
        path = f"links[{i}]"
        ends = _require(l, "hosts", path)
        if not (isinstance(ends, list) and len(ends) == 2):
            raise ConfigError(f"{path}.hosts", "want [a, b]")
        a, b = ends
        for h in (a, b):
            if h not in seen_hosts:
                raise ConfigError(f"{path}.hosts", f"unknown host {h}")
        delay = parse_time(_require(l, "delay", path), f"{path}.delay")
        bw = parse_bandwidth(_require(l, "bandwidth", path), f"{path}.bandwidth")
        if bw <= 0:
            raise ConfigError(f"{path}.bandwidth", "must be positive")
        loss = float(_opt(l, "loss", 0.0))
        reorder = float(_opt(l, "reorder", 0.0))
        for name, p in (("loss", loss), ("reorder", reorder)):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{path}.{name}", "probability must be in [0, 1]")
        lf = l.get("loss_fwd")
        lr = l.get("loss_rev")
        links.append(LinkSpec(a, b, delay, bw, loss, reorder,
                              None if lf is None else float(lf),
                              None if lr is None else float(lr)))

    flows = []
    seen_flows = set()
    for i, f in enumerate(data.get("flows", ())):
        path = f"flows[{i}]"
        fid = _require(f, "id", path)
        src = _require(f, "src", path)
        dst = _require(f, "dst", path)
        for h in (src, dst):
            if h not in seen_hosts:
                raise ConfigError(path, f"unknown host {h}")
        if fid in seen_flows:
            raise ConfigError(f"{path}.id", f"duplicate flow id {fid}")
        seen_flows.add(fid)
        flows.append(FlowSpec(fid, src, dst, seen_hosts[src], seen_hosts[dst],
                              int(_opt(f, "src_port", 5000)), int(_opt(f, "dst_port", 80)),
                              bool(_opt(f, "auto_recv", True))))

    script = []
    raw_script = data.get("script", "")
    if isinstance(raw_script, str):
        lines = [ln.strip() for ln in raw_script.splitlines()]
    else:
        lines = [str(ln).strip() for ln in raw_script]
    n = 0
    for ln in lines:
        if not ln or ln.startswith("#"):
            continue
        script.append(parse_script_line(ln, n, seen_hosts, seen_flows))
        n += 1
    script.sort(key=lambda e: e.time)

    assertions = []
    for i, a in enumerate(data.get("assertions", ())):
        path = f"assertions[{i}]"
        kind = _require(a, "kind", path)
        if kind not in ("full_delivery", "min_retransmits", "max_p99_slowdown"):
            raise ConfigError(f"{path}.kind", f"unknown assertion kind {kind!r}")
        value = a.get("value")
        assertions.append(AssertionSpec(kind, None if value is None else float(value)))

    trace_level = _opt(data, "trace", "full")
    if trace_level not in TRACE_LEVELS:
        raise ConfigError("trace", f"must be one of {TRACE_LEVELS}")

    scenario = Scenario(
        hosts=tuple(hosts),
        links=tuple(links),
        flows=tuple(flows),
        script=tuple(script),
        seed=int(_opt(data, "seed", 0)),
        duration_ns=parse_time(_opt(data, "duration", "1s"), "duration"),
        mss=int(_opt(data, "mss", 1460)),
        trace_level=trace_level,
        assertions=tuple(assertions),
    )
    _check_protocols(scenario)
    return scenario


def _check_protocols(scenario):
    proto = {h.host_id: h.protocol for h in scenario.hosts}
    for i, f in enumerate(scenario.flows):
        if proto[f.src] != proto[f.dst]:
            raise ConfigError(f"flows[{i}]", f"endpoints run different protocols "
                                             f"({proto[f.src]} vs {proto[f.dst]})")


def load_scenario(path):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(str(path), "no such scenario file") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"TOML syntax error: {exc}") from None
    return scenario_from_dict(data)
