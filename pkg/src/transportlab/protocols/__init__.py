"""Protocol packages: each exports build_deploy_spec() plus a Driver the
simulator's application layer uses to construct app events for that protocol.
"""

from . import homa, quic, tcp

PROTOCOLS = {
    "tcp": tcp,
    "homa": homa,
    "quic": quic,
}


def protocol_module(name):
    try:
        return PROTOCOLS[name]
    except KeyError:
        raise KeyError(f"unknown protocol {name!r}; have {sorted(PROTOCOLS)}") from None
