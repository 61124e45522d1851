"""A reference echo service for the wire protocol and a conformance suite.

Run the service with ``python -m bsgkit.wire`` (stdio) or
``python -m bsgkit.wire --port 8765``. Endpoints:

* ``echo``: OK, outputs are the payload
* ``reject``: REJECTED with ``payload["error_class"]``
* ``slow``: sleeps ``--delay`` seconds, then echoes
* anything else: ``{"status": "ERROR", "error_class": "UNKNOWN_ENDPOINT"}``
"""

from __future__ import annotations

import argparse
import socketserver
import sys
import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional, Sequence

from .validator import ExternalRunner, StructuralFailure, serve_lines


def echo_handler(delay: float = 10.0) -> Callable[[str, Mapping[str, Any]], dict]:
    def handle(endpoint: str, payload: Mapping[str, Any]) -> dict:
        if endpoint == "slow":
            time.sleep(delay)
            endpoint = "echo"
        if endpoint == "echo":
            return {"status": "OK", "outputs": dict(payload)}
        if endpoint == "reject":
            return {"status": "REJECTED", "outputs": {}, "error_class": payload.get("error_class", "REJECTED")}
        return {"status": "ERROR", "error_class": "UNKNOWN_ENDPOINT"}
    return handle


def serve_port(handler, port: int) -> None:
    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            lines = (raw.decode("utf-8") for raw in self.rfile)

            def write(s: str) -> None:
                self.wfile.write(s.encode("utf-8"))
                self.wfile.flush()
            serve_lines(handler, lines, write)

    socketserver.ThreadingTCPServer.allow_reuse_address = True
    with socketserver.ThreadingTCPServer(("127.0.0.1", port), Handler) as server:
        server.serve_forever()


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="bsgkit-echo", description="wire-protocol echo service")
    parser.add_argument("--port", type=int, help="listen on 127.0.0.1:PORT instead of stdio")
    parser.add_argument("--delay", type=float, default=10.0, help="sleep for the 'slow' endpoint")
    args = parser.parse_args(argv)
    handler = echo_handler(args.delay)
    if args.port:
        serve_port(handler, args.port)
    else:
        serve_lines(handler, sys.stdin, lambda s: (sys.stdout.write(s), sys.stdout.flush()))
    return 0


# --- conformance -----------------------------------------------------------

@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


_AWKWARD = {"text": "line\nbreak \"quoted\" ünïcode", "amount": "12.50", "n": 7, "flag": True,
            "nothing": None, "items": [1, "two", {"three": 3}]}


def _expect_structural(fn) -> tuple[bool, str]:
    try:
        fn()
    except StructuralFailure as exc:
        return True, str(exc)
    return False, "call succeeded"


def conformance_suite(manifest: Mapping[str, Any], timeout: float = 1.0) -> list[Check]:
    """Framing, ordering, rejection, unknown-endpoint and timeout checks against an echo service."""
    runner = ExternalRunner(manifest, timeout=timeout)
    runner.start()
    checks: list[Check] = []
    try:
        r = runner.call("echo", _AWKWARD)
        checks.append(Check("framing round-trip", r.status == "OK" and r.outputs == _AWKWARD, repr(r.outputs)))
        seen = [runner.call("echo", {"seq": i}).outputs.get("seq") for i in range(20)]
        checks.append(Check("replies in request order", seen == list(range(20)), repr(seen)))
        r = runner.call("reject", {"error_class": "INVALID_INPUT"})
        checks.append(Check("rejection passthrough", r.status == "REJECTED" and r.error_class == "INVALID_INPUT",
                            f"{r.status} {r.error_class}"))
        ok, detail = _expect_structural(lambda: runner.call("no-such-endpoint", {}))
        checks.append(Check("unknown endpoint is structural", ok, detail))
        started = time.monotonic()
        ok, detail = _expect_structural(lambda: runner.call("slow", {}))
        elapsed = time.monotonic() - started
        checks.append(Check("timeout is structural", ok and elapsed < timeout + 3, f"{detail} ({elapsed:.2f}s)"))
        r = runner.call("echo", {"after": "timeout"})
        checks.append(Check("recovers after timeout", r.outputs == {"after": "timeout"}, repr(r.outputs)))
    finally:
        runner.stop()
    return checks


if __name__ == "__main__":
    sys.exit(main())
