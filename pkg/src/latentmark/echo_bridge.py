"""Echo bridge: a wire-protocol test double that behaves as the identity channel.

Run with ``python -m latentmark.echo_bridge``.  Speaks the lmk-bridge
newline-delimited JSON protocol on stdin/stdout and echoes payloads back for
both forward and invert, so detectors see exact round trips.
"""

from __future__ import annotations

import json
import sys


def serve(stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    stdout.write(json.dumps({"protocol": "lmk-bridge", "version": 1}) + "\n")
    stdout.flush()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
            req_id = req["id"]
            op = req["op"]
            shape = req["shape"]
            data_b64 = req["data_b64"]
        except (json.JSONDecodeError, KeyError) as exc:
            stdout.write(json.dumps({"id": None, "ok": False, "error": f"bad request: {exc}"}) + "\n")
            stdout.flush()
            continue
        if op not in ("forward", "invert"):
            resp = {"id": req_id, "ok": False, "error": f"unknown op {op!r}"}
        else:
            resp = {"id": req_id, "ok": True, "shape": shape, "data_b64": data_b64}
        stdout.write(json.dumps(resp) + "\n")
        stdout.flush()


if __name__ == "__main__":
    serve()
