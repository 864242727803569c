"""Deterministic scorer process for tests and pipeline dry runs.

Speaks the scorer line protocol on stdio (default) or a TCP port. Scores
come from :func:`concreteness.gateway.stub_score` unless a lookup table is
given. ``--reorder N`` buffers N requests and answers them in reverse, which
exercises the gateway's id-based (order-free) matching.
"""

from __future__ import annotations

import argparse
import json
import socket
import sys

from .gateway import stub_score


def make_response(line: str, table: dict | None, fail_ids: set[str]) -> str:
    try:
        obj = json.loads(line)
        request_id = obj["id"]
        caption = obj.get("caption", "")
        if not isinstance(request_id, str) or not request_id:
            raise ValueError("bad id")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        return json.dumps({"id": "", "error": "malformed request"})
    if request_id in fail_ids:
        return json.dumps({"id": request_id, "error": "injected failure"})
    if table is not None:
        if request_id not in table:
            return json.dumps({"id": request_id, "error": "unknown id"})
        return json.dumps({"id": request_id, "score": table[request_id]})
    return json.dumps({"id": request_id, "score": stub_score(caption)})


def serve(lines, write, table: dict | None, fail_ids: set[str], reorder: int) -> None:
    buffered: list[str] = []

    def flush():
        for response in reversed(buffered):
            write(response + "\n")
        buffered.clear()

    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        response = make_response(line, table, fail_ids)
        if reorder > 1:
            buffered.append(response)
            if len(buffered) >= reorder:
                flush()
        else:
            write(response + "\n")
    flush()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--table", help="JSON file mapping id -> score; ids absent "
                                        "from the table get an 'unknown id' error")
    parser.add_argument("--fail-ids", default="", help="comma-separated ids that "
                                                       "always get an error response")
    parser.add_argument("--reorder", type=int, default=1,
                        help="buffer this many requests and answer them in reverse")
    parser.add_argument("--transport", default="stdio", help="stdio or tcp:PORT")
    args = parser.parse_args(argv)

    table = None
    if args.table:
        with open(args.table, encoding="utf-8") as fh:
            table = json.load(fh)
    fail_ids = {x for x in args.fail_ids.split(",") if x}

    if args.transport == "stdio":
        out = sys.stdout

        def write(text: str) -> None:
            out.write(text)
            out.flush()

        serve(sys.stdin, write, table, fail_ids, args.reorder)
        return 0

    if args.transport.startswith("tcp:"):
        port = int(args.transport[len("tcp:"):])
        server = socket.create_server(("127.0.0.1", port))
        conn, _ = server.accept()
        with conn:
            reader = conn.makefile("r", encoding="utf-8", newline="\n")
            writer = conn.makefile("w", encoding="utf-8", newline="\n")

            def write(text: str) -> None:
                writer.write(text)
                writer.flush()

            serve(reader, write, table, fail_ids, args.reorder)
        server.close()
        return 0

    parser.error(f"unknown transport {args.transport!r}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
