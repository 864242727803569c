"""Serve any pipeline over the scorer line protocol.

One JSON object per line in each direction; requests carry ``id`` and
``caption``, responses carry ``id`` plus exactly one of ``score`` (in
[0, 1]) or ``error``. A malformed request line yields an error response for
that line only; scoring failures never take the process down.

Launch examples::

    concreteness-pipelines --model student --checkpoint student.pt
    concreteness-pipelines --model sba --checkpoint sba.pt --standardizer std.json
    concreteness-pipelines --model vba --checkpoint vba.pt --standardizer std.json \
        --transport tcp:9100 --seed 7
"""

from __future__ import annotations

import argparse
import json
import socket
import sys
from typing import Callable

from .distill import StudentScorer
from .sba import SbaModel
from .standardizer import Standardizer
from .textproc import best_of, similarity_provider
from .vba import VbaPipeline


def build_scorer(model: str, checkpoint: str, standardizer_path: str | None,
                 seed: int, similarity: str) -> Callable[[str], float]:
    """Load a pipeline and wrap it as caption -> score in [0, 1].

    Reconstruction pipelines serve the standardized best-of-beams fidelity,
    so a standardizer file is required for them; the student serves its
    direct prediction clamped to [0, 1].
    """
    if model == "student":
        student = StudentScorer.load(checkpoint)

        def score(caption: str) -> float:
            value = float(student.predict([caption])[0])
            return min(max(value, 0.0), 1.0)

        return score

    if standardizer_path is None:
        raise ValueError(f"--standardizer is required for the {model} pipeline")
    standardizer = Standardizer.load(standardizer_path)
    sim = similarity_provider(similarity)

    if model == "sba":
        sba = SbaModel.load(checkpoint)

        def score(caption: str) -> float:
            _, fidelity = best_of(caption, sba.reconstruct(caption), sim)
            return min(max(standardizer.standardize(caption, fidelity), 0.0), 1.0)

        return score

    if model == "vba":
        pipeline = VbaPipeline.load(checkpoint)

        def score(caption: str) -> float:
            _, texts = pipeline.reconstruct(caption, seed)
            _, fidelity = best_of(caption, texts, sim)
            return min(max(standardizer.standardize(caption, fidelity), 0.0), 1.0)

        return score

    raise ValueError(f"unknown model kind {model!r}")


def respond(line: str, score: Callable[[str], float]) -> str:
    try:
        obj = json.loads(line)
        request_id = obj["id"]
        caption = obj["caption"]
        if not isinstance(request_id, str) or not request_id or not isinstance(caption, str):
            raise ValueError("bad request fields")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
        return json.dumps({"id": "", "error": "malformed request"})
    try:
        return json.dumps({"id": request_id, "score": score(caption)})
    except Exception as exc:  # per-request isolation
        return json.dumps({"id": request_id, "error": f"scoring failed: {exc}"})


def serve_scorer(score: Callable[[str], float], lines, write) -> None:
    """Protocol loop: one response line per non-empty request line."""
    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        write(respond(line, score) + "\n")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--model", required=True, choices=("sba", "vba", "student"))
    parser.add_argument("--checkpoint", required=True, help="pipeline checkpoint file")
    parser.add_argument("--standardizer",
                        help="standardizer model file (required for sba/vba)")
    parser.add_argument("--transport", default="stdio", help="stdio or tcp:PORT")
    parser.add_argument("--seed", type=int, default=0,
                        help="image sampler seed (vba)")
    parser.add_argument("--similarity", default="edit", choices=("edit", "bertscore"),
                        help="reconstruction fidelity measure (sba/vba)")
    args = parser.parse_args(argv)

    score = build_scorer(args.model, args.checkpoint, args.standardizer,
                         args.seed, args.similarity)

    if args.transport == "stdio":
        def write(text: str) -> None:
            sys.stdout.write(text)
            sys.stdout.flush()

        serve_scorer(score, sys.stdin, write)
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

            serve_scorer(score, reader, write)
        server.close()
        return 0

    parser.error(f"unknown transport {args.transport!r}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
