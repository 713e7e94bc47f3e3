"""Command-line entry points: `serve` and `batch`."""

from __future__ import annotations

import argparse
import sys
import threading

from .batch import AnnotationJob, batch_annotate, write_error_sidecar
from .models import load_model
from .service import VqaService


def cmd_serve(args) -> int:
    service = VqaService(model=None, host=args.host, port=args.port)

    def load():
        try:
            service.set_model(load_model(args.model))
            print(f"model '{args.model}' ready", file=sys.stderr)
        except Exception as exc:
            print(f"model load failed: {exc}", file=sys.stderr)

    # the port answers immediately (503 until the model is in place)
    threading.Thread(target=load, daemon=True).start()
    print(f"serving on {args.host}:{args.port}", file=sys.stderr)
    service.serve_forever()
    return 0


def cmd_batch(args) -> int:
    model = load_model(args.model)
    job = AnnotationJob(
        image_dir=args.images,
        labels=args.labels,
        template=args.template,
        fixture_path=args.out,
        matrix_path=args.matrix,
        ids_path=args.ids,
    )
    result = batch_annotate(job, model)
    sidecar = write_error_sidecar(job, result)
    print(f"answered {result.n_answered} pairs "
          f"({result.n_cached} already present)")
    if result.errors:
        print(f"{len(result.errors)} image(s) failed; see {sidecar}",
              file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corsem-annotator",
        description="VQA annotation service and batch tool")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the VQA HTTP service")
    p_serve.add_argument("--model", default="stub",
                         help="'stub' or 'blip:<checkpoint>'")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8077)
    p_serve.set_defaults(fn=cmd_serve)

    p_batch = sub.add_parser("batch", help="annotate an image directory")
    p_batch.add_argument("--model", default="stub")
    p_batch.add_argument("--images", required=True)
    p_batch.add_argument("--labels", nargs="+", required=True)
    p_batch.add_argument(
        "--template",
        default="Is there any {label} that can be easily recognized in this image?")
    p_batch.add_argument("--out", required=True, help="fixture TSV path")
    p_batch.add_argument("--matrix", default=None,
                         help="binary annotation container path")
    p_batch.add_argument("--ids", default=None,
                         help="JSON sidecar with stimulus ids and labels")
    p_batch.set_defaults(fn=cmd_batch)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:
        print(f"corsem-annotator-error: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
