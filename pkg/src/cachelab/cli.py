"""Command-line client for the experiment service.

Subcommands build JSON requests and send them to the HTTP service; by
default an in-process instance of the app handles them, `--server URL`
targets a running one.  Exit codes: 0 success, 1 invalid configuration
or arguments, 2 runtime failure.
"""

import argparse
import asyncio
import os
import sys

import httpx

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2

_LOCAL_BASE = "http://cachelab.internal"


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on bad usage; bad usage is a
    validation error here."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cachelab",
                     description="Cache bound and policy experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--server", metavar="URL",
                       help="send requests to a running service instead of "
                            "handling them in-process")

    p = sub.add_parser("generate", help="generate a trace CSV from a config")
    p.add_argument("--config", required=True, help="experiment config path")
    p.add_argument("--seed", type=int, help="override the config master seed")
    p.add_argument("--out", help="trace CSV path (default: stdout)")
    p.add_argument("--no-header", action="store_true",
                   help="omit the CSV header row")
    common(p)

    p = sub.add_parser("run", help="run an experiment from a config")
    p.add_argument("--config", required=True, help="experiment config path")
    p.add_argument("--seed", type=int, help="override the config master seed")
    p.add_argument("--out", help="output directory "
                                 "(default: the config's [output] directory)")
    common(p)

    p = sub.add_parser("fit", help="fit per-object inter-request distributions "
                                   "to a trace CSV")
    p.add_argument("trace", help="trace CSV path")
    p.add_argument("--min-requests", type=int, default=100,
                   help="drop objects with fewer requests (default 100)")
    p.add_argument("--out", help="fit report CSV path (default: stdout)")
    common(p)

    p = sub.add_parser("summarize", help="summarize a results CSV")
    p.add_argument("results", help="results CSV path")
    p.add_argument("--out", help="write the plot-ready summary CSV here too")
    common(p)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


async def _post_async(path: str, payload: dict, server):
    if server:
        async with httpx.AsyncClient(base_url=server, timeout=None) as client:
            return await client.post(path, json=payload)
    from cachelab.service.app import app
    transport = httpx.ASGITransport(app=app)
    async with httpx.AsyncClient(transport=transport, base_url=_LOCAL_BASE,
                                 timeout=None) as client:
        return await client.post(path, json=payload)


def _post(path: str, payload: dict, server) -> dict:
    """POST and return the response body; map failures to exit codes."""
    try:
        response = asyncio.run(_post_async(path, payload, server))
    except httpx.HTTPError as exc:
        print(f"cachelab: service unreachable: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_RUNTIME) from exc
    if response.status_code in (400, 422):
        detail = response.json().get("detail", response.text)
        print(f"cachelab: {detail}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)
    if response.status_code != 200:
        print(f"cachelab: service error {response.status_code}: {response.text}",
              file=sys.stderr)
        raise SystemExit(EXIT_RUNTIME)
    return response.json()


def _read(path: str) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        print(f"cachelab: cannot read {path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID) from exc


def _write(path, text: str):
    if path is None:
        sys.stdout.write(text)
        return
    with open(path, "w") as fh:
        fh.write(text)


def _cmd_generate(args) -> int:
    payload = {"config": _read(args.config), "header": not args.no_header}
    if args.seed is not None:
        payload["seed"] = args.seed
    body = _post("/traces/generate", payload, args.server)
    _write(args.out, body["trace_csv"])
    if args.out:
        print(f"wrote {body['requests']} requests over {body['n']} objects "
              f"to {args.out}", file=sys.stderr)
    return EXIT_OK


def _cmd_run(args) -> int:
    payload = {"config": _read(args.config)}
    if args.seed is not None:
        payload["seed"] = args.seed
    body = _post("/experiments/run", payload, args.server)
    out_dir = args.out or body["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _write(os.path.join(out_dir, "results.csv"), body["results_csv"])
    _write(os.path.join(out_dir, "summary.csv"), body["summary_csv"])
    _write(os.path.join(out_dir, "summary.txt"), body["summary_text"])
    sys.stdout.write(body["summary_text"])
    print(f"wrote {body['rows']} result rows to {out_dir}/results.csv",
          file=sys.stderr)
    return EXIT_OK


def _cmd_fit(args) -> int:
    if args.min_requests < 2:
        print("cachelab: --min-requests must be >= 2", file=sys.stderr)
        return EXIT_INVALID
    payload = {"trace_csv": _read(args.trace),
               "min_requests": args.min_requests}
    body = _post("/fits/trace", payload, args.server)
    _write(args.out, body["report_csv"])
    print(f"fitted {body['n']} objects ({body['requests']} requests kept; "
          f"dropped {body['dropped_short']} short, "
          f"{body['dropped_degenerate']} degenerate)", file=sys.stderr)
    return EXIT_OK


def _cmd_summarize(args) -> int:
    body = _post("/summaries", {"results_csv": _read(args.results)}, args.server)
    sys.stdout.write(body["summary_text"])
    if args.out:
        _write(args.out, body["summary_csv"])
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn
    from cachelab.service.app import app
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "run": _cmd_run,
    "fit": _cmd_fit,
    "summarize": _cmd_summarize,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        print(f"cachelab: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
