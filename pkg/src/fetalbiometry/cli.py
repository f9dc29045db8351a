"""Command-line client.

Every subcommand builds a request model and runs it through the service
handlers, either in-process (default) or against a running server via
--server URL. Exit codes: 0 success, 2 input error, 3 all frames failed,
64 usage/config error. stdout carries only progress lines (silenced by
--quiet); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from .agreement import ICC_VARIANTS
from .errors import BadInput, FetalBiometryError
from .pipeline import REPORT_SCHEMA
from .service import handlers
from .service.models import (
    AgreeRequest,
    AnalyzeRequest,
    ConfigOverrides,
    EvaluateRequest,
    PhantomRequest,
)
from .version import __version__

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_EMPTY = 3
EXIT_USAGE = 64

# domain error kinds that are not plain input errors
_EXIT_BY_KIND = {"BadConfig": EXIT_USAGE, "AllFramesFailed": EXIT_EMPTY}

_CONFIG_KEYS = (
    "gate_threshold",
    "mask_threshold",
    "rdp_eps_rel",
    "dice_eps",
    "femur_weights",
    "ellipse_weights",
    "threads",
)
_CONFIG_SCALARS = {
    "gate_threshold": float,
    "mask_threshold": float,
    "rdp_eps_rel": float,
    "dice_eps": float,
    "threads": int,
}


class UsageError(Exception):
    pass


class RemoteError(Exception):
    """Domain error relayed by a server, carrying the original kind."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: ANN202 - argparse override
        raise UsageError(f"{self.prog}: {message}")


def _floats_csv(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_config_file(path: str) -> dict:
    """Parse a JSON config file into AnalysisConfig keyword overrides.

    Shape: scalar keys at top level, composite weights nested under
    `weights` as `femur` / `ellipse_parts`. Unknown keys are rejected
    rather than ignored.
    """
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"{p}: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"{p}: config must be a JSON object")
    out: dict = {}
    try:
        for key, val in raw.items():
            if key == "weights":
                if not isinstance(val, dict):
                    raise UsageError(f"{p}: weights must be an object")
                for wkey, wval in val.items():
                    if wkey == "femur":
                        out["femur_weights"] = tuple(float(x) for x in wval)
                    elif wkey == "ellipse_parts":
                        out["ellipse_weights"] = tuple(float(x) for x in wval)
                    else:
                        raise UsageError(f"{p}: unknown weights key {wkey!r}")
            elif key in _CONFIG_SCALARS:
                out[key] = _CONFIG_SCALARS[key](val)
            else:
                raise UsageError(f"{p}: unknown config key {key!r}")
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{p}: {exc}") from exc
    return out


def _merge_config(args: argparse.Namespace) -> ConfigOverrides:
    """Resolve config precedence: flags > config file > service defaults."""
    merged: dict = {}
    if getattr(args, "config", None):
        merged.update(_load_config_file(args.config))
    for key in _CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    try:
        return ConfigOverrides(**merged)
    except ValueError as exc:
        raise UsageError(f"bad config value: {exc}") from exc


def _post(server: str, route: str, payload: dict) -> dict:
    import httpx

    url = server.rstrip("/") + route
    try:
        resp = httpx.post(url, json=payload, timeout=600.0)
        body = resp.json()
    except httpx.HTTPError as exc:
        raise BadInput(f"request to {url} failed: {exc}") from exc
    except ValueError as exc:
        raise BadInput(f"{url} returned non-JSON body: {exc}") from exc
    if resp.status_code >= 400:
        err = body.get("error") if isinstance(body, dict) else None
        if isinstance(err, dict) and "kind" in err:
            raise RemoteError(str(err["kind"]), str(err.get("message", "")))
        raise BadInput(f"{url} returned status {resp.status_code}: {body}")
    return body


def _write_text(path: str, text: str, quiet: bool) -> None:
    p = Path(path)
    p.write_text(text, encoding="utf-8")
    if not quiet:
        print(f"wrote {p}")


def _cmd_analyze(args: argparse.Namespace) -> int:
    req = AnalyzeRequest(
        input_dir=args.input,
        backend=args.backend,
        seed=args.seed,
        config=_merge_config(args),
    )
    if args.server:
        payload = _post(args.server, "/analyze", req.model_dump())
    else:
        payload = handlers.handle_analyze(req).model_dump()
    _write_text(args.output, _canonical_json(payload["report"]), args.quiet)
    if args.frames_csv:
        _write_text(args.frames_csv, payload["frames_csv"], args.quiet)
    return EXIT_OK


def _cmd_phantom(args: argparse.Namespace) -> int:
    req = PhantomRequest(out_dir=args.out, seed=args.seed, spec_path=args.spec)
    if args.server:
        payload = _post(args.server, "/phantom", req.model_dump())
    else:
        payload = handlers.handle_phantom(req).model_dump()
    if not args.quiet:
        print(
            f"wrote study {payload['study_id']} "
            f"({payload['frame_count']} frames, {len(payload['files'])} files) to {args.out}"
        )
    return EXIT_OK


def _cmd_agree(args: argparse.Namespace) -> int:
    req = AgreeRequest(
        ratings_csv=args.ratings,
        reference=args.reference,
        icc_variant=args.icc_variant,
    )
    if args.server:
        payload = _post(args.server, "/agree", req.model_dump())
    else:
        payload = handlers.handle_agree(req).model_dump()
    _write_text(args.out, _canonical_json(payload["stats"]), args.quiet)
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace) -> int:
    req = EvaluateRequest(
        backend=args.backend,
        truth_dir=args.truth,
        seed=args.seed,
        config=_merge_config(args),
    )
    if args.server:
        payload = _post(args.server, "/evaluate", req.model_dump())
    else:
        payload = handlers.handle_evaluate(req).model_dump()
    _write_text(args.out, _canonical_json(payload["metrics"]), args.quiet)
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="FILE", help="JSON config file")
    sub.add_argument("--gate-threshold", type=float, dest="gate_threshold")
    sub.add_argument("--mask-threshold", type=float, dest="mask_threshold")
    sub.add_argument("--rdp-eps-rel", type=float, dest="rdp_eps_rel")
    sub.add_argument("--dice-eps", type=float, dest="dice_eps")
    sub.add_argument(
        "--femur-weights",
        type=_floats_csv,
        dest="femur_weights",
        metavar="W1,W2",
        help="composite weights for femur frames (class,measurement)",
    )
    sub.add_argument(
        "--ellipse-weights",
        type=_floats_csv,
        dest="ellipse_weights",
        metavar="W1,W2,W3",
        help="composite weights for head/abdomen frames (class,measurement,similarity)",
    )


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    client = _Parser(add_help=False)
    client.add_argument(
        "--server", metavar="URL", help="send the command to a running server"
    )

    parser = _Parser(prog="fetal-biometry", description=__doc__)
    parser.add_argument(
        "--version",
        action="version",
        version=f"fetal-biometry {__version__} (report schema {REPORT_SCHEMA})",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_an = subs.add_parser(
        "analyze", parents=[common, client], help="measure a study and write the report"
    )
    p_an.add_argument("--input", required=True, metavar="DIR", help="study directory")
    p_an.add_argument(
        "--backend",
        required=True,
        metavar="LOCATOR",
        help="scorer backend: fixture:DIR or phantom:SPEC_PATH",
    )
    p_an.add_argument("--output", required=True, metavar="PATH", help="report JSON path")
    p_an.add_argument("--frames-csv", metavar="PATH", help="optional per-frame CSV dump")
    p_an.add_argument("--seed", type=int, default=0, help="phantom backend seed")
    p_an.add_argument("--threads", type=int, dest="threads", help="frame-parallel pool size")
    _add_config_flags(p_an)
    p_an.set_defaults(func=_cmd_analyze)

    p_ph = subs.add_parser(
        "phantom", parents=[common, client], help="render a synthetic study with ground truth"
    )
    p_ph.add_argument("--spec", required=True, metavar="PATH", help="phantom spec JSON")
    p_ph.add_argument("--out", required=True, metavar="DIR", help="output study directory")
    p_ph.add_argument("--seed", type=int, default=0)
    p_ph.set_defaults(func=_cmd_phantom)

    p_ag = subs.add_parser(
        "agree", parents=[common, client], help="observer-agreement statistics from a ratings CSV"
    )
    p_ag.add_argument("--ratings", required=True, metavar="PATH", help="ratings CSV")
    p_ag.add_argument("--reference", required=True, help="reference reader id")
    p_ag.add_argument("--out", required=True, metavar="PATH", help="stats JSON path")
    p_ag.add_argument(
        "--icc-variant",
        choices=ICC_VARIANTS,
        default="2,1",
        dest="icc_variant",
        help="ICC form (default: two-way random, absolute agreement, single rater)",
    )
    p_ag.set_defaults(func=_cmd_agree)

    p_ev = subs.add_parser(
        "evaluate", parents=[common, client], help="score a backend against a ground-truth study"
    )
    p_ev.add_argument("--backend", required=True, metavar="LOCATOR")
    p_ev.add_argument("--truth", required=True, metavar="DIR", help="ground-truth study directory")
    p_ev.add_argument("--out", required=True, metavar="PATH", help="metrics JSON path")
    p_ev.add_argument("--seed", type=int, default=0, help="phantom backend seed")
    _add_config_flags(p_ev)
    p_ev.set_defaults(func=_cmd_evaluate)

    p_sv = subs.add_parser("serve", parents=[common], help="run the HTTP service")
    p_sv.add_argument("--host", default="127.0.0.1")
    p_sv.add_argument("--port", type=int, default=8000)
    p_sv.set_defaults(func=_cmd_serve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except RemoteError as exc:
        print(f"{exc.kind}: {exc}", file=sys.stderr)
        return _EXIT_BY_KIND.get(exc.kind, EXIT_INPUT)
    except FetalBiometryError as exc:
        print(f"{exc.kind}: {exc}", file=sys.stderr)
        return _EXIT_BY_KIND.get(exc.kind, EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
