"""Service command handlers: the single implementation behind HTTP and CLI.

Each handler maps a request model to a response model and raises domain
errors from the errors module; the HTTP layer and the CLI translate those
into status codes and exit codes respectively.
"""

from __future__ import annotations

from .. import agreement
from ..backend import (
    FixtureScorer,
    FrameScorer,
    PhantomScorer,
    load_phantom_spec,
    spec_from_dict,
    write_phantom_study,
)
from ..errors import BadInput
from ..ingest import load_study
from ..pipeline import (
    REPORT_SCHEMA,
    AnalysisConfig,
    analyze_study_full,
    evaluate_backend,
)
from .models import (
    AgreeRequest,
    AgreeResponse,
    AnalyzeRequest,
    AnalyzeResponse,
    EvaluateRequest,
    EvaluateResponse,
    PhantomRequest,
    PhantomResponse,
)


def make_scorer(backend: str, seed: int = 0) -> FrameScorer:
    """Build a scorer from a backend locator: fixture:DIR or phantom:SPEC_PATH."""
    scheme, sep, rest = backend.partition(":")
    if not sep or not rest:
        raise BadInput(
            f"backend must look like fixture:DIR or phantom:SPEC_PATH, got {backend!r}"
        )
    if scheme == "fixture":
        return FixtureScorer(rest)
    if scheme == "phantom":
        return PhantomScorer(load_phantom_spec(rest), seed)
    raise BadInput(f"unknown backend scheme {scheme!r}")


def handle_analyze(req: AnalyzeRequest) -> AnalyzeResponse:
    # config first: a bad threshold is a usage error even when inputs are also bad
    config = AnalysisConfig(**req.config.as_kwargs())
    seq = load_study(req.input_dir)
    scorer = make_scorer(req.backend, req.seed)
    report, frames_csv = analyze_study_full(seq, scorer, config)
    return AnalyzeResponse(report=report.to_dict(), frames_csv=frames_csv)


def handle_phantom(req: PhantomRequest) -> PhantomResponse:
    if (req.spec_path is None) == (req.spec is None):
        raise BadInput("provide exactly one of spec_path or spec")
    spec = load_phantom_spec(req.spec_path) if req.spec_path else spec_from_dict(req.spec)
    truth, files = write_phantom_study(spec, req.seed, req.out_dir)
    return PhantomResponse(
        study_id=spec.study_id,
        frame_count=len(spec.frames),
        files=files,
        ground_truth={
            "frames": [
                {"part": t.part.value, "values_cm": t.values_cm} for t in truth.frames
            ],
            "biometry": {
                "hc_cm": truth.biometry.hc_cm,
                "bpd_cm": truth.biometry.bpd_cm,
                "ac_cm": truth.biometry.ac_cm,
                "fl_cm": truth.biometry.fl_cm,
            },
        },
    )


def handle_agree(req: AgreeRequest) -> AgreeResponse:
    """Agreement statistics per measurement kind.

    Emits the MAE matrix against the reference reader, ICC(2,1) and a
    one-way reader ANOVA per reading, and the intra-observer table.
    ANOVA p-values are rounded to 4 decimals in the report; the library
    functions keep full precision.
    """
    tables = agreement.load_ratings_csv(req.ratings_csv)
    kinds_out: dict[str, dict] = {}
    for kind in sorted(tables):
        t = tables[kind]
        mae = agreement.mae_matrix(t, req.reference)
        icc_out = {}
        anova_out = {}
        for reading in (1, 2):
            icc_out[f"reading_{reading}"] = agreement.icc(t, reading, req.icc_variant)
            groups = []
            for reader in t.readers:
                vals = [
                    v
                    for case in t.cases
                    if (v := t.get(reader, case, reading)) is not None
                ]
                groups.append(vals)
            f, df, p = agreement.anova_oneway(groups)
            anova_out[f"reading_{reading}"] = {
                "f": f,
                "df": list(df),
                "p": round(p, 4),
            }
        intra = {}
        for reader in t.readers:
            mean, sd = agreement.intra_observer(t, reader)
            intra[reader] = {"mean_abs_diff_cm": mean, "sd_cm": sd}
        kinds_out[kind] = {
            "mae_cm": mae,
            "icc": icc_out,
            "anova": anova_out,
            "intra_observer": intra,
        }
    return AgreeResponse(
        stats={
            "schema": REPORT_SCHEMA,
            "reference": req.reference,
            "icc_variant": req.icc_variant,
            "kinds": kinds_out,
        }
    )


def handle_evaluate(req: EvaluateRequest) -> EvaluateResponse:
    config = AnalysisConfig(**req.config.as_kwargs())
    scorer = make_scorer(req.backend, req.seed)
    return EvaluateResponse(metrics=evaluate_backend(scorer, req.truth_dir, config))
