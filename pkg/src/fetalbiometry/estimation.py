"""Gestational age and fetal weight from a complete set of biometrics.

Both regressions take centimeters. The GA polynomial is evaluated exactly
as printed, with a fixed left-to-right term order, so results are
bit-reproducible; see ga_is_implausible for the known low-output anomaly of
the printed coefficients. Weight is the Hadlock-style log10 regression on
HC, AC and FL, in grams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .biometry import BiometrySet
from .errors import BadInput, IncompleteBiometry


@dataclass(frozen=True)
class GestAge:
    weeks: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.weeks):
            raise BadInput(f"weeks must be finite, got {self.weeks}")


@dataclass(frozen=True)
class FetalWeight:
    grams: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.grams) and self.grams > 0):
            raise BadInput(f"grams must be positive, got {self.grams}")


def ga_polynomial(bpd: float, hc: float, ac: float, fl: float) -> float:
    """Raw GA regression polynomial (weeks), no argument validation.

    Term order is fixed as printed; do not refactor into grouped or sorted
    summation, the fixed order is the reproducibility contract.
    """
    return (
        10.6
        - 0.168 * bpd
        + 0.045 * hc
        + 0.03 * ac
        + 0.058 * fl
        + 0.002 * bpd * bpd
        + 0.002 * fl * fl
        + 0.0005 * (bpd * ac)
        - 0.005 * (bpd * fl)
        - 0.0002 * (hc * ac)
        + 0.0008 * (hc * fl)
        + 0.0005 * (ac * fl)
    )


def efw_exponent(hc: float, ac: float, fl: float) -> float:
    """Raw log10-weight exponent, no argument validation; fixed term order."""
    return 1.326 - 0.00326 * ac * fl + 0.0107 * hc + 0.0438 * ac + 0.158 * fl


def _require_positive(**values: float | None) -> None:
    for name, v in values.items():
        if v is None or not (v > 0) or not math.isfinite(v):
            raise IncompleteBiometry(f"{name} must be a positive measurement, got {v}")


def estimate_ga(hc: float, bpd: float, ac: float, fl: float) -> GestAge:
    """Gestational age in weeks from the four biometrics (cm)."""
    _require_positive(hc=hc, bpd=bpd, ac=ac, fl=fl)
    return GestAge(weeks=ga_polynomial(bpd, hc, ac, fl))


def estimate_efw(hc: float, ac: float, fl: float) -> FetalWeight:
    """Estimated fetal weight in grams from HC, AC, FL (cm)."""
    _require_positive(hc=hc, ac=ac, fl=fl)
    return FetalWeight(grams=10.0 ** efw_exponent(hc, ac, fl))


def complete_or_skip(b: BiometrySet) -> BiometrySet:
    """Fill ga_weeks/efw_g iff all four measurements are present.

    Incomplete sets pass through with the estimates absent; estimation is
    skipped, never guessed from partial data.
    """
    if not b.complete:
        return replace(b, ga_weeks=None, efw_g=None)
    ga = estimate_ga(b.hc_cm, b.bpd_cm, b.ac_cm, b.fl_cm)
    efw = estimate_efw(b.hc_cm, b.ac_cm, b.fl_cm)
    return replace(b, ga_weeks=ga.weeks, efw_g=efw.grams)


def ga_is_implausible(ga_weeks: float, bpd_cm: float) -> bool:
    """True when the GA output is clinically implausible for the given BPD.

    The printed regression yields early-second-trimester ages for
    third-trimester biometrics; a GA below 14 weeks with a BPD above 4 cm
    cannot be right and is surfaced as a report warning, not an error.
    """
    return ga_weeks < 14.0 and bpd_cm > 4.0
