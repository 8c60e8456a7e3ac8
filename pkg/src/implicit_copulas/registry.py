"""Family name to model class lookup for serialized models."""

from __future__ import annotations

from .errors import DomainError
from .factor import FactorCopula
from .regression import RegressionCopula
from .skewt import SkewTCopula
from .timeseries import ArCopula, UcsvCopula, VarCopula

MODELS = {
    "skew-t": SkewTCopula,
    "skewt": SkewTCopula,
    "factor": FactorCopula,
    "ar": ArCopula,
    "var": VarCopula,
    "ucsv": UcsvCopula,
    "regression": RegressionCopula,
}


def load_model(d: dict):
    fam = d.get("family")
    if fam not in MODELS:
        raise DomainError(f"unknown copula family {fam!r}")
    return MODELS[fam].from_dict(d)
