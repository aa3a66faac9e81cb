"""Request/response bodies for the HTTP service.

Floats that can be missing or undefined (force without a force_step,
F_eff_total in zero-T mode, F_int of an unconverged quadrature) travel as
JSON null; the CSV writer renders them as nan. NaN itself never crosses
the wire since strict JSON has no encoding for it.
"""

from __future__ import annotations

import math
from typing import Any, Optional

from pydantic import BaseModel, Field


def _none_if_nan(value):
    if value is None:
        return None
    value = float(value)
    return None if math.isnan(value) else value


class RunRequest(BaseModel):
    config: dict[str, Any]
    threads: Optional[int] = Field(default=None, ge=1)


class ResultRow(BaseModel):
    d: float
    F_int: Optional[float] = None
    F_eff_total: Optional[float] = None
    force: Optional[float] = None
    n_modes_used: int
    tail_estimate: Optional[float] = None
    converged: bool

    @classmethod
    def from_row(cls, row):
        return cls(
            d=row.d,
            F_int=_none_if_nan(row.f_int),
            F_eff_total=_none_if_nan(row.f_eff_total),
            force=_none_if_nan(row.force),
            n_modes_used=row.n_modes_used,
            tail_estimate=_none_if_nan(row.tail_estimate),
            converged=row.converged,
        )


class RunResponse(BaseModel):
    rows: list[ResultRow]
    all_converged: bool


class OracleRequest(BaseModel):
    seed: int
    instances: int
    corrupt: bool = False


class OracleRow(BaseModel):
    index: int
    n_sites: int
    n_nu: int
    factorization_residual: float
    mean_force_residual: float
    force_equivalence_residual: float
    ok: bool

    @classmethod
    def from_instance(cls, inst):
        return cls(
            index=inst.index,
            n_sites=inst.n_sites,
            n_nu=inst.n_nu,
            factorization_residual=inst.factorization_residual,
            mean_force_residual=inst.mean_force_residual,
            force_equivalence_residual=inst.force_residual,
            ok=inst.ok,
        )


class OracleResponse(BaseModel):
    rows: list[OracleRow]
    all_ok: bool
