"""MCS selection policies under an iteration budget.

A policy table maps SNR to the highest MCS whose transport-block outage
stays at or below the target ``eps_hat`` after a fixed number of decoder
iterations.  The max-rate policy (MRS) budgets 8 iterations; the
computationally aware policy (CAS) budgets 2, trading spectral efficiency
for decoding effort.  The SNR margin between the two tables quantifies the
cost of the conservative choice.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .link import SUBFRAME_S, tb_channel_outage_prob

DEFAULT_EPS_HAT = 0.1
MRS_ITER_BUDGET = 8
CAS_ITER_BUDGET = 2

GRID_STEP_DB = 0.01
GRID_MIN_DB = -20.0
GRID_MAX_DB = 60.0

POLICY_ITER_BUDGETS = {"MRS": MRS_ITER_BUDGET, "CAS": CAS_ITER_BUDGET}


class ConfigurationError(ValueError):
    """Raised when a policy table cannot satisfy its outage target."""


@dataclass(frozen=True)
class PolicyTable:
    """Per-MCS minimum SNR meeting the outage target after ``iteration_budget``."""

    iteration_budget: int
    eps_hat: float
    thresholds_db: tuple
    catalog: tuple

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["mcs_index", "threshold_db"])
            for m, t in enumerate(self.thresholds_db):
                writer.writerow([m, repr(float(t))])


@dataclass(frozen=True)
class MarginReport:
    """Per-MCS SNR shift of the 2-iteration table above the 8-iteration one."""

    margins_db: tuple


def build_policy_table(curves, iteration_budget, eps_hat=DEFAULT_EPS_HAT):
    """Search the 0.01 dB grid for the lowest SNR meeting the outage target.

    Raises ``ConfigurationError`` naming the first MCS that never meets
    ``eps_hat`` on [-20, 60] dB.
    """
    if not 1 <= iteration_budget <= curves.i_max:
        raise ValueError(f"iteration budget {iteration_budget} outside 1..{curves.i_max}")
    if not 0.0 < eps_hat <= 1.0:
        raise ValueError(f"eps_hat {eps_hat} outside (0, 1]")
    n = int(round((GRID_MAX_DB - GRID_MIN_DB) / GRID_STEP_DB)) + 1
    grid = GRID_MIN_DB + GRID_STEP_DB * np.arange(n)
    thresholds = []
    for m, entry in enumerate(curves.catalog):
        eps_cb = curves.cbler(m, grid, iteration_budget)
        # log1p/expm1 form of 1 - (1 - eps)^C, immune to cancellation at
        # tiny eps_cb; eps_cb == 1 maps through -inf to outage 1
        with np.errstate(divide="ignore"):
            outage = -np.expm1(int(curves.num_cbs[m]) * np.log1p(-eps_cb))
        ok = outage <= eps_hat
        if not ok.any():
            raise ConfigurationError(
                f"MCS {m} never meets eps_hat={eps_hat} after "
                f"{iteration_budget} iterations on [{GRID_MIN_DB}, {GRID_MAX_DB}] dB"
            )
        thresholds.append(float(grid[int(np.argmax(ok))]))
    arr = np.asarray(thresholds)
    # equal thresholds are legal only where the target never binds (the
    # whole table collapsed to the search floor)
    if not np.all(np.diff(arr) >= 0):
        raise ConfigurationError("policy thresholds are not monotone in MCS index")
    return PolicyTable(
        iteration_budget=iteration_budget,
        eps_hat=eps_hat,
        thresholds_db=tuple(thresholds),
        catalog=curves.catalog,
    )


def select_mcs(table, gamma_db):
    """Highest MCS with threshold <= gamma, or None below the table floor."""
    if np.isnan(gamma_db):
        raise ValueError("SNR must not be NaN")
    idx = int(np.searchsorted(table.thresholds_db, gamma_db, side="right")) - 1
    if idx < 0:
        return None
    return table.catalog[idx]


def select_mcs_index(table, gamma_db, low_snr_fallback):
    """Vectorized selection returning indices; -1 marks "no transmission".

    With ``low_snr_fallback`` the lowest MCS is transmitted below the table
    floor (channel-outage TBs still consume decoding effort); without it the
    subframe is skipped at zero rate and zero effort.
    """
    g = np.asarray(gamma_db, dtype=float)
    if np.any(np.isnan(g)):
        raise ValueError("SNR must not be NaN")
    idx = np.searchsorted(table.thresholds_db, g, side="right") - 1
    if low_snr_fallback:
        idx = np.maximum(idx, 0)
    return idx


def raw_throughput(mcs, subframe_s=SUBFRAME_S):
    """Selected rate in bits/second; zero when no MCS is feasible."""
    if mcs is None:
        return 0.0
    return mcs.tb_bits / subframe_s


def snr_margin(table_2, table_8):
    """Per-MCS shift Delta-gamma with R_2(gamma + Delta) = R_8(gamma)."""
    if table_2.catalog != table_8.catalog:
        raise ValueError("margin requires tables built from the same curve set")
    margins = tuple(
        t2 - t8 for t2, t8 in zip(table_2.thresholds_db, table_8.thresholds_db)
    )
    return MarginReport(margins_db=margins)


def build_policy_tables(curves, eps_hat=DEFAULT_EPS_HAT, policies=("MRS", "CAS")):
    """Convenience: build the named policy tables as a dict."""
    return {
        name: build_policy_table(curves, POLICY_ITER_BUDGETS[name], eps_hat)
        for name in policies
    }
