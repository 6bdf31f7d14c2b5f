"""Single-cell Rayleigh-fading Monte Carlo (one RAP, no interference).

Per trial the instantaneous SNR is exponential with linear mean 10^(G/10)
for average SNR G; the policy picks an MCS, the transport block is decoded
under the link model, and a computational outage is declared when the
block's effort exceeds the per-subframe budget c_max * subframe (strict
inequality).  Channel-outage blocks still consume their full effort, since
the decoder cannot know in advance that a block will fail.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .link import SUBFRAME_S, simulate_tb, simulate_tb_batch
from .policy import select_mcs, select_mcs_index

OUTAGE_NONE = "none"
OUTAGE_CHANNEL = "channel"
OUTAGE_COMPUTATIONAL = "computational"
OUTAGE_BOTH = "both"

Z_95 = 1.959963984540054


@dataclass(frozen=True)
class CellTrialConfig:
    """Parameters of one single-cell Monte Carlo run at average SNR ``snr_db``."""

    snr_db: float
    policy: str = "MRS"
    c_max_bit_iter_s: float = math.inf
    subframe_s: float = SUBFRAME_S
    n_trials: int = 100000
    seed: int = 0
    low_snr_fallback: bool = True

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if not self.c_max_bit_iter_s > 0:
            raise ValueError("c_max must be positive (may be inf)")


@dataclass(frozen=True)
class CellRecord:
    """Monte Carlo estimates for one (average SNR, policy, budget) point."""

    snr_db: float
    policy: str
    c_max_bit_iter_s: float
    n_trials: int
    n_transmitted: int
    n_success: int
    eps: float
    eps_hw: float
    eps_channel: float
    eps_channel_hw: float
    eps_comp: float
    eps_comp_hw: float
    t_raw_bps: float
    t_raw_hw_bps: float
    t_eff_bps: float
    t_eff_hw_bps: float
    effort_per_success_bit_iter_s: float
    effort_per_success_hw: float


@dataclass(frozen=True)
class CellSweepResult:
    records: tuple
    policy: str
    c_max_bit_iter_s: float

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])


def wilson_halfwidth(k, n, z=Z_95):
    """Half-width of the Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0
    p = k / n
    denom = 1.0 + z * z / n
    half = (z / denom) * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n))
    return half


def mean_halfwidth(values, z=Z_95):
    n = len(values)
    if n < 2:
        return 0.0
    return z * float(np.std(values, ddof=1)) / math.sqrt(n)


def run_cell_trial(cfg, gamma_db, table, curves, rng):
    """One trial at instantaneous SNR ``gamma_db``.

    Returns ``(tb, mcs, outage_kind)``; ``tb`` and ``mcs`` are None when the
    SNR is below the table floor and the low-SNR fallback is disabled.
    """
    mcs = select_mcs(table, gamma_db)
    if mcs is None:
        if not cfg.low_snr_fallback:
            return None, None, OUTAGE_NONE
        mcs = table.catalog[0]
    tb = simulate_tb(mcs, curves, gamma_db, rng)
    budget = cfg.c_max_bit_iter_s * cfg.subframe_s
    comp = tb.effort_bit_iters > budget
    if tb.channel_outage and comp:
        kind = OUTAGE_BOTH
    elif tb.channel_outage:
        kind = OUTAGE_CHANNEL
    elif comp:
        kind = OUTAGE_COMPUTATIONAL
    else:
        kind = OUTAGE_NONE
    return tb, mcs, kind


@dataclass
class _TrialBlock:
    """Vectorized outcomes of one batch of trials (internal)."""

    transmitted: np.ndarray
    bits: np.ndarray
    effort: np.ndarray
    channel_fail: np.ndarray
    comp_fail: np.ndarray = field(default=None)


def simulate_trials(gamma_db, table, curves, u, budget_bit_iters, low_snr_fallback=True):
    """Run the policy + link model over a vector of instantaneous SNRs.

    ``u`` supplies one uniform per potential code block, shape
    ``(n, curves.max_cbs)``; passing the same block to several policy or
    budget arms yields common-random-number comparisons.
    """
    n = len(gamma_db)
    sel = select_mcs_index(table, gamma_db, low_snr_fallback)
    transmitted = sel >= 0
    bits = np.zeros(n, dtype=np.int64)
    effort = np.zeros(n, dtype=np.int64)
    channel_fail = np.zeros(n, dtype=bool)
    for m in np.unique(sel[transmitted]):
        rows = np.flatnonzero(sel == m)
        eff, fail, _ = simulate_tb_batch(curves, int(m), gamma_db[rows], u[rows])
        bits[rows] = curves.tb_bits[m]
        effort[rows] = eff
        channel_fail[rows] = fail
    comp_fail = transmitted & (effort > budget_bit_iters)
    return _TrialBlock(
        transmitted=transmitted,
        bits=bits,
        effort=effort,
        channel_fail=channel_fail,
        comp_fail=comp_fail,
    )


def summarize_cell_point(snr_db, policy, c_max, subframe_s, block):
    """Reduce a trial block to a CellRecord.

    The effective throughput is reported as (1 - eps) * t_raw computed from
    the same trials; the complexity metric charges the nominal effort of
    every transmitted block (outage blocks included) against the count of
    successful decodes.
    """
    n = len(block.transmitted)
    n_tx = int(block.transmitted.sum())
    lost = block.channel_fail | block.comp_fail
    n_lost = int(lost.sum())
    n_success = n_tx - n_lost
    eps = n_lost / n_tx if n_tx else 0.0
    eps_ch = int(block.channel_fail.sum()) / n_tx if n_tx else 0.0
    eps_co = int(block.comp_fail.sum()) / n_tx if n_tx else 0.0
    rate = block.bits / subframe_s
    t_raw = float(rate.mean())
    t_eff = (1.0 - eps) * t_raw
    # CI of the effective throughput from the per-trial success*rate series
    eff_series = rate * (block.transmitted & ~lost)
    total_effort = float(block.effort.sum())
    if n_success:
        effort_ps = total_effort / n_success / subframe_s
        effort_hw = (
            mean_halfwidth(block.effort) * n / n_success / subframe_s
        )
    else:
        effort_ps = math.nan
        effort_hw = math.nan
    return CellRecord(
        snr_db=float(snr_db),
        policy=policy,
        c_max_bit_iter_s=float(c_max),
        n_trials=n,
        n_transmitted=n_tx,
        n_success=n_success,
        eps=eps,
        eps_hw=wilson_halfwidth(n_lost, n_tx),
        eps_channel=eps_ch,
        eps_channel_hw=wilson_halfwidth(int(block.channel_fail.sum()), n_tx),
        eps_comp=eps_co,
        eps_comp_hw=wilson_halfwidth(int(block.comp_fail.sum()), n_tx),
        t_raw_bps=t_raw,
        t_raw_hw_bps=mean_halfwidth(rate),
        t_eff_bps=t_eff,
        t_eff_hw_bps=mean_halfwidth(eff_series),
        effort_per_success_bit_iter_s=effort_ps,
        effort_per_success_hw=effort_hw,
    )


def sweep_cell_point(rng_or_draws, snr_db, table, curves, n_trials,
                     c_max=math.inf, subframe_s=SUBFRAME_S, low_snr_fallback=True,
                     policy_name=""):
    """One average-SNR grid point.

    ``rng_or_draws`` is either a Generator (draws made here) or a
    ``(gamma_db, u)`` pair reused across arms for common random numbers.
    """
    if isinstance(rng_or_draws, tuple):
        gamma_db, u = rng_or_draws
    else:
        gamma_db, u = draw_cell_trials(rng_or_draws, snr_db, n_trials, curves.max_cbs)
    block = simulate_trials(
        gamma_db, table, curves, u, c_max * subframe_s, low_snr_fallback
    )
    return summarize_cell_point(snr_db, policy_name, c_max, subframe_s, block)


def draw_cell_trials(rng, snr_db, n_trials, max_cbs):
    """Draw the per-trial randomness: instantaneous SNRs plus CB uniforms."""
    mean_linear = 10.0 ** (snr_db / 10.0)
    gamma_lin = rng.exponential(mean_linear, n_trials)
    gamma_db = 10.0 * np.log10(gamma_lin)
    u = rng.random((n_trials, max_cbs))
    return gamma_db, u


def sweep_cell(snr_grid_db, tables, curves, n_trials, seed,
               c_max_values=(math.inf,), policies=("MRS", "CAS"),
               subframe_s=SUBFRAME_S, low_snr_fallback=True, rng_factory=None):
    """Full sweep over average SNR for every (policy, budget) arm.

    All arms at one grid point share the same SNR and code-block draws
    (common random numbers), so arm differences are variance-free.  Returns
    ``{(policy, c_max): CellSweepResult}``.
    """
    from .rng import substream

    if rng_factory is None:
        rng_factory = lambda gi: substream(seed, "cell", gi)  # noqa: E731
    out = {(p, c): [] for p in policies for c in c_max_values}
    for gi, snr_db in enumerate(snr_grid_db):
        rng = rng_factory(gi)
        draws = draw_cell_trials(rng, snr_db, n_trials, curves.max_cbs)
        for policy in policies:
            block_cache = {}
            for c_max in c_max_values:
                key = policy
                if key not in block_cache:
                    block_cache[key] = simulate_trials(
                        draws[0], tables[policy], curves, draws[1],
                        math.inf, low_snr_fallback,
                    )
                base = block_cache[key]
                block = _TrialBlock(
                    transmitted=base.transmitted,
                    bits=base.bits,
                    effort=base.effort,
                    channel_fail=base.channel_fail,
                    comp_fail=base.transmitted
                    & (base.effort > c_max * subframe_s),
                )
                out[(policy, c_max)].append(
                    summarize_cell_point(snr_db, policy, c_max, subframe_s, block)
                )
    return {
        key: CellSweepResult(records=tuple(recs), policy=key[0], c_max_bit_iter_s=float(key[1]))
        for key, recs in out.items()
    }
