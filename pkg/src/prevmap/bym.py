"""Area-level spatial smoothing model fit by Gibbs sampling.

Observation model, per region i on the logit scale:

    Y_i ~ Normal(theta_i, V_i)          V_i known (plug-in design variance)
    theta_i = b0 + eps_i + S_i
    eps_i ~ iid Normal(0, sig2_eps)
    S ~ ICAR(sig2_sp) over the region contiguity graph

Every full conditional is conjugate (flat prior on b0, inverse-gamma
hyperpriors on both variances), so the sampler is a pure Gibbs sweep:
b0, then all eps, then all S single-site, then the two variances. The
improper ICAR level is pinned by recentring S to mean zero within each
connected graph component after every S sweep; b0 re-absorbs the level
through its own conjugate update (the recentred parametrization).

Regions with a degenerate direct estimate contribute no likelihood term:
their eps_i are refreshed from the prior each sweep and excluded from the
sig2_eps update, so their theta draws are posterior predictions.

Single-site S updates are grouped by graph coloring: nodes of one color
share no edge, so their conditionals are independent and can be drawn as a
block without changing the Markov chain's target.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse, stats
from scipy.special import expit

from .data_model import _data_lines
from .direct import DirectEstimate
from .errors import ModelError, SchemaError
from .graph import IcarPrecision

RHAT_THRESHOLD = 1.05
ESS_THRESHOLD = 100.0

POSTERIOR_CSV_COLUMNS = (
    "region_id",
    "prev_mean",
    "prev_median",
    "prev_sd",
    "prev_q025",
    "prev_q975",
    "theta_mean",
    "theta_sd",
    "direct_p",
    "direct_se",
    "n",
    "degenerate",
    "rhat_theta",
    "ess_theta",
)


@dataclass(frozen=True)
class Hyperpriors:
    """Inverse-gamma hyperprior parameters for both variance components."""

    a_eps: float = 0.5
    b_eps: float = 0.0005
    a_sp: float = 0.5
    b_sp: float = 0.0005

    def validate(self) -> None:
        for name in ("a_eps", "b_eps", "a_sp", "b_sp"):
            if not getattr(self, name) > 0:
                raise ModelError(f"hyperprior {name} must be > 0")


@dataclass
class BymModelSpec:
    """Direct estimates plus precision structure, indexed identically."""

    estimates: list[DirectEstimate]
    precision: IcarPrecision
    priors: Hyperpriors = field(default_factory=Hyperpriors)
    fixed_sigma2_eps: float | None = None
    fixed_sigma2_sp: float | None = None

    def validate(self) -> None:
        self.priors.validate()
        est_ids = [e.region_id for e in self.estimates]
        if tuple(est_ids) != self.precision.node_ids:
            mismatch = sorted(set(est_ids) ^ set(self.precision.node_ids))
            hint = (
                f"; ids only on one side: {mismatch[:4]}"
                if mismatch
                else " (ordering differs)"
            )
            raise ModelError(
                "estimates and precision structure index different region sets "
                f"({len(est_ids)} vs {self.precision.dimension} nodes){hint}"
            )
        active = [e for e in self.estimates if e.likelihood_usable]
        if len(active) < 2:
            raise ModelError(
                f"need at least 2 non-degenerate regions, have {len(active)}"
            )
        for e in active:
            if not (math.isfinite(e.logit_y) and math.isfinite(e.var_logit)):
                raise ModelError(f"region {e.region_id!r}: non-finite logit inputs")
            if e.var_logit <= 0:
                raise ModelError(
                    f"region {e.region_id!r}: var_logit must be > 0 for a "
                    "likelihood contribution; mark the region degenerate instead"
                )
        for name, val in (
            ("fixed_sigma2_eps", self.fixed_sigma2_eps),
            ("fixed_sigma2_sp", self.fixed_sigma2_sp),
        ):
            if val is not None and not val > 0:
                raise ModelError(f"{name} must be > 0 when given")


@dataclass(frozen=True)
class McmcConfig:
    """Chain layout; retained draws per chain must be at least 500."""

    chains: int = 4
    iterations: int = 10_000
    burn_in: int = 5_000
    thin: int = 1
    seed: int = 0

    def retained_per_chain(self) -> int:
        return (self.iterations - self.burn_in + self.thin - 1) // self.thin

    def validate(self) -> None:
        if self.chains < 2:
            raise ModelError("need at least 2 chains")
        if self.thin < 1:
            raise ModelError("thin must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise ModelError("burn_in must be in [0, iterations)")
        if self.retained_per_chain() < 500:
            raise ModelError(
                f"retained draws per chain = {self.retained_per_chain()}, need >= 500"
            )
        if not 0 <= self.seed < 2**64:
            raise ModelError("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class Summary:
    mean: float
    median: float
    sd: float
    q025: float
    q975: float


def summarize(draws: np.ndarray) -> Summary:
    """Five-number summary of a flat draw vector (empirical quantiles)."""
    draws = np.asarray(draws, dtype=float).ravel()
    sd = float(np.std(draws, ddof=1)) if draws.size > 1 else 0.0
    return Summary(
        mean=float(np.mean(draws)),
        median=float(np.median(draws)),
        sd=sd,
        q025=float(np.quantile(draws, 0.025)),
        q975=float(np.quantile(draws, 0.975)),
    )


# ---------------------------------------------------------------------------
# Convergence diagnostics
# ---------------------------------------------------------------------------


def _split_chains(x: np.ndarray) -> np.ndarray:
    """Split each chain in half and stack (drops the middle draw when odd)."""
    _, n = x.shape
    half = n // 2
    return np.vstack((x[:, :half], x[:, n - half :]))


def _z_scale(x: np.ndarray) -> np.ndarray:
    ranks = stats.rankdata(x, method="average").reshape(x.shape)
    return stats.norm.ppf((ranks - 0.5) / x.size)


def _rhat_classic(x: np.ndarray) -> float:
    m, n = x.shape
    if n < 2:
        return float("nan")
    chain_means = x.mean(axis=1)
    w = float(np.mean(np.var(x, axis=1, ddof=1)))
    b_over_n = float(np.var(chain_means, ddof=1))
    if not (math.isfinite(w) and math.isfinite(b_over_n)):
        return float("nan")
    if w == 0.0:
        return float("inf") if b_over_n > 0 else float("nan")
    return math.sqrt(((n - 1) / n * w + b_over_n) / w)


def rhat(draws: np.ndarray) -> float:
    """Rank-normalized split R-hat (max of the bulk and tail statistics).

    Returns inf when chains disagree with zero within-chain variance and nan
    when every value is identical (no information either way).
    """
    x = np.asarray(draws, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a (chains, draws) array with >= 2 chains")
    if x.shape[1] < 4:
        return float("nan")
    if np.all(x == x.flat[0]):
        return float("nan")
    bulk = _rhat_classic(_z_scale(_split_chains(x)))
    folded = np.abs(x - np.median(x))
    tail = _rhat_classic(_z_scale(_split_chains(folded)))
    finite = [b for b in (bulk, tail) if not math.isnan(b)]
    return max(finite) if finite else float("nan")


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = len(x)
    xc = x - x.mean()
    f = np.fft.rfft(xc, 2 * n)
    return np.fft.irfft(f * np.conj(f), 2 * n)[:n] / n


def ess(draws: np.ndarray) -> float:
    """Multi-chain effective sample size.

    Combined-chain autocorrelations are summed in consecutive pairs and the
    sum truncated at the first negative pair (Geyer's initial positive
    sequence); ESS = (total draws) / integrated autocorrelation time.
    """
    x = np.asarray(draws, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need a (chains, draws) array with >= 2 chains")
    s = _split_chains(x)
    m, n = s.shape
    if n < 4 or np.all(s == s.flat[0]):
        return float("nan")
    acov = np.vstack([_autocovariance(row) for row in s])
    w = float(np.mean(acov[:, 0])) * n / (n - 1)
    var_plus = w * (n - 1) / n + float(np.var(s.mean(axis=1), ddof=1))
    if not math.isfinite(var_plus) or var_plus <= 0:
        return float("nan")
    mean_acov = acov.mean(axis=0)
    rho = np.empty(n)
    rho[0] = 1.0
    rho[1:] = 1.0 - (w - mean_acov[1:]) / var_plus
    tau = 0.0
    for k in range(n // 2):
        pair = rho[2 * k] + rho[2 * k + 1] if 2 * k + 1 < n else rho[2 * k]
        if pair < 0:
            break
        tau += pair
    tau = max(2.0 * tau - 1.0, 1e-8)
    return float(m * n / tau)


@dataclass(frozen=True)
class ScalarDiag:
    rhat: float
    ess: float

    @property
    def ok(self) -> bool:
        return (
            math.isfinite(self.rhat)
            and self.rhat <= RHAT_THRESHOLD
            and math.isfinite(self.ess)
            and self.ess >= ESS_THRESHOLD
        )


@dataclass
class DiagnosticsReport:
    per_scalar: dict[str, ScalarDiag]
    notes: list[str] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return all(d.ok for d in self.per_scalar.values())

    def failing(self) -> list[str]:
        return [name for name, d in self.per_scalar.items() if not d.ok]


def diagnostics(draws_by_name: Mapping[str, np.ndarray]) -> DiagnosticsReport:
    """Split R-hat and effective sample size for each named scalar trace."""
    per_scalar: dict[str, ScalarDiag] = {}
    notes: list[str] = []
    for name, arr in draws_by_name.items():
        r, e = rhat(arr), ess(arr)
        per_scalar[name] = ScalarDiag(rhat=r, ess=e)
        if math.isnan(r):
            notes.append(f"{name}: degenerate trace (constant or too short)")
    return DiagnosticsReport(per_scalar=per_scalar, notes=notes)


# ---------------------------------------------------------------------------
# Posterior container
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RegionSummary:
    region_id: str
    theta: Summary
    prevalence: Summary
    rhat_theta: float
    ess_theta: float


@dataclass
class BymPosterior:
    """Draws, per-region summaries and diagnostics from one fit."""

    region_ids: tuple[str, ...]
    theta_draws: np.ndarray  # (chains, kept, regions)
    s_draws: np.ndarray  # (chains, kept, regions)
    beta0_draws: np.ndarray  # (chains, kept)
    sigma2_eps_draws: np.ndarray
    sigma2_sp_draws: np.ndarray
    summaries: list[RegionSummary]
    hyper_summaries: dict[str, Summary]
    report: DiagnosticsReport
    meta: dict[str, str]

    @property
    def converged(self) -> bool:
        return self.report.converged

    def prevalence_draws(self, region_index: int) -> np.ndarray:
        return expit(self.theta_draws[:, :, region_index].ravel())

    def rows(self, estimates: Sequence[DirectEstimate]) -> list["PosteriorRow"]:
        by_id = {e.region_id: e for e in estimates}
        rows = []
        for summary in self.summaries:
            est = by_id[summary.region_id]
            rows.append(
                PosteriorRow(
                    region_id=summary.region_id,
                    prev_mean=summary.prevalence.mean,
                    prev_median=summary.prevalence.median,
                    prev_sd=summary.prevalence.sd,
                    prev_q025=summary.prevalence.q025,
                    prev_q975=summary.prevalence.q975,
                    theta_mean=summary.theta.mean,
                    theta_sd=summary.theta.sd,
                    direct_p=est.p_hat,
                    direct_se=est.se_p,
                    n=est.n,
                    degenerate=est.degenerate,
                    rhat_theta=summary.rhat_theta,
                    ess_theta=summary.ess_theta,
                )
            )
        return rows


@dataclass(frozen=True)
class PosteriorRow:
    """One region's row of the posterior CSV."""

    region_id: str
    prev_mean: float
    prev_median: float
    prev_sd: float
    prev_q025: float
    prev_q975: float
    theta_mean: float
    theta_sd: float
    direct_p: float
    direct_se: float
    n: int
    degenerate: str
    rhat_theta: float
    ess_theta: float


# ---------------------------------------------------------------------------
# Gibbs sampler
# ---------------------------------------------------------------------------


def _greedy_coloring(n: int, edge_i: np.ndarray, edge_j: np.ndarray) -> list[np.ndarray]:
    """Partition non-isolated nodes into classes with no within-class edge."""
    nbrs: dict[int, set[int]] = {}
    for i, j in zip(edge_i, edge_j):
        nbrs.setdefault(int(i), set()).add(int(j))
        nbrs.setdefault(int(j), set()).add(int(i))
    order = sorted(nbrs, key=lambda k: (-len(nbrs[k]), k))
    color: dict[int, int] = {}
    for node in order:
        used = {color[v] for v in nbrs[node] if v in color}
        c = 0
        while c in used:
            c += 1
        color[node] = c
    n_colors = max(color.values()) + 1 if color else 0
    return [
        np.array(sorted(k for k, c in color.items() if c == cc), dtype=np.intp)
        for cc in range(n_colors)
    ]


def _initial_variance(a: float, b: float) -> float:
    # prior mean when it exists (a > 1), otherwise the prior mode
    return b / (a - 1) if a > 1 else b / (a + 1)


def gibbs_fit(spec: BymModelSpec, config: McmcConfig) -> BymPosterior:
    """Run the Gibbs sampler and return draws, summaries and diagnostics.

    Chains start over-dispersed (theta = Y shifted by +/- 2 sd(Y), alternating
    by chain) with per-chain random streams derived from (seed, chain index),
    so reruns with the same spec and config are bit-identical.
    """
    spec.validate()
    config.validate()

    prec = spec.precision
    n = prec.dimension
    active = np.array([e.likelihood_usable for e in spec.estimates], dtype=bool)
    idx_act = np.flatnonzero(active)
    idx_inact = np.flatnonzero(~active)
    y_act = np.array([spec.estimates[i].logit_y for i in idx_act])
    v_act = np.array([spec.estimates[i].var_logit for i in idx_act])
    inv_v = 1.0 / v_act
    sum_inv_v = float(inv_v.sum())
    k_act, k_inact = len(idx_act), len(idx_inact)

    lik_prec = np.zeros(n)
    lik_prec[idx_act] = inv_v

    adj = sparse.csr_matrix(
        (
            np.concatenate([prec.edge_w, prec.edge_w]),
            (
                np.concatenate([prec.edge_i, prec.edge_j]),
                np.concatenate([prec.edge_j, prec.edge_i]),
            ),
        ),
        shape=(n, n),
    )
    classes = _greedy_coloring(n, prec.edge_i, prec.edge_j)
    class_rows = [adj[cls] for cls in classes]
    wdeg = prec.degree

    pri = spec.priors
    fixed_e, fixed_s = spec.fixed_sigma2_eps, spec.fixed_sigma2_sp
    kept = config.retained_per_chain()

    theta_draws = np.empty((config.chains, kept, n))
    s_draws = np.empty((config.chains, kept, n))
    beta0_draws = np.empty((config.chains, kept))
    sig2e_draws = np.empty((config.chains, kept))
    sig2s_draws = np.empty((config.chains, kept))

    y_mean = float(y_act.mean())
    y_sd = float(y_act.std())
    streams = np.random.SeedSequence(config.seed).spawn(config.chains)

    for c in range(config.chains):
        rng = np.random.Generator(np.random.PCG64(streams[c]))
        offset = 2.0 * y_sd * (1.0 if c % 2 == 0 else -1.0)
        beta0 = y_mean + offset
        eps = np.zeros(n)
        eps[idx_act] = y_act - y_mean
        s = np.zeros(n)
        sig2e = fixed_e if fixed_e is not None else _initial_variance(pri.a_eps, pri.b_eps)
        sig2s = fixed_s if fixed_s is not None else _initial_variance(pri.a_sp, pri.b_sp)

        keep = 0
        for it in range(config.iterations):
            # (1) intercept, flat prior
            resid = y_act - eps[idx_act] - s[idx_act]
            mu0 = float(np.dot(resid, inv_v)) / sum_inv_v
            beta0 = mu0 + rng.standard_normal() / math.sqrt(sum_inv_v)

            # (2) iid effects; degenerate regions refresh from the prior
            prec_e = inv_v + 1.0 / sig2e
            mu_e = (y_act - beta0 - s[idx_act]) * inv_v / prec_e
            eps[idx_act] = mu_e + rng.standard_normal(k_act) / np.sqrt(prec_e)
            if k_inact:
                eps[idx_inact] = rng.standard_normal(k_inact) * math.sqrt(sig2e)

            # (3) spatial effects, single-site conditionals by color class
            lik_term = np.zeros(n)
            lik_term[idx_act] = (y_act - beta0 - eps[idx_act]) * inv_v
            for cls, rows in zip(classes, class_rows):
                nbr_sum = rows @ s
                prec_s = wdeg[cls] / sig2s + lik_prec[cls]
                mu_s = (nbr_sum / sig2s + lik_term[cls]) / prec_s
                s[cls] = mu_s + rng.standard_normal(len(cls)) / np.sqrt(prec_s)
            for comp in prec.component_index:
                s[comp] -= s[comp].mean()

            # (4) iid variance from active effects only
            if fixed_e is None:
                rate = pri.b_eps + 0.5 * float(np.dot(eps[idx_act], eps[idx_act]))
                sig2e = rate / max(rng.gamma(pri.a_eps + 0.5 * k_act, 1.0), 1e-300)

            # (5) spatial variance from the pairwise-difference quadratic form
            if fixed_s is None:
                d = s[prec.edge_i] - s[prec.edge_j] if len(prec.edge_i) else np.zeros(0)
                qf = float(np.sum(prec.edge_w * d * d))
                rate = pri.b_sp + 0.5 * qf
                sig2s = rate / max(rng.gamma(pri.a_sp + 0.5 * prec.rank, 1.0), 1e-300)

            if not (
                math.isfinite(beta0)
                and math.isfinite(sig2e)
                and math.isfinite(sig2s)
                and np.isfinite(s).all()
                and np.isfinite(eps).all()
            ):
                raise RuntimeError(
                    f"non-finite sampler state at iteration {it} of chain {c}"
                )

            if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
                theta_draws[c, keep] = beta0 + eps + s
                s_draws[c, keep] = s
                beta0_draws[c, keep] = beta0
                sig2e_draws[c, keep] = sig2e
                sig2s_draws[c, keep] = sig2s
                keep += 1

    summaries = []
    for r, rid in enumerate(prec.node_ids):
        theta_r = theta_draws[:, :, r]
        summaries.append(
            RegionSummary(
                region_id=rid,
                theta=summarize(theta_r),
                prevalence=summarize(expit(theta_r.ravel())),
                rhat_theta=rhat(theta_r),
                ess_theta=ess(theta_r),
            )
        )

    hyper_traces: dict[str, np.ndarray] = {"beta0": beta0_draws}
    if fixed_e is None:
        hyper_traces["sigma2_eps"] = sig2e_draws
    if fixed_s is None and prec.rank > 0:
        hyper_traces["sigma2_sp"] = sig2s_draws
    per_scalar = {f"theta[{rid}]": ScalarDiag(s.rhat_theta, s.ess_theta)
                  for rid, s in zip(prec.node_ids, summaries)}
    hyper_report = diagnostics(hyper_traces)
    per_scalar.update(hyper_report.per_scalar)
    report = DiagnosticsReport(per_scalar=per_scalar, notes=hyper_report.notes)

    hyper_summaries = {
        "beta0": summarize(beta0_draws),
        "sigma2_eps": summarize(sig2e_draws),
        "sigma2_sp": summarize(sig2s_draws),
    }
    meta = {
        "chains": str(config.chains),
        "iterations": str(config.iterations),
        "burn_in": str(config.burn_in),
        "thin": str(config.thin),
        "seed": str(config.seed),
        "priors": (
            f"invgamma(a_eps={pri.a_eps},b_eps={pri.b_eps},"
            f"a_sp={pri.a_sp},b_sp={pri.b_sp})"
        ),
        "style": prec.style,
        "icar_rank": str(prec.rank),
    }
    if fixed_e is not None:
        meta["fixed_sigma2_eps"] = repr(fixed_e)
    if fixed_s is not None:
        meta["fixed_sigma2_sp"] = repr(fixed_s)
    return BymPosterior(
        region_ids=prec.node_ids,
        theta_draws=theta_draws,
        s_draws=s_draws,
        beta0_draws=beta0_draws,
        sigma2_eps_draws=sig2e_draws,
        sigma2_sp_draws=sig2s_draws,
        summaries=summaries,
        hyper_summaries=hyper_summaries,
        report=report,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# CSV interface
# ---------------------------------------------------------------------------


def write_posterior_csv(
    rows: Sequence[PosteriorRow],
    path: str | Path,
    metadata: Mapping[str, str] | None = None,
) -> None:
    with Path(path).open("w", newline="") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(POSTERIOR_CSV_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.region_id,
                    repr(float(r.prev_mean)),
                    repr(float(r.prev_median)),
                    repr(float(r.prev_sd)),
                    repr(float(r.prev_q025)),
                    repr(float(r.prev_q975)),
                    repr(float(r.theta_mean)),
                    repr(float(r.theta_sd)),
                    repr(float(r.direct_p)),
                    repr(float(r.direct_se)),
                    str(r.n),
                    r.degenerate,
                    repr(float(r.rhat_theta)),
                    repr(float(r.ess_theta)),
                ]
            )


def read_posterior_csv(path: str | Path) -> list[PosteriorRow]:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"posterior file not found: {path}")
    reader = csv.reader(_data_lines(path))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != POSTERIOR_CSV_COLUMNS:
        raise SchemaError(f"{path}: unexpected posterior header {header}")
    rows = []
    for row in reader:
        rows.append(
            PosteriorRow(
                region_id=row[0],
                prev_mean=float(row[1]),
                prev_median=float(row[2]),
                prev_sd=float(row[3]),
                prev_q025=float(row[4]),
                prev_q975=float(row[5]),
                theta_mean=float(row[6]),
                theta_sd=float(row[7]),
                direct_p=float(row[8]),
                direct_se=float(row[9]),
                n=int(row[10]),
                degenerate=row[11],
                rhat_theta=float(row[12]),
                ess_theta=float(row[13]),
            )
        )
    return rows


def write_trace_csv(
    posterior: BymPosterior,
    path: str | Path,
    metadata: Mapping[str, str] | None = None,
) -> None:
    """Hyperparameter traces, one row per (chain, retained draw)."""
    with Path(path).open("w", newline="") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["chain", "draw", "beta0", "sigma2_eps", "sigma2_sp"])
        chains, kept = posterior.beta0_draws.shape
        for c in range(chains):
            for k in range(kept):
                writer.writerow(
                    [
                        str(c),
                        str(k),
                        repr(float(posterior.beta0_draws[c, k])),
                        repr(float(posterior.sigma2_eps_draws[c, k])),
                        repr(float(posterior.sigma2_sp_draws[c, k])),
                    ]
                )
