"""Assembly of the dominance-constrained portfolio programs.

Variable layout (row-major Ψ, zero-based blocks):

    tag "lp" / "milp":        [alpha(m) | beta(m) | xi(n) | psi(n*n)]
    tag "lp_star" / "lp_combined": [alpha(m) | beta(m) | psi(n*n)]

with psi_{jk} stored at offset ``psi_offset + j*n + k``. The objective is the
option premium −ask'·alpha + bid'·beta, to be maximized. Position caps
(alpha ≤ v, beta ≤ w) are encoded as variable bounds; ``formulation_stats``
counts them as polytope rows so published row counts reproduce exactly.

Row blocks per tag (senses 'E' equality, 'L' ≤):

    lp:          PSUM (n,E)  XIEQ (n,E)  DOM2 (n,L)   YBND (n,L)  ZPAY (k,E)
    milp:        PSUM (n,E)  XIEQ (n,E)  DOM1 (n,L)   YBND (n,L)  ZPAY (k,E)
    lp_star:     PLA (n,L)   PLB (n*n,L)                          ZPAY (k,E)
    lp_combined: PSUM (n,E)  CDOM (n,L)  YBND (n,L)               ZPAY (k,E)

DOM2 is the triangular second-order block T·xi ≤ T·mu, DOM1 its first-order
counterpart S·xi ≤ S·mu, YBND the per-state mean bound Ψx − Θ'(α−β) ≤ x,
PLA/PLB the baseline program's shortfall bounds, CDOM the combined block
T·Ψ'·mu ≤ T·mu, and ZPAY the zero-payoff-outside-strikes equalities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .market_data import MarketSnapshot
from .state_probs import StateGrid

TAGS = ("lp", "lp_star", "lp_combined", "milp")


class FormulationError(ValueError):
    pass


def build_payoff_matrix(snapshot: MarketSnapshot, grid: StateGrid) -> np.ndarray:
    """m×n option payoffs θ_ij at the grid atoms: calls (x−s)⁺, puts (s−x)⁺."""
    if snapshot.n_options == 0:
        raise FormulationError("snapshot has no quotes")
    lo, hi = snapshot.strike_range
    if grid.atoms[0] < lo - 1e-9 or grid.atoms[-1] > hi + 1e-9:
        raise FormulationError("grid atoms must lie within the snapshot's strike range")
    strikes = snapshot.strikes[:, None]
    x = grid.atoms[None, :]
    call = np.maximum(0.0, x - strikes)
    put = np.maximum(0.0, strikes - x)
    return np.where(snapshot.is_call[:, None], call, put)


def build_T(grid: StateGrid) -> np.ndarray:
    """Strictly lower triangular matrix with (j,k) entry x_j − x_k for j > k."""
    x = grid.atoms
    return np.tril(x[:, None] - x[None, :], k=-1)


def build_S(n: int) -> np.ndarray:
    """Strictly lower triangular all-ones matrix."""
    if n < 1:
        raise FormulationError("n must be >= 1")
    return np.tril(np.ones((n, n)), k=-1)


@dataclass(frozen=True)
class Polytope:
    """Position polytope: caps alpha ≤ v, beta ≤ w plus optional equality rows.

    The equality rows apply the same coefficient vector with opposite signs to
    alpha and beta: g'(alpha − beta) = 0. With ``zero_payoff_outside`` they are
    the four restrictions that make the layover payoff vanish outside the
    strike range (the paper's eight paired inequality rows folded into four
    equalities).
    """

    v: np.ndarray
    w: np.ndarray
    eq_coeffs: np.ndarray  # (k, m); k == 0 for the plain polytope

    def __post_init__(self) -> None:
        v = np.asarray(self.v, dtype=float)
        w = np.asarray(self.w, dtype=float)
        eq = np.asarray(self.eq_coeffs, dtype=float).reshape(-1, v.size)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "eq_coeffs", eq)
        if v.shape != w.shape or v.ndim != 1:
            raise FormulationError("v and w must be 1-d arrays of equal length")
        if np.any(v < 0) or np.any(w < 0):
            raise FormulationError("position caps must be nonnegative")

    @property
    def m(self) -> int:
        return self.v.size

    @property
    def ell(self) -> int:
        """Row count in the paper's accounting: 2m cap rows + equality rows."""
        return 2 * self.m + self.eq_coeffs.shape[0]

    def as_matrices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
        """Full (A, B, c, senses) with the cap rows written out explicitly."""
        m, k = self.m, self.eq_coeffs.shape[0]
        A = np.vstack([np.eye(m), np.zeros((m, m)), self.eq_coeffs])
        B = np.vstack([np.zeros((m, m)), np.eye(m), -self.eq_coeffs])
        c = np.concatenate([self.v, self.w, np.zeros(k)])
        senses = ["L"] * (2 * m) + ["E"] * k
        return A, B, c, senses

    def contains(self, alpha: np.ndarray, beta: np.ndarray, tol: float = 1e-9) -> bool:
        if np.any(alpha < -tol) or np.any(beta < -tol):
            return False
        if np.any(alpha > self.v + tol) or np.any(beta > self.w + tol):
            return False
        return bool(np.all(np.abs(self.eq_coeffs @ (alpha - beta)) <= tol))


def build_polytope(
    snapshot: MarketSnapshot,
    v: np.ndarray,
    w: np.ndarray,
    zero_payoff_outside: bool = True,
) -> Polytope:
    """Polytope from depth caps, optionally forcing zero payoff outside strikes.

    A layover of vanilla options is piecewise linear with kinks only at
    strikes, so it vanishes above the strike range iff the net call positions
    satisfy Σ dᵢsᵢ(αᵢ−βᵢ) = 0 and Σ dᵢ(αᵢ−βᵢ) = 0, and below the range iff
    the same two hold for puts (value and one-sided slope at the boundary
    strikes are both zero).
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    if v.size != snapshot.n_options or w.size != snapshot.n_options:
        raise FormulationError("depth caps do not match the snapshot's option count")
    if not zero_payoff_outside:
        return Polytope(v=v, w=w, eq_coeffs=np.zeros((0, v.size)))
    d = snapshot.is_call.astype(float)
    s = snapshot.strikes
    eq = np.stack([d * s, d, (1.0 - d) * s, 1.0 - d])
    return Polytope(v=v, w=w, eq_coeffs=eq)


@dataclass
class LayoverProblem:
    """Assembled optimization problem plus the data needed to interpret it."""

    tag: str
    objective: np.ndarray          # maximize objective @ x
    rows: sp.csr_matrix
    senses: list[str]              # 'L' or 'E' per matrix row
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    integer: np.ndarray            # bool mask (psi block for milp)
    m: int
    n: int
    ell: int
    atoms: np.ndarray
    probs: np.ndarray
    theta: np.ndarray
    price_ask: np.ndarray
    price_bid: np.ndarray
    polytope: Polytope
    row_labels: list[str] = field(repr=False, default_factory=list)

    @property
    def n_variables(self) -> int:
        return self.objective.size

    @property
    def has_xi(self) -> bool:
        return self.tag in ("lp", "milp")

    @property
    def alpha_slice(self) -> slice:
        return slice(0, self.m)

    @property
    def beta_slice(self) -> slice:
        return slice(self.m, 2 * self.m)

    @property
    def xi_slice(self) -> slice:
        if not self.has_xi:
            raise FormulationError(f"{self.tag} has no xi block")
        return slice(2 * self.m, 2 * self.m + self.n)

    @property
    def psi_offset(self) -> int:
        return 2 * self.m + (self.n if self.has_xi else 0)

    @property
    def psi_slice(self) -> slice:
        return slice(self.psi_offset, self.psi_offset + self.n * self.n)

    def column_names(self) -> list[str]:
        names = [f"AL{i + 1:06d}" for i in range(self.m)]
        names += [f"BE{i + 1:06d}" for i in range(self.m)]
        if self.has_xi:
            names += [f"XI{j + 1:06d}" for j in range(self.n)]
        names += [f"P{j + 1:03d}_{k + 1:03d}" for j in range(self.n) for k in range(self.n)]
        return names

    def row_names(self) -> list[str]:
        counters: dict[str, int] = {}
        out = []
        for label in self.row_labels:
            counters[label] = counters.get(label, 0) + 1
            out.append(f"{label}{counters[label]:04d}")
        return out

    def extract_portfolio(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return np.array(x[self.alpha_slice]), np.array(x[self.beta_slice])

    def premium(self, x: np.ndarray) -> float:
        return float(self.objective @ x)

    def default_warm_start(self) -> np.ndarray:
        """The always-feasible point: zero portfolio, xi = mu, psi = identity."""
        if not self.has_xi:
            raise FormulationError("warm start is defined for the lp/milp layouts")
        x = np.zeros(self.n_variables)
        x[self.xi_slice] = self.probs
        x[self.psi_slice] = np.eye(self.n).ravel()
        return x

    def residuals(self, x: np.ndarray) -> tuple[float, float]:
        """(max constraint violation, max bound violation) at x."""
        ax = self.rows @ x
        viol = 0.0
        for i, sense in enumerate(self.senses):
            gap = ax[i] - self.rhs[i]
            viol = max(viol, gap if sense == "L" else abs(gap))
        bviol = max(float(np.max(self.lower - x, initial=0.0)), float(np.max(x - self.upper, initial=0.0)))
        return max(viol, 0.0), bviol


def _psi_col(psi_offset: int, n: int, j, k):
    return psi_offset + np.asarray(j) * n + np.asarray(k)


def assemble(
    tag: str,
    theta: np.ndarray,
    grid: StateGrid,
    polytope: Polytope,
    price_ask: np.ndarray,
    price_bid: np.ndarray,
) -> LayoverProblem:
    """Build the chosen program over a payoff matrix, grid and polytope."""
    if tag not in TAGS:
        raise FormulationError(f"unknown formulation tag {tag!r}; expected one of {TAGS}")
    theta = np.asarray(theta, dtype=float)
    m, n = theta.shape
    if grid.n_states != n or polytope.m != m:
        raise FormulationError("dimension mismatch between payoff matrix, grid and polytope")
    p = np.asarray(price_ask, dtype=float)
    q = np.asarray(price_bid, dtype=float)
    if p.shape != (m,) or q.shape != (m,):
        raise FormulationError("price vectors must have one entry per option")

    x = grid.atoms
    mu = grid.probs
    has_xi = tag in ("lp", "milp")
    nv = 2 * m + (n if has_xi else 0) + n * n
    xi_off = 2 * m
    psi_off = 2 * m + (n if has_xi else 0)

    data: list[np.ndarray] = []
    rows_idx: list[np.ndarray] = []
    cols_idx: list[np.ndarray] = []
    senses: list[str] = []
    rhs: list[float] = []
    labels: list[str] = []
    row = 0

    def add_block(r, c, d, count, sense, rhs_vals, label):
        nonlocal row
        rows_idx.append(np.asarray(r, dtype=np.int64) + row)
        cols_idx.append(np.asarray(c, dtype=np.int64))
        data.append(np.asarray(d, dtype=float))
        senses.extend([sense] * count)
        rhs.extend(np.asarray(rhs_vals, dtype=float).tolist())
        labels.extend([label] * count)
        row += count

    theta_i, theta_j = np.nonzero(theta)
    theta_v = theta[theta_i, theta_j]

    def y_bound_block(label: str):
        # psi_j. x − theta'_j (alpha − beta) <= x_j, one row per state j
        jj = np.repeat(np.arange(n), n)
        kk = np.tile(np.arange(n), n)
        r = np.concatenate([jj, theta_j, theta_j])
        c = np.concatenate([_psi_col(psi_off, n, jj, kk), theta_i, m + theta_i])
        d = np.concatenate([np.tile(x, n), -theta_v, theta_v])
        add_block(r, c, d, n, "L", x, label)

    def polytope_block():
        eq = polytope.eq_coeffs
        for e in range(eq.shape[0]):
            nz = np.nonzero(eq[e])[0]
            r = np.zeros(2 * nz.size, dtype=np.int64)
            c = np.concatenate([nz, m + nz])
            d = np.concatenate([eq[e, nz], -eq[e, nz]])
            add_block(r, c, d, 1, "E", [0.0], "ZPAY")

    if tag in ("lp", "milp"):
        # PSUM: each psi row sums to one
        jj = np.repeat(np.arange(n), n)
        kk = np.tile(np.arange(n), n)
        add_block(jj, _psi_col(psi_off, n, jj, kk), np.ones(n * n), n, "E", np.ones(n), "PSUM")
        # XIEQ row k: xi_k − Σ_j mu_j psi_jk = 0
        kk2 = np.repeat(np.arange(n), n)
        jj2 = np.tile(np.arange(n), n)
        r = np.concatenate([np.arange(n), kk2])
        c = np.concatenate([xi_off + np.arange(n), _psi_col(psi_off, n, jj2, kk2)])
        d = np.concatenate([np.ones(n), -np.tile(mu, n)])
        add_block(r, c, d, n, "E", np.zeros(n), "XIEQ")
        # dominance block on xi
        if tag == "lp":
            Tmat = build_T(grid)
            tr, tc = np.nonzero(Tmat)
            add_block(tr, xi_off + tc, Tmat[tr, tc], n, "L", Tmat @ mu, "DOM2")
        else:
            Smat = build_S(n)
            sr, sc = np.nonzero(Smat)
            add_block(sr, xi_off + sc, Smat[sr, sc], n, "L", Smat @ mu, "DOM1")
        y_bound_block("YBND")
        polytope_block()
    elif tag == "lp_combined":
        jj = np.repeat(np.arange(n), n)
        kk = np.tile(np.arange(n), n)
        add_block(jj, _psi_col(psi_off, n, jj, kk), np.ones(n * n), n, "E", np.ones(n), "PSUM")
        # CDOM row j: Σ_{k<j} (x_j − x_k) Σ_l mu_l psi_lk <= (T mu)_j
        Tmat = build_T(grid)
        rs, cs, ds = [], [], []
        for j in range(1, n):
            kk3 = np.repeat(np.arange(j), n)
            ll3 = np.tile(np.arange(n), j)
            rs.append(np.full(j * n, j, dtype=np.int64))
            cs.append(_psi_col(psi_off, n, ll3, kk3))
            ds.append(np.repeat(Tmat[j, :j], n) * np.tile(mu, j))
        add_block(np.concatenate(rs), np.concatenate(cs), np.concatenate(ds), n, "L", Tmat @ mu, "CDOM")
        y_bound_block("YBND")
        polytope_block()
    else:  # lp_star
        # PLA row k: Σ_j mu_j psi_kj <= (T mu)_k
        Tmat = build_T(grid)
        kk4 = np.repeat(np.arange(n), n)
        jj4 = np.tile(np.arange(n), n)
        add_block(kk4, _psi_col(psi_off, n, kk4, jj4), np.tile(mu, n), n, "L", Tmat @ mu, "PLA")
        # PLB row (j,k): −psi_kj − theta'_j(alpha−beta) <= x_j − x_k
        jj5 = np.repeat(np.arange(n), n)
        kk5 = np.tile(np.arange(n), n)
        r_psi = jj5 * n + kk5
        c_psi = _psi_col(psi_off, n, kk5, jj5)
        r_ab = np.repeat(theta_j, n) * n + np.tile(np.arange(n), theta_j.size)
        r = np.concatenate([r_psi, r_ab, r_ab])
        c = np.concatenate([c_psi, np.repeat(theta_i, n), np.repeat(m + theta_i, n)])
        d = np.concatenate([-np.ones(n * n), np.repeat(-theta_v, n), np.repeat(theta_v, n)])
        add_block(r, c, d, n * n, "L", (x[:, None] - x[None, :]).ravel(), "PLB")
        polytope_block()

    matrix = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows_idx), np.concatenate(cols_idx))),
        shape=(row, nv),
    ).tocsr()

    objective = np.zeros(nv)
    objective[:m] = -p
    objective[m : 2 * m] = q

    lower = np.zeros(nv)
    upper = np.full(nv, np.inf)
    upper[:m] = polytope.v
    upper[m : 2 * m] = polytope.w
    integer = np.zeros(nv, dtype=bool)
    if tag == "milp":
        upper[psi_off:] = 1.0
        integer[psi_off:] = True

    return LayoverProblem(
        tag=tag,
        objective=objective,
        rows=matrix,
        senses=senses,
        rhs=np.asarray(rhs),
        lower=lower,
        upper=upper,
        integer=integer,
        m=m,
        n=n,
        ell=polytope.ell,
        atoms=x.copy(),
        probs=mu.copy(),
        theta=theta,
        price_ask=p.copy(),
        price_bid=q.copy(),
        polytope=polytope,
        row_labels=labels,
    )


def build_problem(
    snapshot: MarketSnapshot,
    grid: StateGrid,
    tag: str,
    scale: int = 1,
    zero_payoff_outside: bool = True,
) -> LayoverProblem:
    """Snapshot-to-problem convenience: depth caps, polytope, payoffs, assemble."""
    from .market_data import apply_depth_constraint

    v, w = apply_depth_constraint(snapshot, scale)
    polytope = build_polytope(snapshot, v, w, zero_payoff_outside)
    theta = build_payoff_matrix(snapshot, grid)
    return assemble(tag, theta, grid, polytope, snapshot.asks, snapshot.bids)


@dataclass(frozen=True)
class FormulationStats:
    """Row/variable/nonzero accounting in the paper's convention.

    ``rows`` and ``nonzeros`` include the 2m position-cap rows even though the
    assembled problem stores them as variable bounds. ``dominance_nonzeros``
    counts the blocks whose size separates the formulations: XIEQ+DOM2 for the
    lp tag (bounded by n² + n(n−1)/2 + n), the CDOM block for lp_combined
    (bounded by n²(n−1)/2).
    """

    rows: int
    variables: int
    nonzeros: int
    dominance_nonzeros: int


def formulation_stats(problem: LayoverProblem) -> FormulationStats:
    cap_rows = 2 * problem.m
    labels = np.asarray(problem.row_labels)
    if problem.tag == "lp":
        mask = (labels == "XIEQ") | (labels == "DOM2")
    elif problem.tag == "milp":
        mask = (labels == "XIEQ") | (labels == "DOM1")
    elif problem.tag == "lp_combined":
        mask = labels == "CDOM"
    else:
        mask = (labels == "PLA") | (labels == "PLB")
    row_nnz = problem.rows.getnnz(axis=1)
    return FormulationStats(
        rows=problem.rows.shape[0] + cap_rows,
        variables=problem.n_variables,
        nonzeros=int(problem.rows.nnz) + cap_rows,
        dominance_nonzeros=int(row_nnz[mask].sum()),
    )
