"""Alternating least squares for joint class-specific clustering and
category quantification, plus the row-constrained quantification variants.

The minimized objective is, over all variables j and supplementary
variables h,

    phi = (1/(N H m)) * sum_j sum_h || U_h G_h - Z_j B_j ||^2

subject to the quantification normalization
(1/(N H m)) sum_j B_j' Z_j^H' Z_j^H B_j = I_p and centered cluster scores.
Each cycle refreshes the quantifications B (an eigenproblem on the
mass-scaled between-cluster cross-product), recenters G, and reassigns
observations to their nearest center inside their own class.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import (
    CategoricalDataset,
    ClusterSpec,
    HierarchicalAssignment,
    IndicatorView,
    SupplementaryData,
    stacked_indicators,
)
from .errors import EmptyClusterError, ProjectorError, ShapeError, SpecError
from .linalg import mass_scale, sym_eig_top


@dataclass(frozen=True)
class SolverOptions:
    """Knobs for the alternating least squares fit.

    ``epsilon`` bounds the objective decrease between consecutive cycles;
    iteration stops once the decrease falls below it.
    """

    p: int = 2
    n_starts: int = 100
    max_iter: int = 100
    epsilon: float = 1e-8
    seed: int = 0

    def validate(self, view: IndicatorView | None = None) -> None:
        if self.p < 1:
            raise SpecError("p must be >= 1")
        if self.n_starts < 1:
            raise SpecError("n_starts must be >= 1")
        if self.max_iter < 1:
            raise SpecError("max_iter must be >= 1")
        if not self.epsilon > 0:
            raise SpecError("epsilon must be positive")
        if view is not None:
            bound = view.total_categories - view.n_vars
            if self.p > bound:
                raise SpecError(
                    f"p={self.p} exceeds the rank bound Q - m = {bound} of the centered indicators"
                )


@dataclass(frozen=True)
class MsccaSolution:
    """A converged fit: assignment, centers, quantifications, diagnostics.

    ``centers`` stacks the per-variable center blocks G_h in the natural
    (h, class, cluster) order, matching ``assignment.row_index()``.
    ``objective_trace`` holds the winning start's objective after each
    centering update; ``start_traces`` keeps every start's trace so
    monotonicity can be audited across the whole multistart.
    """

    assignment: HierarchicalAssignment
    centers: np.ndarray
    quantifications: np.ndarray
    objective: float
    psi: float
    objective_trace: tuple[float, ...]
    start_index: int
    converged: bool
    start_traces: tuple[tuple[float, ...], ...]
    options: SolverOptions


def object_scores(view: IndicatorView, quantifications: np.ndarray) -> np.ndarray:
    """Mean object scores: one replicate block of J Z^H B divided by the
    variable count, i.e. (1/m) * centered(Z B).  Rows i and i + N of the
    stacked version are identical, so one block carries everything."""
    codes = view.dataset.codes
    scores = np.zeros((view.n_obs, quantifications.shape[1]))
    for j in range(view.n_vars):
        scores += quantifications[view.offsets[j] + codes[:, j]]
    scores -= view.column_means @ quantifications
    return scores / view.n_vars


def _center_offsets(spec: ClusterSpec) -> np.ndarray:
    """Row offset of each variable's block inside the stacked G."""
    k_h = np.array(spec.k_per_variable, dtype=np.int64)
    return np.concatenate([[0], np.cumsum(k_h)[:-1]])


def objective_phi(
    assignment: HierarchicalAssignment,
    centers: np.ndarray,
    quantifications: np.ndarray,
    view: IndicatorView,
) -> float:
    """Direct evaluation of the objective at (U, G, B).

    Sums the squared residuals || U_h G_h - Z_j B_j ||^2 over every
    (variable, supplementary variable) pair and scales by 1/(N H m).
    """
    codes = view.dataset.codes
    n, m, n_sup = view.n_obs, view.n_vars, assignment.n_sup
    per_var = [
        quantifications[view.offsets[j] + codes[:, j]] for j in range(m)
    ]
    g_off = _center_offsets(assignment.spec)
    total = 0.0
    for h in range(n_sup):
        rows = centers[g_off[h] + assignment.column_index(h)]
        for j in range(m):
            diff = rows - per_var[j]
            total += float(np.einsum("ij,ij->", diff, diff))
    return total / (n * n_sup * m)


def psi_value(
    assignment: HierarchicalAssignment,
    quantifications: np.ndarray,
    view: IndicatorView,
) -> float:
    """The maximization-form value tr B' Z^H' J U (U'U)^-1 U' J Z^H B.

    Computed as the mass-weighted squared norms of the per-cluster means
    of the centered scores Z_c B; raises ``EmptyClusterError`` when a
    cluster has no members (singular U'U).
    """
    codes = view.dataset.codes
    scores = np.zeros((view.n_obs, quantifications.shape[1]))
    for j in range(view.n_vars):
        scores += quantifications[view.offsets[j] + codes[:, j]]
    scores -= view.column_means @ quantifications
    total = 0.0
    for h in range(assignment.n_sup):
        col = assignment.column_index(h)
        k_h = assignment.spec.k_per_variable[h]
        sizes = np.bincount(col, minlength=k_h).astype(float)
        if np.any(sizes == 0):
            raise EmptyClusterError(f"variable {h} has an empty cluster")
        sums = np.stack(
            [np.bincount(col, weights=scores[:, d], minlength=k_h) for d in range(scores.shape[1])],
            axis=1,
        )
        total += float((sums * sums / sizes[:, None]).sum())
    return total


def init_random(
    sup: SupplementaryData, spec: ClusterSpec, rng: np.random.Generator
) -> HierarchicalAssignment:
    """Random initial clusters inside each class.

    The first K_hs members (in a random permutation) seed the K_hs
    clusters so none starts empty; the rest draw uniformly.
    """
    spec.validate(sup)
    clusters = np.zeros((sup.n_obs, sup.n_sup), dtype=np.int64)
    for h in range(sup.n_sup):
        for s in range(sup.r[h]):
            members = sup.members(h, s)
            k = spec.k_of(h, s)
            perm = rng.permutation(members)
            clusters[perm[:k], h] = np.arange(k)
            if perm.size > k:
                clusters[perm[k:], h] = rng.integers(0, k, size=perm.size - k)
    return HierarchicalAssignment(sup=sup, spec=spec, clusters=clusters)


def update_B(
    assignment: HierarchicalAssignment, view: IndicatorView, p: int
) -> np.ndarray:
    """Refresh the category quantifications for a fixed assignment.

    B is sqrt(N H m) D^{-1/2} times the top-p eigenvectors of the
    mass-scaled between-cluster cross-product

        (1/m) D^{-1/2} Z^H' J P_U J Z^H D^{-1/2},

    which satisfies the normalization constraint by construction.  The
    scaling uses the stacked masses D (category counts times H), so the
    constraint (1/(N H m)) sum_j B_j' Z_j^H' Z_j^H B_j = I_p holds for
    every H, not only the single-set case.
    """
    codes = view.dataset.codes
    n, m, big_q = view.n_obs, view.n_vars, view.total_categories
    n_sup = assignment.n_sup
    mu = view.column_means
    target = np.zeros((big_q, big_q))
    for h in range(n_sup):
        col = assignment.column_index(h)
        k_h = assignment.spec.k_per_variable[h]
        sizes = np.bincount(col, minlength=k_h).astype(float)
        if np.any(sizes == 0):
            raise EmptyClusterError(f"variable {h} has an empty cluster")
        crosstab = np.zeros((k_h, big_q))
        for j in range(m):
            q_j = view.dataset.q[j]
            flat = np.bincount(col * q_j + codes[:, j], minlength=k_h * q_j)
            crosstab[:, view.offsets[j] : view.offsets[j] + q_j] = flat.reshape(k_h, q_j)
        centered = crosstab - sizes[:, None] * mu[None, :]
        target += centered.T @ (centered / sizes[:, None])
    d = view.d_masses.astype(float)
    d_isqrt = 1.0 / np.sqrt(d)
    scaled = (target * d_isqrt[:, None] * d_isqrt[None, :]) / m
    eig = sym_eig_top(scaled, p)
    return float(np.sqrt(n * n_sup * m)) * mass_scale(eig.vectors, d, -0.5, side="left")


def _centroids(assignment: HierarchicalAssignment, scores: np.ndarray) -> np.ndarray:
    """Per-cluster means of the object scores, stacked over h."""
    blocks = []
    for h in range(assignment.n_sup):
        col = assignment.column_index(h)
        k_h = assignment.spec.k_per_variable[h]
        sizes = np.bincount(col, minlength=k_h).astype(float)
        if np.any(sizes == 0):
            raise EmptyClusterError(f"variable {h} has an empty cluster")
        sums = np.stack(
            [np.bincount(col, weights=scores[:, d], minlength=k_h) for d in range(scores.shape[1])],
            axis=1,
        )
        blocks.append(sums / sizes[:, None])
    return np.vstack(blocks)


def update_G(
    assignment: HierarchicalAssignment, view: IndicatorView, quantifications: np.ndarray
) -> np.ndarray:
    """Recenter: each row of G becomes the mean object score of its
    cluster's members (the closed-form optimum for a fixed assignment)."""
    return _centroids(assignment, object_scores(view, quantifications))


def update_U(
    scores: np.ndarray,
    centers: np.ndarray,
    sup: SupplementaryData,
    spec: ClusterSpec,
) -> HierarchicalAssignment:
    """Assign every observation to its nearest center inside its observed
    class; ties break toward the lowest cluster index.  Empty clusters may
    result and are repaired separately."""
    g_off = _center_offsets(spec)
    clusters = np.zeros((sup.n_obs, sup.n_sup), dtype=np.int64)
    for h in range(sup.n_sup):
        offsets = spec.offsets(h)
        for s in range(sup.r[h]):
            members = sup.members(h, s)
            k = spec.k_of(h, s)
            block = centers[g_off[h] + offsets[s] : g_off[h] + offsets[s] + k]
            diff = scores[members][:, None, :] - block[None, :, :]
            d2 = np.einsum("ikd,ikd->ik", diff, diff)
            clusters[members, h] = d2.argmin(axis=1)
    return HierarchicalAssignment(sup=sup, spec=spec, clusters=clusters)


def repair_empty_clusters(
    assignment: HierarchicalAssignment,
    scores: np.ndarray,
    centers: np.ndarray,
) -> HierarchicalAssignment:
    """Fill each empty cluster with the class member farthest from its
    current center, provided the donor cluster keeps at least one member;
    repeats until no cluster is empty.  A donor always exists because
    cluster counts never exceed class sizes."""
    g_off = _center_offsets(assignment.spec)
    clusters = np.array(assignment.clusters)
    sup, spec = assignment.sup, assignment.spec
    for h in range(sup.n_sup):
        offsets = spec.offsets(h)
        for s in range(sup.r[h]):
            members = sup.members(h, s)
            k = spec.k_of(h, s)
            if k == 1:
                continue
            local = clusters[members, h]
            sizes = np.bincount(local, minlength=k)
            for empty in range(k):
                while sizes[empty] == 0:
                    center_rows = centers[g_off[h] + offsets[s] + local]
                    gap = scores[members] - center_rows
                    dist = np.einsum("id,id->i", gap, gap)
                    dist[sizes[local] < 2] = -np.inf
                    donor = int(dist.argmax())
                    if not np.isfinite(dist[donor]):
                        raise EmptyClusterError(
                            f"class ({h}, {s}) cannot fill cluster {empty}"
                        )
                    sizes[local[donor]] -= 1
                    local[donor] = empty
                    sizes[empty] += 1
            clusters[members, h] = local
    return assignment.with_clusters(clusters)


class _StartResult(NamedTuple):
    assignment: HierarchicalAssignment
    centers: np.ndarray
    quantifications: np.ndarray
    trace: tuple[float, ...]
    converged: bool


def _run_start(
    view: IndicatorView,
    sup: SupplementaryData,
    spec: ClusterSpec,
    options: SolverOptions,
    rng: np.random.Generator,
) -> _StartResult:
    """One initialization driven to convergence.

    The trace records the objective after each centering update, where
    the centers are exact for the current assignment; the assignment step
    keeps the previous (feasible) assignment whenever an empty-cluster
    repair would have pushed the objective up, so the trace never
    increases beyond float jitter.
    """
    assignment = init_random(sup, spec, rng)
    trace: list[float] = []
    converged = False
    centers = quantifications = None
    for t in range(options.max_iter):
        quantifications = update_B(assignment, view, options.p)
        scores = object_scores(view, quantifications)
        centers = _centroids(assignment, scores)
        phi = objective_phi(assignment, centers, quantifications, view)
        trace.append(phi)
        if t > 0 and trace[-2] - trace[-1] < options.epsilon:
            converged = True
            break
        if t == options.max_iter - 1:
            break
        candidate = update_U(scores, centers, sup, spec)
        repaired = candidate
        if any(
            (candidate.cluster_sizes(h) == 0).any() for h in range(candidate.n_sup)
        ):
            repaired = repair_empty_clusters(candidate, scores, centers)
            if objective_phi(repaired, centers, quantifications, view) > phi:
                repaired = assignment
        assignment = repaired
    return _StartResult(
        assignment=assignment,
        centers=centers,
        quantifications=quantifications,
        trace=tuple(trace),
        converged=converged,
    )


def fit_mscca(
    dataset: CategoricalDataset,
    sup: SupplementaryData,
    spec: ClusterSpec,
    options: SolverOptions = SolverOptions(),
) -> MsccaSolution:
    """Multistart alternating least squares fit.

    Runs ``options.n_starts`` independent initializations (each with its
    own random stream derived from ``options.seed`` and the start index)
    and returns the solution with the smallest objective, ties broken by
    start index.  The returned (U, G, B) triple is mutually consistent:
    the centers and quantifications are the exact optimum for the
    returned assignment.
    """
    if dataset.n_obs != sup.n_obs:
        raise ShapeError("dataset and supplementary data disagree on N")
    spec.validate(sup)
    view = stacked_indicators(dataset, sup.n_sup)
    options.validate(view)
    seeds = np.random.SeedSequence(options.seed).spawn(options.n_starts)
    best: _StartResult | None = None
    best_index = -1
    traces: list[tuple[float, ...]] = []
    for index, seed in enumerate(seeds):
        result = _run_start(view, sup, spec, options, np.random.default_rng(seed))
        traces.append(result.trace)
        if best is None or result.trace[-1] < best.trace[-1]:
            best = result
            best_index = index
    return MsccaSolution(
        assignment=best.assignment,
        centers=best.centers,
        quantifications=best.quantifications,
        objective=best.trace[-1],
        psi=psi_value(best.assignment, best.quantifications, view),
        objective_trace=best.trace,
        start_index=best_index,
        converged=best.converged,
        start_traces=tuple(traces),
        options=options,
    )


def fit_cluster_ca(
    dataset: CategoricalDataset,
    n_clusters: int,
    options: SolverOptions = SolverOptions(),
) -> MsccaSolution:
    """Joint clustering and quantification with one flat partition.

    Structurally this is the hierarchical fit with a single supplementary
    variable holding a single class, so the same engine runs it.  ``K = 1``
    is rejected: centering annihilates a lone cluster and the fit would be
    vacuous.
    """
    if not 2 <= n_clusters <= dataset.n_obs:
        raise SpecError(f"cluster count {n_clusters} outside [2, {dataset.n_obs}]")
    sup = SupplementaryData(
        codes=np.zeros((dataset.n_obs, 1), dtype=np.int64),
        labels=(("all",),),
        names=("cluster",),
    )
    spec = ClusterSpec(counts=((n_clusters,),))
    return fit_mscca(dataset, sup, spec, options)


@dataclass(frozen=True)
class ConstraintSpec:
    """Which linear row constraint to impose on the object scores.

    kind:
      - ``identity``: no constraint (plain multiple correspondence analysis)
      - ``projector-on``: scores projected onto class indicators (each class
        represented by its members' average)
      - ``projector-off``: class means removed from the scores
      - ``membership-projector``: scores projected onto a fixed hierarchical
        cluster assignment (the quantification step of the clustering fit)
    """

    kind: str
    source: SupplementaryData | HierarchicalAssignment | None = None

    _KINDS = ("identity", "projector-on", "projector-off", "membership-projector")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise SpecError(f"unknown constraint kind {self.kind!r}")
        if self.kind == "identity":
            if self.source is not None:
                raise SpecError("identity constraint takes no source")
        elif self.kind == "membership-projector":
            if not isinstance(self.source, HierarchicalAssignment):
                raise SpecError("membership-projector needs a HierarchicalAssignment")
        elif not isinstance(self.source, SupplementaryData):
            raise SpecError(f"{self.kind} needs SupplementaryData")


class ConstrainedFit(NamedTuple):
    """Result of a row-constrained quantification: the constrained object
    scores (NH x p, one block per supplementary variable), the
    quantifications, and the directly evaluated objective."""

    scores: np.ndarray
    quantifications: np.ndarray
    objective: float


def _constraint_basis(cspec: ConstraintSpec, n_obs: int) -> tuple[np.ndarray | None, int]:
    """Dense column basis W of the projector (or None for identity), plus
    the stacking count H implied by the source."""
    if cspec.kind == "identity":
        return None, 1
    if cspec.kind == "membership-projector":
        assignment = cspec.source
        sizes = np.concatenate(
            [assignment.cluster_sizes(h) for h in range(assignment.n_sup)]
        )
        if np.any(sizes == 0):
            raise ProjectorError("assignment has empty clusters; projector is rank deficient")
        return assignment.stacked_indicator(), assignment.n_sup
    sup = cspec.source
    if sup.n_obs != n_obs:
        raise ShapeError("constraint source disagrees with the dataset on N")
    n_sup = sup.n_sup
    total = sum(sup.r)
    w = np.zeros((n_obs * n_sup, total))
    col = 0
    for h in range(n_sup):
        rows = h * n_obs + np.arange(n_obs)
        w[rows, col + sup.codes[:, h]] = 1.0
        col += sup.r[h]
    return w, n_sup


def fit_constrained_mca(
    dataset: CategoricalDataset, cspec: ConstraintSpec, p: int
) -> ConstrainedFit:
    """Quantification under a linear row constraint on the object scores.

    Solves min (1/(N H m)) sum_j || C F - Z_j^H B_j ||^2 under the usual
    normalization, with C the projector implied by ``cspec``.  The
    identity kind reproduces plain multiple correspondence analysis; the
    reported objective is evaluated directly from the residuals.
    """
    if cspec.kind == "membership-projector" and cspec.source.n_obs != dataset.n_obs:
        raise ShapeError("constraint source disagrees with the dataset on N")
    basis, n_stack = _constraint_basis(cspec, dataset.n_obs)
    view = stacked_indicators(dataset, n_stack)
    bound = view.total_categories - view.n_vars
    if not 1 <= p <= bound:
        raise SpecError(f"p={p} outside [1, {bound}]")
    n, m = view.n_obs, view.n_vars
    zc = np.asarray(view.z_centered)
    zc_stacked = np.tile(zc, (n_stack, 1))

    gram = zc.T @ zc * n_stack  # Z^H' J Z^H
    if basis is None:
        target = gram
    else:
        wtw = basis.T @ basis
        t = basis.T @ zc_stacked
        try:
            solved = np.linalg.solve(wtw, t)
        except np.linalg.LinAlgError as exc:
            raise ProjectorError("projector source is rank deficient") from exc
        projected = t.T @ solved
        target = projected if cspec.kind != "projector-off" else gram - projected

    d = view.d_masses.astype(float)
    d_isqrt = 1.0 / np.sqrt(d)
    scaled = (target * d_isqrt[:, None] * d_isqrt[None, :]) / m
    eig = sym_eig_top(scaled, p)
    quantifications = float(np.sqrt(n * n_stack * m)) * (d_isqrt[:, None] * eig.vectors)

    free = zc_stacked @ quantifications / m  # (1/m) J Z^H B
    if basis is None:
        scores = free
    else:
        projected_scores = basis @ np.linalg.solve(basis.T @ basis, basis.T @ free)
        scores = projected_scores if cspec.kind != "projector-off" else free - projected_scores

    total = 0.0
    codes = view.dataset.codes
    for j in range(m):
        rows = quantifications[view.offsets[j] + codes[:, j]]
        diff = scores - np.tile(rows, (n_stack, 1))
        total += float(np.einsum("ij,ij->", diff, diff))
    return ConstrainedFit(
        scores=scores,
        quantifications=quantifications,
        objective=total / (n * n_stack * m),
    )
