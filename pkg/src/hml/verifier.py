"""Structural checks on estimated measures.

The verifier turns the structure theorems into numeric reports: symbol
annihilation (localisation), support confinement on the sphere,
the kernel characterization of the curl symbol, and the two density
decompositions (rank-one dyads in the constant case, the six-mode
eigenbasis expansion in the smooth-scalar case).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .estimator import HMeasureEstimate, SphereGrid
from .symbols import (
    DegenerateDirectionError,
    FrequencyDirection,
    MaterialModel,
    antisym_E,
    assemble_divergence_symbol,
    assemble_P,
    assemble_system_matrices,
    eigen_structure,
    propagation_basis,
)

__all__ = [
    "LocalisationReport",
    "SupportReport",
    "KernelReport",
    "DensityDecomposition",
    "localisation_residual",
    "support_check",
    "kernel_lemma_check",
    "fit_constant_decomposition",
    "fit_modal_decomposition",
    "paper_sigma_blocks",
]


def _bin_directions(est: HMeasureEstimate, eps: float, use_centroid: bool) -> np.ndarray:
    """Per-bin evaluation directions: mass centroids where defined, else centers."""
    centers = est.sphere.centers()
    if not use_centroid:
        return centers
    cent = est.centroids.get(eps)
    if cent is None:
        return centers
    out = centers.copy()
    good = ~np.isnan(cent).any(axis=1)
    out[good] = cent[good]
    return out


@dataclass
class LocalisationReport:
    symbol: str
    eps: float
    bin_indices: np.ndarray
    residuals: np.ndarray
    mass_weights: np.ndarray
    skipped_bins: int
    max_weighted_residual: float

    def to_dict(self) -> dict:
        return {
            "symbol": self.symbol,
            "eps": self.eps,
            "bins": self.bin_indices.tolist(),
            "residuals": self.residuals.tolist(),
            "mass_weights": self.mass_weights.tolist(),
            "skipped_bins": self.skipped_bins,
            "max_weighted_residual": self.max_weighted_residual,
        }


def localisation_residual(
    est: HMeasureEstimate,
    symbol: str = "P",
    model: MaterialModel | None = None,
    x_center: Sequence[float] = (0.0, 0.0, 0.0),
    eps: float | None = None,
    mass_floor: float = 1e-6,
    use_centroid: bool = True,
) -> LocalisationReport:
    """Per-bin relative Frobenius residual of symbol(x, zeta_bin) @ mu_bin.

    Empty bins (below ``mass_floor`` of the total) are skipped, not reported
    as zero.  ``max_weighted_residual`` is max over bins of the residual
    scaled by the bin's mass fraction.
    """
    if symbol not in ("P", "B"):
        raise ValueError("symbol must be 'P' or 'B'")
    if symbol == "P" and model is None:
        raise ValueError("the P-symbol check needs a material model")
    e = est.finest if eps is None else eps
    bins = est.history[e]
    masses = np.trace(bins, axis1=1, axis2=2).real
    total = max(masses.sum(), 1e-300)
    keep = masses > mass_floor * total
    dirs = _bin_directions(est, e, use_centroid)
    idx = np.flatnonzero(keep)
    residuals = np.empty(idx.size)
    weights = masses[idx] / total
    for n, b in enumerate(idx):
        vec = dirs[b]
        M = bins[b]
        if symbol == "P":
            S = np.asarray(assemble_P(model, x_center, FrequencyDirection.from_vec4(vec)))
        else:
            S = assemble_divergence_symbol(vec[1:])
        residuals[n] = np.linalg.norm(S @ M) / max(np.linalg.norm(M), 1e-300)
    weighted = weights * residuals
    return LocalisationReport(
        symbol=symbol,
        eps=e,
        bin_indices=idx,
        residuals=residuals,
        mass_weights=weights,
        skipped_bins=int((~keep).sum()),
        max_weighted_residual=float(weighted.max()) if idx.size else 0.0,
    )


# ------------------------------------------------------------------- support

def _angular_distances(vecs: np.ndarray, case: str, speed: float) -> dict:
    """Geodesic distances from unit 4-vectors to the declared support sets."""
    z0 = np.clip(vecs[:, 0], -1, 1)
    zp = vecs[:, 1:]
    rp = np.linalg.norm(zp, axis=1)
    out = {}
    out["zeta0=0"] = np.abs(np.arcsin(z0))
    out["zetaP=0"] = np.arccos(np.abs(z0))
    out["zeta1*zeta2*zeta3=0"] = np.min(np.abs(np.arcsin(np.clip(vecs[:, 1:], -1, 1))), axis=1)
    if case == "scalar_smooth":
        alpha = np.arctan2(z0, rp)
        for sign, name in ((1.0, "zeta0=+v|zetaP|"), (-1.0, "zeta0=-v|zetaP|")):
            out[name] = np.abs(alpha - np.arctan(sign * speed))
    return out


@dataclass
class SupportReport:
    case: str
    tolerance: float
    fraction_in_support: float
    per_set_fraction: dict
    total_mass: float

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "tolerance": self.tolerance,
            "fraction_in_support": self.fraction_in_support,
            "per_set_fraction": self.per_set_fraction,
            "total_mass": self.total_mass,
        }


def support_check(
    est: HMeasureEstimate,
    case: str,
    model: MaterialModel | None = None,
    x_center: Sequence[float] = (0.0, 0.0, 0.0),
    radius_bins: float = 2.0,
    eps: float | None = None,
    use_centroid: bool = True,
) -> SupportReport:
    """Mass fraction near the declared support set of the case's theorem.

    Constant case: [{zeta0=0} u {zeta'=0}] n {zeta1 zeta2 zeta3 = 0};
    smooth-scalar case the union gains the two cones {zeta0 = +-v|zeta'|}.
    The distance to the intersection is taken as the max of the union and
    product-set distances; the tolerance is ``radius_bins`` bin widths.
    """
    if case not in ("constant", "scalar_smooth"):
        raise ValueError("case must be 'constant' or 'scalar_smooth'")
    e = est.finest if eps is None else eps
    masses = est.masses(e)
    total = float(masses.sum())
    tol = radius_bins * est.sphere.max_polar_width
    if total <= 0:
        return SupportReport(case, tol, 1.0, {}, 0.0)
    speed = model.speed_at(x_center) if model is not None else 1.0
    dirs = _bin_directions(est, e, use_centroid)
    dist = _angular_distances(dirs, case, speed)
    union_names = ["zeta0=0", "zetaP=0"]
    if case == "scalar_smooth":
        union_names += ["zeta0=+v|zetaP|", "zeta0=-v|zetaP|"]
    d_union = np.min(np.stack([dist[n] for n in union_names]), axis=0)
    d_support = np.maximum(d_union, dist["zeta1*zeta2*zeta3=0"])
    frac = float(masses[d_support <= tol].sum() / total)
    per_set = {
        name: float(masses[d <= tol].sum() / total) for name, d in dist.items()
    }
    return SupportReport(case=case, tolerance=tol, fraction_in_support=frac, per_set_fraction=per_set, total_mass=total)


# --------------------------------------------------------------- kernel lemma

@dataclass
class KernelReport:
    zetaP: np.ndarray
    singular_values: np.ndarray
    nullity: int
    max_null_residual: float
    max_column_misalignment: float
    convention: str = "columns parallel to zeta' (A = zeta' (x) a)"

    def to_dict(self) -> dict:
        return {
            "zetaP": self.zetaP.tolist(),
            "singular_values": self.singular_values.tolist(),
            "nullity": self.nullity,
            "max_null_residual": self.max_null_residual,
            "max_column_misalignment": self.max_column_misalignment,
            "convention": self.convention,
        }


def kernel_lemma_check(zetaP, rel_tol: float = 1e-12) -> KernelReport:
    """Nullspace of A -> E(zeta') A over 3x3 matrices, by SVD.

    Checks more than the dimension count: every null basis
    element must have all columns parallel to zeta', fixing the tensor
    orientation A = zeta' (x) a.
    """
    z = np.asarray(zetaP, dtype=float).reshape(3)
    r = np.linalg.norm(z)
    if r == 0:
        raise DegenerateDirectionError("kernel lemma undefined at zeta' = 0")
    E = antisym_E(z)
    K = np.kron(E, np.eye(3))  # row-major vec: vec(E @ A) = (E (x) I) vec(A)
    _, s, Vh = np.linalg.svd(K)
    nullity = int(np.sum(s <= rel_tol * r * 10))
    null_res = 0.0
    misalign = 0.0
    zhat = z / r
    for row in Vh[-3:]:
        A = row.reshape(3, 3)
        null_res = max(null_res, float(np.linalg.norm(E @ A)))
        for j in range(3):
            col = A[:, j]
            misalign = max(misalign, float(np.linalg.norm(np.cross(zhat, col))) if np.linalg.norm(col) > 1e-14 else 0.0)
    return KernelReport(
        zetaP=z,
        singular_values=s,
        nullity=nullity,
        max_null_residual=null_res,
        max_column_misalignment=misalign,
    )


# ------------------------------------------------------------- decompositions

@dataclass
class DensityDecomposition:
    """Per-bin scalar densities with fit residuals.

    Constant case: coefficients a, b (real, nonnegative up to tolerance)
    and c, d (complex, c = conj(d) up to tolerance).  Smooth-scalar case:
    a0, b0, ap, bp, am, bm from the A0-orthonormal eigen-dyad projection.
    """

    case: str
    bin_indices: np.ndarray
    coefficients: dict
    residuals: np.ndarray
    excluded_bins: np.ndarray
    checks: dict = field(default_factory=dict)
    directions: np.ndarray | None = None

    def coefficient_mass(self, weights: np.ndarray | None = None) -> dict:
        """Sum of |coefficient| per name (optionally solid-angle weighted)."""
        out = {}
        for name, arr in self.coefficients.items():
            vals = np.abs(np.asarray(arr))
            if weights is not None:
                vals = vals * weights[self.bin_indices]
            out[name] = float(vals.sum())
        return out

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "bins": self.bin_indices.tolist(),
            "coefficients": {
                k: np.stack([np.real(v), np.imag(v)], axis=-1).tolist() for k, v in self.coefficients.items()
            },
            "residuals": self.residuals.tolist(),
            "excluded_bins": self.excluded_bins.tolist(),
            "checks": self.checks,
        }


def _select_bins(est, eps, mass_floor, zp_floor, use_centroid):
    e = est.finest if eps is None else eps
    bins = est.history[e]
    masses = np.trace(bins, axis1=1, axis2=2).real
    total = max(masses.sum(), 1e-300)
    dirs = _bin_directions(est, e, use_centroid)
    rp = np.linalg.norm(dirs[:, 1:], axis=1)
    # polar chi1 rings contain the degenerate points zeta' = 0
    ring = np.arange(est.sphere.num_bins) // (est.sphere.n_theta * est.sphere.n_phi)
    polar = (ring == 0) | (ring == est.sphere.n_zeta0 - 1)
    carry = masses > mass_floor * total
    degenerate = polar | (rp < zp_floor)
    keep = carry & ~degenerate
    excluded = np.flatnonzero(carry & degenerate)
    return e, bins, dirs, np.flatnonzero(keep), excluded


def fit_constant_decomposition(
    est: HMeasureEstimate,
    eps: float | None = None,
    mass_floor: float = 1e-6,
    zp_floor: float = 0.15,
    use_centroid: bool = True,
) -> DensityDecomposition:
    """Least-squares projection of each 3x3 block onto span{zeta' (x) zeta'}.

    Returns per-bin scalars (a, b, c, d) and the relative misfit of the
    rank-one reconstruction.  Bins with zeta' ~ 0 are excluded: the dyad
    degenerates there and the theorem gives a vanishing measure anyway.
    """
    e, bins, dirs, idx, excluded = _select_bins(est, eps, mass_floor, zp_floor, use_centroid)
    names = ("a", "b", "c", "d")
    coeffs = {n: np.zeros(idx.size, dtype=complex) for n in names}
    residuals = np.zeros(idx.size)
    c_minus_dbar = 0.0
    for n, bidx in enumerate(idx):
        zp = dirs[bidx, 1:]
        denom = float((zp @ zp) ** 2)
        M = bins[bidx]
        blocks = {"a": M[:3, :3], "c": M[:3, 3:], "d": M[3:, :3], "b": M[3:, 3:]}
        D = np.outer(zp, zp)
        recon = np.zeros((6, 6), dtype=complex)
        slots = {"a": (slice(0, 3), slice(0, 3)), "c": (slice(0, 3), slice(3, 6)),
                 "d": (slice(3, 6), slice(0, 3)), "b": (slice(3, 6), slice(3, 6))}
        for name in names:
            val = complex(zp @ blocks[name] @ zp) / denom
            coeffs[name][n] = val
            recon[slots[name]] = val * D
        residuals[n] = np.linalg.norm(M - recon) / max(np.linalg.norm(M), 1e-300)
        c_minus_dbar = max(c_minus_dbar, abs(coeffs["c"][n] - np.conj(coeffs["d"][n])))
    scale = max(float(np.max(np.abs(coeffs["a"]))) if idx.size else 0.0, 1e-300)
    checks = {
        "max_c_minus_conj_d": float(c_minus_dbar),
        "max_imag_a": float(np.max(np.abs(coeffs["a"].imag))) if idx.size else 0.0,
        "max_imag_b": float(np.max(np.abs(coeffs["b"].imag))) if idx.size else 0.0,
        "min_a_over_scale": float(np.min(coeffs["a"].real) / scale) if idx.size else 0.0,
        "min_b_over_scale": float(np.min(coeffs["b"].real) / scale) if idx.size else 0.0,
    }
    return DensityDecomposition(
        case="constant",
        bin_indices=idx,
        coefficients=coeffs,
        residuals=residuals,
        excluded_bins=excluded,
        checks=checks,
        directions=dirs[idx],
    )


MODAL_NAMES = ("a0", "b0", "ap", "bp", "am", "bm")


def fit_modal_decomposition(
    est: HMeasureEstimate,
    model: MaterialModel,
    x_center: Sequence[float] = (0.0, 0.0, 0.0),
    eps: float | None = None,
    mass_floor: float = 1e-6,
    zp_floor: float = 0.15,
    use_centroid: bool = True,
) -> DensityDecomposition:
    """Project each bin onto the six eigen-dyads b_s (x) b_s of the symbol.

    Uses the A0-orthonormality of the eigenbasis: the coefficient of mode s
    is (A0 b_s)^H mu (A0 b_s).  The reconstruction residual keeps track of
    any coherence between modes that the six dyads cannot represent.
    """
    e, bins, dirs, idx, excluded = _select_bins(est, eps, mass_floor, zp_floor, use_centroid)
    A0 = assemble_system_matrices(model, x_center)[0]
    coeffs = {n: np.zeros(idx.size, dtype=complex) for n in MODAL_NAMES}
    residuals = np.zeros(idx.size)
    for n, bidx in enumerate(idx):
        zeta = FrequencyDirection.from_vec4(dirs[bidx])
        es = eigen_structure(model, x_center, zeta)
        M = bins[bidx]
        recon = np.zeros((6, 6), dtype=complex)
        for name, col in zip(MODAL_NAMES, es.basis.T):
            u = A0 @ col
            val = complex(np.conj(u) @ M @ u)
            coeffs[name][n] = val
            recon += val * np.outer(col, col)
        residuals[n] = np.linalg.norm(M - recon) / max(np.linalg.norm(M), 1e-300)
    scale = max(
        max((float(np.max(np.abs(coeffs[n]))) for n in MODAL_NAMES), default=0.0), 1e-300
    )
    checks = {
        "max_imag": float(max((np.max(np.abs(coeffs[n].imag)) for n in MODAL_NAMES), default=0.0)),
        "min_coeff_over_scale": float(
            min((np.min(coeffs[n].real) for n in MODAL_NAMES), default=0.0) / scale
        ),
    }
    return DensityDecomposition(
        case="scalar_smooth",
        bin_indices=idx,
        coefficients=coeffs,
        residuals=residuals,
        excluded_bins=excluded,
        checks=checks,
        directions=dirs[idx],
    )


def paper_sigma_blocks(model: MaterialModel, x, zetaP, coeffs: dict) -> dict:
    """Assemble the four 3x3 blocks from modal densities via the printed display.

    sigma11 = (1/eps)[zhat (x) zhat a0 + (z1 (x) z1)(ap + am)/2 + (z2 (x) z2)(bp + bm)/2],
    sigma12 = (v/2)[z1 (x) z2 (ap - am) - z2 (x) z1 (bp - bm)], sigma21 = sigma12
    with the roles of z1/z2 swapped, sigma22 like sigma11 with eps -> eta and
    the transverse dyads exchanged.  Equals the sum of the six eigen-dyads.
    """
    zhat, z1, z2 = propagation_basis(zetaP)
    eps = model.eps_at(x)
    eta = model.eta_at(x)
    v = model.speed_at(x)
    a0, b0 = coeffs["a0"], coeffs["b0"]
    ap, bp = coeffs["ap"], coeffs["bp"]
    am, bm = coeffs["am"], coeffs["bm"]
    d = lambda u, w: np.outer(u, w)
    s11 = (d(zhat, zhat) * a0 + 0.5 * d(z1, z1) * (ap + am) + 0.5 * d(z2, z2) * (bp + bm)) / eps
    s22 = (d(zhat, zhat) * b0 + 0.5 * d(z2, z2) * (ap + am) + 0.5 * d(z1, z1) * (bp + bm)) / eta
    s12 = 0.5 * v * (d(z1, z2) * (ap - am) - d(z2, z1) * (bp - bm))
    s21 = 0.5 * v * (d(z2, z1) * (ap - am) - d(z1, z2) * (bp - bm))
    return {"s11": s11, "s12": s12, "s21": s21, "s22": s22}
