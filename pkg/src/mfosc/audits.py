"""Executable property battery for the weighted spectral machinery.

Turns the structural identities behind the dual norms into numbers: basis
orthonormality, the eigenvalue relation, the Hermite recurrence (both the
standard index pattern and the shifted variant, so the correct one is on
record), the point-mass norm bound, cross-weight comparison constants, and
the derivative-product estimate.  The CLI surfaces failures through its
truncation exit code.
"""

from __future__ import annotations

import numpy as np

from .errors import TruncationError
from .hermite import (
    HermiteBasis,
    cross_weight_comparison,
    dual_norm,
    hermite_derivative_values,
    hermite_second_derivative_values,
    hermite_values,
)
from .model import DiffusionModel

__all__ = [
    "gram_error",
    "eigen_residual_max",
    "recurrence_errors",
    "delta_norm_sweep",
    "product_estimate_report",
    "norm_property_battery",
]


def gram_error(basis: HermiteBasis, order: int | None = None) -> float:
    """Max deviation of the quadrature Gram matrix from the identity."""
    pts, W = basis.quadrature(order)
    vals = basis.mode_values(pts)
    G = (vals * W[:, None]).T @ vals
    return float(np.max(np.abs(G - np.eye(basis.n_modes))))


def eigen_residual_max(basis: HermiteBasis, lmax: int = 6) -> float:
    """Weighted-L2 residual of the eigenrelation for all |l|_inf <= lmax.

    The generator is applied through the recurrence formulas for the first
    and second derivatives, then compared with -lambda_l psi_l on the
    quadrature grid.
    """
    d = basis.d
    sc = basis.scales
    k = np.asarray(basis.k)
    s2 = np.asarray(basis.sigma) ** 2
    pts, W = basis.quadrature(2 * basis.L + 3)
    modes = [m for m in basis.modes if np.max(m) <= lmax]
    H = []
    D1 = []
    D2 = []
    for i in range(d):
        y = sc[i] * pts[:, i]
        root = np.sqrt(sc[i])
        H.append(hermite_values(y, lmax) * root)
        D1.append(hermite_derivative_values(y, lmax) * root * sc[i])
        D2.append(hermite_second_derivative_values(y, lmax) * root * sc[i] ** 2)
    worst = 0.0
    for m in modes:
        psi = np.ones(len(pts))
        lap = np.zeros(len(pts))
        drift = np.zeros(len(pts))
        for i in range(d):
            psi = psi * H[i][:, m[i]]
        for i in range(d):
            others = np.ones(len(pts))
            for j in range(d):
                if j != i:
                    others = others * H[j][:, m[j]]
            lap += s2[i] * D2[i][:, m[i]] * others
            drift += basis.theta * k[i] * pts[:, i] * D1[i][:, m[i]] * others
        lam = basis.theta * float(np.dot(k, m))
        resid = lap - drift + lam * psi
        norm = float(np.sqrt(np.sum(W * resid**2)))
        worst = max(worst, norm)
    return worst


def recurrence_errors(lmax: int = 12, npts: int = 257) -> dict:
    """Pointwise errors of the two candidate three-term recurrences.

    'standard' is x h_{n-1} = sqrt(n) h_n + sqrt(n-1) h_{n-2}; 'shifted'
    repeats the h_{n-1} factor in the last term.  Only the standard form is
    consistent with the orthonormal family generated by the upward
    recurrence; the shifted one is kept to document the rejection.
    """
    y = np.linspace(-6.0, 6.0, npts)
    H = hermite_values(y, lmax)
    err_std = 0.0
    err_shift = 0.0
    for n in range(2, lmax + 1):
        lhs = y * H[:, n - 1]
        scale = np.maximum(1.0, np.abs(lhs))
        std = np.sqrt(n) * H[:, n] + np.sqrt(n - 1) * H[:, n - 2]
        shift = np.sqrt(n) * H[:, n] + np.sqrt(n - 1) * H[:, n - 1]
        err_std = max(err_std, float(np.max(np.abs(lhs - std) / scale)))
        err_shift = max(err_shift, float(np.max(np.abs(lhs - shift) / scale)))
    return {"standard": err_std, "shifted": err_shift}


def delta_norm_sweep(basis: HermiteBasis, radius: float = 3.0, grid: int = 13,
                     eta: float = 1.0, tail_budget: float = 0.01) -> dict:
    """Point-mass norms over |x| <= radius against C * exp(theta |x|^2_A / (4 - eta)).

    C is fitted at the origin; the report counts violations and carries the
    worst ratio and the largest tail fraction encountered.
    """
    k = np.asarray(basis.k)
    s2 = np.asarray(basis.sigma) ** 2
    c0 = dual_norm(np.zeros(basis.d), basis).value
    xs = np.linspace(-radius, radius, grid)
    mesh = np.meshgrid(*([xs] * basis.d), indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    pts = pts[np.linalg.norm(pts, axis=1) <= radius]
    worst_ratio = 0.0
    worst_tail = 0.0
    violations = 0
    for x in pts:
        rep = dual_norm(x, basis)
        quad = float(np.sum(basis.theta * k * x**2 / s2))
        bound = c0 * np.exp(quad / (4.0 - eta))
        ratio = rep.value / bound
        worst_ratio = max(worst_ratio, ratio)
        if rep.value > 0:
            worst_tail = max(worst_tail, rep.tail_estimate / rep.value)
        if ratio > 1.0 + 1e-12:
            violations += 1
    return {
        "C0": c0,
        "eta": eta,
        "n_points": len(pts),
        "violations": violations,
        "worst_ratio": worst_ratio,
        "worst_tail_fraction": worst_tail,
        "tail_budget": tail_budget,
        "tails_ok": worst_tail <= tail_budget,
    }


def product_estimate_report(basis_theta: float, theta_prime: float, k, sigma,
                            rprime: float = 4.0, lmax: int = 8, j_orders=(0, 1, 2),
                            fit_lmax: int = 6, ring_factor: float = 1.5) -> dict:
    """Fitted constant for the derivative-product norm estimate.

    For pairs of modes l, l' the weighted Sobolev norm of the product
    d_x psi_{l} d_x psi_{l'} (regularity-r' normalization) is compared to
    (|l|^{j/2} + |l'|^{j/2}) / ((1+|l|)(1+|l'|))^{(r'-1)/2}.  A single fitted
    constant over |l|, |l'| <= lmax is reported; the check is that the
    constant fitted on the interior |l|, |l'| <= fit_lmax does not grow by
    more than ``ring_factor`` when the range is extended (a bounded-constant
    trend).
    """
    if 2 * theta_prime > basis_theta:
        raise TruncationError("product estimate requires 2 theta' <= theta")
    d = len(k)
    inner = HermiteBasis(theta=theta_prime, r=0.0, k=tuple(k), sigma=tuple(sigma), L=lmax)
    outer_L = 2 * lmax + 2
    outer = HermiteBasis(theta=basis_theta, r=0.0, k=tuple(k), sigma=tuple(sigma), L=outer_L)
    pts, W = outer.quadrature(2 * outer_L + 1)
    lam_in = inner.lambdas
    modes = inner.modes
    out_lams = outer.lambdas

    # derivative values of every inner mode at the outer quadrature points
    reports = {}
    dvals = inner.mode_derivative_values(pts, axis=0)
    psi_out = outer.mode_values(pts)
    proj = (psi_out * W[:, None])
    abs_l = modes.sum(axis=1)
    results = []
    for j in j_orders:
        ratios = np.zeros((len(modes), len(modes)))
        for ia in range(len(modes)):
            prod_block = dvals[:, ia][:, None] * dvals
            coef = proj.T @ prod_block  # (n_outer_modes, n_inner_modes)
            hnorm = np.sqrt(np.sum((1.0 + out_lams[:, None]) ** j * coef**2, axis=0))
            la = abs_l[ia]
            denom = ((1.0 + la) * (1.0 + abs_l)) ** ((rprime - 1.0) / 2.0)
            envelope = (la ** (j / 2.0) + abs_l ** (j / 2.0)) / denom
            envelope[envelope == 0.0] = np.inf
            norm_factor = ((1.0 + lam_in[ia]) * (1.0 + lam_in)) ** (-rprime / 2.0)
            ratios[ia] = hnorm * norm_factor / envelope
        fit_mask = (abs_l[:, None] <= fit_lmax) & (abs_l[None, :] <= fit_lmax)
        interior = ratios[fit_mask & np.isfinite(ratios)]
        C_inner = float(np.max(interior))
        C_full = float(np.max(ratios[np.isfinite(ratios)]))
        results.append({
            "j": int(j),
            "C_fit": C_full,
            "C_inner": C_inner,
            "growth": C_full / C_inner,
            "ring_ok": bool(C_full <= ring_factor * C_inner),
        })
    reports["orders"] = results
    reports["rprime"] = rprime
    reports["all_ok"] = all(r["ring_ok"] for r in results)
    return reports


def norm_property_battery(model: DiffusionModel, theta: float = 0.5, r: float = 4.0,
                          L: int = 30, tail_budget: float = 0.01) -> dict:
    """Full audit; raises TruncationError when tails or shells disqualify L."""
    basis = HermiteBasis.for_model(model, theta=theta, r=r, L=L)
    report: dict = {"basis": basis.manifest()}
    report["gram_error"] = gram_error(basis)
    report["eigen_residual"] = eigen_residual_max(basis, lmax=min(6, L))
    report["recurrence"] = recurrence_errors()
    report["delta_sweep"] = delta_norm_sweep(basis, tail_budget=tail_budget)
    cw_same = cross_weight_comparison(np.zeros((1, basis.d)), theta, theta,
                                      basis.k, basis.sigma, r, L)
    xs = np.linspace(-2.0, 2.0, 5)
    mesh = np.meshgrid(*([xs] * basis.d), indexing="ij")
    fam = np.stack([g.ravel() for g in mesh], axis=1)
    cw_half = cross_weight_comparison(fam, theta, 0.5 * theta,
                                      basis.k, basis.sigma, r, L)
    report["cross_weight"] = {
        "same_theta_max_ratio": cw_same["max_ratio"],
        "half_theta_max_ratio": cw_half["max_ratio"],
    }
    report["product_estimate"] = product_estimate_report(
        theta, 0.5 * theta, basis.k, basis.sigma)
    ok = (
        report["gram_error"] <= 1e-8
        and report["eigen_residual"] <= 1e-8
        and report["recurrence"]["standard"] <= 1e-12
        and report["delta_sweep"]["violations"] == 0
        and report["delta_sweep"]["tails_ok"]
        and abs(report["cross_weight"]["same_theta_max_ratio"] - 1.0) <= 1e-12
        and np.isfinite(report["cross_weight"]["half_theta_max_ratio"])
        and report["product_estimate"]["all_ok"]
    )
    report["ok"] = bool(ok)
    if not report["delta_sweep"]["tails_ok"]:
        raise TruncationError(
            f"truncation L={L} leaves {report['delta_sweep']['worst_tail_fraction']:.1%} "
            f"of the point-mass norm in the tail (budget "
            f"{report['delta_sweep']['tail_budget']:.0%})")
    return report
