"""Value-to-Zubov transformations and the Zubov residual.

A transformation ``beta`` solves ``beta' = (1 - beta) * phi(beta)``, ``beta(0) = 0``.
Two families are supported:

* ``exp``:  ``phi = alpha``            -> ``beta(s) = 1 - exp(-alpha s)``
* ``tanh``: ``phi(w) = alpha (1 + w)`` -> ``beta(s) = tanh(alpha s)``

Along the scaled flow the value ``V`` decreases at rate ``|x|^2``, hence
``W = beta(V)`` satisfies ``grad W . f_tilde = -phi(W) (1 - W) |x|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("exp", "tanh")


@dataclass(frozen=True)
class BetaFamily:
    family: str = "tanh"
    alpha: float = 0.1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown beta family {self.family!r}; expected one of {FAMILIES}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha!r}")

    def to_dict(self):
        return {"family": self.family, "alpha": self.alpha}


def beta(b: BetaFamily, s):
    """Map values ``s >= 0`` (``inf`` allowed) into ``[0, 1]``."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0) or np.any(np.isnan(s)):
        raise ValueError("beta needs nonnegative arguments")
    if b.family == "exp":
        out = -np.expm1(-b.alpha * s)
    else:
        out = np.tanh(b.alpha * s)
    return float(out) if out.ndim == 0 else out


def beta_inverse(b: BetaFamily, w):
    w = np.asarray(w, dtype=float)
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("beta_inverse needs arguments in [0, 1]")
    with np.errstate(divide="ignore"):
        if b.family == "exp":
            out = -np.log1p(-w) / b.alpha
        else:
            out = np.arctanh(w) / b.alpha
    return float(out) if out.ndim == 0 else out


def phi_of_w(b: BetaFamily, w, check: bool = True):
    """``phi`` evaluated at a W value.

    With ``check=False`` the range test is skipped; the trainer needs that
    because network outputs may leave ``[0, 1]`` early on.
    """
    w = np.asarray(w, dtype=float)
    if check and (np.any(w < 0) or np.any(w > 1)):
        raise ValueError("phi_of_w needs w in [0, 1]")
    if b.family == "exp":
        out = np.full_like(w, b.alpha)
    else:
        out = b.alpha * (1.0 + w)
    return float(out) if out.ndim == 0 else out


def dphi_dw(b: BetaFamily, w):
    w = np.asarray(w, dtype=float)
    return np.zeros_like(w) if b.family == "exp" else np.full_like(w, b.alpha)


def v_cap_for(b: BetaFamily, tol: float = 1e-6) -> float:
    """Smallest value ``s`` with ``beta(s) >= 1 - tol`` (rounded up a little)."""
    return float(beta_inverse(b, 1.0 - tol)) * (1.0 + 1e-9)


def zubov_residual(b: BetaFamily, w, grad_w, f_tilde, x):
    """``grad W . f_tilde + phi(W) (1 - W) |x|^2``; zero on the exact solution.

    Accepts a single point (vectors of length n) or batches (leading axis N).
    """
    grad_w = np.asarray(grad_w, dtype=float)
    f_tilde = np.asarray(f_tilde, dtype=float)
    x = np.asarray(x, dtype=float)
    if grad_w.shape != f_tilde.shape or grad_w.shape != x.shape:
        raise ValueError("grad_w, f_tilde and x must have matching shapes")
    w = np.asarray(w, dtype=float)
    lie = np.sum(grad_w * f_tilde, axis=-1)
    r = lie + phi_of_w(b, w, check=False) * (1.0 - w) * np.sum(x * x, axis=-1)
    return float(r) if np.ndim(r) == 0 else r
