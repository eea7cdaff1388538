"""Reaction models: built-in Turing kinetics, polynomial custom kinetics and
linear stability (dispersion relation) of homogeneous steady states.

Concentration arrays have shape ``(n_species, n_points)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import fsolve


@dataclass(frozen=True)
class ReactionModel:
    """Diffusion coefficients plus reaction terms for ``n_species`` fields.

    ``rates(c, params)`` returns the reaction term for every species and
    point; ``jacobian(c, params)`` returns ``d rate_i / d c_j`` with shape
    ``(n, n, n_points)``. Without an analytic Jacobian a central finite
    difference is used.
    """

    n_species: int
    D: tuple
    rates: Callable
    kinetics: str = "custom"
    params: dict = field(default_factory=dict)
    jacobian_fn: Callable | None = None
    species: tuple = ()

    def __post_init__(self):
        D = tuple(float(d) for d in self.D)
        if len(D) != self.n_species:
            raise ValueError(f"need {self.n_species} diffusion coefficients, got {len(D)}")
        if any(d < 0 for d in D):
            raise ValueError("diffusion coefficients must be >= 0")
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "params", dict(self.params))
        if not self.species:
            object.__setattr__(self, "species", tuple(f"c{i}" for i in range(self.n_species)))

    def R(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        flat = c.reshape(self.n_species, -1)
        return np.asarray(self.rates(flat, self.params), dtype=float).reshape(c.shape)

    def jacobian(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float).reshape(self.n_species, -1)
        if self.jacobian_fn is not None:
            return np.asarray(self.jacobian_fn(c, self.params), dtype=float)
        n = self.n_species
        J = np.empty((n, n, c.shape[1]))
        for j in range(n):
            h = 1e-7 * np.maximum(1.0, np.abs(c[j]))
            up, dn = c.copy(), c.copy()
            up[j] += h
            dn[j] -= h
            J[:, j] = (self.R(up) - self.R(dn)) / (2 * h)
        return J

    def with_params(self, **updates) -> "ReactionModel":
        """Copy with some rate constants replaced; ``D_<i>`` keys replace diffusion coefficients."""
        params = dict(self.params)
        D = list(self.D)
        for key, val in updates.items():
            if key.startswith("D_") and key[2:].isdigit():
                D[int(key[2:])] = float(val)
            else:
                params[key] = float(val)
        return ReactionModel(self.n_species, tuple(D), self.rates, self.kinetics, params,
                             self.jacobian_fn, self.species)

    def homogeneous_steady_state(self, guess=None) -> np.ndarray:
        known = _STEADY.get(self.kinetics)
        if known is not None:
            return known(self.params)
        x0 = np.ones(self.n_species) if guess is None else np.asarray(guess, dtype=float)
        sol, info, ok, msg = fsolve(lambda x: self.R(x[:, None])[:, 0], x0, full_output=True)
        if ok != 1:
            raise RuntimeError(f"steady state search failed: {msg}")
        return sol


# --------------------------------------------------------------------------
# Schnakenberg: u_t = gamma (a - u + u^2 v), v_t = gamma (b - u^2 v)

def _schnak_rates(c, p):
    u, v = c
    g = p.get("gamma", 1.0)
    return np.stack([g * (p["a"] - u + u * u * v), g * (p["b"] - u * u * v)])


def _schnak_jac(c, p):
    u, v = c
    g = p.get("gamma", 1.0)
    return g * np.array([[-1 + 2 * u * v, u * u], [-2 * u * v, -u * u]])


def schnakenberg(a=0.1, b=0.9, gamma=1.0, Du=1.0, Dv=20.0) -> ReactionModel:
    return ReactionModel(2, (Du, Dv), _schnak_rates, "schnakenberg",
                         {"a": a, "b": b, "gamma": gamma}, _schnak_jac, ("u", "v"))


# --------------------------------------------------------------------------
# Gierer-Meinhardt: a_t = rho a^2 / h - mu_a a + rho_a,  h_t = rho a^2 - mu_h h

def _gm_rates(c, p):
    a, h = c
    return np.stack([
        p["rho"] * a * a / h - p["mu_a"] * a + p["rho_a"],
        p["rho"] * a * a - p["mu_h"] * h,
    ])


def _gm_jac(c, p):
    a, h = c
    r = p["rho"]
    return np.array([
        [2 * r * a / h - p["mu_a"], -r * a * a / (h * h)],
        [2 * r * a, -p["mu_h"] * np.ones_like(a)],
    ])


def _gm_steady(p):
    # h = rho a^2 / mu_h  =>  mu_h - mu_a a + rho_a = 0
    a = (p["mu_h"] + p["rho_a"]) / p["mu_a"]
    return np.array([a, p["rho"] * a * a / p["mu_h"]])


def gierer_meinhardt(rho=1.0, mu_a=1.0, mu_h=1.5, rho_a=0.0, Da=1.0, Dh=30.0) -> ReactionModel:
    return ReactionModel(2, (Da, Dh), _gm_rates, "gierer_meinhardt",
                         {"rho": rho, "mu_a": mu_a, "mu_h": mu_h, "rho_a": rho_a}, _gm_jac, ("a", "h"))


# --------------------------------------------------------------------------
# Ligand-receptor Turing kinetics: the receptor R is upregulated by ligand
# binding (activator, rate ~ L R^2) and the ligand L is consumed by it.
#   R_t = gamma (a - R + L R^2),  L_t = gamma (b - L R^2)

def _lr_rates(c, p):
    R, L = c
    g = p.get("gamma", 1.0)
    return np.stack([g * (p["a"] - R + L * R * R), g * (p["b"] - L * R * R)])


def _lr_jac(c, p):
    R, L = c
    g = p.get("gamma", 1.0)
    return g * np.array([[-1 + 2 * L * R, R * R], [-2 * L * R, -R * R]])


def ligand_receptor(a=0.1, b=0.9, gamma=1.0, D_receptor=1.0, D_ligand=20.0) -> ReactionModel:
    return ReactionModel(2, (D_receptor, D_ligand), _lr_rates, "ligand_receptor_turing",
                         {"a": a, "b": b, "gamma": gamma}, _lr_jac, ("receptor", "ligand"))


def _schnak_steady(p):
    s = p["a"] + p["b"]
    return np.array([s, p["b"] / (s * s)])


_STEADY = {
    "schnakenberg": _schnak_steady,
    "ligand_receptor_turing": _schnak_steady,
    "gierer_meinhardt": _gm_steady,
}


# --------------------------------------------------------------------------
# Polynomial kinetics from coefficients

def polynomial(terms, D, species=None) -> ReactionModel:
    """Mass-action style kinetics ``R_i = sum coef * prod_j c_j ** power_j``.

    ``terms`` is a list of ``(species_index, coef, powers)``.
    """
    D = tuple(D)
    n = len(D)
    terms = [(int(i), float(k), tuple(float(x) for x in pw)) for i, k, pw in terms]
    for i, _, pw in terms:
        if not 0 <= i < n or len(pw) != n:
            raise ValueError(f"bad polynomial term for species {i}: powers {pw}")

    def rates(c, p):
        out = np.zeros_like(c)
        for i, k, pw in terms:
            out[i] += k * np.prod([c[j] ** pw[j] for j in range(n)], axis=0)
        return out

    def jac(c, p):
        J = np.zeros((n, n, c.shape[1]))
        for i, k, pw in terms:
            for j in range(n):
                if pw[j] == 0:
                    continue
                d = k * pw[j] * c[j] ** (pw[j] - 1)
                for m in range(n):
                    if m != j:
                        d = d * c[m] ** pw[m]
                J[i, j] += d
        return J

    return ReactionModel(n, D, rates, "custom", {"terms": terms}, jac, tuple(species or ()))


BUILTIN = {
    "schnakenberg": schnakenberg,
    "gierer_meinhardt": gierer_meinhardt,
    "ligand_receptor_turing": ligand_receptor,
}


def model_from_config(cfg: dict) -> ReactionModel:
    """Build a model from ``{"kinetics": tag, "params": {...}, "D": [...]}``."""
    tag = cfg["kinetics"]
    if tag == "custom":
        return polynomial(cfg["terms"], cfg["D"], cfg.get("species"))
    if tag not in BUILTIN:
        raise ValueError(f"unknown kinetics {tag!r}; choose from {sorted(BUILTIN)} or 'custom'")
    model = BUILTIN[tag](**cfg.get("params", {}))
    if "D" in cfg:
        model = model.with_params(**{f"D_{i}": d for i, d in enumerate(cfg["D"])})
    return model


# --------------------------------------------------------------------------
# Linear stability

def growth_rate(model: ReactionModel, k2, state=None) -> np.ndarray:
    """Largest real part of the eigenvalues of ``J - k2 * diag(D)``."""
    c0 = model.homogeneous_steady_state() if state is None else np.asarray(state, dtype=float)
    J = model.jacobian(c0[:, None])[:, :, 0]
    k2 = np.atleast_1d(np.asarray(k2, dtype=float))
    D = np.diag(model.D)
    return np.array([np.linalg.eigvals(J - q * D).real.max() for q in k2])


def unstable_band(model: ReactionModel, k2_max: float, n: int = 4000, state=None):
    """Intervals of ``k2`` in ``[0, k2_max]`` where the growth rate is positive."""
    q = np.linspace(0.0, k2_max, n)
    pos = growth_rate(model, q, state) > 0
    bands = []
    i = 0
    while i < n:
        if pos[i]:
            j = i
            while j + 1 < n and pos[j + 1]:
                j += 1
            bands.append((q[max(i - 1, 0)] if i else 0.0, q[min(j + 1, n - 1)]))
            i = j + 1
        else:
            i += 1
    return bands
