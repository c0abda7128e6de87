"""Linear covariance-structure models with means.

A model over observed and latent variables is held as three sparse maps:
directed path coefficients (effects of one variable on another), symmetric
residual (co)variances, and intercepts. Every entry is a linear form
``const + sum(mult_k * theta_k)``; equality constraints are expressed by
reusing one parameter id in several entries. The implied moments follow
the reduced form: with path matrix A, residual covariance P and intercept
vector nu,

    T = (I - A)^-1,  Sigma = sel(T P T', obs),  mu = sel(T nu, obs).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..errors import ModelSpecError

# One additive term of an entry: (parameter id, multiplier).
Term = tuple[str, float]
# An entry is (constant, terms).
Entry = tuple[float, tuple[Term, ...]]

_KINDS = ("path", "cov", "mean")


def _entry(value: float | None, param: str | None, mult: float, terms) -> Entry:
    if terms is not None:
        if value is not None or param is not None:
            raise ModelSpecError("give either terms or value/param, not both")
        const = 0.0
        tlist = []
        for t in terms:
            if isinstance(t, (int, float)):
                const += float(t)
            else:
                pid, m = t
                tlist.append((str(pid), float(m)))
        return (const, tuple(tlist))
    if param is not None:
        return (float(value) if value is not None else 0.0, ((str(param), float(mult)),))
    return (float(value or 0.0), ())


class CovarianceModel:
    """Mutable builder for a covariance-structure model."""

    def __init__(self, observed: Sequence[str], latent: Sequence[str] = ()):
        observed = tuple(observed)
        latent = tuple(latent)
        names = observed + latent
        if len(set(names)) != len(names):
            raise ModelSpecError("variable names must be unique")
        if not observed:
            raise ModelSpecError("at least one observed variable is required")
        self.observed = observed
        self.latent = latent
        self.names = names
        self._idx = {v: i for i, v in enumerate(names)}
        self._paths: dict[tuple[str, str], Entry] = {}
        self._covs: dict[tuple[str, str], Entry] = {}
        self._means: dict[str, Entry] = {}
        # Entry creation sequence; fixes the deterministic ordering of
        # parameters, locations and equality constraints.
        self._order: list[tuple[str, object]] = []
        self._compiled: CompiledModel | None = None

    # -- construction -------------------------------------------------

    def path(self, dst: str, src: str, *, value: float | None = None,
             param: str | None = None, mult: float = 1.0, terms=None) -> "CovarianceModel":
        """Set the effect of ``src`` on ``dst``."""
        self._check_var(dst), self._check_var(src)
        if dst == src:
            raise ModelSpecError(f"self-loop on {dst!r}")
        key = (dst, src)
        if key not in self._paths:
            self._order.append(("path", key))
        self._paths[key] = _entry(value, param, mult, terms)
        self._compiled = None
        return self

    def cov(self, a: str, b: str, *, value: float | None = None,
            param: str | None = None, mult: float = 1.0, terms=None) -> "CovarianceModel":
        """Set the residual covariance of ``a`` and ``b`` (variance if a == b)."""
        self._check_var(a), self._check_var(b)
        i, j = sorted((self._idx[a], self._idx[b]))
        key = (self.names[i], self.names[j])
        if key not in self._covs:
            self._order.append(("cov", key))
        self._covs[key] = _entry(value, param, mult, terms)
        self._compiled = None
        return self

    def var(self, v: str, **kw) -> "CovarianceModel":
        return self.cov(v, v, **kw)

    def mean(self, v: str, *, value: float | None = None,
             param: str | None = None, mult: float = 1.0, terms=None) -> "CovarianceModel":
        self._check_var(v)
        if v not in self._means:
            self._order.append(("mean", v))
        self._means[v] = _entry(value, param, mult, terms)
        self._compiled = None
        return self

    def _check_var(self, v: str) -> None:
        if v not in self._idx:
            raise ModelSpecError(f"unknown variable {v!r}")

    # -- introspection ------------------------------------------------

    def entries(self) -> Iterable[tuple[str, object, Entry]]:
        """All entries in creation order."""
        for kind, key in self._order:
            store = {"path": self._paths, "cov": self._covs, "mean": self._means}[kind]
            yield kind, key, store[key]

    def free_params(self) -> list[str]:
        seen: dict[str, None] = {}
        for _, _, (_, terms) in self.entries():
            for pid, _ in terms:
                seen.setdefault(pid)
        return list(seen)

    def param_locations(self) -> dict[str, list[tuple[str, object, int]]]:
        """Parameter id -> [(kind, key, term index)] in creation order."""
        locs: dict[str, list[tuple[str, object, int]]] = {}
        for kind, key, (_, terms) in self.entries():
            for t_idx, (pid, _) in enumerate(terms):
                locs.setdefault(pid, []).append((kind, key, t_idx))
        return locs

    def equality_constraints(self) -> list[str]:
        """Ids of the active equality ties.

        A parameter appearing at K > 1 locations carries K - 1 ties; the
        id ``pid@k`` names the tie of location k (1-based, creation order)
        to the parameter's first location.
        """
        out = []
        for pid, locs in self.param_locations().items():
            out.extend(f"{pid}@{k}" for k in range(1, len(locs)))
        return out

    def release_constraint(self, constraint_id: str) -> tuple["CovarianceModel", str]:
        """A copy of the model with one equality tie released.

        Returns the new model and the id of the freshly freed parameter
        (which equals ``constraint_id``).
        """
        pid, sep, k_text = constraint_id.rpartition("@")
        if not sep:
            raise ModelSpecError(f"not a constraint id: {constraint_id!r}")
        try:
            k = int(k_text)
        except ValueError:
            raise ModelSpecError(f"not a constraint id: {constraint_id!r}") from None
        locs = self.param_locations().get(pid)
        if locs is None or not 1 <= k < len(locs):
            raise ModelSpecError(f"unknown equality constraint {constraint_id!r}")
        kind, key, t_idx = locs[k]
        clone = self.copy()
        store = {"path": clone._paths, "cov": clone._covs, "mean": clone._means}[kind]
        const, terms = store[key]
        new_terms = list(terms)
        old_pid, mult = new_terms[t_idx]
        new_terms[t_idx] = (constraint_id, mult)
        store[key] = (const, tuple(new_terms))
        clone._compiled = None
        return clone, constraint_id

    def copy(self) -> "CovarianceModel":
        clone = CovarianceModel(self.observed, self.latent)
        clone._paths = dict(self._paths)
        clone._covs = dict(self._covs)
        clone._means = dict(self._means)
        clone._order = list(self._order)
        return clone

    # -- compilation ---------------------------------------------------

    def compile(self) -> "CompiledModel":
        if self._compiled is None:
            self._compiled = CompiledModel(self)
        return self._compiled

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        def enc(kind, key, entry):
            const, terms = entry
            loc = list(key) if kind != "mean" else [key]
            return {"kind": kind, "at": loc, "const": const, "terms": [list(t) for t in terms]}
        return {
            "observed": list(self.observed),
            "latent": list(self.latent),
            "entries": [enc(kind, key, e) for kind, key, e in self.entries()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CovarianceModel":
        model = cls(data["observed"], data.get("latent", ()))
        for e in data["entries"]:
            terms = [(pid, mult) for pid, mult in e["terms"]]
            kw = dict(terms=terms) if terms else dict(value=e["const"])
            if terms and e["const"]:
                kw = dict(terms=[e["const"], *terms])
            if e["kind"] == "path":
                model.path(e["at"][0], e["at"][1], **kw)
            elif e["kind"] == "cov":
                model.cov(e["at"][0], e["at"][1], **kw)
            else:
                model.mean(e["at"][0], **kw)
        return model

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


@dataclass
class _Loc:
    param: int
    i: int
    j: int
    mult: float


class CompiledModel:
    """Index arrays for fast matrix assembly and differentiation."""

    def __init__(self, model: CovarianceModel):
        self.model = model
        names = model.names
        idx = model._idx
        self.p = len(model.observed)
        self.m = len(names)

        self.param_names: list[str] = model.free_params()
        pnum = {pid: k for k, pid in enumerate(self.param_names)}
        self.q = len(self.param_names)

        self.A0 = np.zeros((self.m, self.m))
        self.P0 = np.zeros((self.m, self.m))
        self.nu0 = np.zeros(self.m)
        path_locs: list[_Loc] = []
        cov_locs: list[_Loc] = []
        mean_locs: list[_Loc] = []
        diag_params: set[str] = set()
        offdiag_params: set[str] = set()
        for kind, key, (const, terms) in model.entries():
            if kind == "path":
                dst, src = key
                i, j = idx[dst], idx[src]
                self.A0[i, j] += const
                path_locs.extend(_Loc(pnum[pid], i, j, mult) for pid, mult in terms)
            elif kind == "cov":
                a, b = key
                i, j = idx[a], idx[b]
                self.P0[i, j] += const
                if i != j:
                    self.P0[j, i] += const
                for pid, mult in terms:
                    (diag_params if i == j else offdiag_params).add(pid)
                cov_locs.extend(_Loc(pnum[pid], i, j, mult) for pid, mult in terms)
            else:
                i = idx[key]
                self.nu0[i] += const
                mean_locs.extend(_Loc(pnum[pid], i, 0, mult) for pid, mult in terms)

        bad = diag_params & offdiag_params
        if bad:
            raise ModelSpecError(
                f"parameters {sorted(bad)} appear both as variances and elsewhere; "
                "variance parameters must stay on the diagonal"
            )
        self.is_variance = np.array([pid in diag_params for pid in self.param_names])

        def pack(locs: list[_Loc]):
            if not locs:
                return (np.empty(0, dtype=int),) * 3 + (np.empty(0),)
            return (
                np.array([l.param for l in locs]),
                np.array([l.i for l in locs]),
                np.array([l.j for l in locs]),
                np.array([l.mult for l in locs]),
            )

        self.path_k, self.path_i, self.path_j, self.path_m = pack(path_locs)
        self.cov_k, self.cov_i, self.cov_j, self.cov_m = pack(cov_locs)
        self.mean_k, self.mean_i, _, self.mean_m = pack(mean_locs)

        # Structural graph checks: endogenous variables and acyclicity.
        edges: dict[int, set[int]] = {}
        for kind, key, (const, terms) in model.entries():
            if kind != "path" or (const == 0.0 and not terms):
                continue
            dst, src = key
            edges.setdefault(idx[src], set()).add(idx[dst])
        self._assert_acyclic(edges)
        incoming: set[int] = set()
        for dsts in edges.values():
            incoming.update(dsts)
        self.endogenous = tuple(names[i] for i in sorted(incoming))
        self.observed_endogenous = tuple(v for v in self.endogenous if v in model.observed)

        # Parent lists used for least-squares start values.
        self.parents: dict[str, list[tuple[str, Entry]]] = {}
        for kind, key, entry in model.entries():
            if kind == "path":
                dst, src = key
                self.parents.setdefault(dst, []).append((src, entry))

    def _assert_acyclic(self, edges: dict[int, set[int]]) -> None:
        state = [0] * self.m  # 0 unvisited, 1 in stack, 2 done
        stack: list[tuple[int, Iterable[int]]] = []
        for root in range(self.m):
            if state[root]:
                continue
            stack.append((root, iter(edges.get(root, ()))))
            state[root] = 1
            while stack:
                node, it = stack[-1]
                advanced = False
                for nxt in it:
                    if state[nxt] == 1:
                        raise ModelSpecError(
                            f"path structure is cyclic around {self.model.names[nxt]!r}"
                        )
                    if state[nxt] == 0:
                        state[nxt] = 1
                        stack.append((nxt, iter(edges.get(nxt, ()))))
                        advanced = True
                        break
                if not advanced:
                    state[node] = 2
                    stack.pop()

    def matrices(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Assemble (A, P, nu) at the parameter vector ``theta``."""
        A = self.A0.copy()
        P = self.P0.copy()
        nu = self.nu0.copy()
        if self.path_k.size:
            np.add.at(A, (self.path_i, self.path_j), self.path_m * theta[self.path_k])
        if self.cov_k.size:
            vals = self.cov_m * theta[self.cov_k]
            np.add.at(P, (self.cov_i, self.cov_j), vals)
            off = self.cov_i != self.cov_j
            if off.any():
                np.add.at(P, (self.cov_j[off], self.cov_i[off]), vals[off])
        if self.mean_k.size:
            np.add.at(nu, self.mean_i, self.mean_m * theta[self.mean_k])
        return A, P, nu

    def pack(self, values: dict[str, float]) -> np.ndarray:
        missing = [p for p in self.param_names if p not in values]
        if missing:
            raise ModelSpecError(f"missing start values for {missing}")
        return np.array([values[p] for p in self.param_names], dtype=float)

    def unpack(self, theta: np.ndarray) -> dict[str, float]:
        return {pid: float(v) for pid, v in zip(self.param_names, theta)}


# ---------------------------------------------------------------------------
# Stock models

def independence_model(var_names: Sequence[str]) -> CovarianceModel:
    """Free means and variances, all covariances fixed at zero."""
    model = CovarianceModel(var_names)
    for v in var_names:
        model.mean(v, param=f"mu_{v}")
        model.var(v, param=f"var_{v}")
    return model


def saturated_model(var_names: Sequence[str]) -> CovarianceModel:
    """Every mean, variance and covariance free."""
    model = CovarianceModel(var_names)
    for v in var_names:
        model.mean(v, param=f"mu_{v}")
    for i, a in enumerate(var_names):
        for b in var_names[i:]:
            if a == b:
                model.var(a, param=f"var_{a}")
            else:
                model.cov(a, b, param=f"cov_{a}_{b}")
    return model
