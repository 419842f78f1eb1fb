"""A small container for linear (and exponential-cone) optimization models.

Builders declare named variable blocks, append rows in coordinate form, and
tag metadata that downstream consumers need (per-day operational cost terms,
size accounting). The container is solver-agnostic; solvers.py turns it into
a scipy or cvxpy problem, and lp_text/parse_lp_text exchange purely linear
models in the LP text format.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

LE, GE, EQ = "L", "G", "E"


@dataclass
class VarBlock:
    name: str
    start: int
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=int))

    @property
    def ids(self) -> np.ndarray:
        """Variable ids as an array of the block's shape."""
        return np.arange(self.start, self.start + self.size).reshape(self.shape)


@dataclass
class ExpConeBatch:
    """Entries (i) require gamma_i >= beta_i * exp(-zeta_i / beta_i - 1),
    the epigraph form of the relative-entropy dual. Fields hold variable ids."""

    beta: np.ndarray
    zeta: np.ndarray
    gamma: np.ndarray

    def __len__(self) -> int:
        return len(self.gamma)


class ModelInstance:
    """Minimization model: objective c'x + const, rows Ax {<=,>=,=} b,
    bounds lb <= x <= ub, optional exponential-cone batches."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.n_vars = 0
        self.blocks: dict[str, VarBlock] = {}
        self.obj = np.zeros(0)
        self.obj_const = 0.0
        self.lb = np.zeros(0)
        self.ub = np.zeros(0)
        self._row_cols: list[np.ndarray] = []
        self._row_vals: list[np.ndarray] = []
        self.senses: list[str] = []
        self.rhs: list[float] = []
        self.row_labels: dict[str, int] = {}
        self.cones: list[ExpConeBatch] = []
        self.meta: dict = {}

    # -- variables ---------------------------------------------------------

    def add_block(self, name: str, shape: tuple[int, ...] | int,
                  lb: float = 0.0, ub: float = np.inf) -> VarBlock:
        if name in self.blocks:
            raise ValueError(f"duplicate block {name!r}")
        if isinstance(shape, int):
            shape = (shape,)
        block = VarBlock(name, self.n_vars, shape)
        self.blocks[name] = block
        self.n_vars += block.size
        self.obj = np.concatenate([self.obj, np.zeros(block.size)])
        self.lb = np.concatenate([self.lb, np.full(block.size, lb)])
        self.ub = np.concatenate([self.ub, np.full(block.size, ub)])
        return block

    def ids(self, name: str) -> np.ndarray:
        return self.blocks[name].ids

    # -- rows --------------------------------------------------------------

    @property
    def n_rows(self) -> int:
        return len(self.rhs)

    def add_row(self, cols, vals, sense: str, rhs: float, label: str | None = None) -> int:
        cols = np.asarray(cols, dtype=int).reshape(-1)
        vals = np.asarray(vals, dtype=float).reshape(-1)
        if cols.shape != vals.shape:
            raise ValueError("cols and vals differ in length")
        if sense not in (LE, GE, EQ):
            raise ValueError(f"unknown sense {sense!r}")
        idx = len(self.rhs)
        self._row_cols.append(cols)
        self._row_vals.append(vals)
        self.senses.append(sense)
        self.rhs.append(float(rhs))
        if label is not None:
            self.row_labels[label] = idx
        return idx

    def add_exp_cones(self, beta, zeta, gamma) -> None:
        self.cones.append(ExpConeBatch(
            beta=np.asarray(beta, dtype=int).reshape(-1),
            zeta=np.asarray(zeta, dtype=int).reshape(-1),
            gamma=np.asarray(gamma, dtype=int).reshape(-1),
        ))

    @property
    def n_cones(self) -> int:
        return sum(len(b) for b in self.cones)

    def matrix(self) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
        """Assemble (A, senses, rhs) with senses as an array of 'L'/'G'/'E'."""
        if self._row_cols:
            rows = np.repeat(np.arange(len(self._row_cols)),
                             [len(c) for c in self._row_cols])
            cols = np.concatenate(self._row_cols)
            vals = np.concatenate(self._row_vals)
        else:
            rows = cols = np.zeros(0, dtype=int)
            vals = np.zeros(0)
        a = sp.coo_matrix((vals, (rows, cols)), shape=(self.n_rows, self.n_vars)).tocsr()
        a.sum_duplicates()
        return a, np.array(self.senses), np.array(self.rhs)

    def row(self, idx: int) -> tuple[np.ndarray, np.ndarray, str, float]:
        return self._row_cols[idx], self._row_vals[idx], self.senses[idx], self.rhs[idx]

    def delete_rows(self, idx) -> np.ndarray:
        """Remove the given row indices. Returns the old-to-new index map
        (-1 for removed rows); labels on removed rows are dropped, labels on
        surviving rows are remapped. Callers holding row indices in metadata
        are responsible for remapping them."""
        drop = np.zeros(self.n_rows, dtype=bool)
        drop[np.asarray(idx, dtype=int).reshape(-1)] = True
        keep = ~drop
        new_index = np.cumsum(keep) - 1
        new_index[drop] = -1
        self._row_cols = [c for c, k in zip(self._row_cols, keep) if k]
        self._row_vals = [v for v, k in zip(self._row_vals, keep) if k]
        self.senses = [s for s, k in zip(self.senses, keep) if k]
        self.rhs = [r for r, k in zip(self.rhs, keep) if k]
        self.row_labels = {lab: int(new_index[i])
                           for lab, i in self.row_labels.items() if keep[i]}
        return new_index

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.obj @ x + self.obj_const)

    # -- LP text interchange ----------------------------------------------

    def lp_text(self) -> str:
        """Serialize to the LP text format. Cone models are not expressible
        in this format and are refused."""
        if self.cones:
            raise ValueError("model has cone constraints; LP text is linear only")
        out = [f"\\ {self.name}", "Minimize", " obj:"]
        terms = [f" {_fmt(c)} x{j}" for j, c in enumerate(self.obj) if c != 0.0]
        if self.obj_const != 0.0:
            terms.append(f" {_fmt(self.obj_const)} one")
        out.extend(_wrap(terms))
        out.append("Subject To")
        rel = {LE: "<=", GE: ">=", EQ: "="}
        for i in range(self.n_rows):
            cols, vals, sense, rhs = self.row(i)
            body = "".join(f" {_fmt(v)} x{j}" for j, v in zip(cols, vals))
            out.append(f" r{i}:{body} {rel[sense]} {rhs!r}")
        if self.obj_const != 0.0:
            out.append(" fix_one: 1 one = 1")
        out.append("Bounds")
        for j in range(self.n_vars):
            lo, hi = self.lb[j], self.ub[j]
            if lo == 0.0 and np.isposinf(hi):
                continue
            lo_s = "-inf" if np.isneginf(lo) else repr(float(lo))
            hi_s = "+inf" if np.isposinf(hi) else repr(float(hi))
            out.append(f" {lo_s} <= x{j} <= {hi_s}")
        out.append("End")
        return "\n".join(out) + "\n"


def _fmt(c: float) -> str:
    c = float(c)
    return f"+{c!r}" if c >= 0 else repr(c)


def _wrap(terms: list[str], width: int = 12) -> list[str]:
    return ["".join(terms[i:i + width]) for i in range(0, len(terms), width)] or [" 0 x0"]


_TERM = re.compile(r"([+-]?[0-9.eE+-]*?)\s*(x\d+|one)")
_REL = re.compile(r"(<=|>=|=)")


def parse_lp_text(text: str) -> ModelInstance:
    """Parse the subset of the LP format produced by lp_text: a Minimize
    objective, named rows, and a Bounds section. Variables are x<N>."""
    model = ModelInstance("parsed")
    lines = [ln for ln in (l.split("\\")[0].strip() for l in text.splitlines()) if ln]
    section = None
    n_seen = -1
    body: list[tuple[str, str]] = []

    for ln in lines:
        low = ln.lower()
        if low in ("minimize", "subject to", "bounds", "end", "st", "s.t."):
            section = "st" if low in ("subject to", "st", "s.t.") else low
            continue
        body.append((section, ln))
        for m in _TERM.finditer(ln):
            if m.group(2) != "one":
                n_seen = max(n_seen, int(m.group(2)[1:]))
    model.add_block("x", n_seen + 1)

    obj_terms: dict[int, float] = {}
    for section, ln in body:
        if section == "minimize":
            ln = ln.split(":", 1)[-1]
            const, terms = _parse_terms(ln)
            model.obj_const += const
            for j, c in terms:
                obj_terms[j] = obj_terms.get(j, 0.0) + c
        elif section == "st":
            name, expr = ln.split(":", 1) if ":" in ln else (None, ln)
            rel = _REL.search(expr)
            if rel is None:
                raise ValueError(f"row without relation: {ln!r}")
            lhs, rhs = expr[: rel.start()], expr[rel.end():]
            const, terms = _parse_terms(lhs)
            if name and name.strip() == "fix_one":
                continue
            sense = {"<=": LE, ">=": GE, "=": EQ}[rel.group(1)]
            cols = [j for j, _ in terms]
            vals = [c for _, c in terms]
            model.add_row(cols, vals, sense, float(rhs) - const,
                          label=name.strip() if name else None)
        elif section == "bounds":
            m = re.match(r"(\S+)\s*<=\s*x(\d+)\s*<=\s*(\S+)", ln)
            if not m:
                raise ValueError(f"unsupported bound line: {ln!r}")
            j = int(m.group(2))
            model.lb[j] = -np.inf if m.group(1) == "-inf" else float(m.group(1))
            model.ub[j] = np.inf if m.group(3) == "+inf" else float(m.group(3))
    for j, c in obj_terms.items():
        model.obj[j] = c
    return model


def _parse_terms(expr: str) -> tuple[float, list[tuple[int, float]]]:
    const = 0.0
    terms: list[tuple[int, float]] = []
    for m in _TERM.finditer(expr):
        coef_s, var = m.group(1), m.group(2)
        coef_s = coef_s.replace(" ", "")
        if coef_s in ("", "+"):
            coef = 1.0
        elif coef_s == "-":
            coef = -1.0
        else:
            coef = float(coef_s)
        if var == "one":
            const += coef
        else:
            terms.append((int(var[1:]), coef))
    return const, terms
