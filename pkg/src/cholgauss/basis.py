"""Design-matrix blocks for additive predictors.

Supported term kinds: intercept, linear, cubic P-spline smooth, cyclic
P-spline smooth, and varying coefficients (a smooth multiplied by an
interaction covariate).  Smooths carry a second-order difference penalty
on their coefficients; cyclic smooths wrap both basis and penalty.
Smooths estimated alongside an intercept are centered with a sum-to-zero
constraint, otherwise the normal equations would be singular.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import BSpline

SPLINE_DEGREE = 3


class BasisWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TermSpec:
    """Declarative description of one additive term.

    ``period`` marks a cyclic basis; ``by`` names the interaction
    covariate of a varying-coefficient term.  ``df`` is the basis size
    before any identifiability constraint.
    """

    kind: str
    covariate: str = ""
    df: int = 10
    penalty_order: int = 2
    period: float = None
    by: str = None
    center: bool = True
    label: str = ""

    def __post_init__(self):
        if self.kind not in (
            "intercept",
            "linear",
            "smooth",
            "cyclic_smooth",
            "varying_coefficient",
        ):
            raise ValueError(f"unknown term kind {self.kind!r}")
        if self.kind in ("smooth", "cyclic_smooth", "varying_coefficient"):
            if self.df < self.penalty_order + 1:
                raise ValueError("basis size must exceed the penalty order")
        if self.kind == "cyclic_smooth" and self.period is None:
            raise ValueError("cyclic terms must declare the covariate period")
        if self.kind == "varying_coefficient" and not self.by:
            raise ValueError("varying-coefficient terms need an interaction covariate")
        if not self.label:
            object.__setattr__(self, "label", self._default_label())

    def _default_label(self):
        if self.kind == "intercept":
            return "intercept"
        if self.kind == "linear":
            return self.covariate
        core = f"cyclic({self.covariate})" if self.period is not None else f"s({self.covariate})"
        if self.kind == "varying_coefficient":
            return f"{core}:{self.by}"
        return core


def _column(data, name):
    try:
        col = data[name]
    except (KeyError, IndexError) as exc:
        raise KeyError(f"covariate {name!r} missing from the data") from exc
    return np.asarray(col, dtype=float)


def _difference_penalty(d, order):
    mat = np.eye(d)
    for _ in range(order):
        mat = np.diff(mat, axis=0)
    return mat.T @ mat


def _cyclic_difference_penalty(d, order):
    mat = np.eye(d)
    step = np.zeros((d, d))
    for i in range(d):
        step[i, i] = -1.0
        step[i, (i + 1) % d] = 1.0
    for _ in range(order):
        mat = step @ mat
    return mat.T @ mat


def _nullspace_transform(constraint):
    """Orthonormal (d, d-1) basis of the hyperplane constraint @ beta = 0."""
    v = constraint / np.linalg.norm(constraint)
    w = v.copy()
    w[0] -= 1.0
    norm = np.linalg.norm(w)
    if norm < 1e-12:
        return np.eye(len(v))[:, 1:]
    w /= norm
    house = np.eye(len(v)) - 2.0 * np.outer(w, w)
    return house[:, 1:]


def _open_knots(lo, hi, nseg):
    h = (hi - lo) / nseg
    inner = np.linspace(lo, hi, nseg + 1)
    left = lo - h * np.arange(SPLINE_DEGREE, 0, -1)
    right = hi + h * np.arange(1, SPLINE_DEGREE + 1)
    return np.concatenate([left, inner, right])


def _raw_design(x, knots):
    return BSpline.design_matrix(x, knots, SPLINE_DEGREE).toarray()


def _raw_design_deriv(x, knots):
    """Rows of d/dx of every cubic basis function at the points x."""
    dm2 = BSpline.design_matrix(x, knots, SPLINE_DEGREE - 1).toarray()
    ncol = len(knots) - SPLINE_DEGREE - 1
    out = np.zeros((len(x), ncol))
    for j in range(ncol):
        left = knots[j + SPLINE_DEGREE] - knots[j]
        right = knots[j + SPLINE_DEGREE + 1] - knots[j + 1]
        if left > 0:
            out[:, j] += SPLINE_DEGREE * dm2[:, j] / left
        if right > 0 and j + 1 < dm2.shape[1]:
            out[:, j] -= SPLINE_DEGREE * dm2[:, j + 1] / right
    return out


@dataclass
class BasisBlock:
    """A realized design block: matrix, penalty, and evaluation recipe."""

    spec: TermSpec
    design: np.ndarray
    penalty: np.ndarray
    knots: np.ndarray = None
    xmin: float = None
    xmax: float = None
    constraint: np.ndarray = None
    degraded_to: str = None

    @property
    def ncol(self):
        return self.design.shape[1]

    @property
    def label(self):
        return self.spec.label

    @property
    def effective_kind(self):
        return self.degraded_to or self.spec.kind

    def _transform(self):
        if self.constraint is None:
            return None
        return _nullspace_transform(self.constraint)

    def _spline_rows(self, x, warn=True):
        spec = self.spec
        if spec.period is not None:
            xw = np.mod(x, spec.period)
            raw = _raw_design(xw, self.knots)
            d = spec.df
            folded = np.zeros((len(x), d))
            for j in range(raw.shape[1]):
                folded[:, j % d] += raw[:, j]
            return folded
        lo, hi = self.xmin, self.xmax
        h = (hi - lo) / (spec.df - SPLINE_DEGREE)
        outside = (x < lo - h) | (x > hi + h)
        if warn and np.any(outside):
            warnings.warn(
                f"{spec.label}: {int(outside.sum())} value(s) beyond the knot "
                "range; using linear continuation",
                BasisWarning,
                stacklevel=3,
            )
        xc = np.clip(x, lo, hi)
        rows = _raw_design(xc, self.knots)
        below = x < lo
        above = x > hi
        if np.any(below) or np.any(above):
            for sel, x0 in ((below, lo), (above, hi)):
                if not np.any(sel):
                    continue
                base = _raw_design(np.array([x0]), self.knots)
                dbase = _raw_design_deriv(np.array([x0]), self.knots)
                rows[sel] = base + (x[sel] - x0)[:, None] * dbase
        return rows

    def design_at(self, data, warn=True):
        """Design rows for new covariate values."""
        spec = self.spec
        kind = self.effective_kind
        if kind == "intercept":
            return np.ones((_infer_n(data), 1))
        x = _column(data, spec.covariate)
        if kind == "linear":
            return x[:, None].copy()
        rows = self._spline_rows(x, warn=warn)
        if spec.kind == "varying_coefficient":
            rows = rows * _column(data, spec.by)[:, None]
        z = self._transform()
        if z is not None:
            rows = rows @ z
        return rows

    def evaluate(self, data, beta, warn=True):
        """Fitted effect values f(x) = design(x) @ beta."""
        return self.design_at(data, warn=warn) @ np.asarray(beta, dtype=float)

    def to_dict(self):
        spec = self.spec
        return {
            "kind": spec.kind,
            "covariate": spec.covariate,
            "df": spec.df,
            "penalty_order": spec.penalty_order,
            "period": spec.period,
            "by": spec.by,
            "center": spec.center,
            "label": spec.label,
            "knots": None if self.knots is None else self.knots.tolist(),
            "xmin": self.xmin,
            "xmax": self.xmax,
            "constraint": None if self.constraint is None else self.constraint.tolist(),
            "degraded_to": self.degraded_to,
        }

    @classmethod
    def from_dict(cls, payload):
        spec = TermSpec(
            kind=payload["kind"],
            covariate=payload["covariate"],
            df=payload["df"],
            penalty_order=payload["penalty_order"],
            period=payload["period"],
            by=payload["by"],
            center=payload["center"],
            label=payload["label"],
        )
        knots = payload["knots"]
        constraint = payload["constraint"]
        block = cls(
            spec=spec,
            design=np.empty((0, 0)),
            penalty=_rebuild_penalty(spec, payload),
            knots=None if knots is None else np.asarray(knots),
            xmin=payload["xmin"],
            xmax=payload["xmax"],
            constraint=None if constraint is None else np.asarray(constraint),
            degraded_to=payload["degraded_to"],
        )
        return block


def _rebuild_penalty(spec, payload):
    kind = payload["degraded_to"] or spec.kind
    if kind in ("intercept", "linear"):
        return np.zeros((1, 1))
    if spec.period is not None:
        pen = _cyclic_difference_penalty(spec.df, spec.penalty_order)
    else:
        pen = _difference_penalty(spec.df, spec.penalty_order)
    constraint = payload["constraint"]
    if constraint is not None:
        z = _nullspace_transform(np.asarray(constraint))
        pen = z.T @ pen @ z
    return pen


def build_block(spec, data):
    """Construct the design and penalty for one term from training data.

    Degrades gracefully: a smooth on a constant covariate becomes an
    intercept, and the basis size shrinks when the covariate has fewer
    distinct values than requested (both with a warning).
    """
    if spec.kind == "intercept":
        n = _infer_n(data)
        return BasisBlock(spec, np.ones((n, 1)), np.zeros((1, 1)))
    x = _column(data, spec.covariate)
    if spec.kind == "linear":
        return BasisBlock(spec, x[:, None].copy(), np.zeros((1, 1)))

    distinct = np.unique(x)
    if len(distinct) < 2:
        warnings.warn(
            f"{spec.label}: covariate {spec.covariate!r} is constant; "
            "term degraded to an intercept",
            BasisWarning,
            stacklevel=2,
        )
        block = BasisBlock(
            spec, np.ones((len(x), 1)), np.zeros((1, 1)), degraded_to="intercept"
        )
        return block
    df = spec.df
    if len(distinct) < df:
        df = max(SPLINE_DEGREE + 1, len(distinct))
        warnings.warn(
            f"{spec.label}: only {len(distinct)} distinct values; "
            f"basis size reduced to {df}",
            BasisWarning,
            stacklevel=2,
        )
        spec = replace(spec, df=df, label=spec.label)

    if spec.period is not None:
        period = float(spec.period)
        knots = _open_knots(0.0, period, df)
        penalty = _cyclic_difference_penalty(df, spec.penalty_order)
        xmin, xmax = 0.0, period
    else:
        xmin, xmax = float(distinct[0]), float(distinct[-1])
        knots = _open_knots(xmin, xmax, df - SPLINE_DEGREE)
        penalty = _difference_penalty(df, spec.penalty_order)

    block = BasisBlock(
        spec, np.empty((0, 0)), penalty, knots=knots, xmin=xmin, xmax=xmax
    )
    rows = block._spline_rows(x, warn=False)
    if spec.kind == "varying_coefficient":
        rows = rows * _column(data, spec.by)[:, None]
        block.design = rows
        return block
    if spec.center:
        constraint = rows.sum(axis=0)
        norm = np.linalg.norm(constraint)
        if norm > 1e-10:
            block.constraint = constraint / norm
            z = block._transform()
            rows = rows @ z
            block.penalty = z.T @ penalty @ z
    block.design = rows
    return block


def _infer_n(data):
    for key in data:
        return len(np.asarray(data[key]))
    raise ValueError("empty data")


def evaluate_term(block, data, beta):
    """Public wrapper: effect of one fitted term at new covariate values."""
    return block.evaluate(data, beta)
