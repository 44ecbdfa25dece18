"""Composite covariance functions built from a small expression language.

A kernel is written as text such as ``"SE + SE*Per + RQ + SE + Noise"`` and
parsed into a tree of base kernels. Every free hyperparameter gets a slot in
a flat vector of log values ``eta``; the layout follows the left-to-right
order of the leaves.

Base kernels (``r`` is the distance between inputs)::

    SE     s^2 exp(-r^2 / (2 ls^2))                        slots: s, ls
    ARD    s^2 exp(-1/2 sum_d r_d^2 / ls_d^2)              slots: s, ls_1..ls_D
    RQ     s^2 (1 + r^2 / (2 alpha ls^2))^(-alpha)          slots: s, ls, alpha
    Per    s^2 exp(-2 sin^2(pi r / p) / ls^2)              slots: s, ls[, p]
    Noise  n^2 on the diagonal of the training covariance   slots: n

Amplitudes and the noise scale are stored as standard deviations. Inside a
product only the first factor keeps an amplitude; later leaf factors have it
fixed to one. The period of ``Per`` is fixed (default 1.0) unless the leaf is
written ``Per[p=free]``.

Leaf options go in square brackets: ``Per[p=12]``, ``Per[p=free]``,
``SE[dim=2]`` (active input column, 1-based), ``SE[amp=free]`` or
``SE[amp=fixed]``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

__all__ = [
    "BASE_KERNELS",
    "KernelExpr",
    "KernelSyntaxError",
    "Leaf",
    "Product",
    "Sum",
    "ThetaVector",
    "eval_cross_matrix",
    "eval_kernel_matrix",
    "grad_kernel_matrix",
    "kernel_and_grad_operator",
    "kernel_and_grads",
    "noise_variance",
    "parse_kernel_expr",
]

BASE_KERNELS = ("SE", "ARD", "RQ", "Per", "Noise")
DEFAULT_PERIOD = 1.0


class KernelSyntaxError(ValueError):
    """Raised for malformed kernel expressions."""


@dataclass(frozen=True)
class ThetaVector:
    """Hyperparameters in log space.

    ``eta[j] = log(theta[j])`` for every slot ``j``.
    """

    eta: np.ndarray

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(eta)):
            raise ValueError("eta must be finite")
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)

    @classmethod
    def from_theta(cls, theta) -> "ThetaVector":
        return cls(np.log(np.asarray(theta, dtype=float)))

    @property
    def theta(self) -> np.ndarray:
        return np.exp(self.eta)

    def __len__(self):
        return self.eta.size


def _as_eta(theta) -> np.ndarray:
    if isinstance(theta, ThetaVector):
        return theta.eta
    return np.asarray(theta, dtype=float).reshape(-1)


# --------------------------------------------------------------------------
# Tree nodes
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Leaf:
    """A base kernel with its slot assignment.

    ``roles`` names the free parameters of this leaf in order (a subset of
    ``("s", "ls", "alpha", "p", "n")``, with ARD lengthscales all tagged
    ``"ls"``) and ``slots`` holds their positions in the global vector.
    """

    kind: str
    slots: tuple
    roles: tuple
    active_dim: int | None = None
    fixed_amplitude: bool = False
    period: float | None = DEFAULT_PERIOD
    ard_dim: int | None = None
    options: tuple = ()

    def leaves(self):
        yield self


@dataclass(frozen=True)
class Sum:
    terms: tuple

    def leaves(self):
        for t in self.terms:
            yield from t.leaves()


@dataclass(frozen=True)
class Product:
    factors: tuple

    def leaves(self):
        for f in self.factors:
            yield from f.leaves()


Node = Union[Leaf, Sum, Product]


@dataclass(frozen=True)
class KernelExpr:
    """Parsed kernel expression with its hyperparameter layout."""

    root: Node
    input_dim: int
    names: tuple
    text: str = field(default="", compare=False)

    @property
    def n_params(self) -> int:
        return len(self.names)

    @property
    def leaves(self) -> tuple:
        return tuple(self.root.leaves())

    @property
    def noise_slots(self) -> tuple:
        return tuple(
            lf.slots[0] for lf in self.leaves if lf.kind == "Noise"
        )

    def slot_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no hyperparameter slot named {name!r}") from None

    def __str__(self):
        return _format(self.root, top=True)


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(?P<id>[A-Za-z_][A-Za-z0-9_]*)(?P<opt>\[[^\]]*\])?|(?P<op>[+*()]))")


def _tokenize(text):
    pos = 0
    tokens = []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise KernelSyntaxError(
                f"unexpected character {text[pos:].strip()[:1]!r} at "
                f"position {pos} in {text!r}"
            )
        if m.group("id"):
            tokens.append(("id", m.group("id"), m.group("opt")))
        else:
            tokens.append(("op", m.group("op"), None))
        pos = m.end()
    return tokens


def _parse_options(kind, raw):
    opts = {}
    if not raw:
        return opts
    body = raw[1:-1].strip()
    if not body:
        return opts
    for item in body.split(","):
        if "=" not in item:
            raise KernelSyntaxError(f"bad option {item!r} on {kind}")
        key, value = (s.strip() for s in item.split("=", 1))
        if key == "p":
            if kind != "Per":
                raise KernelSyntaxError("option 'p' only applies to Per")
            if value == "free":
                opts["period"] = None
            else:
                try:
                    opts["period"] = float(value)
                except ValueError:
                    raise KernelSyntaxError(f"bad period {value!r}") from None
                if not opts["period"] > 0:
                    raise KernelSyntaxError("period must be positive")
        elif key == "dim":
            if kind in ("ARD", "Noise"):
                raise KernelSyntaxError(f"option 'dim' does not apply to {kind}")
            try:
                opts["active_dim"] = int(value) - 1
            except ValueError:
                raise KernelSyntaxError(f"bad dim {value!r}") from None
        elif key == "amp":
            if kind == "Noise":
                raise KernelSyntaxError("Noise has no amplitude")
            if value not in ("free", "fixed"):
                raise KernelSyntaxError("amp must be 'free' or 'fixed'")
            opts["fixed_amplitude"] = value == "fixed"
        else:
            raise KernelSyntaxError(f"unknown option {key!r} on {kind}")
    return opts


class _Parser:
    # expr := term ('+' term)* ; term := factor ('*' factor)* ;
    # factor := ID | '(' expr ')'
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expr(self):
        terms = [self.term()]
        while self.peek() == ("op", "+", None):
            self.take()
            terms.append(self.term())
        return terms[0] if len(terms) == 1 else ("sum", terms)

    def term(self):
        factors = [self.factor()]
        while self.peek() == ("op", "*", None):
            self.take()
            factors.append(self.factor())
        return factors[0] if len(factors) == 1 else ("prod", factors)

    def factor(self):
        tok = self.take()
        if tok is None:
            raise KernelSyntaxError("unexpected end of expression")
        if tok[0] == "id":
            if tok[1] not in BASE_KERNELS:
                raise KernelSyntaxError(
                    f"unknown kernel {tok[1]!r}; expected one of "
                    f"{', '.join(BASE_KERNELS)}"
                )
            return ("leaf", tok[1], _parse_options(tok[1], tok[2]))
        if tok[1] == "(":
            node = self.expr()
            if self.take() != ("op", ")", None):
                raise KernelSyntaxError("missing closing parenthesis")
            return node
        raise KernelSyntaxError(f"unexpected {tok[1]!r}")


def _flatten(node, kind):
    # (a*b)*c -> a*b*c and (a+b)+c -> a+b+c
    out = []
    for child in node[1]:
        if child[0] == kind:
            out.extend(_flatten(child, kind))
        else:
            out.append(child)
    return out


class _Layout:
    def __init__(self, input_dim):
        self.input_dim = input_dim
        self.names = []

    def add(self, prefix):
        self.names.append(f"{prefix}_{len(self.names) + 1}")
        return len(self.names) - 1


def _build(raw, layout, in_product=False, first_factor=True):
    kind = raw[0]
    if kind == "sum":
        terms = _flatten(raw, "sum")
        return Sum(tuple(_build(t, layout, in_product, first_factor) for t in terms))
    if kind == "prod":
        factors = _flatten(raw, "prod")
        return Product(
            tuple(
                _build(f, layout, True, first_factor and i == 0)
                for i, f in enumerate(factors)
            )
        )
    _, base, opts = raw
    if base == "Noise":
        if in_product:
            raise KernelSyntaxError("Noise cannot appear inside a product")
        slot = layout.add("n")
        return Leaf("Noise", (slot,), ("n",), options=())
    fixed_amp = opts.get("fixed_amplitude", not first_factor)
    period = opts.get("period", DEFAULT_PERIOD) if base == "Per" else None
    active = opts.get("active_dim")
    if active is not None and not 0 <= active < layout.input_dim:
        raise KernelSyntaxError(
            f"dim={active + 1} outside input dimension {layout.input_dim}"
        )
    roles = []
    if not fixed_amp:
        roles.append("s")
    ard_dim = None
    if base == "ARD":
        ard_dim = layout.input_dim
        roles.extend(["ls"] * ard_dim)
    else:
        roles.append("ls")
    if base == "RQ":
        roles.append("alpha")
    if base == "Per" and period is None:
        roles.append("p")
    slots = tuple(layout.add(r) for r in roles)
    # keep only options that were written, so printing round-trips
    written = []
    if "period" in opts:
        written.append(("p", "free" if period is None else repr(float(period))))
    if "active_dim" in opts:
        written.append(("dim", str(active + 1)))
    if "fixed_amplitude" in opts and opts["fixed_amplitude"] != (not first_factor):
        written.append(("amp", "fixed" if fixed_amp else "free"))
    return Leaf(
        base,
        slots,
        tuple(roles),
        active_dim=active,
        fixed_amplitude=fixed_amp,
        period=period,
        ard_dim=ard_dim,
        options=tuple(written),
    )


def parse_kernel_expr(text: str, input_dim: int | None = 1) -> KernelExpr:
    """Parse a kernel expression.

    Parameters
    ----------
    text : str
        Expression over ``SE``, ``ARD``, ``RQ``, ``Per`` and ``Noise`` with
        ``+``, ``*`` (binding tighter) and parentheses.
    input_dim : int
        Number of input columns. Required for ``ARD``.

    Returns
    -------
    KernelExpr

    Raises
    ------
    KernelSyntaxError
        On unknown identifiers, empty input or misplaced tokens.
    """
    if text is None or not text.strip():
        raise KernelSyntaxError("empty kernel expression")
    tokens = _tokenize(text)
    parser = _Parser(tokens)
    raw = parser.expr()
    if parser.peek() is not None:
        raise KernelSyntaxError(f"unexpected {parser.peek()[1]!r} after expression")
    uses_ard = any(t[0] == "id" and t[1] == "ARD" for t in tokens)
    if uses_ard and (input_dim is None or input_dim < 1):
        raise KernelSyntaxError("ARD needs a known input dimension")
    layout = _Layout(input_dim if input_dim is not None else 1)
    root = _build(raw, layout)
    return KernelExpr(root, layout.input_dim, tuple(layout.names), text=text)


def _format(node, top=False):
    if isinstance(node, Leaf):
        if node.options:
            opts = ",".join(f"{k}={v}" for k, v in node.options)
            return f"{node.kind}[{opts}]"
        return node.kind
    if isinstance(node, Product):
        return "*".join(_format(f) for f in node.factors)
    inner = " + ".join(_format(t) for t in node.terms)
    return inner if top else f"({inner})"


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


def _check(k, eta, X):
    if eta.size != k.n_params:
        raise ValueError(
            f"kernel has {k.n_params} hyperparameters, got a vector of "
            f"length {eta.size}"
        )
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != k.input_dim:
        raise ValueError(
            f"kernel expects {k.input_dim} input columns, got {X.shape[1]}"
        )
    return X


class _Distances:
    """Cache of squared coordinate differences between two input sets."""

    def __init__(self, A, B):
        self.A = A
        self.B = B
        self._cache = {}
        # when set, arrays are over distinct distances and ``index`` maps
        # them back onto the full matrix
        self.index = None

    @property
    def shape(self):
        if self.index is not None:
            return self._cache[0].shape
        return (self.A.shape[0], self.B.shape[0])

    def compress(self, rtol=1e-12):
        """Switch to distinct-distance storage for 1-d inputs on a grid.

        Squared distances closer than ``rtol`` times the largest one are
        merged. Kept only when it shrinks the work at least eightfold.
        """
        if self.A.shape[1] != 1 or self.index is not None:
            return self
        r2 = self.sq(0)
        top = float(r2.max())
        if top <= 0:
            return self
        q = np.round(r2 / (rtol * top)).ravel()
        _, first, inverse = np.unique(q, return_index=True, return_inverse=True)
        if first.size * 8 > r2.size:
            return self
        self._cache = {0: r2.ravel()[first]}
        self.index = inverse.reshape(r2.shape)
        return self

    def sq(self, dim):
        # dim=None means all columns summed
        if dim is None and self.A.shape[1] == 1:
            dim = 0
        if dim not in self._cache:
            if dim is None:
                a, b = self.A, self.B
            else:
                a, b = self.A[:, dim : dim + 1], self.B[:, dim : dim + 1]
            d2 = np.zeros((a.shape[0], b.shape[0]))
            for c in range(a.shape[1]):
                d2 += (a[:, c, None] - b[None, :, c]) ** 2
            self._cache[dim] = d2
        return self._cache[dim]

    def periodic(self, dims, period):
        """Summed ``sin^2(pi r / p)`` and its ``d/d log p`` counterpart."""
        key = ("per", tuple(dims), float(period))
        if key not in self._cache:
            shape = self.shape
            sin2 = np.zeros(shape)
            dsin2 = np.zeros(shape)
            for c in dims:
                arg = np.pi * np.sqrt(np.maximum(self.sq(c), 0.0)) / period
                sin2 += np.sin(arg) ** 2
                dsin2 += arg * np.sin(2.0 * arg)
            if len(self._cache) > 32:
                # free periods change every call; do not let them pile up
                for k in [k for k in self._cache if isinstance(k, tuple)]:
                    del self._cache[k]
            self._cache[key] = (sin2, dsin2)
        return self._cache[key]


_DIST_CACHE: dict = {}
_DIST_CACHE_SIZE = 4


def _distances(A, B, compress=False):
    """Shared :class:`_Distances` for repeated evaluations on the same inputs."""
    if A.size * B.shape[0] < 256:
        return _Distances(A, B)
    key = (A.shape, B.shape, A.tobytes(), B.tobytes(), compress)
    hit = _DIST_CACHE.pop(key, None)
    if hit is None:
        hit = _Distances(A.copy(), B.copy())
        if compress:
            hit.compress()
        if len(_DIST_CACHE) >= _DIST_CACHE_SIZE:
            _DIST_CACHE.pop(next(iter(_DIST_CACHE)))
    _DIST_CACHE[key] = hit
    return hit


def _leaf_params(leaf, theta):
    vals = dict(s=1.0, p=leaf.period)
    ls = []
    for role, slot in zip(leaf.roles, leaf.slots):
        if role == "ls":
            ls.append(theta[slot])
        else:
            vals[role] = theta[slot]
    vals["ls"] = np.array(ls)
    return vals


def _leaf_value_and_grads(leaf, theta, dist, diag, need_grad):
    """Matrix of one leaf and its derivatives w.r.t. the leaf's log slots."""
    shape = dist.shape
    pv = _leaf_params(leaf, theta)
    s2 = pv["s"] ** 2
    grads = {}
    if leaf.kind == "Noise":
        n2 = pv["n"] ** 2
        K = np.eye(shape[0]) * n2 if diag else np.zeros(shape)
        if need_grad:
            grads[leaf.slots[0]] = 2.0 * K
        return K, grads

    if leaf.kind == "ARD":
        ls = pv["ls"]
        scaled = [dist.sq(d) / ls[d] ** 2 for d in range(leaf.ard_dim)]
        K = s2 * np.exp(-0.5 * np.sum(scaled, axis=0))
        if need_grad:
            ls_slots = [sl for r, sl in zip(leaf.roles, leaf.slots) if r == "ls"]
            for slot, sc in zip(ls_slots, scaled):
                grads[slot] = K * sc
    else:
        r2 = dist.sq(leaf.active_dim)
        ell = pv["ls"][0]
        if leaf.kind == "SE":
            q = r2 / ell**2
            K = s2 * np.exp(-0.5 * q)
            dls = K * q
            extra = {}
        elif leaf.kind == "RQ":
            alpha = pv["alpha"]
            u = r2 / (2.0 * alpha * ell**2)
            logB = np.log1p(u)
            K = s2 * np.exp(-alpha * logB)
            B = 1.0 + u
            dls = K * 2.0 * alpha * u / B
            extra = {"alpha": K * alpha * (u / B - logB)}
        elif leaf.kind == "Per":
            period = pv["p"]
            # one sin^2 term per coordinate, i.e. a product of 1-d periodic
            # kernels, which stays positive semidefinite for d > 1
            if leaf.active_dim is None:
                dims = range(dist.A.shape[1])
            else:
                dims = (leaf.active_dim,)
            sin2, dsin2 = dist.periodic(dims, period)
            K = s2 * np.exp(-2.0 * sin2 / ell**2)
            dls = K * 4.0 * sin2 / ell**2
            extra = {"p": K * (2.0 / ell**2) * dsin2}
        else:  # pragma: no cover - guarded by the parser
            raise ValueError(leaf.kind)
        if need_grad:
            for role, slot in zip(leaf.roles, leaf.slots):
                if role == "ls":
                    grads[slot] = dls
                elif role in extra:
                    grads[slot] = extra[role]
    if need_grad and not leaf.fixed_amplitude:
        grads[leaf.slots[leaf.roles.index("s")]] = 2.0 * K
    return K, grads


def _eval_node(node, theta, dist, diag, need_grad):
    if isinstance(node, Leaf):
        return _leaf_value_and_grads(node, theta, dist, diag, need_grad)
    parts = [_eval_node(c, theta, dist, diag, need_grad) for c in node.children]
    if isinstance(node, Sum):
        K = parts[0][0].copy()
        grads = dict(parts[0][1])
        for Kc, gc in parts[1:]:
            K += Kc
            grads.update(gc)
        return K, grads
    K = parts[0][0].copy()
    for Kc, _ in parts[1:]:
        K *= Kc
    grads = {}
    if need_grad:
        for i, (_, gc) in enumerate(parts):
            others = None
            for j, (Kc, _) in enumerate(parts):
                if j != i:
                    others = Kc.copy() if others is None else others * Kc
            for slot, dK in gc.items():
                grads[slot] = dK * others
    return K, grads


Sum.children = property(lambda self: self.terms)
Product.children = property(lambda self: self.factors)


def _eval_training(k, theta, X, include_noise, need_grad, expand=True):
    """Tree evaluation over ``X`` against itself, using grid compression.

    Returns ``(K, grads, index)``. With ``expand=False`` and a compressed
    grid, ``grads`` stay over distinct distances and exclude Noise slots.
    """
    dist = _distances(X, X, compress=True)
    if dist.index is None:
        K, grads = _eval_node(k.root, theta, dist, include_noise, need_grad)
        return K, grads, None
    # Noise never sits inside a product, so it can be added after expansion
    K, grads = _eval_node(k.root, theta, dist, False, need_grad)
    K = K[dist.index]
    n = X.shape[0]
    if include_noise:
        for j in k.noise_slots:
            K[np.diag_indices(n)] += theta[j] ** 2
    if not expand:
        grads = {j: g for j, g in grads.items() if j not in k.noise_slots}
        return K, grads, dist.index
    grads = {j: g[dist.index] for j, g in grads.items()}
    if need_grad:
        for j in k.noise_slots:
            grads[j] = np.eye(n) * (2.0 * theta[j] ** 2 if include_noise else 0.0)
    return K, grads, None


class KernelGradients:
    """Derivatives ``dK/d eta_j`` of a training covariance.

    On grid inputs the matrices are held over distinct distances, so
    contracting against a weight matrix costs one pass over ``W``.
    """

    def __init__(self, k, theta, n, grads, index):
        self.n_params = k.n_params
        self.n = n
        self._grads = grads
        self._index = index
        self._noise = {j: 2.0 * theta[j] ** 2 for j in k.noise_slots} if index is not None else {}

    def contract(self, W) -> np.ndarray:
        """``[sum(W * dK_j) for j]``."""
        out = np.zeros(self.n_params)
        if self._index is not None:
            Wc = np.bincount(self._index.ravel(), weights=np.ravel(W),
                             minlength=self._index.max() + 1)
            for j, g in self._grads.items():
                out[j] = Wc @ g
            tr = np.trace(W)
            for j, c in self._noise.items():
                out[j] = c * tr
        else:
            for j, g in self._grads.items():
                out[j] = np.sum(W * g)
        return out

    def matrices(self) -> list:
        out = []
        for j in range(self.n_params):
            if j in self._noise:
                out.append(np.eye(self.n) * self._noise[j])
            elif j not in self._grads:
                out.append(np.zeros((self.n, self.n)))
            elif self._index is not None:
                out.append(self._grads[j][self._index])
            else:
                out.append(self._grads[j])
        return out


def kernel_and_grad_operator(k: KernelExpr, theta, X):
    """Noisy training covariance and a :class:`KernelGradients` for it."""
    eta = _as_eta(theta)
    X = _check(k, eta, X)
    th = np.exp(eta)
    K, grads, index = _eval_training(k, th, X, True, True, expand=False)
    return K, KernelGradients(k, th, X.shape[0], grads, index)


def eval_kernel_matrix(k: KernelExpr, theta, X, include_noise: bool = True):
    """Covariance matrix over the training inputs.

    Noise leaves add ``n^2`` to the diagonal only. Pass
    ``include_noise=False`` for the noise-free signal covariance.
    """
    eta = _as_eta(theta)
    X = _check(k, eta, X)
    K, _, _ = _eval_training(k, np.exp(eta), X, include_noise, False)
    return 0.5 * (K + K.T)


def eval_cross_matrix(k: KernelExpr, theta, X, Xstar):
    """Cross covariance ``K[i, j] = k(xstar_i, x_j)``, shape ``(N*, N)``.

    Noise leaves contribute nothing.
    """
    eta = _as_eta(theta)
    X = _check(k, eta, X)
    Xstar = _check(k, eta, Xstar)
    K, _ = _eval_node(k.root, np.exp(eta), _distances(Xstar, X), False, False)
    return K


def eval_test_diag(k: KernelExpr, theta, Xstar):
    """Prior variances ``k(x, x)`` at each test input, noise excluded."""
    eta = _as_eta(theta)
    Xstar = _check(k, eta, Xstar)
    out = np.empty(Xstar.shape[0])
    # stationary kernels: constant diagonal, evaluate one point
    K, _ = _eval_node(k.root, np.exp(eta), _Distances(Xstar[:1], Xstar[:1]), False, False)
    out.fill(K[0, 0])
    return out


def grad_kernel_matrix(k: KernelExpr, theta, X, include_noise: bool = True):
    """Derivatives of the training covariance with respect to each ``eta_j``.

    Returns
    -------
    list of ndarray
        ``J`` symmetric ``N x N`` matrices, in slot order.
    """
    eta = _as_eta(theta)
    X = _check(k, eta, X)
    _, grads, _ = _eval_training(k, np.exp(eta), X, include_noise, True)
    n = X.shape[0]
    out = []
    for j in range(k.n_params):
        dK = grads.get(j)
        if dK is None:
            dK = np.zeros((n, n))
        out.append(0.5 * (dK + dK.T))
    return out


def kernel_and_grads(k: KernelExpr, theta, X, include_noise: bool = True):
    """``eval_kernel_matrix`` and ``grad_kernel_matrix`` in a single pass."""
    eta = _as_eta(theta)
    X = _check(k, eta, X)
    K, grads, _ = _eval_training(k, np.exp(eta), X, include_noise, True)
    n = X.shape[0]
    zero = None
    out = []
    for j in range(k.n_params):
        dK = grads.get(j)
        if dK is None:
            if zero is None:
                zero = np.zeros((n, n))
            dK = zero
        out.append(dK)
    return K, out


def noise_variance(k: KernelExpr, theta) -> float:
    """Total observation-noise variance carried by the Noise leaves."""
    eta = _as_eta(theta)
    return float(sum(np.exp(2.0 * eta[s]) for s in k.noise_slots))
