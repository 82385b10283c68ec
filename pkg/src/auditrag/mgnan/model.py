"""Additive graph encoder over feature groups.

For a graph with nodes ``1..N`` and feature groups ``F_1..F_G`` the encoder
computes, per group ``g`` and node ``i``::

    h[i, g] = sum_j  rho(1 / (1 + dist(j, i))) / shell(i, j) * f_g(x_j[F_g])

where ``shell(i, j)`` is the number of nodes at distance ``dist(j, i)`` from
``i``.  The graph readout ``sum_g sum_i h[i, g]`` is re-associated as
``sum_g sum_j f_g(x_j) * W_j`` with ``W_j = sum_i rho(...) / shell(i, j)``, so
every term ``f_g(x_j) * W_j`` is the exact contribution of node ``j`` through
group ``g``.  Pairs with no connecting path contribute nothing.

``rho`` is piecewise linear over ``M + 1`` evenly spaced knots on ``[0, 1]``;
knot values are ``base + cumsum(softplus(increments))`` so it is nondecreasing
for any parameter values.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..errors import ConfigError, DataError, NumericError
from ..graph_store import UNREACHABLE, DistanceTable, KnowledgeGraph, all_pairs_distances

CHECKPOINT_FORMAT = "auditrag.mgnan"
CHECKPOINT_VERSION = 1


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


class Link(str, enum.Enum):
    IDENTITY = "identity"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"

    def apply(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self is Link.IDENTITY:
            return z.copy()
        if self is Link.SIGMOID:
            return sigmoid(z)
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class FeatureGrouping:
    dim: int
    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.dim < 1 or not self.groups:
            raise ConfigError("grouping needs dim >= 1 and at least one group")
        flat = sorted(i for grp in self.groups for i in grp)
        if flat != list(range(self.dim)):
            raise ConfigError("feature groups must partition 0..dim-1")
        if any(len(grp) == 0 for grp in self.groups):
            raise ConfigError("feature groups must be non-empty")

    @classmethod
    def single(cls, dim: int) -> "FeatureGrouping":
        return cls(dim, (tuple(range(dim)),))

    @classmethod
    def contiguous(cls, dim: int, n_groups: int) -> "FeatureGrouping":
        bounds = np.linspace(0, dim, n_groups + 1).round().astype(int)
        return cls(dim, tuple(tuple(range(a, b)) for a, b in zip(bounds[:-1], bounds[1:])))

    def __len__(self) -> int:
        return len(self.groups)


class MonotoneDecay:
    """View over the decay parameters (``base`` scalar, ``increments`` of
    length M) of a model; evaluation and the knot Jacobian live here."""

    def __init__(self, base: float, increments: np.ndarray):
        self.base = float(base)
        self.increments = np.asarray(increments, dtype=float)

    @property
    def n_knots(self) -> int:
        return self.increments.size

    def knot_values(self) -> np.ndarray:
        return self.base + np.concatenate(([0.0], np.cumsum(softplus(self.increments))))

    def interpolation_matrix(self, t) -> np.ndarray:
        """Rows of weights over the M+1 knots such that ``rho(t) = A @ knots``."""
        t = np.clip(np.atleast_1d(np.asarray(t, dtype=float)), 0.0, 1.0)
        m = self.n_knots
        pos = t * m
        lo = np.minimum(np.floor(pos).astype(int), m - 1)
        frac = pos - lo
        out = np.zeros((t.size, m + 1))
        rows = np.arange(t.size)
        out[rows, lo] = 1.0 - frac
        out[rows, lo + 1] += frac
        return out

    def __call__(self, t):
        # a + f * (b - a), capped at b: rounding cannot break monotonicity
        scalar = np.ndim(t) == 0
        t = np.clip(np.atleast_1d(np.asarray(t, dtype=float)), 0.0, 1.0)
        knots = self.knot_values()
        m = self.n_knots
        pos = t * m
        lo = np.minimum(np.floor(pos).astype(int), m - 1)
        a, b = knots[lo], knots[lo + 1]
        vals = np.minimum(a + (pos - lo) * (b - a), b)
        return float(vals[0]) if scalar else vals

    def knot_grad_to_params(self, g_knots: np.ndarray) -> tuple[float, np.ndarray]:
        """Chain rule from d(loss)/d(knot values) to (d/d base, d/d increments)."""
        g_knots = np.asarray(g_knots, dtype=float)
        g_base = float(g_knots.sum())
        # knot m uses increments 1..m, so increment l collects knots l..M
        tail = np.cumsum(g_knots[::-1])[::-1][1:]
        return g_base, tail * sigmoid(self.increments)


@dataclass
class Structure:
    """Distance-derived constants of one graph, in ascending node-id order.

    ``coef[i, j] = 1 / shell(i, j)`` (0 if unreachable), ``dist`` the hop
    matrix and ``profile[j, d] = sum_i [dist(i, j) = d] * coef[i, j]`` so that
    ``W = profile @ rho(1 / (1 + d))``.
    """

    node_ids: tuple[int, ...]
    dist: np.ndarray
    coef: np.ndarray
    profile: np.ndarray

    @classmethod
    def from_graph(cls, g: KnowledgeGraph) -> "Structure":
        dist = all_pairs_distances(g)
        n = len(g)
        reach = dist != UNREACHABLE
        max_d = int(dist.max()) if n else 0
        shell = np.zeros_like(dist)
        for i in range(n):
            counts = np.bincount(dist[i][reach[i]], minlength=max_d + 1)
            shell[i][reach[i]] = counts[dist[i][reach[i]]]
        coef = np.zeros(dist.shape)
        coef[reach] = 1.0 / shell[reach]
        profile = np.zeros((n, max_d + 1))
        ii, jj = np.nonzero(reach)
        np.add.at(profile, (jj, dist[ii, jj]), coef[ii, jj])
        return cls(g.node_ids, dist, coef, profile)

    @property
    def max_distance(self) -> int:
        return self.profile.shape[1] - 1

    def decay_inputs(self) -> np.ndarray:
        return 1.0 / (1.0 + np.arange(self.max_distance + 1))

    def node_weights(self, rho: MonotoneDecay) -> np.ndarray:
        return self.profile @ rho(self.decay_inputs())

    def propagation(self, rho: MonotoneDecay) -> np.ndarray:
        """``P[i, j]`` such that ``h[i, g] = sum_j P[i, j] f_g(x_j)``."""
        rvals = rho(self.decay_inputs())
        safe = np.where(self.dist == UNREACHABLE, 0, self.dist)
        return self.coef * rvals[safe]


def node_weight(j: int, tables: Mapping[int, DistanceTable], rho: MonotoneDecay) -> float:
    """Total decay weight of node ``j``: sum over every node ``i`` that reaches
    ``j`` of ``rho(1 / (1 + dist(j, i))) / shell_i(j)``, where the shell is
    counted in the BFS table rooted at ``i``."""
    total = 0.0
    for i in sorted(tables):
        table = tables[i]
        d = table.distance(j)
        if d == UNREACHABLE:
            continue
        total += rho(1.0 / (1.0 + d)) / table.shell_size(j)
    return total


class MGnanModel:
    """Shape-function MLPs per feature group, a monotone decay and a link.

    Parameters live in ``params`` under stable names (``shape{g}.W{l}``,
    ``shape{g}.b{l}``, ``rho.base``, ``rho.increments``) and are float64.
    """

    def __init__(
        self,
        grouping: FeatureGrouping,
        hidden: Sequence[int] = (64, 64),
        n_outputs: int = 1,
        link: Link | str = Link.IDENTITY,
        n_knots: int = 16,
        seed: int = 0,
        params: Mapping[str, np.ndarray] | None = None,
    ):
        self.grouping = grouping
        self.hidden = tuple(int(h) for h in hidden)
        self.n_outputs = int(n_outputs)
        self.link = Link(link)
        self.n_knots = int(n_knots)
        self.seed = int(seed)
        if self.n_outputs < 1:
            raise ConfigError("n_outputs must be positive")
        if self.link is Link.SOFTMAX and self.n_outputs < 2:
            raise ConfigError("softmax link needs at least 2 output channels")
        if self.n_knots < 1 or any(h < 1 for h in self.hidden):
            raise ConfigError("knot count and hidden widths must be positive")
        self.params: dict[str, np.ndarray] = {}
        if params is None:
            self._initialize()
        else:
            for name, shape in self.param_shapes().items():
                arr = np.array(params[name], dtype=float).reshape(shape)
                self.params[name] = arr

    # -- parameters ---------------------------------------------------------
    def layer_widths(self, g: int) -> list[int]:
        return [len(self.grouping.groups[g]), *self.hidden, self.n_outputs]

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for g in range(len(self.grouping)):
            widths = self.layer_widths(g)
            for layer, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
                shapes[f"shape{g}.W{layer}"] = (a, b)
                shapes[f"shape{g}.b{layer}"] = (b,)
        shapes["rho.base"] = ()
        shapes["rho.increments"] = (self.n_knots,)
        return shapes

    def _initialize(self) -> None:
        rng = np.random.default_rng(self.seed)
        for name, shape in self.param_shapes().items():
            if name.startswith("shape") and ".W" in name:
                bound = 1.0 / math.sqrt(shape[0])
                self.params[name] = rng.uniform(-bound, bound, size=shape)
            elif name.startswith("shape"):
                self.params[name] = np.zeros(shape)
        # softplus(inc) = 1/M everywhere makes rho(t) = t at start
        self.params["rho.base"] = np.array(0.0)
        self.params["rho.increments"] = np.full(self.n_knots, math.log(math.expm1(1.0 / self.n_knots)))

    @property
    def rho(self) -> MonotoneDecay:
        return MonotoneDecay(float(self.params["rho.base"]), self.params["rho.increments"])

    def copy(self) -> "MGnanModel":
        return MGnanModel(
            self.grouping, self.hidden, self.n_outputs, self.link, self.n_knots, self.seed,
            params={k: v.copy() for k, v in self.params.items()},
        )

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([np.ravel(v) for v in self.params.values()])

    def set_flat_parameters(self, flat: np.ndarray) -> None:
        pos = 0
        for name, arr in self.params.items():
            size = arr.size
            self.params[name] = np.asarray(flat[pos : pos + size], dtype=float).reshape(arr.shape).copy()
            pos += size

    # -- forward pieces -----------------------------------------------------
    def shape_forward(self, g: int, x: np.ndarray, keep: bool = False):
        """Apply shape function ``g`` to rows of group features ``x``.

        With ``keep=True`` also returns the per-layer activations needed for
        backpropagation.
        """
        n_layers = len(self.hidden) + 1
        acts = [x]
        a = x
        for layer in range(n_layers):
            z = a @ self.params[f"shape{g}.W{layer}"] + self.params[f"shape{g}.b{layer}"]
            a = np.tanh(z) if layer < n_layers - 1 else z
            acts.append(a)
        return (a, acts) if keep else a

    def shape_values(self, features: np.ndarray) -> np.ndarray:
        """``(G, N, K)`` array of every shape function on every node."""
        features = np.asarray(features, dtype=float)
        if features.ndim != 2 or features.shape[1] != self.grouping.dim:
            raise DataError(f"expected features of width {self.grouping.dim}, got shape {features.shape}")
        return np.stack([self.shape_forward(g, features[:, list(cols)]) for g, cols in enumerate(self.grouping.groups)])


@dataclass(frozen=True)
class Attribution:
    """Exact per-node, per-group decomposition of one graph readout."""

    node_ids: tuple[int, ...]
    terms: np.ndarray  # (G, N, K), terms[g, j] = shape_values[g, j] * weights[j]
    weights: np.ndarray  # (N,)
    shape_values: np.ndarray  # (G, N, K)
    pre_link_total: np.ndarray  # (K,)
    output: np.ndarray  # (K,)

    @property
    def n_groups(self) -> int:
        return self.terms.shape[0]

    def term(self, node_id: int, group: int = 0) -> np.ndarray:
        return self.terms[group, self.node_ids.index(node_id)]

    @property
    def per_node_group(self) -> dict[tuple[int, int], np.ndarray]:
        return {(nid, g): self.terms[g, j] for g in range(self.n_groups) for j, nid in enumerate(self.node_ids)}

    def to_dict(self, qid: str = "") -> dict:
        rows = [
            {"node": nid, "group": g, "value": self.terms[g, j].tolist()}
            for g in range(self.n_groups)
            for j, nid in enumerate(self.node_ids)
        ]
        rows.sort(key=lambda r: (-abs(r["value"][0]), r["node"], r["group"]))
        return {
            "qid": qid,
            "pre_link_total": self.pre_link_total.tolist(),
            "output": self.output.tolist(),
            "terms": rows,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Attribution":
        """Rebuild the term table from an export (weights/shape values are not
        part of the export and come back as NaN)."""
        nodes = sorted({r["node"] for r in obj["terms"]})
        groups = 1 + max(r["group"] for r in obj["terms"])
        k = len(obj["pre_link_total"])
        terms = np.zeros((groups, len(nodes), k))
        pos = {nid: j for j, nid in enumerate(nodes)}
        for r in obj["terms"]:
            terms[r["group"], pos[r["node"]]] = r["value"]
        nan = np.full(len(nodes), np.nan)
        return cls(
            tuple(nodes), terms, nan, np.full(terms.shape, np.nan),
            np.asarray(obj["pre_link_total"], dtype=float), np.asarray(obj["output"], dtype=float),
        )


def canonical_sum(terms: np.ndarray) -> np.ndarray:
    """Sum of all ``(G, N, K)`` terms in group-major, ascending-node order."""
    flat = terms.reshape(-1, terms.shape[-1])
    total = np.zeros(flat.shape[1])
    for row in flat:
        total = total + row
    return total


def _graph_of(sub) -> KnowledgeGraph:
    return sub.graph if hasattr(sub, "graph") else sub


def encode(model: MGnanModel, sub, store, structure: Structure | None = None, check: bool = False):
    """Encode a subgraph (``RetrievedSubgraph`` or ``KnowledgeGraph``).

    Returns ``(h, attribution)`` where ``h`` maps node id to its ``(G, K)``
    representation.  ``check=True`` verifies that the per-node readout and the
    re-associated per-term readout agree to 1e-9.
    """
    g = _graph_of(sub)
    if store.dim != model.grouping.dim:
        raise DataError(f"embedding dim {store.dim} does not match model dim {model.grouping.dim}")
    features = store.rows(g.node_ids)
    return encode_features(model, g, features, structure, check)


def encode_features(model: MGnanModel, g: KnowledgeGraph, features: np.ndarray,
                    structure: Structure | None = None, check: bool = False):
    structure = structure or Structure.from_graph(g)
    rho = model.rho
    fvals = model.shape_values(features)
    weights = structure.node_weights(rho)
    terms = fvals * weights[None, :, None]
    total = canonical_sum(terms)

    prop = structure.propagation(rho)
    h = np.einsum("ij,gjk->igk", prop, fvals)
    if check:
        per_i = h.sum(axis=(0, 1))
        if not np.allclose(per_i, total, rtol=0.0, atol=1e-9):
            raise NumericError(f"readout orders disagree: {per_i} vs {total}")
    att = Attribution(g.node_ids, terms, weights, fvals, total, model.link.apply(total))
    return {nid: h[i] for i, nid in enumerate(g.node_ids)}, att


# -- checkpoints ------------------------------------------------------------


def model_to_dict(model: MGnanModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dim": model.grouping.dim,
        "groups": [list(grp) for grp in model.grouping.groups],
        "hidden": list(model.hidden),
        "n_outputs": model.n_outputs,
        "link": model.link.value,
        "n_knots": model.n_knots,
        "seed": model.seed,
        "params": {
            name: {"shape": list(arr.shape), "data": [float(v) for v in np.ravel(arr)]}
            for name, arr in model.params.items()
        },
    }


def model_from_dict(obj: dict) -> MGnanModel:
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise DataError("not an M-GNAN checkpoint")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {obj.get('version')!r}")
    grouping = FeatureGrouping(obj["dim"], tuple(tuple(grp) for grp in obj["groups"]))
    params = {
        name: np.array(p["data"], dtype=float).reshape(p["shape"]) for name, p in obj["params"].items()
    }
    return MGnanModel(grouping, obj["hidden"], obj["n_outputs"], obj["link"], obj["n_knots"], obj["seed"], params)


def save_model(model: MGnanModel, path: str | Path) -> None:
    # json writes floats with repr(), which round-trips bit for bit
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> MGnanModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
