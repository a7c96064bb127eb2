"""Typed sparse adjacency with per-(node, relation) mean normalization.

A triple (s, r, o) sends a message from s to o under r. With inverse
relations enabled it also sends o -> s under a synthesized relation r + R.
Edges are stored sorted by (relation, target, source); ``coeff`` holds
1/|N_i^r| for the target i of each edge.
"""

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import DimensionError


@dataclass
class RelationalAdjacency:
    num_nodes: int
    num_relations: int
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    coeff: np.ndarray
    num_base_relations: int = 0

    @classmethod
    def from_edges(cls, num_nodes, num_relations, src, dst, rel, num_base_relations=None):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        rel = np.asarray(rel, dtype=np.int64)
        order = np.lexsort((src, dst, rel))
        src, dst, rel = src[order], dst[order], rel[order]
        coeff = np.zeros(len(src))
        if len(src):
            key = rel * num_nodes + dst
            _, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
            coeff = 1.0 / counts[inverse]
        return cls(num_nodes, num_relations, src, dst, rel, coeff,
                   num_relations if num_base_relations is None else num_base_relations)

    @property
    def num_edges(self):
        return len(self.src)

    @property
    def edges(self):
        return self.src, self.dst, self.rel, self.coeff

    def neighbors(self, node, relation=None):
        """Sources of edges into ``node``; ``{relation: array}`` when no relation is given."""
        mask = self.dst == node
        if relation is not None:
            return self.src[mask & (self.rel == relation)]
        out = {}
        for r in np.unique(self.rel[mask]).tolist():
            out[r] = self.src[mask & (self.rel == r)]
        return out

    def norm(self, node, relation):
        """1/|N_node^relation|, or 0.0 when the neighbor set is empty."""
        hit = np.flatnonzero((self.dst == node) & (self.rel == relation))
        return float(self.coeff[hit[0]]) if len(hit) else 0.0

    def dense(self, relation):
        """Normalized dense adjacency A_r with A_r[i, j] = 1/|N_i^r| for j in N_i^r."""
        a = np.zeros((self.num_nodes, self.num_nodes))
        m = self.rel == relation
        np.add.at(a, (self.dst[m], self.src[m]), self.coeff[m])
        return a

    def sampled(self, fanout, rng):
        """Keep at most ``fanout`` uniformly chosen sources per (target, relation) and renormalize."""
        if self.num_edges == 0:
            return self
        keys = rng.random(self.num_edges)
        order = np.lexsort((keys, self.dst, self.rel))
        group = self.rel[order] * self.num_nodes + self.dst[order]
        starts = np.r_[0, np.flatnonzero(np.diff(group)) + 1]
        rank = np.arange(self.num_edges) - np.repeat(starts, np.diff(np.r_[starts, self.num_edges]))
        keep = order[rank < fanout]
        return RelationalAdjacency.from_edges(self.num_nodes, self.num_relations, self.src[keep],
                                              self.dst[keep], self.rel[keep], self.num_base_relations)

    def receptive_field(self, seeds, hops):
        """Nodes whose values can influence ``seeds`` within ``hops`` message-passing steps."""
        field = np.zeros(self.num_nodes, dtype=bool)
        field[np.asarray(seeds)] = True
        frontier = field.copy()
        for _ in range(hops):
            reached = np.zeros_like(field)
            reached[self.src[frontier[self.dst]]] = True
            frontier = reached & ~field
            if not frontier.any():
                break
            field |= reached
        return np.flatnonzero(field)

    def subgraph(self, nodes):
        """Induced adjacency on ``nodes`` (relabelled 0..len-1), keeping the original coefficients."""
        nodes = np.asarray(nodes, dtype=np.int64)
        local = np.full(self.num_nodes, -1, dtype=np.int64)
        local[nodes] = np.arange(len(nodes))
        m = (local[self.src] >= 0) & (local[self.dst] >= 0)
        sub = RelationalAdjacency(len(nodes), self.num_relations, local[self.src[m]], local[self.dst[m]],
                                  self.rel[m], self.coeff[m], self.num_base_relations)
        return sub


def build_adjacency(kg, include_inverse=True):
    """Adjacency over ``kg.triples``; inverse relations get indices R..2R-1."""
    n, r = kg.num_entities, kg.num_relations
    t = kg.triples
    if len(t) == 0:
        return RelationalAdjacency.from_edges(n, 2 * r if include_inverse else r, [], [], [], r)
    src, rel, dst = t[:, 0], t[:, 1], t[:, 2]
    if include_inverse:
        src, dst, rel = np.concatenate([src, dst]), np.concatenate([dst, src]), np.concatenate([rel, rel + r])
        return RelationalAdjacency.from_edges(n, 2 * r, src, dst, rel, r)
    return RelationalAdjacency.from_edges(n, r, src, dst, rel, r)


def aggregate(adj, features, weights):
    """Sum over relations and neighbors of (1/|N_i^r|) * W_r @ features_j.

    ``features`` is a (nodes, d) tensor; ``weights`` is an (R, d_out, d)
    tensor of per-relation matrices. Differentiable in both.
    """
    features, weights = dc.as_tensor(features), dc.as_tensor(weights)
    if features.ndim != 2 or features.shape[0] != adj.num_nodes:
        raise DimensionError(f"features {features.shape} do not match {adj.num_nodes} nodes")
    if weights.ndim != 3 or weights.shape[0] != adj.num_relations or weights.shape[2] != features.shape[1]:
        raise DimensionError(f"weights {weights.shape} incompatible with features {features.shape}")
    n_rel, d_out, d_in = weights.shape
    # one basis per relation: coef = identity, table[j, r] = W_r @ h_j
    table = dc.reshape(features @ dc.reshape(dc.transpose(weights, (2, 0, 1)), (d_in, n_rel * d_out)),
                       (adj.num_nodes, n_rel, d_out))
    return dc.relational_contract(table, dc.Tensor(np.eye(n_rel)), adj.edges, adj.num_nodes)
