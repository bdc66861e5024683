"""The node-matching GNN over attribute graphs and its graph-matching score.

Forward pass for one sample:
  1. Every attribute-value pair becomes a node u = val * v.
  2. Same-side interactions: each ordered node pair (i, j) of one graph is
     fed through a shared two-layer MLP (2d -> 4d hidden with relu -> d
     linear), and node i sums its pair outputs into a message vector z_i.
  3. Cross-side interactions: node i elementwise-multiplies its
     representation with every node of the opposite graph and sums,
     s_i = u_i * (sum of opposite nodes).
  4. A shared GRU cell consumes the sequence [u_i, z_i, s_i] from a zero
     hidden state; the final hidden state is the fused node u'_i.
  5. Each graph's fused nodes are summed into a graph representation and
     the two representations are matched by dot product, giving the score.

The engine below runs any number of samples as one stacked computation:
nodes of all samples form one matrix, pair and segment index arrays keep
each sample's graphs separate. Inside a sample, nodes are processed in
ascending attribute-id order, so reordering the input attributes cannot
change any bit of the output. With row_local=True all matrix products use
the row-local kernel, making per-row results independent of what else is
stacked; predict() relies on this for its exact structural identities.

Ablation switches (VariantConfig) swap the pair model (mlp or elementwise
product), the cross model (elementwise product, shared or separate MLP,
or none), the fusing function (gru, sum, or a 3d -> 4d -> d MLP), and the
overall wiring: mode "union" treats every interaction as a cross
interaction over the union of both node sets and scores by summing both
graph representations' elements; mode "fm" additionally fixes the fusing
to u_i + half the summed cross products, which makes the score collapse
to the factorization-machine formula.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Parameter,
    Tape,
    Value,
    no_grad,
    segment_boundaries,
    stable_sigmoid,
)
from .data import (
    AttributeId,
    AttributeValuePair,
    DataSample,
    EmbeddingTable,
    init_embeddings,
)
from .errors import ContractError, InvalidConfigError, ShapeError
from .graphs import AttributeGraph

INNER_KINDS = ("mlp", "bi")
CROSS_KINDS = ("bi", "mlp_shared", "mlp_separate", "none")
FUSE_KINDS = ("gru", "sum", "mlp")
MODES = ("graph", "union", "fm")


@dataclass(frozen=True)
class VariantConfig:
    """Which sub-model handles each interaction type, plus the wiring mode."""

    inner: str = "mlp"
    cross: str = "bi"
    fuse: str = "gru"
    mode: str = "graph"

    def __post_init__(self):
        if self.mode == "fm":
            # The reduction is fully determined: elementwise products over
            # the union set, linear fusing, element-sum matching.
            object.__setattr__(self, "inner", "bi")
            object.__setattr__(self, "cross", "bi")
            object.__setattr__(self, "fuse", "sum")
        if self.inner not in INNER_KINDS:
            raise InvalidConfigError(f"unknown inner kind {self.inner!r}")
        if self.cross not in CROSS_KINDS:
            raise InvalidConfigError(f"unknown cross kind {self.cross!r}")
        if self.fuse not in FUSE_KINDS:
            raise InvalidConfigError(f"unknown fuse kind {self.fuse!r}")
        if self.mode not in MODES:
            raise InvalidConfigError(f"unknown mode {self.mode!r}")
        if self.cross == "mlp_shared" and self.inner != "mlp":
            raise InvalidConfigError("cross=mlp_shared needs an inner MLP to share")
        if self.mode == "union" and self.cross != "bi":
            raise InvalidConfigError("mode=union supports only cross=bi")


CANONICAL = VariantConfig()
FM_REDUCTION = VariantConfig(inner="bi", cross="bi", fuse="sum", mode="fm")


def parse_variant(text: str) -> VariantConfig:
    """Parse a config string like "inner=mlp,cross=bi,fuse=gru"."""
    fields = {}
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if "=" not in token:
            raise InvalidConfigError(f"bad variant token {token!r}")
        key, _, value = token.partition("=")
        key, value = key.strip(), value.strip()
        if key not in ("inner", "cross", "fuse", "mode"):
            raise InvalidConfigError(f"unknown variant key {key!r}")
        fields[key] = value
    if fields.get("mode") == "fm":
        return FM_REDUCTION
    return VariantConfig(**fields)


def format_variant(v: VariantConfig) -> str:
    if v.mode == "fm":
        return "mode=fm"
    text = f"inner={v.inner},cross={v.cross},fuse={v.fuse}"
    if v.mode != "graph":
        text += f",mode={v.mode}"
    return text


@dataclass
class MlpWeights:
    """Two-layer perceptron, stored input-major so rows multiply directly."""

    w_in: Parameter  # (in_dim, hidden)
    b_hidden: Parameter  # (hidden,)
    w_out: Parameter  # (hidden, out_dim)
    b_out: Parameter  # (out_dim,)

    def parameters(self) -> list[Parameter]:
        return [self.w_in, self.b_hidden, self.w_out, self.b_out]


@dataclass
class GruWeights:
    """One GRU cell: update and reset gates plus the candidate state."""

    w_update: Parameter
    u_update: Parameter
    b_update: Parameter
    w_reset: Parameter
    u_reset: Parameter
    b_reset: Parameter
    w_cand: Parameter
    u_cand: Parameter
    b_cand: Parameter

    def parameters(self) -> list[Parameter]:
        return [
            self.w_update, self.u_update, self.b_update,
            self.w_reset, self.u_reset, self.b_reset,
            self.w_cand, self.u_cand, self.b_cand,
        ]


@dataclass
class ModelParams:
    """Everything trainable: embedding table plus MLP and GRU weights."""

    table: EmbeddingTable
    emb: Parameter
    inner_mlp: MlpWeights | None = None
    gru: GruWeights | None = None
    cross_mlp: MlpWeights | None = None
    fuse_mlp: MlpWeights | None = None

    @property
    def dim(self) -> int:
        return self.table.dim

    def parameters(self) -> list[Parameter]:
        """Registry order: embeddings, inner MLP, GRU, cross MLP, fuse MLP."""
        out = [self.emb]
        for part in (self.inner_mlp, self.gru, self.cross_mlp, self.fuse_mlp):
            if part is not None:
                out.extend(part.parameters())
        return out

    def copy_values(self) -> list[np.ndarray]:
        return [p.values.copy() for p in self.parameters()]

    def load_values(self, values: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(values) != len(params):
            raise ContractError("parameter count mismatch when restoring values")
        for p, v in zip(params, values):
            if p.values.shape != v.shape:
                raise ContractError("parameter shape mismatch when restoring values")
            p.values[...] = v


def _init_mlp(rng: np.random.Generator, in_dim: int, hidden: int, out_dim: int, tag: str) -> MlpWeights:
    s_in = 1.0 / np.sqrt(in_dim)
    s_hid = 1.0 / np.sqrt(hidden)
    return MlpWeights(
        w_in=Parameter(rng.uniform(-s_in, s_in, size=(in_dim, hidden)), f"{tag}.w_in"),
        b_hidden=Parameter(np.zeros(hidden), f"{tag}.b_hidden"),
        w_out=Parameter(rng.uniform(-s_hid, s_hid, size=(hidden, out_dim)), f"{tag}.w_out"),
        b_out=Parameter(np.zeros(out_dim), f"{tag}.b_out"),
    )


def _copy_mlp(src: MlpWeights, tag: str) -> MlpWeights:
    return MlpWeights(
        w_in=Parameter(src.w_in.values.copy(), f"{tag}.w_in"),
        b_hidden=Parameter(src.b_hidden.values.copy(), f"{tag}.b_hidden"),
        w_out=Parameter(src.w_out.values.copy(), f"{tag}.w_out"),
        b_out=Parameter(src.b_out.values.copy(), f"{tag}.b_out"),
    )


def _init_gru(rng: np.random.Generator, dim: int) -> GruWeights:
    s = 1.0 / np.sqrt(dim)

    def mat(name):
        return Parameter(rng.uniform(-s, s, size=(dim, dim)), name)

    def vec(name):
        return Parameter(np.zeros(dim), name)

    return GruWeights(
        w_update=mat("gru.w_update"), u_update=mat("gru.u_update"), b_update=vec("gru.b_update"),
        w_reset=mat("gru.w_reset"), u_reset=mat("gru.u_reset"), b_reset=vec("gru.b_reset"),
        w_cand=mat("gru.w_cand"), u_cand=mat("gru.u_cand"), b_cand=vec("gru.b_cand"),
    )


def init_model_params(
    universe,
    dim: int,
    seed: int,
    variant: VariantConfig = CANONICAL,
) -> ModelParams:
    """Seeded init. Embeddings are uniform on +-1/sqrt(dim); weight matrices
    uniform on +-1/sqrt(fan_in); biases zero. A separate cross MLP starts as
    an exact copy of the inner MLP, so shared and separate coincide at step 0.
    """
    table = init_embeddings(universe, dim, seed)
    emb = Parameter(table.matrix, "embeddings")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    mp = ModelParams(table=table, emb=emb)
    needs_inner = variant.mode == "graph" and (variant.inner == "mlp" or variant.cross in ("mlp_shared", "mlp_separate"))
    if needs_inner:
        mp.inner_mlp = _init_mlp(rng, 2 * dim, 4 * dim, dim, "inner_mlp")
    if variant.mode != "fm" and variant.fuse == "gru":
        mp.gru = _init_gru(rng, dim)
    if variant.mode == "graph" and variant.cross == "mlp_separate":
        mp.cross_mlp = _copy_mlp(mp.inner_mlp, "cross_mlp")
    if variant.mode != "fm" and variant.fuse == "mlp":
        mp.fuse_mlp = _init_mlp(rng, 3 * dim, 4 * dim, dim, "fuse_mlp")
    return mp


# --------------------------------------------------------------------------
# Stacked-batch index plan
# --------------------------------------------------------------------------


@dataclass
class _SegIndex:
    """Sorted segment ids with precomputed run boundaries."""

    ids: np.ndarray
    starts: np.ndarray
    out_rows: np.ndarray
    n: int

    @classmethod
    def build(cls, ids: np.ndarray, n: int) -> "_SegIndex":
        starts, out_rows = segment_boundaries(ids)
        return cls(ids=ids, starts=starts, out_rows=out_rows, n=n)


@dataclass
class _Plan:
    n_samples: int
    n_nodes: int
    n_sides: int
    attr_rows: np.ndarray  # (n_nodes,) embedding rows
    vals: np.ndarray  # (n_nodes,)
    by_side: _SegIndex  # node -> side segment (2*b user, 2*b+1 item)
    by_sample: _SegIndex  # node -> sample
    opp_seg: np.ndarray  # (n_nodes,) opposite side segment per node
    user_seg: np.ndarray  # (n_samples,)
    item_seg: np.ndarray  # (n_samples,)
    pair_a: np.ndarray  # same-side ordered pairs: first element
    pair_b: np.ndarray
    by_pair_target: _SegIndex  # pair -> target node, sorted
    cross_a: np.ndarray  # cross pairs, only filled for MLP cross kinds
    cross_b: np.ndarray
    by_cross_target: _SegIndex
    sort_user: list[np.ndarray] = field(default_factory=list)  # input order -> sorted rank
    sort_item: list[np.ndarray] = field(default_factory=list)


def _sorted_order(chars: tuple[AttributeValuePair, ...]) -> np.ndarray:
    ids = np.array([p.att.id for p in chars])
    return np.argsort(ids, kind="stable")


def build_plan(samples, table: EmbeddingTable, variant: VariantConfig = CANONICAL) -> _Plan:
    need_cross_pairs = variant.mode == "graph" and variant.cross in ("mlp_shared", "mlp_separate")
    need_inner_pairs = variant.mode == "graph"
    attr_rows, vals = [], []
    node_side_seg, node_sample_seg, opp_seg = [], [], []
    user_seg, item_seg = [], []
    pair_a, pair_b, pair_seg = [], [], []
    cross_a, cross_b, cross_seg = [], [], []
    sort_user, sort_item = [], []
    base = 0
    for b, sample in enumerate(samples):
        order_u = _sorted_order(sample.user_chars)
        order_i = _sorted_order(sample.item_chars)
        sort_user.append(order_u)
        sort_item.append(order_i)
        p, q = len(order_u), len(order_i)
        base_u, base_i = base, base + p
        for k in order_u:
            pair = sample.user_chars[k]
            attr_rows.append(table.row(pair.att))
            vals.append(pair.val)
        for k in order_i:
            pair = sample.item_chars[k]
            attr_rows.append(table.row(pair.att))
            vals.append(pair.val)
        node_side_seg.extend([2 * b] * p + [2 * b + 1] * q)
        node_sample_seg.extend([b] * (p + q))
        opp_seg.extend([2 * b + 1] * p + [2 * b] * q)
        user_seg.append(2 * b)
        item_seg.append(2 * b + 1)
        if need_inner_pairs:
            for side_base, count in ((base_u, p), (base_i, q)):
                for i in range(count):
                    for j in range(count):
                        if i != j:
                            pair_a.append(side_base + i)
                            pair_b.append(side_base + j)
                            pair_seg.append(side_base + i)
        if need_cross_pairs:
            for i in range(p):
                for j in range(q):
                    cross_a.append(base_u + i)
                    cross_b.append(base_i + j)
                    cross_seg.append(base_u + i)
            for j in range(q):
                for i in range(p):
                    cross_a.append(base_i + j)
                    cross_b.append(base_u + i)
                    cross_seg.append(base_i + j)
        base += p + q
    as_idx = lambda xs: np.asarray(xs, dtype=np.intp)
    n_samples = len(user_seg)
    return _Plan(
        n_samples=n_samples,
        n_nodes=base,
        n_sides=2 * n_samples,
        attr_rows=as_idx(attr_rows),
        vals=np.asarray(vals, dtype=np.float64),
        by_side=_SegIndex.build(as_idx(node_side_seg), 2 * n_samples),
        by_sample=_SegIndex.build(as_idx(node_sample_seg), n_samples),
        opp_seg=as_idx(opp_seg),
        user_seg=as_idx(user_seg),
        item_seg=as_idx(item_seg),
        pair_a=as_idx(pair_a),
        pair_b=as_idx(pair_b),
        by_pair_target=_SegIndex.build(as_idx(pair_seg), base),
        cross_a=as_idx(cross_a),
        cross_b=as_idx(cross_b),
        by_cross_target=_SegIndex.build(as_idx(cross_seg), base),
        sort_user=sort_user,
        sort_item=sort_item,
    )


# --------------------------------------------------------------------------
# Engine
# --------------------------------------------------------------------------


@dataclass
class _EngineOut:
    nodes: Value  # (n_nodes, d) representations u
    messages: Value  # (n_nodes, d) z
    matches: Value  # (n_nodes, d) s
    fused: Value  # (n_nodes, d) u'
    user_repr: Value  # (n_samples, d)
    item_repr: Value  # (n_samples, d)
    scores: Value  # (n_samples,)


def _mlp_apply(tape: Tape, w: MlpWeights, x: Value, row_local: bool) -> Value:
    hidden = tape.relu(tape.add_rowvec(tape.matmul(x, tape.param(w.w_in), row_local), tape.param(w.b_hidden)))
    return tape.add_rowvec(tape.matmul(hidden, tape.param(w.w_out), row_local), tape.param(w.b_out))


def _gru_sequence(tape: Tape, w: GruWeights, steps: list[Value], row_local: bool) -> Value:
    """Run the GRU over the step inputs from a zero hidden state.

    Gate equations, per row:
      update = sigmoid(x W_z + h U_z + b_z)
      reset  = sigmoid(x W_r + h U_r + b_r)
      cand   = tanh(x W_h + (reset * h) U_h + b_h)
      h'     = (1 - update) * h + update * cand
    The first step is specialized for h = 0, where the reset gate has no
    effect and h' reduces to update * cand.
    """
    first = steps[0]
    w_update, u_update, b_update = tape.param(w.w_update), tape.param(w.u_update), tape.param(w.b_update)
    w_reset, u_reset, b_reset = tape.param(w.w_reset), tape.param(w.u_reset), tape.param(w.b_reset)
    w_cand, u_cand, b_cand = tape.param(w.w_cand), tape.param(w.u_cand), tape.param(w.b_cand)
    update = tape.sigmoid(tape.add_rowvec(tape.matmul(first, w_update, row_local), b_update))
    cand = tape.tanh(tape.add_rowvec(tape.matmul(first, w_cand, row_local), b_cand))
    h = tape.mul(update, cand)
    ones = tape.constant(np.ones(first.data.shape))
    for x in steps[1:]:
        update = tape.sigmoid(
            tape.add_rowvec(
                tape.add(tape.matmul(x, w_update, row_local), tape.matmul(h, u_update, row_local)),
                b_update,
            )
        )
        reset = tape.sigmoid(
            tape.add_rowvec(
                tape.add(tape.matmul(x, w_reset, row_local), tape.matmul(h, u_reset, row_local)),
                b_reset,
            )
        )
        cand = tape.tanh(
            tape.add_rowvec(
                tape.add(
                    tape.matmul(x, w_cand, row_local),
                    tape.matmul(tape.mul(reset, h), u_cand, row_local),
                ),
                b_cand,
            )
        )
        h = tape.add(tape.mul(tape.sub(ones, update), h), tape.mul(update, cand))
    return h


def _segsum(tape: Tape, m: Value, seg: _SegIndex) -> Value:
    return tape.segment_sum_prepared(m, seg.ids, seg.starts, seg.out_rows, seg.n)


def _forward(tape: Tape, plan: _Plan, mp: ModelParams, variant: VariantConfig, row_local: bool) -> _EngineOut:
    d = mp.dim
    emb = tape.param(mp.emb)
    nodes = tape.scale_rows(tape.gather_rows(emb, plan.attr_rows), plan.vals)

    if variant.mode == "graph":
        if plan.pair_a.size:
            first = tape.gather_rows(nodes, plan.pair_a, checked=False)
            second = tape.gather_rows(nodes, plan.pair_b, checked=False)
            if variant.inner == "mlp":
                pair_out = _mlp_apply(tape, mp.inner_mlp, tape.concat_cols(first, second), row_local)
            else:
                pair_out = tape.mul(first, second)
            messages = _segsum(tape, pair_out, plan.by_pair_target)
        else:
            messages = tape.constant(np.zeros((plan.n_nodes, d)))
        if variant.cross == "none":
            matches = tape.constant(np.zeros((plan.n_nodes, d)))
        elif variant.cross == "bi":
            side_sums = _segsum(tape, nodes, plan.by_side)
            matches = tape.mul(nodes, tape.gather_rows(side_sums, plan.opp_seg, checked=False))
        else:
            first = tape.gather_rows(nodes, plan.cross_a, checked=False)
            second = tape.gather_rows(nodes, plan.cross_b, checked=False)
            weights = mp.inner_mlp if variant.cross == "mlp_shared" else mp.cross_mlp
            pair_out = _mlp_apply(tape, weights, tape.concat_cols(first, second), row_local)
            matches = _segsum(tape, pair_out, plan.by_cross_target)
    else:
        # Union wiring: every other node of the same sample, either side,
        # is a cross partner: s_i = u_i * (sum over sample - u_i).
        sample_sums = _segsum(tape, nodes, plan.by_sample)
        others = tape.sub(tape.gather_rows(sample_sums, plan.by_sample.ids, checked=False), nodes)
        matches = tape.mul(nodes, others)
        messages = tape.constant(np.zeros((plan.n_nodes, d)))

    if variant.mode == "fm":
        fused = tape.add(nodes, tape.scale(matches, 0.5))
    elif variant.fuse == "gru":
        fused = _gru_sequence(tape, mp.gru, [nodes, messages, matches], row_local)
    elif variant.fuse == "sum":
        fused = tape.add(tape.add(nodes, messages), matches)
    else:
        stacked = tape.concat_cols(tape.concat_cols(nodes, messages), matches)
        fused = _mlp_apply(tape, mp.fuse_mlp, stacked, row_local)

    graph_reprs = _segsum(tape, fused, plan.by_side)
    user_repr = tape.gather_rows(graph_reprs, plan.user_seg, checked=False)
    item_repr = tape.gather_rows(graph_reprs, plan.item_seg, checked=False)
    if variant.mode in ("union", "fm"):
        scores = tape.add(tape.row_sums(user_repr), tape.row_sums(item_repr))
    else:
        scores = tape.rowdot(user_repr, item_repr)
    return _EngineOut(
        nodes=nodes, messages=messages, matches=matches, fused=fused,
        user_repr=user_repr, item_repr=item_repr, scores=scores,
    )


def _forward_plain(plan: _Plan, mp: ModelParams, variant: VariantConfig) -> np.ndarray:
    """Untracked twin of _forward (BLAS path): same formulas on raw arrays.

    Kept in lockstep with _forward; a test asserts bit-identical scores.
    Used for the difference quotients in gradient checking, where the tape
    machinery would only add overhead.
    """
    d = mp.dim

    def segsum(m, seg: _SegIndex):
        out = np.zeros((seg.n, m.shape[1]))
        if seg.ids.size:
            out[seg.out_rows] = np.add.reduceat(m, seg.starts, axis=0)
        return out

    def mlp(w: MlpWeights, x):
        hidden = np.maximum(x @ w.w_in.values + w.b_hidden.values[None, :], 0.0)
        return hidden @ w.w_out.values + w.b_out.values[None, :]

    nodes = mp.emb.values[plan.attr_rows] * plan.vals[:, None]
    if variant.mode == "graph":
        if plan.pair_a.size:
            pair_in = np.concatenate([nodes[plan.pair_a], nodes[plan.pair_b]], axis=1)
            pair_out = mlp(mp.inner_mlp, pair_in) if variant.inner == "mlp" else (
                nodes[plan.pair_a] * nodes[plan.pair_b]
            )
            messages = segsum(pair_out, plan.by_pair_target)
        else:
            messages = np.zeros((plan.n_nodes, d))
        if variant.cross == "none":
            matches = np.zeros((plan.n_nodes, d))
        elif variant.cross == "bi":
            side_sums = segsum(nodes, plan.by_side)
            matches = nodes * side_sums[plan.opp_seg]
        else:
            weights = mp.inner_mlp if variant.cross == "mlp_shared" else mp.cross_mlp
            cross_in = np.concatenate([nodes[plan.cross_a], nodes[plan.cross_b]], axis=1)
            matches = segsum(mlp(weights, cross_in), plan.by_cross_target)
    else:
        sample_sums = segsum(nodes, plan.by_sample)
        matches = nodes * (sample_sums[plan.by_sample.ids] - nodes)
        messages = np.zeros((plan.n_nodes, d))

    if variant.mode == "fm":
        fused = nodes + matches * 0.5
    elif variant.fuse == "gru":
        w = mp.gru
        update = stable_sigmoid(nodes @ w.w_update.values + w.b_update.values[None, :])
        cand = np.tanh(nodes @ w.w_cand.values + w.b_cand.values[None, :])
        h = update * cand
        for x in (messages, matches):
            update = stable_sigmoid(x @ w.w_update.values + h @ w.u_update.values + w.b_update.values[None, :])
            reset = stable_sigmoid(x @ w.w_reset.values + h @ w.u_reset.values + w.b_reset.values[None, :])
            cand = np.tanh(x @ w.w_cand.values + (reset * h) @ w.u_cand.values + w.b_cand.values[None, :])
            h = (1.0 - update) * h + update * cand
        fused = h
    elif variant.fuse == "sum":
        fused = nodes + messages + matches
    else:
        fused = mlp(mp.fuse_mlp, np.concatenate([nodes, messages, matches], axis=1))

    graph_reprs = segsum(fused, plan.by_side)
    user_repr = graph_reprs[plan.user_seg]
    item_repr = graph_reprs[plan.item_seg]
    if variant.mode in ("union", "fm"):
        return user_repr.sum(axis=1) + item_repr.sum(axis=1)
    return (user_repr * item_repr).sum(axis=1)


def score_samples(samples, mp: ModelParams, variant: VariantConfig = CANONICAL, batch_size: int = 2048) -> np.ndarray:
    """Untracked scores, batched; safe to call concurrently over read-only params."""
    out = np.empty(len(samples))
    with no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            plan = build_plan(chunk, mp.table, variant)
            out[start:start + len(chunk)] = _forward(Tape(), plan, mp, variant, row_local=False).scores.data
    return out


# --------------------------------------------------------------------------
# Per-sample prediction with diagnostics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NodeDiagnostics:
    att: AttributeId
    representation: np.ndarray  # u
    message: np.ndarray  # z
    match: np.ndarray  # s
    fused: np.ndarray  # u'


@dataclass(frozen=True)
class ForwardResult:
    user_repr: np.ndarray
    item_repr: np.ndarray
    score: float
    user_nodes: tuple[NodeDiagnostics, ...]
    item_nodes: tuple[NodeDiagnostics, ...]

    @property
    def probability(self) -> float:
        """Sigmoid link from the raw matching score."""
        if self.score >= 0:
            return float(1.0 / (1.0 + np.exp(-self.score)))
        e = np.exp(self.score)
        return float(e / (1.0 + e))


def predict(sample: DataSample, mp: ModelParams, variant: VariantConfig = CANONICAL) -> ForwardResult:
    """Forward one sample, keeping per-node diagnostics.

    Internally nodes are processed in ascending attribute-id order with
    row-local kernels, so the score is bit-identical under any reordering
    of the input attributes and under swapping the user and item roles.
    """
    plan = build_plan([sample], mp.table, variant)
    with no_grad():
        out = _forward(Tape(), plan, mp, variant, row_local=True)
    p = len(sample.user_chars)
    rank_user = np.empty(p, dtype=np.intp)
    rank_user[plan.sort_user[0]] = np.arange(p)
    q = len(sample.item_chars)
    rank_item = np.empty(q, dtype=np.intp)
    rank_item[plan.sort_item[0]] = np.arange(q)

    def diag(att, row):
        return NodeDiagnostics(
            att=att,
            representation=out.nodes.data[row].copy(),
            message=out.messages.data[row].copy(),
            match=out.matches.data[row].copy(),
            fused=out.fused.data[row].copy(),
        )

    user_nodes = tuple(diag(c.att, rank_user[k]) for k, c in enumerate(sample.user_chars))
    item_nodes = tuple(diag(c.att, p + rank_item[k]) for k, c in enumerate(sample.item_chars))
    user_repr = out.user_repr.data[0].copy()
    item_repr = out.item_repr.data[0].copy()
    if variant.mode in ("union", "fm"):
        score = float(out.scores.data[0])
    else:
        score = float(np.dot(user_repr, item_repr))
    return ForwardResult(
        user_repr=user_repr,
        item_repr=item_repr,
        score=score,
        user_nodes=user_nodes,
        item_nodes=item_nodes,
    )


# --------------------------------------------------------------------------
# Spec-level operations on explicit vectors and graphs
# --------------------------------------------------------------------------


def _check_dim(vec: np.ndarray, d: int, what: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (d,):
        raise ShapeError(f"{what}: expected length {d}, got shape {vec.shape}")
    return vec


def inner_message(u_i, u_j, mp: ModelParams) -> np.ndarray:
    """Pair interaction z_ij = MLP(concat(u_i, u_j)); order matters."""
    d = mp.dim
    u_i = _check_dim(u_i, d, "inner_message u_i")
    u_j = _check_dim(u_j, d, "inner_message u_j")
    tape = Tape()
    with no_grad():
        x = tape.constant(np.concatenate([u_i, u_j])[None, :])
        return _mlp_apply(tape, mp.inner_mlp, x, row_local=True).data[0].copy()


def message_pass(graph: AttributeGraph, mp: ModelParams) -> list[np.ndarray]:
    """Per-node sum of pair interactions against every neighbor.

    A single-node graph has an empty neighborhood, so its message is zero.
    """
    vectors = [np.asarray(u, dtype=np.float64) for u in graph.nodes]
    out = []
    for i, u_i in enumerate(vectors):
        z = np.zeros(mp.dim)
        for j, u_j in enumerate(vectors):
            if j != i:
                z = z + inner_message(u_i, u_j, mp)
        out.append(z)
    return out


def node_match(u_i, other_nodes) -> np.ndarray:
    """Aggregated cross matching: sum over opposite nodes of u_i * u_hat_j."""
    others = [np.asarray(u, dtype=np.float64) for u in other_nodes]
    if not others:
        raise ContractError("node_match: opposite node list is empty")
    u_i = np.asarray(u_i, dtype=np.float64)
    s = np.zeros_like(u_i)
    for u_hat in others:
        if u_hat.shape != u_i.shape:
            raise ShapeError(f"node_match: shapes {u_i.shape} vs {u_hat.shape}")
        s = s + u_i * u_hat
    return s


def fuse(u_i, z_i, s_i, mp: ModelParams) -> np.ndarray:
    """GRU over the sequence [u_i, z_i, s_i] from a zero hidden state.

    Runs the same row-local kernel as predict(), so fusing a node alone
    gives exactly the bits it gets inside a full forward pass.
    """
    d = mp.dim
    rows = [
        _check_dim(u_i, d, "fuse u_i")[None, :],
        _check_dim(z_i, d, "fuse z_i")[None, :],
        _check_dim(s_i, d, "fuse s_i")[None, :],
    ]
    tape = Tape()
    with no_grad():
        steps = [tape.constant(r) for r in rows]
        return _gru_sequence(tape, mp.gru, steps, row_local=True).data[0].copy()


def graph_representation(graph: AttributeGraph, opposite_nodes, mp: ModelParams) -> np.ndarray:
    """Sum of fused node representations: composes the three sub-operations."""
    messages = message_pass(graph, mp)
    v = np.zeros(mp.dim)
    for u_i, z_i in zip(graph.nodes, messages):
        s_i = node_match(u_i, opposite_nodes)
        v = v + fuse(u_i, z_i, s_i, mp)
    return v


def swap_roles(sample: DataSample) -> DataSample:
    """The same observation with the user and item sides exchanged.

    Attribute ids keep their embedding rows; only the side tags flip so the
    swapped sample still validates.
    """

    def flip(chars, new_side):
        return tuple(
            AttributeValuePair(AttributeId(p.att.id, new_side), p.val) for p in chars
        )

    return DataSample(
        user_chars=flip(sample.item_chars, "user"),
        item_chars=flip(sample.user_chars, "item"),
        label=sample.label,
    )
