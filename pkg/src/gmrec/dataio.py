"""Dataset file format, synthetic data generation, and checkpoints.

Dataset lines are `<label>\t<user fields>\t<item fields>`. Fields are
space-separated tokens. A token `name=value` with a numeric value is an
attribute `name` carrying that value; any other token (including ones
like `gender=male`, whose value part is not a number) is a categorical
attribute with value 1. Attribute names map to dense integer ids in
first-appearance order; an attribute may appear on one side only.

Checkpoints are a single binary blob: the 8-byte magic "GMCFCKP1", a
fixed header (dim, attribute count, variant string length, counts of MLP
and GRU arrays), the variant string, the attribute vocabulary as
length-prefixed UTF-8 names (each followed by a side byte) in id order,
then every parameter array as little-endian 64-bit floats in registry
order. Loading validates the magic, the counts, and the exact byte size;
a round trip is bit-exact.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Parameter
from .data import (
    ITEM,
    USER,
    AttributeId,
    AttributeValuePair,
    DataSample,
    EmbeddingTable,
    sample_user_key,
)
from .errors import (
    CheckpointError,
    ContractError,
    EmptyDatasetError,
    InvalidConfigError,
    ParseError,
)
from .model import (
    GruWeights,
    MlpWeights,
    ModelParams,
    VariantConfig,
    format_variant,
    parse_variant,
)

MAGIC = b"GMCFCKP1"
_HEADER = struct.Struct("<IIIII")  # dim, n_attrs, variant_len, n_mlp_arrays, n_gru_arrays
_U32 = struct.Struct("<I")


class Vocabulary:
    """Attribute-name interning: names to dense ids, side fixed per name."""

    def __init__(self):
        self.names: list[str] = []
        self.ids: list[AttributeId] = []
        self._by_name: dict[str, AttributeId] = {}

    def __len__(self) -> int:
        return len(self.names)

    def intern(self, name: str, side: str) -> AttributeId:
        att = self._by_name.get(name)
        if att is None:
            att = AttributeId(len(self.names), side)
            self.names.append(name)
            self.ids.append(att)
            self._by_name[name] = att
            return att
        if att.side != side:
            raise ParseError(f"attribute {name!r} used on both sides")
        return att

    def lookup(self, name: str) -> AttributeId | None:
        return self._by_name.get(name)

    def name_of(self, att: AttributeId) -> str:
        return self.names[att.id]

    def resolve(self, names: Iterable[str]) -> list[AttributeId]:
        out = []
        for n in names:
            att = self._by_name.get(n)
            if att is None:
                raise ParseError(f"unknown attribute {n!r}")
            out.append(att)
        return out


@dataclass
class ParseOptions:
    threshold: float | None = None  # ratings above this are positive
    min_positives: int = 0  # drop users with fewer positives


@dataclass
class ParseReport:
    n_lines: int = 0
    n_samples: int = 0
    n_users: int = 0
    n_user_attrs: int = 0
    n_item_attrs: int = 0
    n_dropped_users: int = 0

    def __str__(self) -> str:
        return (
            f"samples={self.n_samples} users={self.n_users} "
            f"user_attrs={self.n_user_attrs} item_attrs={self.n_item_attrs} "
            f"dropped_users={self.n_dropped_users}"
        )


@dataclass
class Dataset:
    samples: list[DataSample]
    vocab: Vocabulary
    report: ParseReport


def _parse_token(token: str) -> tuple[str, float]:
    name, sep, raw = token.partition("=")
    if sep:
        try:
            return name, float(raw)
        except ValueError:
            pass  # non-numeric value: the whole token is a categorical attribute
    return token, 1.0


def _parse_fields(text: str, side: str, vocab: Vocabulary, lineno: int) -> tuple[AttributeValuePair, ...]:
    tokens = text.split()
    if not tokens:
        raise ParseError("empty attribute list", lineno)
    pairs = []
    seen = set()
    for token in tokens:
        name, val = _parse_token(token)
        try:
            att = vocab.intern(name, side)
        except ParseError as exc:
            raise ParseError(str(exc), lineno) from None
        if att.id in seen:
            raise ParseError(f"duplicate attribute {name!r} on the {side} side", lineno)
        seen.add(att.id)
        pairs.append(AttributeValuePair(att, val))
    return tuple(pairs)


def parse_dataset_lines(
    lines: Iterable[str],
    options: ParseOptions | None = None,
    vocab: Vocabulary | None = None,
) -> Dataset:
    """Parse dataset lines; a pre-existing vocabulary (e.g. from a
    checkpoint) keeps attribute ids aligned with it."""
    options = options or ParseOptions()
    vocab = vocab if vocab is not None else Vocabulary()
    samples: list[DataSample] = []
    report = ParseReport()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        report.n_lines += 1
        parts = line.split("\t")
        if len(parts) != 3:
            raise ParseError(f"expected 3 tab-separated columns, got {len(parts)}", lineno)
        label_text, user_text, item_text = parts
        try:
            raw_label = float(label_text)
        except ValueError:
            raise ParseError(f"bad label {label_text!r}", lineno) from None
        if options.threshold is not None:
            label = 1.0 if raw_label > options.threshold else 0.0
        else:
            if raw_label not in (0.0, 1.0):
                raise ParseError(f"label must be 0 or 1, got {label_text!r}", lineno)
            label = raw_label
        user_chars = _parse_fields(user_text, USER, vocab, lineno)
        item_chars = _parse_fields(item_text, ITEM, vocab, lineno)
        try:
            samples.append(DataSample(user_chars, item_chars, label))
        except ContractError as exc:
            raise ParseError(str(exc), lineno) from None
    if options.min_positives > 0:
        positives: dict = {}
        for s in samples:
            if s.label == 1.0:
                key = sample_user_key(s)
                positives[key] = positives.get(key, 0) + 1
        keys_before = {sample_user_key(s) for s in samples}
        samples = [
            s for s in samples if positives.get(sample_user_key(s), 0) >= options.min_positives
        ]
        keys_after = {sample_user_key(s) for s in samples}
        report.n_dropped_users = len(keys_before) - len(keys_after)
    if not samples:
        raise EmptyDatasetError("no usable samples after parsing and filtering")
    report.n_samples = len(samples)
    report.n_users = len({sample_user_key(s) for s in samples})
    report.n_user_attrs = sum(1 for a in vocab.ids if a.side == USER)
    report.n_item_attrs = sum(1 for a in vocab.ids if a.side == ITEM)
    return Dataset(samples=samples, vocab=vocab, report=report)


def parse_dataset(
    path: str,
    options: ParseOptions | None = None,
    vocab: Vocabulary | None = None,
) -> Dataset:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_dataset_lines(handle, options, vocab)


def _format_value(val: float) -> str:
    return repr(int(val)) if float(val).is_integer() else repr(float(val))


def serialize_sample(sample: DataSample, vocab: Vocabulary) -> str:
    def fields(chars):
        out = []
        for p in chars:
            name = vocab.name_of(p.att)
            out.append(name if p.val == 1.0 else f"{name}={_format_value(p.val)}")
        return " ".join(out)

    return f"{int(sample.label)}\t{fields(sample.user_chars)}\t{fields(sample.item_chars)}"


def serialize_dataset(samples: Sequence[DataSample], vocab: Vocabulary) -> str:
    return "\n".join(serialize_sample(s, vocab) for s in samples) + "\n"


# --------------------------------------------------------------------------
# Synthetic data with a planted rule
# --------------------------------------------------------------------------


@dataclass
class SynthSpec:
    """Planted-rule generator configuration.

    The label of a (user, item) pair is decided by a score combining an
    inner term (an XOR-like product of per-value signs over the user's two
    categorical attributes) and a cross term (an affinity table between the
    user's first attribute and the item's attribute):

        rule "xor_cross": score = sign_a[a(u)] * sign_b[b(u)] * T[a(u), c(i)]
        rule "cross":     score = T[a(u), c(i)]
        rule "random":    labels are fair coin flips

    With probability `noise` a label is replaced by a fair coin flip. The
    `attrs` field controls which sides' attributes are written out; ids are
    always written, and the sampled pairs and labels do not depend on it.
    """

    users: int = 200
    items: int = 120
    samples: int = 4000
    rule: str = "xor_cross"
    user_attr_card: int = 12  # cardinality of attribute a, indexes the table rows
    second_user_attr_card: int = 8  # cardinality of attribute b, carries the XOR sign
    item_attr_card: int = 12  # cardinality of attribute c, indexes the table columns
    affinity_rank: int | None = None  # None: full-rank gaussian table
    noise: float = 0.0
    attrs: str = "both"  # both | user | item | none
    ids: bool = True  # emit uid/iid columns; required for the attrs regimes
    seed: int = 0

    def __post_init__(self):
        if min(self.users, self.items, self.samples) < 1:
            raise ContractError("synthetic spec sizes must be positive")
        if self.rule not in ("xor_cross", "cross", "random"):
            raise ContractError(f"unknown rule {self.rule!r}")
        if self.attrs not in ("both", "user", "item", "none"):
            raise ContractError(f"unknown attrs mode {self.attrs!r}")
        if not self.ids and self.attrs != "both":
            raise ContractError("dropping id columns requires attrs=both")
        if not 0.0 <= self.noise <= 1.0:
            raise ContractError("noise must be in [0, 1]")


def generate_synthetic(spec: SynthSpec) -> tuple[str, dict]:
    """Dataset text plus a sidecar describing the planted rule.

    Deterministic in the seed; the same seed with a different `attrs` mode
    yields the same pairs and labels with other columns hidden.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 3]))
    user_a = rng.integers(0, spec.user_attr_card, size=spec.users)
    user_b = rng.integers(0, spec.second_user_attr_card, size=spec.users)
    item_c = rng.integers(0, spec.item_attr_card, size=spec.items)

    def balanced_signs(k):
        signs = np.ones(k)
        signs[: k // 2] = -1.0
        rng.shuffle(signs)
        return signs

    sign_a = balanced_signs(spec.user_attr_card)
    sign_b = balanced_signs(spec.second_user_attr_card)
    if spec.affinity_rank is None:
        table = rng.normal(size=(spec.user_attr_card, spec.item_attr_card))
    else:
        rank = spec.affinity_rank
        left = rng.normal(size=(spec.user_attr_card, rank))
        right = rng.normal(size=(rank, spec.item_attr_card))
        table = left @ right / np.sqrt(rank)
    if spec.rule == "xor_cross":
        # Strip every additive shortcut to the XOR-modulated rule: remove the
        # sign-aligned component of each table column and center rows, so all
        # pairwise marginals of the label vanish and only the genuine
        # three-way composition carries signal.
        for _ in range(3):
            table = table - sign_a[:, None] * (sign_a @ table)[None, :] / len(sign_a)
            table = table - table.mean(axis=1, keepdims=True)
    table = table - np.median(table)

    per_user = max(1, spec.samples // spec.users)
    per_user = min(per_user, spec.items)
    lines = []
    for u in range(spec.users):
        items = np.sort(rng.choice(spec.items, size=per_user, replace=False))
        coins = rng.random(size=per_user)
        flips = rng.random(size=per_user)
        for item, coin, flip in zip(items, coins, flips):
            if spec.rule == "xor_cross":
                score = sign_a[user_a[u]] * sign_b[user_b[u]] * table[user_a[u], item_c[item]]
                label = 1 if score > 0 else 0
            elif spec.rule == "cross":
                score = table[user_a[u], item_c[item]]
                label = 1 if score > 0 else 0
            else:
                label = 1 if coin < 0.5 else 0
            if spec.noise > 0 and flip < spec.noise:
                label = 1 if coin < 0.5 else 0
            user_fields = [f"uid=u{u}"] if spec.ids else []
            if spec.attrs in ("both", "user"):
                user_fields += [f"ua=c{user_a[u]}", f"ub=c{user_b[u]}"]
            item_fields = [f"iid=i{item}"] if spec.ids else []
            if spec.attrs in ("both", "item"):
                item_fields.append(f"ic=c{item_c[item]}")
            lines.append(f"{label}\t{' '.join(user_fields)}\t{' '.join(item_fields)}")
    sidecar = {
        "spec": asdict(spec),
        "sign_a": sign_a.tolist(),
        "sign_b": sign_b.tolist(),
        "affinity_table": table.tolist(),
        "user_a": user_a.tolist(),
        "user_b": user_b.tolist(),
        "item_c": item_c.tolist(),
    }
    return "\n".join(lines) + "\n", sidecar


def write_synthetic(spec: SynthSpec, path: str) -> dict:
    text, sidecar = generate_synthetic(spec)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(text)
    with open(path + ".rule.json", "w", encoding="utf-8") as handle:
        json.dump(sidecar, handle, indent=2)
    return sidecar


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def _component_arrays(mp: ModelParams) -> tuple[int, int]:
    n_mlp = sum(4 for part in (mp.inner_mlp, mp.cross_mlp, mp.fuse_mlp) if part is not None)
    n_gru = 9 if mp.gru is not None else 0
    return n_mlp, n_gru


def save_checkpoint(mp: ModelParams, variant: VariantConfig, path: str, vocab: Vocabulary) -> None:
    variant_bytes = format_variant(variant).encode("utf-8")
    if len(vocab) != len(mp.table.ids):
        raise CheckpointError("vocabulary size does not match the embedding table")
    needs = _expected_components(variant)
    actual = (
        mp.inner_mlp is not None,
        mp.gru is not None,
        mp.cross_mlp is not None,
        mp.fuse_mlp is not None,
    )
    if needs != actual:
        raise CheckpointError("model components do not match the declared variant")
    n_mlp, n_gru = _component_arrays(mp)
    blob = bytearray()
    blob += MAGIC
    blob += _HEADER.pack(mp.dim, len(vocab), len(variant_bytes), n_mlp, n_gru)
    blob += variant_bytes
    for name, att in zip(vocab.names, vocab.ids):
        encoded = name.encode("utf-8")
        blob += _U32.pack(len(encoded))
        blob += encoded
        blob += b"\x00" if att.side == USER else b"\x01"
    for p in mp.parameters():
        blob += np.ascontiguousarray(p.values, dtype="<f8").tobytes()
    with open(path, "wb") as handle:
        handle.write(bytes(blob))


def _expected_components(variant: VariantConfig) -> tuple[bool, bool, bool, bool]:
    needs_inner = variant.mode == "graph" and (
        variant.inner == "mlp" or variant.cross in ("mlp_shared", "mlp_separate")
    )
    needs_gru = variant.mode != "fm" and variant.fuse == "gru"
    needs_cross = variant.mode == "graph" and variant.cross == "mlp_separate"
    needs_fuse = variant.mode != "fm" and variant.fuse == "mlp"
    return needs_inner, needs_gru, needs_cross, needs_fuse


def _mlp_shapes(in_dim: int, hidden: int, out_dim: int):
    return [(in_dim, hidden), (hidden,), (hidden, out_dim), (out_dim,)]


def load_checkpoint(path: str) -> tuple[ModelParams, VariantConfig, Vocabulary]:
    with open(path, "rb") as handle:
        blob = handle.read()
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        if blob[:7] == MAGIC[:7]:
            raise CheckpointError(
                f"unsupported checkpoint version {blob[7:8]!r}; this build reads version 1"
            )
        raise CheckpointError("unsupported format: bad magic")
    offset = len(MAGIC)
    if len(blob) < offset + _HEADER.size:
        raise CheckpointError("truncated checkpoint: header missing")
    dim, n_attrs, variant_len, n_mlp, n_gru = _HEADER.unpack_from(blob, offset)
    offset += _HEADER.size
    if len(blob) < offset + variant_len:
        raise CheckpointError("truncated checkpoint: variant string missing")
    try:
        variant = parse_variant(blob[offset:offset + variant_len].decode("utf-8"))
    except (UnicodeDecodeError, InvalidConfigError) as exc:
        raise CheckpointError(f"corrupt variant string: {exc}") from None
    offset += variant_len
    vocab = Vocabulary()
    for _ in range(n_attrs):
        if len(blob) < offset + _U32.size:
            raise CheckpointError("truncated checkpoint: vocabulary missing")
        (name_len,) = _U32.unpack_from(blob, offset)
        offset += _U32.size
        if len(blob) < offset + name_len + 1:
            raise CheckpointError("truncated checkpoint: vocabulary missing")
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        side = USER if blob[offset] == 0 else ITEM
        offset += 1
        vocab.intern(name, side)

    needs_inner, needs_gru, needs_cross, needs_fuse = _expected_components(variant)
    shapes: list[tuple] = [(n_attrs, dim)]
    if needs_inner:
        shapes += _mlp_shapes(2 * dim, 4 * dim, dim)
    if needs_gru:
        shapes += [(dim, dim), (dim, dim), (dim,)] * 3
    if needs_cross:
        shapes += _mlp_shapes(2 * dim, 4 * dim, dim)
    if needs_fuse:
        shapes += _mlp_shapes(3 * dim, 4 * dim, dim)
    expected_mlp = 4 * (int(needs_inner) + int(needs_cross) + int(needs_fuse))
    expected_gru = 9 if needs_gru else 0
    if (n_mlp, n_gru) != (expected_mlp, expected_gru):
        raise CheckpointError(
            f"array counts ({n_mlp} MLP, {n_gru} GRU) do not match variant {format_variant(variant)!r}"
        )
    payload = len(blob) - offset
    expected_payload = 8 * sum(int(np.prod(s)) for s in shapes)
    if payload != expected_payload:
        raise CheckpointError(
            f"payload size mismatch: {payload} bytes, expected {expected_payload}"
        )
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        arrays.append(arr.copy())  # frombuffer views are read-only; params must stay trainable
        offset += 8 * count
    table = EmbeddingTable(dim=dim, ids=tuple(vocab.ids), matrix=arrays[0])
    mp = ModelParams(table=table, emb=Parameter(table.matrix, "embeddings"))
    cursor = 1

    def take_mlp(tag: str) -> MlpWeights:
        nonlocal cursor
        w_in, b_hidden, w_out, b_out = arrays[cursor:cursor + 4]
        cursor += 4
        return MlpWeights(
            w_in=Parameter(w_in, f"{tag}.w_in"),
            b_hidden=Parameter(b_hidden, f"{tag}.b_hidden"),
            w_out=Parameter(w_out, f"{tag}.w_out"),
            b_out=Parameter(b_out, f"{tag}.b_out"),
        )

    if needs_inner:
        mp.inner_mlp = take_mlp("inner_mlp")
    if needs_gru:
        names = ("update", "reset", "cand")
        parts = {}
        for gate in names:
            w, u, b = arrays[cursor:cursor + 3]
            cursor += 3
            parts[f"w_{gate}"] = Parameter(w, f"gru.w_{gate}")
            parts[f"u_{gate}"] = Parameter(u, f"gru.u_{gate}")
            parts[f"b_{gate}"] = Parameter(b, f"gru.b_{gate}")
        mp.gru = GruWeights(**parts)
    if needs_cross:
        mp.cross_mlp = take_mlp("cross_mlp")
    if needs_fuse:
        mp.fuse_mlp = take_mlp("fuse_mlp")
    return mp, variant, vocab
