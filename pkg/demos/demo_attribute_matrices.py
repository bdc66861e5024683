"""After training, inspect attribute similarities and cross-side preferences.

The first grid holds cosine similarities between trained embeddings of one
attribute group; the second holds node-matching strengths (summed
elementwise products) between a user group and an item group, the same
quantity the model aggregates when matching graphs.

Run: python demos/demo_attribute_matrices.py
"""
from gmrec import (
    SynthSpec,
    TrainConfig,
    export_matrices,
    format_matrix,
    generate_synthetic,
    parse_dataset_lines,
    split_per_user,
    train,
)

text, _ = generate_synthetic(
    SynthSpec(users=120, items=80, samples=2400, rule="cross", affinity_rank=2,
              user_attr_card=6, item_attr_card=6, noise=0.0, seed=8)
)
dataset = parse_dataset_lines(text.splitlines())
split = split_per_user(dataset.samples, seed=0)
config = TrainConfig(dim=16, learning_rate=3e-3, epochs=15, batch_size=128, seed=0)
result = train(split, config)

user_group = dataset.vocab.resolve([f"ua=c{k}" for k in range(6)])
item_group = dataset.vocab.resolve([f"ic=c{k}" for k in range(6)])

sim, match = export_matrices(result.params.table, user_group, user_group + item_group)
labels_u = [dataset.vocab.name_of(a) for a in user_group]
labels_all = [dataset.vocab.name_of(a) for a in user_group + item_group]
print(format_matrix(sim, labels_u, labels_u, "cosine similarity between user attribute values"))
print(format_matrix(match[:, len(user_group):], labels_u, labels_all[len(user_group):],
                    "matching strength: user attribute value x item attribute value"))
