"""Cold items and a renamed domain, served by the shared latent space.

Items the sequence model has never trained on still have text, so the
alignment network can manufacture a stand-in collaborative embedding from
the semantic side. We hold the cold band out of training on purpose, then
compare warm and cold cohorts, and finally evaluate on an isomorphic copy
of the catalog where every id is new.
"""

import numpy as np

from fusionrec.align import (
    build_alignment_dataset,
    init_alignment,
    train_alignment,
    unified_item_embedding,
)
from fusionrec.cf import CfConfig, train_cf
from fusionrec.data import (
    Event,
    InteractionLog,
    build_sequences,
    build_training_instances,
    filter_dataset,
    leave_one_out_split,
    partition_cold_warm,
)
from fusionrec.evaluate import (
    RecommendationPipeline,
    cold_warm_report,
    render_metric_table,
    zero_shot_eval,
)
from fusionrec.semantic import embed_catalog
from fusionrec.synthetic import make_planted_dataset, make_zero_shot_variant


def as_log(dataset):
    return InteractionLog(
        users={u for u, _, _, _ in dataset.events},
        items={i for _, i, _, _ in dataset.events},
        events=[Event(u, i, t, r) for u, i, t, r in dataset.events],
        catalog=dataset.catalog,
    )


planted = make_planted_dataset(n_users=120, n_items=60, seed=0, n_cold_users=36)
filtered = filter_dataset(as_log(planted), min_user_events=5, min_item_popularity=1)
split = leave_one_out_split(build_sequences(filtered))
partition = partition_cold_warm(filtered, fraction=0.35)
print(f"{len(split.train)} users; {len(partition.cold)} cold items, "
      f"{len(partition.warm)} warm items")

# --- train the backbone with the cold band withheld ---
rng = np.random.default_rng(1)
instances = build_training_instances(split, negatives_per_positive=1, rng=rng)
kept = [inst for inst in instances
        if inst.candidate not in partition.cold
        and not any(item in partition.cold for item in inst.history)]
model = train_cf(kept, CfConfig(epochs=12), rng)
in_vocab = sum(model.has_item(item) for item in partition.cold)
print(f"kept {len(kept)}/{len(instances)} instances; "
      f"{in_vocab}/{len(partition.cold)} cold items leaked into the vocabulary")

# --- align the collaborative and semantic spaces ---
semantic_map = embed_catalog(planted.catalog)
rng2 = np.random.default_rng(2)
examples = build_alignment_dataset(model, split, semantic_map, rng=rng2, negatives_per_user=0)
net = init_alignment(50, 768, 128, 0.5, 0.2, rng=rng2)
train_alignment(net, examples, epochs=300, batch_size=16, learning_rate=1e-3,
                rng=rng2, optimizer="adam")
print(f"alignment loss {net.training_log[0]:.2f} -> {net.training_log[-1]:.2f}")

# --- a cold item still gets an embedding, just via the other door ---
cold_item = sorted(partition.cold)[0]
embedding = unified_item_embedding(net, cold_item, model, semantic_map)
print(f"\n{cold_item} ({planted.catalog[cold_item][0]!r}) -> {embedding.source}, "
      f"norm {np.linalg.norm(embedding.vector):.3f}")

# --- cohort comparison and the renamed domain ---
pipeline = RecommendationPipeline(cf_model=model, alignment=net, semantic_map=semantic_map)
comparison = cold_warm_report(pipeline, split, partition, ks=[5, 10],
                              candidate_pool_size=59, seed=3)

variant = make_zero_shot_variant(planted)
zs_filtered = filter_dataset(as_log(variant), min_user_events=5, min_item_popularity=1)
zs_split = leave_one_out_split(build_sequences(zs_filtered))
zs_report = zero_shot_eval(pipeline, zs_split, embed_catalog(variant.catalog),
                           ks=[5, 10], candidate_pool_size=59, seed=3)
print()
print(render_metric_table([comparison.warm, comparison.cold, zs_report]), end="")
print("\nevery zero-shot lookup went through the semantic path; the run "
      "would have failed otherwise")
