#!/usr/bin/env python3
"""Record prune/serialize contract fixtures from the Python implementation.

The browser preview must produce byte-identical pruned SGL for the same
inputs; these cases pin that down. Rerun after any change to the canonical
serialization and commit the refreshed JSON:

    python3 scripts/make-prune-fixtures.py > fixtures/prune-cases.json
"""

import json
import random
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "src"))

from sadforge.sgl import ObjectNode, Relation, SceneGraph, prune, serialize_sgl  # noqa: E402

LABELS = ["chair", "table", "shelf", "lamp", "sofa", "plant", "mug", "desk", "window sill"]
ATTRIBUTES = ["wooden", "small", "white", "metal", "open", "dusty"]
PREDICATES = ["under", "on top of", "next to", "behind", "attached to"]


def random_case(rng: random.Random, name: str) -> dict:
    n_obj = rng.randint(2, 8)
    ids = rng.sample(range(1, 40), n_obj)
    objects = [
        ObjectNode.normalized(rng.choice(LABELS), obj_id, rng.sample(ATTRIBUTES, rng.randint(0, 3)))
        for obj_id in ids
    ]
    by_id = {o.id: o for o in objects}
    relations = []
    for rel_id in rng.sample(range(1, 30), rng.randint(0, min(8, n_obj * 2))):
        subj, obj = rng.sample(ids, 2)
        relations.append(
            Relation.normalized(
                rel_id, by_id[subj].label, subj, rng.choice(PREDICATES), by_id[obj].label, obj
            )
        )
    graph = SceneGraph.build(objects, relations)
    kept = sorted(rng.sample(ids, rng.randint(1, n_obj)))
    degree = graph.relation_degree()
    return {
        "name": name,
        "objects": [
            {
                "id": node.id,
                "label": node.label,
                "attributes": list(node.attributes),
                "relation_count": degree.get(node.id, 0),
                "proposed": node.id in kept,
            }
            for node in graph.objects
        ],
        "relations": [
            {
                "id": rel.id,
                "subject_id": rel.subject_id,
                "predicate": rel.predicate,
                "object_id": rel.object_id,
            }
            for rel in graph.relations
        ],
        "kept_ids": kept,
        "full_sgl": serialize_sgl(graph),
        "pruned_sgl": serialize_sgl(prune(graph, kept)),
    }


def main() -> None:
    rng = random.Random(20250825)
    cases = [random_case(rng, f"case-{i:02d}") for i in range(20)]
    json.dump(cases, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
