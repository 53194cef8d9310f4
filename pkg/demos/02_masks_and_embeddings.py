"""Label embeddings, state tokens, and confidence calibration.

Shows the three state vectors (unknown is pinned to zero), how masked label
embeddings are composed, what the random-mask baseline does, and how the
calibration rule turns a probability vector into a state vector.
"""

import numpy as np

from fedlgt import masking as mk
from fedlgt.embeddings import (
    coarse_from_fine,
    make_state_embeddings,
    synth_embeddings,
    write_embeddings,
)

C, D = 6, 8
labels = synth_embeddings(C, D, seed=1)
states = make_state_embeddings(D, seed=2)

print("label matrix:", labels.num_classes, "x", labels.dim, f"({labels.provenance})")
print("rows are unit norm:", np.allclose(np.linalg.norm(labels.rows, axis=1), 1.0))
print("unknown state is exactly zero:", not states.unknown.any())

# --- composing masked label embeddings ---------------------------------------

y = np.array([1, 0, 1, 0, 0, 1])
known = mk.states_from_targets(y)
composed = mk.compose_masked_embeddings(labels, known, states)
print("\ncomposed row 0 == label + positive state:",
      np.array_equal(composed[0], labels.rows[0] + states.positive))

all_unknown = mk.inference_mask(C)
print("all-unknown composition returns the label matrix exactly:",
      mk.compose_masked_embeddings(labels, all_unknown, states).tobytes() == labels.rows.tobytes())

# --- the random-mask baseline -------------------------------------------------

masked = mk.random_label_mask(y, (0.5, 0.5), rng=3)
print("\nrandom mask with f=0.5 hides", int((masked == mk.UNKNOWN).sum()), "of", C, "classes")

# --- confidence calibration ----------------------------------------------------

cfg = mk.CalibrationConfig(tau=0.5, epsilon=0.02)
probs = np.array([0.03, 0.49, 0.52, 0.97, 0.479, 0.521])  # 0.52 inclusive, 0.521 not
calibrated = mk.calibrate_states(probs, known, cfg)
for c in range(C):
    tag = {mk.UNKNOWN: "unknown", mk.POSITIVE: "positive", mk.NEGATIVE: "negative"}[int(calibrated[c])]
    band = "in band " if 0.48 <= probs[c] <= 0.52 else "confident"
    print(f"class {c}: p={probs[c]:.3f} ({band}) -> {tag}")

# --- coarse classes by averaging fine rows -------------------------------------

coarse = coarse_from_fine(labels, {"first_half": [0, 1, 2], "second_half": [3, 4, 5]})
print("\ncoarse matrix:", coarse.names, "provenance:", coarse.provenance)

write_embeddings("/tmp/demo_labels.ule", labels, states)
print("wrote /tmp/demo_labels.ule (ULE1 format, round-trips bit-exactly)")
