"""Score captions with CIDEr-D and drop eval near-duplicates from a corpus."""

import numpy as np

from minipali.eval import cider_per_candidate, cider_score
from minipali.tasks import hamming, near_dedup, phash, random_scene, render_array

refs = [["a red cube near the ring"], ["blue ball with yellow sign"], ["a green kite"]]
cands = ["a red cube near the ring", "a blue ball", "purple hook"]
print("per-candidate (pre-scale):", cider_per_candidate(cands, refs).round(3).tolist())
print("corpus CIDEr x100:", round(100 * cider_score(cands, refs), 2))

corpus = [render_array(random_scene(s), 112) for s in range(20)]
noisy = np.clip(corpus[3].astype(int) + np.random.default_rng(0).integers(-3, 4, corpus[3].shape), 0, 255)
eval_img = noisy.astype(np.uint8)
print("hash distance to its source:", hamming(phash(eval_img), phash(corpus[3])))
kept = near_dedup(corpus, [eval_img], 4)
print(f"kept {len(kept)} of {len(corpus)}; source removed: {not any(k is corpus[3] for k in kept)}")
