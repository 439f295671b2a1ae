"""
Refining detector counts with an LLM
====================================

Frames that look suspicious (low confidence, empty or single-person, or a
sudden spike) are sent to a language model in batches. Its answer replaces
the detector count only when it is more confident by a margin.

The demo uses the scripted in-process mock so it runs offline. Point
``OCCTOOL_LLM_URL`` at a real endpoint and swap in ``HttpLLMClient`` to
use an actual model.
"""

from occtool.ingest import Detection, FrameObservation
from occtool.refinement import MockLLMClient, RefinementConfig, refine_series, select_frames_for_review


def frame(i, scores):
    dets = tuple(Detection(60.0 * j, 0, 40, 100, s) for j, s in enumerate(scores))
    return FrameObservation("demo", i, float(i), dets)


obs = [
    frame(0, [0.9, 0.92]),
    frame(1, [0.55]),              # one low-confidence person
    frame(2, []),                  # nobody detected
    frame(3, [0.9, 0.91]),
    frame(4, [0.75] * 7),          # spike
    frame(5, [0.88, 0.9]),
]

# %%
# Which frames get reviewed, and why?

for item in select_frames_for_review(obs):
    print(f"frame {item.frame_idx}: count {item.count}, mean conf {item.mean_conf:.2f} -> {item.reason}")

# %%
# A scripted model: confident corrections on frames 1 and 4, a hesitant
# one on frame 2.

llm = MockLLMClient({
    "1": {"count": 2, "confidence": 0.85},
    "2": {"count": 1, "confidence": 0.10},
    "4": {"count": 2, "confidence": 0.97},
})
audit = []
refined = refine_series(obs, llm, RefinementConfig(margin=0.15), audit=audit)

for entry in audit:
    verdict = "accepted" if entry["accepted"] else "kept detector"
    print(f"frame {entry['frame']}: detector {entry['c_t']} @ {entry['s_bar_t']:.2f}, "
          f"llm {entry['c_llm']} @ {entry['s_llm']} -> {verdict}")

print("refined counts:", [s.count for s in refined])

# %%
# If the endpoint fails, every frame keeps its detector value.

fallback = refine_series(obs, MockLLMClient("fail"))
print("fallback counts:", [s.count for s in fallback])
