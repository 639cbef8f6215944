"""
Tracking by assignment
======================

Detections in consecutive frames are linked by a one-to-one assignment that
maximizes total box IoU, where every current detection may also take a
"no match" option. Matches at or below the IoU gate start new tracks.
"""

import numpy as np

from meshtrace.metrics import Detection
from meshtrace.tracker import score_matrix, solve_assignment, track_clip

# %%
# Two objects moving right, a third appearing in frame 2.
def frame(t):
    dets = [Detection((10 + 4 * t, 10, 40 + 4 * t, 40), 0),
            Detection((60 + 3 * t, 50, 90 + 3 * t, 90), 1)]
    if t >= 2:
        dets.append(Detection((5, 70, 25, 95), 0))
    return dets

frames = [frame(t) for t in range(5)]
# Pairs of different classes score -1, so they never beat the no-match option.
scores = score_matrix(frames[2], frames[1])
print("IoU scores frame 2 vs 1:\n", np.round(scores, 3))
a = solve_assignment(scores)
print("assignment columns:", a.cols, "total:", round(a.total, 3))

# %%
# Whole clip, with a shot transition at frame 3 that resets all ids.
tracked = track_clip(frames, shot_transitions=[3])
for t, row in enumerate(tracked):
    print(t, [d.track_id for d in row])
