"""Three-image evaluation fixture with APs worked out by hand.

Classes 0 and 1 are seen, class 2 is unseen. Training counts make class 1 rare.

class 0, two GTs (A in image 0, B in image 1), ranked detections:
    0.9 exact A (TP), 0.8 miss (FP), 0.7 exact B (TP), 0.6 duplicate A (FP)
    precision 1, 1/2, 2/3, 1/2 at recall 1/2, 1/2, 1, 1 -> AP = 1/2 + 1/2 * 2/3 = 5/6
class 1, one GT (C in image 1): 0.95 human IoU 0.4 (FP), then 0.5 exact (TP) -> AP 1/2
class 2, one GT (D in image 2), no detections -> AP 0

distance buckets: A, C, D are small (g <= 0.33), B is large.
    small: class 0 keeps d1 TP, d2 FP, d4 FP (unmatched, predicted distance small) -> 1
           class 1 -> 1/2, class 2 -> 0; mean 1/2
    large: class 0 keeps only d3 -> 1; classes 1 and 2 have no large GT; mean 1
"""
from dataclasses import dataclass

from cmdse.evalkit import Detection
from cmdse.matching import GroundTruthHoi
from cmdse.semantics import Vocabulary

SHIFT = 0.9 / 7  # moves a 0.3-wide box so its IoU with the original is exactly 0.4


@dataclass
class Scene:
    image_id: int
    hois: list


VOCAB = Vocabulary(("hold", "kick"), ("cup", "ball"), ((0, 0), (0, 1), (1, 1)), (True, True, False))
TRAIN_COUNTS = [20, 3, 0]

A = GroundTruthHoi((0.3, 0.5, 0.2, 0.2), (0.6, 0.5, 0.2, 0.2), 0, 0, 0)
B = GroundTruthHoi((0.2, 0.2, 0.2, 0.2), (0.9, 0.9, 0.1, 0.1), 0, 0, 0)
C = GroundTruthHoi((0.5, 0.5, 0.3, 0.3), (0.5, 0.8, 0.2, 0.2), 0, 1, 1)
D = GroundTruthHoi((0.4, 0.4, 0.2, 0.2), (0.6, 0.4, 0.2, 0.2), 1, 1, 2)

SCENES = [Scene(0, [A]), Scene(1, [B, C]), Scene(2, [D])]

DETECTIONS = [
    Detection(0, A.b_h, A.b_o, 0, 0.9),
    Detection(1, (0.2, 0.8, 0.2, 0.2), (0.25, 0.8, 0.2, 0.2), 0, 0.8),
    Detection(1, B.b_h, B.b_o, 0, 0.7),
    Detection(0, A.b_h, A.b_o, 0, 0.6),
    Detection(1, (0.5 + SHIFT, 0.5, 0.3, 0.3), C.b_o, 1, 0.95),
    Detection(1, C.b_h, C.b_o, 1, 0.5),
]

EXPECTED_AP = {0: 5 / 6, 1: 0.5, 2: 0.0}
EXPECTED_SPLITS = {"full": 4 / 9, "seen": 2 / 3, "unseen": 0.0, "rare": 0.5, "non_rare": 5 / 6}
EXPECTED_BUCKETS = {"small": 0.5, "large": 1.0}
