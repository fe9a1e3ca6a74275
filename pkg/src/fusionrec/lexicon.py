"""Fixed signed word list used for sentence-polarity scoring.

Small on purpose: the coherence dimension only needs a stable, repo-shipped
polarity signal, not a learned sentiment model.
"""

_POSITIVE = [
    "good", "great", "excellent", "best", "strong", "enjoy", "enjoys", "enjoyed",
    "enjoyable", "love", "loves", "loved", "like", "likes", "liked", "favorite",
    "happy", "satisfied", "satisfying", "recommend", "recommended", "appealing",
    "ideal", "perfect", "solid", "reliable", "popular", "useful", "helpful",
    "pleasant", "impressive", "engaging", "compelling", "fresh", "durable",
    "smooth", "fluent", "clear", "accurate", "faithful", "reinforces",
]

_NEGATIVE = [
    "bad", "poor", "terrible", "awful", "worst", "weak", "hate", "hates", "hated",
    "dislike", "dislikes", "disliked", "boring", "bored", "dull", "disappointing",
    "disappointed", "broken", "useless", "unpleasant", "unlikely", "wrong",
    "noisy", "confusing", "fragmented", "inconsistent", "irrelevant", "unrelated",
    "contradicts", "contradictory", "mismatch", "unsuitable", "fatigue", "tired",
    "drag", "drags", "mute", "mutes", "cautiously", "drifts",
]

POLARITY: dict[str, float] = {}
for _w in _POSITIVE:
    POLARITY[_w] = 1.0
for _w in _NEGATIVE:
    POLARITY[_w] = -1.0
