"""Input validation helpers shared by the estimators."""
from __future__ import annotations

from typing import Sequence

from .geometry import BoundingBox
from .scenegraph import Corpus, SceneAnnotation


def check_corpus(X, allow_empty: bool = False) -> Corpus:
    """Coerce ``X`` (a Corpus, a scene, or a sequence of scenes) to scenes.

    Returns a :class:`Corpus` when given one, otherwise a tuple of scenes.
    """
    if isinstance(X, SceneAnnotation):
        scenes = (X,)
    elif isinstance(X, Corpus):
        scenes = X.scenes
    else:
        try:
            scenes = tuple(X)
        except TypeError:
            raise TypeError(f"expected a corpus or a sequence of scenes, got {type(X).__name__}") from None
    bad = [type(s).__name__ for s in scenes if not isinstance(s, SceneAnnotation)]
    if bad:
        raise TypeError(f"expected SceneAnnotation items, got {bad[0]}")
    if not scenes and not allow_empty:
        raise ValueError("empty corpus")
    return X if isinstance(X, Corpus) else scenes


def check_objects(objects: Sequence) -> None:
    if len(objects) == 0:
        raise ValueError("empty object list")
    for item in objects:
        if len(item) != 2 or not isinstance(item[1], BoundingBox):
            raise TypeError("objects must be (category, BoundingBox) pairs")
