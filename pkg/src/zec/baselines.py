"""Fixed comparison strategies: always share, never share, and uniform random."""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np

from zec.domain import Action, InvalidInput


class Strategy(str, enum.Enum):
    ALWAYS_SHARE = "always"
    NEVER_SHARE = "never"
    RANDOM = "random"
    LEARNED = "learned"


def baseline_action(kind: Strategy | str, legal: Sequence[Action], rng: np.random.Generator | None = None) -> Action:
    """Pick an action for a non-learning strategy from the legal set.

    The legal set already encodes the sub-state (deficit, surplus, or a
    pending request with or without grantable energy), so the rules only need
    to look at which actions are on offer.
    """
    kind = Strategy(kind)
    legal = sorted(Action(a) for a in set(legal))
    if not legal:
        raise InvalidInput("no legal actions to choose from")
    if kind is Strategy.RANDOM:
        if rng is None:
            raise InvalidInput("the random strategy needs a generator")
        return legal[int(rng.integers(len(legal)))]
    if kind is Strategy.LEARNED:
        raise InvalidInput("the learned strategy has no fixed rule")
    if kind is Strategy.ALWAYS_SHARE:
        preferred = (Action.REQUEST_NEIGHBOUR, Action.GRANT_REQUEST)
    else:
        preferred = (Action.REQUEST_GRID, Action.DENY_REQUEST)
    for action in preferred:
        if action in legal:
            return action
    # only StoreExcess or a forced DenyRequest remain
    return legal[0]
