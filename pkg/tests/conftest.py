import numpy as np
import pytest
from hypothesis import settings

from mmtpp.events import Event, EventSequence
from mmtpp.templating import Vocabulary

settings.register_profile("mmtpp", max_examples=50, deadline=None)
settings.load_profile("mmtpp")


# The four-event taxi sequence whose rendering is pinned by golden files:
# intervals 19 min, 23 min, and 0.56666 h land on exact float32 patterns.
TABLE_TEXTS = (
    "Picked up at Tribeca (40.711086, -74.016106), 1 passengers.",
    "Dropped off from Tribeca (40.711086, -74.016106) to Times Square "
    "(40.757698, -73.982124), 1 passengers, 2.87 miles trip.",
    "Picked up at Upper West Side (40.799252, -73.970146), 1 passengers.",
    "Dropped off from Upper West Side (40.799252, -73.970146) to Tribeca "
    "(40.714455, -74.014008), 1 passengers, 4.37 miles trip.",
)
TABLE_TYPES = (0, 3, 4, 1)


@pytest.fixture(scope="session")
def taxi_fixture_sequence() -> EventSequence:
    t1 = 10.0
    offsets = np.cumsum([0.0, 19 / 60, 23 / 60, 0.56666])
    events = tuple(
        Event(time=t1 + dt, type_id=k, text=s, image_ref="patch.png")
        for dt, k, s in zip(offsets, TABLE_TYPES, TABLE_TEXTS)
    )
    return EventSequence(events=events, horizon=12.0, type_count=6, time_unit="h")


@pytest.fixture(scope="session")
def vocab6() -> Vocabulary:
    return Vocabulary(6)


@pytest.fixture(scope="session")
def vocab4() -> Vocabulary:
    return Vocabulary(4)
