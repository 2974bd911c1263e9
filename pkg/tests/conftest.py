from __future__ import annotations

import pytest

import helpers
from eventqa.corpus import Answer
from eventqa.promptkit import Demonstration, Modality


@pytest.fixture
def rally_graph():
    return helpers.rally_graph()


@pytest.fixture
def rally_instance():
    return helpers.rally_instance()


@pytest.fixture
def worked_demos():
    """The two worked examples shipped in the graph chain-of-thought prompt."""
    return [
        Demonstration(
            question='Did "protest rally" happen after "riot police deployed"?',
            answer=Answer.NO,
            source_modality=Modality.GRAPH,
        ),
        Demonstration(
            question='Did "music" cause "draws many people"?',
            answer=Answer.YES,
            source_modality=Modality.GRAPH,
        ),
    ]


@pytest.fixture
def synthetic_split():
    return helpers.synthetic_split(130, seed=7)
