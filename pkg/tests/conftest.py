import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from d2dsim.channel import LinkKind, calibrate, default_anchors, ideal_profile
from d2dsim.engine import Scenario
from d2dsim.protocol import NodeKind, NodeRecord


@pytest.fixture(scope="session")
def calibrated_profiles():
    return calibrate(default_anchors())


@pytest.fixture(scope="session")
def ideal_profiles():
    return {kind: ideal_profile(kind) for kind in LinkKind}


def build_nodes(*ues: tuple[str, float, float]) -> list[NodeRecord]:
    nodes = [NodeRecord(id="bts", kind=NodeKind.BTS, position=(0.0, 0.0))]
    for nid, x, y in ues:
        nodes.append(NodeRecord(id=nid, kind=NodeKind.UE, position=(float(x), float(y))))
    return nodes


def build_scenario(profiles, ues, pairs, seed=42, **kwargs) -> Scenario:
    return Scenario(
        nodes=build_nodes(*ues), pairs=pairs, profiles=profiles, seed=seed, **kwargs
    )
