"""Frozen end-to-end fixture: a shipped net + input must always score the same."""

import json
import os

import numpy as np

from oxcim import weightfile
from oxcim.network import forward_ideal

HERE = os.path.dirname(__file__)


def test_golden_scores_are_reproduced_exactly():
    net = weightfile.load_network(os.path.join(HERE, "data", "golden_net.qnn"))
    with open(os.path.join(HERE, "data", "golden_case.json")) as fh:
        case = json.load(fh)
    x = np.array(case["input_trits"], dtype=np.int8) \
        .reshape(case["input_shape"])
    expect = np.array([float(s) for s in case["scores"]])
    got = forward_ideal(net, x)
    np.testing.assert_array_equal(got, expect)
