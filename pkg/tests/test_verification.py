import time

import numpy as np

from sglanet import verification
from sglanet.tensor import Tensor
from sglanet import ops


def test_full_suite_passes_within_a_minute():
    start = time.perf_counter()
    results = list(verification.run_suite("all"))
    elapsed = time.perf_counter() - start
    assert not verification.failures(results), [(r.name, r.error) for r in results if not r.passed]
    assert {r.scope for r in results} == set(verification.SCOPES)
    assert {"glofls", "locfls", "sglanet"} <= {r.name for r in results}
    assert elapsed < 60


def test_kink_margin_sees_relu_and_max():
    x = Tensor(np.array([[0.3, -0.02, 0.0, 1.0]]), requires_grad=True)
    assert verification.kink_margin(ops.relu(x)) == 0.02
    y = Tensor(np.array([[[1.0, 1.5], [1.1, 3.0]]]), requires_grad=True)
    assert abs(verification.kink_margin(ops.max_over_axis(y, 1)) - 0.1) < 1e-12


def test_micro_model_has_no_zero_heads():
    model = verification.micro_model(0)
    for head in model.st.values():
        assert np.abs(head.weight.data).min() > 0
    assert model.cfg.resolution == 8 and max(model.cfg.widths) <= 8 and model.cfg.classes == 3
