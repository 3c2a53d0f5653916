import numpy as np
import pytest

from dtb.nn.architectures import PAPER_TABLES, PAPER_TOTALS, Architecture, aunet, build_architecture, from_spec
from dtb.nn.gradcheck import grad_check
from dtb.nn.train import Checkpoint


@pytest.fixture(scope="module", params=list(Architecture))
def arch(request):
    return request.param, build_architecture(request.param)


def test_totals(arch):
    name, g = arch
    assert g.param_count()[0] == PAPER_TOTALS[name]


def test_summary_matches_table(arch):
    name, g = arch
    assert g.summary() == PAPER_TABLES[name]


def test_forward_shapes_match_table(arch):
    name, g = arch
    shapes = []
    out = g.forward(np.zeros((1,) + g.input_shape, np.float32), record_shapes=shapes)
    table = PAPER_TABLES[name][1:]
    assert len(shapes) == len(table)
    for (_, shape), (_, dims, _) in zip(shapes, table):
        assert dims.split("@")[0] == "x".join(map(str, shape))
    assert ((out > 0) & (out < 1)).all()


def test_known_totals():
    assert PAPER_TOTALS == {Architecture.CONVNET: 1_877_880, Architecture.SMALLCONVNET: 5_327,
                            Architecture.AUNET: 964_673}


def test_output_rows():
    assert PAPER_TABLES[Architecture.SMALLCONVNET][-1] == ("Dense (Sigmoid)", "23", 391)
    assert PAPER_TABLES[Architecture.AUNET][-1] == ("Conv (Sigmoid)", "1x256x88@1x41", 1313)


def test_convnet_batch():
    g = build_architecture("CONVNET")
    assert g.forward(np.zeros((4, 1, 5, 229), np.float32)).shape == (4, 88)


def test_spec_round_trip():
    for a in Architecture:
        g = build_architecture(a, seed=3)
        h = from_spec(g.spec)
        h.load_state_dict(g.state_dict())
        assert h.summary() == g.summary()
    assert Checkpoint.of(build_architecture("SMALLCONVNET")).param_count == 5327


def test_init_is_seeded():
    a, b = build_architecture("SMALLCONVNET", 1), build_architecture("SMALLCONVNET", 1)
    c = build_architecture("SMALLCONVNET", 2)
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    assert any(not np.array_equal(sa[k], sc[k]) for k in sa)


def test_reduced_aunet_gradients():
    g = aunet(n_time=16, n_freq=32, base=2, n_out=8)
    g.init(0, np.float64)
    x = np.random.default_rng(0).standard_normal((2,) + g.input_shape)
    assert grad_check(g, x, loss="bce_logits", max_checks=6) < 1e-5
