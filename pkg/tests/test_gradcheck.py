import torch

from midivae.gradcheck import gradient_check, miniature_config, relative_error
from midivae.vae import reconstruction_nll


def test_gradient_check_passes_on_miniature_model():
    report = gradient_check(seed=1, coordinates=200)
    assert report.coordinates >= 200
    assert report.passed, report.per_module
    prefixes = {name.split(".")[0] for name in report.per_module}
    assert {"track_embed", "bar_encoder", "track_decoder", "bar_guidance", "fusion", "mu_head"} <= prefixes
    assert "alpha_logits" in {r["param"] for r in report.per_module.values()}


def test_report_serializes():
    d = gradient_check(seed=0, coordinates=30).to_dict()
    assert set(d) == {"passed", "max_rel_error", "coordinates", "tolerance", "per_module"}


def test_relative_error_floor():
    assert relative_error(1.0, 1.001) < 1e-3
    assert relative_error(0.0, 1e-9) < 1e-2
    assert relative_error(0.0, 0.0) == 0.0


def test_saturated_logits_give_vanishing_gradient():
    sizes = [5] * 8
    targets = torch.randint(0, 5, (2, 3, 8))
    logits = []
    for a, v in enumerate(sizes):
        x = torch.full((2, 3, v), -40.0, dtype=torch.float64)
        x.scatter_(-1, targets[..., a : a + 1], 40.0)
        logits.append(x.requires_grad_())
    loss = reconstruction_nll([x.log_softmax(-1) for x in logits], targets, torch.ones(2, 3, dtype=torch.bool))
    loss.backward()
    assert loss.item() < 1e-30
    assert max(x.grad.abs().max().item() for x in logits) < 1e-30


def test_miniature_config_is_small(vocab):
    cfg = miniature_config(vocab)
    assert cfg.d_track == cfg.d_bar == 8 and cfg.dropout == 0.0
