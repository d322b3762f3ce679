import numpy as np
import pytest

from synthid.embedder import ModelConfig, backward, forward, init_head, init_model
from synthid.losses import CosFaceConfig, combined_loss, cosface_loss, kt_loss


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def network_closure(model, head, x, labels, loss, teacher_emb=None, alpha=None, cfg=CosFaceConfig()):
    """Loss through the full network; returns ``(value, grads)`` aligned with
    ``model.params() + [head.weight]`` (head omitted for KT)."""

    def closure():
        emb, cache = forward(model, x)
        if loss == "cosface":
            out = cosface_loss(emb, labels, head, cfg)
        elif loss == "kt":
            out = kt_loss(emb, teacher_emb)
        else:
            out = combined_loss(emb, labels, head, teacher_emb, alpha, cfg)
        grads = backward(model, cache, out.grad_embeddings)
        if out.grad_head is not None:
            grads.append(out.grad_head)
        return out.value, grads

    return closure


def small_problem(seed, n=6, c=5, d=6, input_dim=7, hidden=(9,), activation="tanh"):
    rng = np.random.default_rng(seed)
    model = init_model(ModelConfig(input_dim, hidden, d, activation=activation, init_seed=seed))
    head = init_head(d, c, seed + 1)
    x = rng.standard_normal((n, input_dim))
    labels = rng.integers(0, c, size=n)
    teacher = init_model(ModelConfig(input_dim, hidden, d, activation=activation, init_seed=seed + 2))
    t_emb, _ = forward(teacher, x)
    return model, head, x, labels, t_emb


# a grid small enough to run the whole pipeline in about a second
SMALL_CONFIG = """\
# tiny grid
classes = 6
per_class = 6
input_dim = 8
identity_dim = 4
synth_per_class = 6
subsets = 3, 6
link_subset = 3
id_per_class = 3
heldout_classes = 5
heldout_per_class = 4
hidden_dims = 8
embedding_dim = 4
activation = tanh
teacher_epochs = 3
teacher_milestones = 2
student_epochs = 3
student_milestones = 2
"""


@pytest.fixture
def small_config_file(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CONFIG)
    return path


# one "CRITERION n: PASS|FAIL ..." line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
