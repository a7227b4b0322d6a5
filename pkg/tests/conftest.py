import pytest

# filled by the acceptance suite; echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []

from edaregress.datagen import GeneratorSpec, generate_dataset
from edaregress.serializer import JobConfig


def make_config(**overrides) -> JobConfig:
    base = dict(
        source_file_name="tb/alu0/smoke0.sv",
        tags={"action_type": "sim", "application_type": "rtl"},
        priority=100,
        build_config={"design_kgates": 64},
        exec_spec={"command": "simv -f alu.f", "tool": "simv", "version": "2023.09"},
        dependencies=[],
        caching_policy="none",
        expected_state="success",
        replication=1,
    )
    base.update(overrides)
    return JobConfig(**base)


@pytest.fixture
def config():
    return make_config()


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(GeneratorSpec(seed=3, n_jobs=300))


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory, small_dataset):
    """A few-step toy training run with intermediate checkpoints."""
    from edaregress.model import ModelConfig
    from edaregress.trainer import TrainConfig, train

    out = tmp_path_factory.mktemp("tiny_run")
    model_cfg = ModelConfig(d_model=32, n_layers=1, n_heads=2, d_ff=64, max_seq=640)
    cfg = TrainConfig(batch_size=4, max_steps=15, max_seq_len=640, warmup_steps=3, eval_interval=5, ckpt_interval=5, val_subsample=8, lr=3e-3)
    final = train(small_dataset[:200], small_dataset[200:240], model_cfg, cfg, out)
    return out, final


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
