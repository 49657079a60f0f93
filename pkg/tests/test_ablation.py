import pytest

from treegpt import ablation as A
from treegpt.ablation import AblationRow, CONFIGURATIONS, parse_csv, render_table, run_matrix
from treegpt.data import generate_synthetic
from treegpt.model import ModelConfig
from treegpt.optim import TrainConfig

EXPECTED = [
    ("Edge Projection Only", (True, False, False)),
    ("Edge Proj + Gating", (True, True, False)),
    ("Edge Proj + Residual", (True, False, True)),
    ("All Components", (True, True, True)),
    ("Gating Only", (False, True, False)),
    ("Baseline TreeFFN", (False, False, False)),
]


def test_configurations_cover_table_rows():
    assert list(CONFIGURATIONS) == EXPECTED
    assert len({flags for _, flags in CONFIGURATIONS}) == 6


@pytest.fixture(scope="module")
def rows():
    tasks = generate_synthetic("copy", 0, 6, max_size=2)
    mc = ModelConfig(hidden_dim=6, num_layers=1, max_seq_len=40, edge_dim=3, iterations=1)
    tc = TrainConfig(total_steps=4, warmup_steps=1, batch_size=4)
    return run_matrix(mc, tc, tasks[:4], tasks[4:], seeds=[0, 1])


def test_matrix_rows(rows):
    assert [(r.config_name, r.flags) for r in rows] == EXPECTED
    for r in rows:
        assert len(r.val_runs) == len(r.test_runs) == 2
        assert r.val_range[0] <= r.val_accuracy <= r.val_range[1]
        assert r.training_seconds > 0


def test_matrix_is_deterministic(rows):
    tasks = generate_synthetic("copy", 0, 6, max_size=2)
    mc = ModelConfig(hidden_dim=6, num_layers=1, max_seq_len=40, edge_dim=3, iterations=1)
    tc = TrainConfig(total_steps=4, warmup_steps=1, batch_size=4)
    again = run_matrix(mc, tc, tasks[:4], tasks[4:], seeds=[0, 1])
    assert [r.val_runs for r in again] == [r.val_runs for r in rows]
    assert [r.test_runs for r in again] == [r.test_runs for r in rows]


def test_text_table_layout(rows):
    text = render_table(rows)
    lines = text.splitlines()
    assert [c.strip() for c in lines[0].split("|")] == ["Configuration", "Val Acc", "Test Acc", "Time(s)"]
    names = [ln.split("|")[0].strip() for ln in lines[2:8]]
    assert names == [n for n, _ in EXPECTED]
    assert all(len(ln.split("|")) == 4 for ln in lines[2:8])


def test_single_row_renders_four_columns():
    row = AblationRow("Gating Only", (False, True, False), 0.5, 0.25, 1.5)
    line = render_table([row]).splitlines()[2]
    assert [c.strip() for c in line.split("|")] == ["Gating Only", "50.0%", "25.0%", "1.5"]


def test_csv_round_trip(rows):
    back = parse_csv(render_table(rows, "csv"))
    assert back == rows


def test_parallel_rows_marked():
    row = AblationRow("Gating Only", (False, True, False), 0.5, 0.25, 1.5, timing_comparable=False)
    text = render_table([row])
    assert "1.5*" in text and "not comparable" in text


def test_row_validation():
    with pytest.raises(ValueError):
        AblationRow("x", (True, True, True), 1.2, 0.5, 1.0)
    with pytest.raises(ValueError):
        AblationRow("x", (True, True, True), 0.5, 0.5, 0.0)
    with pytest.raises(ValueError):
        render_table([])
    with pytest.raises(ValueError):
        render_table([AblationRow("x", (True, True, True), 0.5, 0.5, 1.0)], "html")


def test_failure_names_configuration(monkeypatch):
    def boom(model_cfg, *args):
        if model_cfg.use_residual:
            raise FloatingPointError("diverged")
        return 0.5, 0.5, 0.1
    monkeypatch.setattr(A, "_one_run", boom)
    tasks = generate_synthetic("copy", 0, 3, max_size=2)
    with pytest.raises(A.AblationError, match="Edge Proj \\+ Residual"):
        run_matrix(ModelConfig(hidden_dim=4, max_seq_len=40, edge_dim=2), TrainConfig(total_steps=2, warmup_steps=0),
                   tasks[:2], tasks[2:], seeds=[0])


def test_requires_heldout_and_seeds():
    tasks = generate_synthetic("copy", 0, 2)
    mc, tc = ModelConfig(hidden_dim=4), TrainConfig(total_steps=2, warmup_steps=0)
    with pytest.raises(A.AblationError):
        run_matrix(mc, tc, tasks, [], seeds=[0])
    with pytest.raises(A.AblationError):
        run_matrix(mc, tc, tasks, tasks, seeds=[])
