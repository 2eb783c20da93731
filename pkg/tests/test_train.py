import io

import numpy as np
import pytest

from nrtr import checkpoint
from nrtr.config import load_config
from nrtr.train import edit_distance, load_model, score, train


def _cfg(tmp_path, **kw):
    base = {"ckpt_dir": str(tmp_path), "max_steps": "4", "synth_train": "24", "synth_test": "0",
            "checkpoint_every": "2", "batch_size": "8"}
    base.update({k: str(v) for k, v in kw.items()})
    return load_config("tiny").with_overrides(base)


@pytest.mark.parametrize("a,b,d", [("", "", 0), ("abc", "abc", 0), ("abc", "abd", 1), ("", "ab", 2),
                                   ("kitten", "sitting", 3)])
def test_edit_distance(a, b, d):
    assert edit_distance(a, b) == d == edit_distance(b, a)


def test_score():
    rep = score(["ab", "c", ""], ["ab", "d", "xy"])
    assert rep.correct == 1 and rep.char_errors == 3 and rep.char_total == 5
    assert abs(rep.word_accuracy - 100 / 3) < 1e-12
    assert rep.tsv().startswith("n=3\tword_accuracy=33.33")
    with pytest.raises(ValueError):
        score([], [])


def test_same_seed_same_log(tmp_path):
    a, b = io.StringIO(), io.StringIO()
    train(_cfg(tmp_path / "a"), out=a)
    train(_cfg(tmp_path / "b"), out=b)
    assert a.getvalue() == b.getvalue() and len(a.getvalue().splitlines()) == 4
    c = io.StringIO()
    train(_cfg(tmp_path / "c", seed=1), out=c)
    assert c.getvalue() != a.getvalue()


def test_log_format(tmp_path):
    out = io.StringIO()
    res = train(_cfg(tmp_path), out=out)
    for i, line in enumerate(out.getvalue().splitlines(), start=1):
        n, lr, loss = line.split("\t")
        assert int(n) == i and float(lr) > 0 and float(loss) > 0
    assert [p.name for p in res.checkpoints] == ["step_0000002.ckpt", "step_0000004.ckpt"]
    assert res.average.name == "final_avg.ckpt"


def test_resume_reproduces_uninterrupted_run(tmp_path):
    full = io.StringIO()
    train(_cfg(tmp_path / "full", max_steps=6), out=full)
    part = io.StringIO()
    train(_cfg(tmp_path / "part", max_steps=4), out=io.StringIO())
    res = train(_cfg(tmp_path / "part", max_steps=6), resume=tmp_path / "part" / "step_0000004.ckpt", out=part)
    assert res.optimizer.step_count == 6
    assert part.getvalue().splitlines() == full.getvalue().splitlines()[4:]
    a = checkpoint.load(tmp_path / "full" / "step_0000006.ckpt")
    b = checkpoint.load(tmp_path / "part" / "step_0000006.ckpt")
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_checkpoint_loads_as_model(tmp_path):
    res = train(_cfg(tmp_path), out=io.StringIO())
    model = load_model(res.checkpoints[-1])
    for (ka, a), (kb, b) in zip(model.named_parameters(), res.model.named_parameters()):
        assert ka == kb and np.array_equal(a.data, b.data)
