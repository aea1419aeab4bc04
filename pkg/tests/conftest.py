import numpy as np
import pytest

from rtl.dam import DamConfig
from rtl.data import SOURCE, TARGET, PairBatch, SentencePair
from rtl.transfer import TransferModel


def random_pairs(rng, n, vocab_size, max_len=6, min_len=1):
    out = []
    for _ in range(n):
        a = rng.integers(2, vocab_size, size=rng.integers(min_len, max_len + 1))
        b = rng.integers(2, vocab_size, size=rng.integers(min_len, max_len + 1))
        out.append(SentencePair(tuple(a.tolist()), tuple(b.tolist()), int(rng.integers(2))))
    return out


def small_model(seed=0, vocab_size=12, h=8, d=6, trainable=True):
    """Tiny model with N(0, 1) embeddings, which keeps relu inputs away from
    zero so finite differences stay on one side of every kink."""
    rng = np.random.default_rng(seed)
    emb = rng.normal(size=(vocab_size, d))
    emb[0] = 0.0
    return TransferModel.create(vocab_size, DamConfig(h, d), rng, embeddings=emb, trainable_embeddings=trainable)


@pytest.fixture
def tiny():
    rng = np.random.default_rng(42)
    model = small_model(0)
    pairs = random_pairs(rng, 4, 12)
    return model, pairs, PairBatch.from_pairs(pairs, SOURCE), PairBatch.from_pairs(pairs, TARGET)


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    number, title = mark.args
    if report.when == "setup" and report.passed:
        return
    passed = report.when == "call" and report.passed and not hasattr(report, "wasxfail")
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _CRITERIA[(number, item.nodeid)] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    merged = {}
    for (number, _), (title, passed, detail) in sorted(_CRITERIA.items()):
        _, ok, details = merged.get(number, (title, True, []))
        merged[number] = (title, ok and passed, details + ([detail] if detail else []))
    terminalreporter.section("acceptance criteria")
    for number, (title, passed, details) in sorted(merged.items()):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {title}"
        terminalreporter.write_line(line + (f" ({'; '.join(details)})" if details else ""))
