import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import pytest  # noqa: E402

from doctor2vec.syngen import GenConfig, generate_corpus  # noqa: E402


@pytest.fixture(scope="session")
def corpus():
    """Default-sized planted corpus (200 doctors, 50 trials)."""
    return generate_corpus(GenConfig(seed=0))


@pytest.fixture(scope="session")
def small_corpus():
    """Tiny corpus for model plumbing tests."""
    return generate_corpus(GenConfig(n_doctors=24, n_trials=12, n_patients_per_doctor=(3, 5),
                                     n_visits_per_patient=(1, 3), vocab_sizes=(20, 8, 20),
                                     investigators_per_trial=(6, 10), target_bin_distribution=None,
                                     seed=3))


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion."""
    lines = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number, ok, detail):
        lines[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number])
