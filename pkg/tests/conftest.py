import os

import pytest
import torch
from hypothesis import HealthCheck, settings

torch.set_num_threads(1)

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    from docwarmer.datasets import make_toy_corpus

    return make_toy_corpus(str(tmp_path_factory.mktemp("toy")), n_docs=12, seed=3)


@pytest.fixture
def small_ocr():
    return {
        "doc_id": "d1",
        "page_size": [200, 100],
        "lines": [
            {"rect": [100, 10, 180, 20], "text": "right top"},
            {"rect": [10, 12, 60, 22], "text": "left  top"},
            {"polygon": [[10, 70], [90, 70], [90, 85], [10, 85]], "text": "bottom"},
            {"rect": [5, 40, 40, 50], "text": "   "},
        ],
    }


@pytest.fixture(scope="session")
def toy_records(toy_corpus):
    from docwarmer.inquiry import GenerationOptions, generate_corpus
    from docwarmer.llm import Gateway, ScriptedBackend

    gw = Gateway(ScriptedBackend.from_file(toy_corpus.script_path), sleep=lambda s: None)
    return generate_corpus(toy_corpus.sets, gw, 0, GenerationOptions(entities_per_doc=20))


def pytest_terminal_summary(terminalreporter):
    import sys

    log = sys.modules.get("acceptance_log")
    if log is None or not log.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(log.RESULTS):
        terminalreporter.write_line(log.RESULTS[n])
