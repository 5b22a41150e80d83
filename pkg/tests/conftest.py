import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    from vani.toy import write_toy_corpus

    return write_toy_corpus(tmp_path_factory.mktemp("toy"), seed=0)


@pytest.fixture(scope="session")
def toy_features(toy_corpus, tmp_path_factory):
    """Clean, trimmed, normalized and featurized toy corpus: (manifest, features_dir)."""
    from vani import curation
    from vani.dsp import batch
    from vani.toy import TOY_DSP

    root = tmp_path_factory.mktemp("toyfeat")
    m = curation.clean(toy_corpus.manifest)
    m = batch.trim_manifest(m, TOY_DSP, root / "trim")
    m = batch.normalize_manifest(m, TOY_DSP, root / "norm")
    m = batch.featurize_manifest(m, TOY_DSP, root / "feat")
    return m, root / "feat"


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with the measured values."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                lines.append((props["criterion"], outcome, props.get("detail", "")))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in sorted(lines):
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}  {detail}".rstrip())
