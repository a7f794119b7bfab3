import pytest

from aerial_sgg.geometry import BoundingBox
from aerial_sgg.priors import build_priors, fit_gaussians
from aerial_sgg.scenegraph import Corpus, ObjectInstance, RelationshipTriple, SceneAnnotation, Vocabulary
from aerial_sgg.synth import SynthConfig, generate_corpus

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one PASS/FAIL line per criterion, then assert it."""

    def report(number, title, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:2d}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


@pytest.fixture(scope="session")
def synth_small():
    corpus, manifest = generate_corpus(SynthConfig(n_scenes=40, seed=11))
    return corpus, manifest


@pytest.fixture(scope="session")
def synth_priors(synth_small):
    return fit_gaussians(build_priors(synth_small[0]))


@pytest.fixture
def tiny_vocab():
    return Vocabulary(("person", "grass", "car"), ("on", "near"), ("standing", "red"))


@pytest.fixture
def tiny_corpus(tiny_vocab):
    """Two hand-made scenes with one containment, one overlap and one disjoint pair."""
    s1 = SceneAnnotation(
        "a", 100.0, 100.0,
        (
            ObjectInstance(0, 0, BoundingBox(10, 10, 20, 30), (0,)),
            ObjectInstance(1, 1, BoundingBox(0, 0, 50, 50), ()),
            ObjectInstance(2, 2, BoundingBox(45, 20, 60, 30), (1,)),
        ),
        (RelationshipTriple(0, 1, 0), RelationshipTriple(2, 1, 1)),
    )
    s2 = SceneAnnotation(
        "b", 100.0, 100.0,
        (
            ObjectInstance(5, 0, BoundingBox(10, 10, 20, 20), (0,)),
            ObjectInstance(7, 0, BoundingBox(40, 10, 50, 20), ()),
        ),
        (RelationshipTriple(5, 7, 1),),
    )
    return Corpus(tiny_vocab, (s1, s2))
