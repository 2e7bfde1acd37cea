"""Shared fixtures: packaged data, a 50-code ICD fixture, tiny corpora."""

from pathlib import Path

import pytest

from dxaudit import core
from dxaudit.core import IcdEntry, IcdIndex, CcLevel, LexiconKind
from dxaudit.features import FeatureLexicons

DATA_DIR = Path(__file__).parent.parent / "src" / "dxaudit" / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def disease_pool():
    return core.load_lexicon(DATA_DIR / "diseases.txt", LexiconKind.DISEASE_NAMES)


@pytest.fixture(scope="session")
def negation_lexicon():
    return core.load_lexicon(DATA_DIR / "negation_words.txt", LexiconKind.NEGATION_WORDS)


@pytest.fixture(scope="session")
def enumerator_lexicon():
    return core.load_lexicon(DATA_DIR / "enumerator_patterns.txt",
                             LexiconKind.ENUMERATOR_PATTERNS)


@pytest.fixture(scope="session")
def feature_lexicons(negation_lexicon, enumerator_lexicon) -> FeatureLexicons:
    return FeatureLexicons(negation=negation_lexicon, enumerators=enumerator_lexicon)


def make_fixture_icd_entries() -> list[IcdEntry]:
    """50 codes: the S05 family plus synthetic category families."""
    rows = [
        ("S05", "眼和眶损伤", "NONE"),
        ("S05.3", "眼球裂伤不伴眼内组织脱出", "NONE"),
        ("S05.4", "眶穿通伤", "NONE"),
        ("S05.301", "巩膜破裂", "NONE"),
        ("S05.302", "角膜裂伤", "CC"),
    ]
    for letter in "ABCDE":
        for i in range(3):
            base = f"{letter}1{i}"
            rows.append((base, f"病种{letter}{i}", "NONE"))
            for j in (1, 2):
                level = "CC" if j == 1 else "NONE"
                rows.append((f"{base}.{j}", f"病种{letter}{i}亚型{j}", level))
    assert len(rows) == 50
    return [IcdEntry(code=c, title=t, cc_level=CcLevel(l)) for c, t, l in rows]


@pytest.fixture(scope="session")
def fixture_icd() -> IcdIndex:
    return IcdIndex(make_fixture_icd_entries())
