import json

import pytest

from mixtrav.kb import EdgeRecord, NodeRecord, Tgkb

F1_NODES = [
    ("I1", "Institution", "Point Park University"),
    ("A1", "Author", "Jane Doe astronomer"),
    ("A2", "Author", "John Roe computer scientist"),
    ("P1", "Paper", "stellar populations in tidal tails"),
    ("P2", "Paper", "graph neural networks"),
    ("F1c", "Field-of-Study", "Stellar Populations"),
]
F1_EDGES = [("I1", "A1"), ("I1", "A2"), ("A1", "P1"), ("A2", "P2"), ("F1c", "P1")]

WORKED_QUERY = "Can you give me publications by Point Park University authors on stellar populations in tidal tails"
WORKED_PLAN = "Field-of-Study<Stellar Populations> -> Paper ; Institution<Point Park University> -> Author -> Paper"


def f1_kb() -> Tgkb:
    return Tgkb(
        [NodeRecord(i, c, t) for i, c, t in F1_NODES],
        [EdgeRecord(s, d, "") for s, d in F1_EDGES],
    )


def f1_jsonl() -> tuple[str, str]:
    nodes = "".join(json.dumps({"id": i, "category": c, "text": t}) + "\n" for i, c, t in F1_NODES)
    edges = "".join(json.dumps({"src": s, "dst": d}) + "\n" for s, d in F1_EDGES)
    return nodes, edges


@pytest.fixture
def kb():
    return f1_kb()


@pytest.fixture
def f1_files(tmp_path):
    nodes, edges = f1_jsonl()
    (tmp_path / "nodes.jsonl").write_text(nodes)
    (tmp_path / "edges.jsonl").write_text(edges)
    return tmp_path / "nodes.jsonl", tmp_path / "edges.jsonl"


# -- acceptance reporting ---------------------------------------------------
# Tests marked ``criterion(n, title)`` are summarised as one PASS/FAIL line per
# criterion at the end of the run; measured values go into CRITERION_NOTES.

CRITERION_NOTES: dict[int, str] = {}
_criteria: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and not rep.failed):
        return
    n, title = marker.args
    entry = _criteria.setdefault(n, [title, True])
    entry[1] = entry[1] and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, ok = _criteria[n]
        note = CRITERION_NOTES.get(n, "")
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{note}]" if note else ""))
