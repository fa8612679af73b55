import pytest


@pytest.fixture
def acceptance_report(capsys):
    """Print a criterion verdict line that bypasses output capture."""
    def report(cid: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"ACCEPTANCE {cid}: {'PASS' if ok else 'FAIL'} - {detail}")
    return report
