import shutil
from pathlib import Path

import pytest
import yaml

from nml.cli import main
from nml.synthetic import gen_synthetic

# small search so an end-to-end run takes well under a minute
SMOKE = {
    "forecast": {"trials": 10, "runs": 2, "max_epochs": 30, "n_startup": 10,
                 "space": {"units": [8, 16], "lookback": [4, 8]}},
    "explain": {"max_samples": 6},
}


def write_corpus(dest, seed=3, weeks=546, overrides=None):
    """Synthetic corpus plus a config.yaml next to it; returns the config path."""
    dest = Path(dest)
    assert main(["gen-synthetic", "--out", str(dest), "--seed", str(seed), "--weeks", str(weeks)]) == 0
    cfg_path = dest / "config.yaml"
    doc = yaml.safe_load(cfg_path.read_text())
    for section, vals in (overrides or {}).items():
        if isinstance(vals, dict):
            for k, v in vals.items():
                if isinstance(v, dict):
                    doc[section][k].update(v)
                else:
                    doc[section][k] = v
        else:
            doc[section] = vals
    cfg_path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return cfg_path


@pytest.fixture(scope="session")
def smoke_corpus(tmp_path_factory):
    return write_corpus(tmp_path_factory.mktemp("corpus"), overrides=SMOKE)


@pytest.fixture(scope="session")
def smoke_runs(smoke_corpus, tmp_path_factory):
    """Two independent end-to-end runs of the smoke config into separate directories."""
    outs = []
    for name in ("a", "b"):
        out = tmp_path_factory.mktemp(f"run_{name}")
        shutil.rmtree(out)
        assert main(["run", "--config", str(smoke_corpus), "--out", str(out)]) == 0
        outs.append(out)
    return outs


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Records one verdict line per acceptance criterion; printed in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
