"""Shared fixtures for the acceptance suite.

The trained stack (default corpus + autoencoder + three denoisers) is
expensive, so it is built once per session through the CLI commands and
reused. Set PHASEMOTION_ACCEPT_CACHE to a directory to keep artifacts
across sessions; training wall times are recorded next to the artifacts
and asserted by the acceptance tests.
"""
import json
import os
import time
from pathlib import Path

import pytest

CACHE_ENV = "PHASEMOTION_ACCEPT_CACHE"


@pytest.fixture(scope="session")
def accept_dir(tmp_path_factory) -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        p = Path(env)
        p.mkdir(parents=True, exist_ok=True)
        return p
    return tmp_path_factory.mktemp("accept")


@pytest.fixture(scope="session")
def trained_artifacts(accept_dir: Path) -> dict:
    from phasemotion import cli

    corpus = accept_dir / "corpus"
    pae = accept_dir / "pae.ckpt"
    denoisers = accept_dir / "denoisers"
    timings_file = accept_dir / "timings.json"
    timings = json.loads(timings_file.read_text()) if timings_file.exists() else {}

    def run(name: str, args: list[str]) -> None:
        t0 = time.time()
        code = cli.main(args)
        assert code == 0, f"{args[0]} failed with exit code {code}"
        timings[name] = time.time() - t0
        timings_file.write_text(json.dumps(timings, indent=1))

    if not (corpus / "manifest.json").exists():
        run("synth_data", ["synth-data", f"out={corpus}"])
    if not pae.exists():
        run("train_pae", ["train-pae", f"corpus={corpus}", f"out={pae}"])
    if not (denoisers / "semantic.ckpt").exists():
        run("train_diffusion", ["train-diffusion", f"corpus={corpus}",
                                f"pae={pae}", f"out={denoisers}"])
    return {"corpus": corpus, "pae": pae, "denoisers": denoisers,
            "timings": json.loads(timings_file.read_text())}


@pytest.fixture(scope="session")
def stack(trained_artifacts):
    from phasemotion.cli import load_stack
    return load_stack(str(trained_artifacts["pae"]),
                      str(trained_artifacts["denoisers"]))


@pytest.fixture(scope="session")
def corpus(trained_artifacts):
    from phasemotion.synth import Corpus
    return Corpus(str(trained_artifacts["corpus"]))
