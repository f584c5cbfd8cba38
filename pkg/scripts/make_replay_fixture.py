"""Record the bundled 10-scene end-to-end replay fixture.

Runs the full offline pipeline (4 agents, 2 rounds, seed 6 -> exactly 10
scenes) while recording every chat exchange, then stores:

* fixtures/replay_chat.jsonl  - digest -> response store for replay mode
* fixtures/replay_config.json - the session configuration of the fixture
* fixtures/expected_report.json - the report numbers the replay run must
  reproduce exactly

Deterministic; re-running rewrites identical files.
"""

from __future__ import annotations

import json
import shutil
import tempfile
from pathlib import Path

from anomalykit.cli import (
    load_config,
    run_build_scenes,
    run_detect,
    run_evaluate,
    run_generate,
    run_report,
    run_solve,
)
from anomalykit.providers import make_providers

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"

SEED = 6
SESSION = {"n_agents": 4, "n_rounds": 2, "proposals_per_agent_per_round": 1}


def main():
    FIXTURES.mkdir(exist_ok=True)
    record_path = FIXTURES / "replay_chat.jsonl"
    if record_path.exists():
        record_path.unlink()

    config = load_config(None)
    config.update(SESSION)
    providers = make_providers("offline", seed=SEED, record_path=record_path)

    out = Path(tempfile.mkdtemp(prefix="replay_fixture_"))
    try:
        run_generate(config, SEED, providers, out)
        paths, log = run_build_scenes(config, SEED, providers, out)
        assert log["failed"] == [], log
        assert len(paths) == 10, f"expected 10 scenes, got {len(paths)}"
        run_detect(config, SEED, providers, out)
        run_solve(config, SEED, providers, out)
        run_evaluate([out / "proposals.json"], providers, out=out)
        report, _ = run_report(out)
    finally:
        shutil.rmtree(out, ignore_errors=True)

    (FIXTURES / "replay_config.json").write_text(
        json.dumps(dict(SESSION, rng_seed=SEED), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    (FIXTURES / "expected_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    n_records = sum(1 for _ in record_path.open(encoding="utf-8"))
    print(f"recorded {n_records} chat exchanges; report sections: "
          f"{sorted(report['sections'])}")


if __name__ == "__main__":
    main()
