import pytest

from trainscope import RunSpec, default_mapping, gen_converging_run, open_container
from trainscope.weightstats import checkpoint_stats, load_checkpoint_meta


def scan_run(paths, cfg=None):
    cfg = cfg or default_mapping()
    stats = []
    for container, sidecar in paths:
        meta = load_checkpoint_meta(sidecar)
        stats.append(
            checkpoint_stats(
                open_container(container),
                cfg,
                checkpoint_id=meta["checkpoint_id"],
                tokens_b=meta["tokens_b"],
                stage=meta["stage"],
            )
        )
    return stats


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("default_run")
    spec = RunSpec()
    paths = gen_converging_run(spec, out)
    return spec, out, paths


@pytest.fixture(scope="session")
def default_stats(default_run):
    _, _, paths = default_run
    return scan_run(paths)
