import pytest

from weathercp.synth import SceneConfig, gen_synthetic_scene


def make_dataset(root, n_scenarios=2, **kw):
    cfg = dict(n_vehicles=3, points_per_cloud=20_000, n_frames=1)
    cfg.update(kw)
    for i in range(n_scenarios):
        gen_synthetic_scene(root, SceneConfig(seed=i, scenario_id=f"synth_{i:03d}", **cfg))
    return root


@pytest.fixture(scope="session")
def synth_dataset(tmp_path_factory):
    return make_dataset(tmp_path_factory.mktemp("synth"))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = sorted(getattr(mod, "RESULTS", []))
    if results:
        terminalreporter.section("acceptance criteria")
        for _, line in results:
            terminalreporter.write_line(line)
