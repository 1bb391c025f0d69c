import numpy as np
import pytest

from parcellate import _kernels_py
from parcellate.tracts_io import Cohort, SubjectTract

_ACCEPTANCE = []


def random_tract(rng, subject_id="sub-0001", n_fibers=None, max_points=8, scale=50.0):
    """Random tract with float32-exact coordinates."""
    if n_fibers is None:
        n_fibers = int(rng.integers(1, 20))
    lines = []
    for _ in range(n_fibers):
        p = int(rng.integers(2, max_points + 1))
        pts = rng.uniform(-scale, scale, size=(p, 3)).astype(np.float32).astype(np.float64)
        lines.append(pts)
    return SubjectTract(subject_id, tuple(lines))


def random_cohort(rng, n_subjects=3, **kw):
    return Cohort(tuple(random_tract(rng, f"sub-{i:03d}", **kw) for i in range(n_subjects)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def kernel_backends():
    out = [pytest.param(_kernels_py, id="python")]
    try:
        from parcellate import _kernels
    except ImportError:
        out.append(pytest.param(None, id="cython",
                                marks=pytest.mark.skip(reason="extension not built")))
    else:
        out.append(pytest.param(_kernels, id="cython"))
    return out


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1].removeprefix("test_").replace("_", " ")
    detail = dict(report.user_properties).get("detail", "")
    _ACCEPTANCE.append((name, report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in _ACCEPTANCE:
        tag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{tag}  {name:<32} {detail}".rstrip())


PIPELINE_SYNTH = {
    "n_subjects": 30,
    "k_true": 6,
    "fibers_per_subject": [60, 100],
    "midpoints": 3,
    "beta_true": [20.0, 0.0, -15.0, 0.0, 0.0],
    "trait_noise_sigma": 0.5,
    "seed": 5,
}


def run_full_pipeline(root, threads, synth=None, seed=7):
    """Run every subcommand in sequence under ``root``; returns the exit codes."""
    import json

    from parcellate.cli import run_pipeline

    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "synth.json"
    cfg.write_text(json.dumps(synth or PIPELINE_SYNTH))
    t = ["--threads", str(threads)]
    steps = [
        ["simulate", "--config", str(cfg), "--out", str(root / "sim"), "--atlas"],
        ["preprocess", "--in", str(root / "sim" / "tracts"), "--out", str(root / "clean"),
         "--qb-threshold", "30"],
        ["bundle", "--in", str(root / "clean"), "--k", "6", "--batch", "200",
         "--seed", str(seed), "--model", str(root / "model" / "model.json")],
        ["compose", "--in", str(root / "clean"), "--model", str(root / "model" / "model.json"),
         "--out", str(root / "conn" / "omega.csv")],
        ["fit", "--omega", str(root / "conn" / "omega.csv"), "--traits",
         str(root / "sim" / "traits.csv"), "--seed", str(seed), "--n-lambda", "30",
         "--out", str(root / "fit" / "report.json")],
        ["apa", "--in", str(root / "clean"), "--atlas", str(root / "sim" / "atlas.atl"),
         "--kind", "ncount2", "--traits", str(root / "sim" / "traits.csv"), "--seed", str(seed),
         "--n-lambda", "10", "--out", str(root / "apa")],
        ["atlas-align", "--in", str(root / "clean"), "--atlas", str(root / "sim" / "atlas.atl"),
         "--model", str(root / "model" / "model.json"), "--report",
         str(root / "fit" / "report.json"), "--out", str(root / "align")],
        ["cv-scan", "--in", str(root / "clean"), "--traits", str(root / "sim" / "traits.csv"),
         "--ks", "3,6,12", "--batch", "200", "--iters", "100", "--seed", str(seed),
         "--n-lambda", "20", "--out", str(root / "scan" / "cv_scan.csv")],
    ]
    return [run_pipeline(step + t) for step in steps]


def output_files(root):
    """Relative path -> bytes for every CSV/JSON output except manifests and inputs."""
    out = {}
    for path in sorted(root.rglob("*")):
        if path.suffix in (".csv", ".json") and path.name not in ("manifest.json", "synth.json"):
            out[str(path.relative_to(root))] = path.read_bytes()
    return out
