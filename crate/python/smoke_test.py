"""Smoke test for the Python extension.

Uses an installed `scalenet` module if present (e.g. after `maturin develop`),
otherwise builds the extension with cargo and loads it from target/.
"""

import importlib.util
import json
import math
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load():
    try:
        import scalenet

        return scalenet
    except ImportError:
        pass
    subprocess.run(["cargo", "build", "--release", "-p", "scalenet-py"], cwd=ROOT, check=True)
    lib = ROOT / "target" / "release" / ("libscalenet.dylib" if sys.platform == "darwin" else "libscalenet.so")
    spec = importlib.util.spec_from_file_location("scalenet", lib)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b}"


def main():
    sn = load()

    a = [[-2.0, 1.0], [0.5, -3.0]]
    sym = [[-2.0, 0.75], [0.75, -3.0]]
    tr, det = sym[0][0] + sym[1][1], sym[0][0] * sym[1][1] - sym[0][1] ** 2
    close(sn.mu2(a), tr / 2 + math.sqrt(tr * tr / 4 - det), 1e-12)
    close(sn.mu_inf(a), -1.0, 1e-12)
    mu_b, norm_b = sn.block_bounds(a, [1, 1])
    close(mu_b, max(-2.0 + 1.0, -3.0 + 0.5), 1e-12)
    close(norm_b, 3.5, 1e-12)

    lam = sn.solve_rate(-2.0, 1.0, 0.5)
    close(lam - 2.0 + math.exp(0.5 * lam), 0.0, 1e-10)
    env = sn.envelope(-2.0, 1.0, 0.0, 0.5, 1.0, [0.0, 1.0, 2.0])
    assert env[0] >= env[1] >= env[2] > 0.0

    ok = sn.robot_certificate()
    assert ok["certified"], ok
    close(ok["certificate"]["lambda_hat"], 0.0510, 5e-4)
    bad = sn.robot_certificate(kp_scale=20.0)
    assert not bad["certified"] and bad["violation"]["condition"] == "C3", bad

    b = sn.sample_weights(6, 3.0, 1)
    assert all(abs(sum(abs(v) for v in row) - 3.0) < 1e-12 for row in b)
    zero = [[0.0] * 6 for _ in range(6)]
    cert = sn.hopfield_certificate([4.0] * 6, zero, b, [1.0] * 6, 0.2)
    assert cert["certified"]
    close(cert["certificate"]["sigma_under"], 3.0, 1e-9)
    x = sn.hopfield_equilibrium([4.0] * 6, zero, b, [1.0] * 6, 0.2)
    for i in range(6):
        close(-4.0 * x[i] + sum(b[i][j] * math.tanh(x[j]) for j in range(6)) + 1.0, 0.0, 1e-8)

    config = (ROOT / "configs" / "small_hopfield_c32.toml").read_text()
    with tempfile.TemporaryDirectory() as out:
        report = sn.simulate(config, out)
        assert report["certified"] and report["metrics"]["envelope_dominated"]
        on_disk = json.loads((Path(out) / "metrics.json").read_text())
        assert on_disk["metrics"] == report["metrics"]
        c27 = sn.certify(config.replace("c = 32.0", "c = 27.0"), out)
        assert c27["violation"]["condition"] == "C4"

    robots = """
family = "unicycle"
dt = 0.01
t_end = 2.0
[unicycle]
circles = 1
tau0 = 0.1
[sweep]
axis = "circles"
values = [1, 2]
"""
    with tempfile.TemporaryDirectory() as out:
        rows = sn.sweep(robots, out, jobs=2)
        assert [v for v, _ in rows] == [1.0, 2.0]
        assert (Path(out) / "sweep.csv").exists()

    try:
        sn.certify("family = 'nope'", ".")
    except ValueError:
        pass
    else:
        raise AssertionError("bad config accepted")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
