"""Smoke test for the efr Python bindings.

Build and install first:  pip install ./crates/python --no-build-isolation
(or `maturin develop -m crates/python/Cargo.toml`), then run this script.
"""

import math
import os
import tempfile

import efr

N = 32
NU = 1e-3
DT = 2e-3


def main():
    u = efr.random_field(N, seed=7)
    assert u.n == N and len(u.u) == N * N
    assert abs(u.energy() - 0.5) < 0.05, u.energy()
    assert u.max_divergence() < 1e-10
    assert abs(sum(u.spectrum()) - u.energy()) < 1e-12

    stepper = efr.Stepper(N, NU, DT)
    w = stepper.step(u)
    assert w.energy() <= u.energy()

    f = efr.differential_filter(N, 1.0 / N)
    gains = f.shell_gain()
    assert f.provenance == "differential"
    assert all(0.0 < g[0] <= 1.0 for g in gains)
    assert f.apply(w).energy() <= w.energy()

    integ = efr.EfrIntegrator(N, NU, DT, filter=f, policy="energy")
    state, chi = integ.step(u)
    assert 0.0 <= chi <= 1.0
    assert state.max_divergence() < 1e-10

    # A filter learned from identical pairs reproduces the training states.
    states = [u]
    for _ in range(3):
        states.append(stepper.step(states[-1]))
    learned = efr.learn_filter([(s, s) for s in states])
    assert learned.provenance == "learned"
    again = learned.apply(states[2])
    assert max(abs(a - b) for a, b in zip(again.u, states[2].u)) < 1e-12

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "u.efrs")
        efr.write_snapshot(path, u, time=0.5, seed=7)
        back, t, seed = efr.read_snapshot(path)
        assert back.u == u.u and back.v == u.v and t == 0.5 and seed == 7
        fpath = os.path.join(d, "f.efrf")
        f.save(fpath)
        assert efr.load_filter(fpath).shell_gain() == gains

    alpha, converged, iters = efr.tune(
        lambda a: (a - 0.3) ** 2, alpha0=0.1, beta=0.5, epsilon=1e-4, lower=0.0, upper=1.0
    )
    assert converged and abs(alpha - 0.3) < 1e-3, (alpha, iters)

    try:
        efr.VelocityField(N, [0.0], [0.0])
    except ValueError:
        pass
    else:
        raise AssertionError("shape mismatch not rejected")

    print(f"ok: E={u.energy():.4f} chi={chi:.4f} tuned={alpha:.5f} ({iters} iterations)")
    assert not math.isnan(chi)


if __name__ == "__main__":
    main()
