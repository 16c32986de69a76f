import numpy as np
import pytest


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        step = h * max(1.0, abs(orig))
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def assert_grads_close(analytic, numeric, rel=1e-6, atol=1e-9):
    """Relative-error check with a tiny absolute floor for true zeros."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol / rel)
    err = np.abs(analytic - numeric) / denom
    assert err.max() <= rel, f"gradient mismatch: max rel err {err.max():.3e}"


@pytest.fixture
def fd_check():
    def check(build_scalar, params, rel=1e-6):
        """build_scalar(tensors...) -> scalar Tensor; params: list of leaf Tensors.

        Runs backward once and compares each leaf's gradient against
        central finite differences of the scalar output.
        """
        from charlee.numerics import Tensor

        out = build_scalar(*params)
        for p in params:
            p.zero_grad()
        out.backward()
        for p in params:
            analytic = p.grad if p.grad is not None else np.zeros_like(p.values)

            def scalar_of(x, p=p):
                saved = p.values
                p.values = x
                try:
                    return float(build_scalar(*params).values)
                finally:
                    p.values = saved

            numeric = central_diff(scalar_of, p.values.copy())
            assert_grads_close(analytic, numeric, rel=rel)

    return check
