"""Smoke test for the tenfuse Python module.

Build first:  pip install --no-build-isolation -e crates/py
"""

import json
import os
import tempfile

import numpy as np

import tenfuse

NET = """
extent i 5
extent j 5
extent k 5
extent p 5
extent q 5
extent r 5
X[i,j,q,r] = A[i,p,q] * B[j,p,r]
Y[i,j,k,r] = X[i,j,q,r] * C[k,q,r]
R[i,j,k] = Y[i,j,k,r] * D[j,k,r]
"""


def dense(t):
    return np.array(t.to_dense()).reshape(t.shape)


def main():
    net = tenfuse.Network(NET)
    assert len(net) == 3
    assert net.inputs()["C"] == [5, 5, 5]

    inputs = {name: tenfuse.Tensor.synthetic(shape, 0.4, seed=n) for n, (name, shape) in enumerate(net.inputs().items())}

    sched = tenfuse.plan(net)
    assert sched.bound >= 1
    assert json.loads(sched.report_json())["bound"] == sched.bound
    pinned = tenfuse.plan(net, max_order=2, root_layout=["j", "k", "i"])
    assert pinned.ir.startswith("forall(r, forall(j, where(")

    result, stats = tenfuse.run(net, sched, inputs)
    assert stats.multiply_adds > 0
    json.loads(stats.to_json())

    # independent reference
    a, b, c, d = (dense(inputs[n]) for n in "ABCD")
    want = np.einsum("ipq,jpr,kqr,jkr->ijk", a, b, c, d)
    assert np.allclose(dense(result), want, rtol=1e-10, atol=1e-12)
    ok, err = tenfuse.compare(result, tenfuse.oracle(net, inputs))
    assert ok, err

    # dense binding gives the same answer
    result2, _ = tenfuse.run(net, sched, inputs, dense={"B"})
    assert tenfuse.compare(result, result2)[0]

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "r.tns")
        result.write_tns(path)
        assert tenfuse.Tensor.read_tns(path, shape=result.shape) == result

    t = tenfuse.Tensor([2, 2], [[0, 1], [0, 1], [1, 0]], [1.0, 2.0, 4.0])
    assert t.nnz == 2 and t.get([0, 1]) == 3.0

    for bad in (lambda: tenfuse.Network("C[i] = A[i] *"), lambda: tenfuse.plan(net, max_order=2, root_layout=["k", "i", "j"])):
        try:
            bad()
        except (ValueError, RuntimeError):
            pass
        else:
            raise AssertionError("expected an error")

    print(f"ok: bound {sched.bound}, {stats.multiply_adds} multiply-adds, nnz {result.nnz}")


if __name__ == "__main__":
    main()
