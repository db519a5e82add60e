# The tape-based autodiff engine
#
# Every differentiable op records a vector-Jacobian product on an
# ExecutionTape. `backward` walks the tape in reverse. `grad_check` compares
# the result with central finite differences.

import numpy as np

from catgnn import autodiff as ad

rng = np.random.default_rng(1)
x = rng.normal(size=(6, 3))
seg = np.array([0, 0, 1, 1, 1, 2])      # three neighborhoods
y = np.array([[1.0], [0.0], [1.0]])


def loss(p):
    scores = ad.leaky_relu(ad.matmul(ad.constant(x), p["a"]))
    alpha = ad.segment_softmax(scores, seg)
    pooled = ad.weighted_segment_sum(alpha, ad.matmul(ad.constant(x), p["w"]), seg, 3)
    return ad.bce_with_logits(pooled, y)


point = {"a": rng.normal(size=(3, 1)), "w": rng.normal(size=(3, 1))}
tape = ad.ExecutionTape()
watched = {k: tape.watch(v, k) for k, v in point.items()}
out = loss(watched)
grads = ad.backward(tape, out)
print("loss", out.value[0, 0])
print("d loss / d a", grads["a"].ravel())

report = ad.grad_check(loss, point)
print(f"max relative error {report.max_error:.1e}, passed={report.passed}")
