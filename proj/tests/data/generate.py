"""Regenerates the test fixtures in this directory.

Needs numpy and onnx. Expected outputs come from numpy (NNet, JSON graphs) and
from onnx.reference.ReferenceEvaluator (ONNX models).
"""

import json
import os

import numpy as np
import onnx
from onnx import TensorProto, helper, numpy_helper
from onnx.reference import ReferenceEvaluator

HERE = os.path.dirname(os.path.abspath(__file__))
rng = np.random.default_rng(2024)
expected = {}


def path(name):
    return os.path.join(HERE, name)


def fmt(v):
    return repr(float(v))


# ---------------------------------------------------------------- NNet


def write_nnet(name, weights, biases, mins, maxs, means, ranges, comment):
    sizes = [weights[0].shape[1]] + [w.shape[0] for w in weights]
    lines = [f"// {comment}"]
    lines.append(f"{len(weights)},{sizes[0]},{sizes[-1]},{max(sizes)},")
    lines.append(",".join(str(s) for s in sizes) + ",")
    lines.append("0,")
    lines.append(",".join(fmt(v) for v in mins) + ",")
    lines.append(",".join(fmt(v) for v in maxs) + ",")
    lines.append(",".join(fmt(v) for v in means) + ",")
    lines.append(",".join(fmt(v) for v in ranges) + ",")
    for w, b in zip(weights, biases):
        for row in w:
            lines.append(",".join(fmt(v) for v in row) + ",")
        for v in b:
            lines.append(fmt(v) + ",")
    with open(path(name), "w") as f:
        f.write("\n".join(lines) + "\n")


def nnet_eval(weights, biases, means, ranges, x):
    h = (x - means[:-1]) / ranges[:-1]
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = w @ h + b
        if i + 1 < len(weights):
            h = np.maximum(h, 0.0)
    return h * ranges[-1] + means[-1]


# Small network with nontrivial normalization.
small_w = [rng.normal(0, 1, (3, 2)), rng.normal(0, 1, (2, 3))]
small_b = [rng.normal(0, 0.3, 3), rng.normal(0, 0.3, 2)]
small_min = np.array([-2.0, -1.0])
small_max = np.array([2.0, 3.0])
small_mean = np.array([0.5, 1.0, 2.0])
small_range = np.array([2.0, 4.0, 3.0])
write_nnet("small.nnet", small_w, small_b, small_min, small_max, small_mean, small_range, "two inputs, one hidden layer")
xs = rng.uniform([-2.0, -1.0], [2.0, 3.0], (5, 2))
expected["small.nnet"] = [
    {"input": x.tolist(), "output": nnet_eval(small_w, small_b, small_mean, small_range, x).tolist()} for x in xs
]

# Properties on small.nnet: y0 over the box [-1, 1] x [0, 2].
lo, hi = np.array([-1.0, 0.0]), np.array([1.0, 2.0])
grid = np.stack(np.meshgrid(np.linspace(lo[0], hi[0], 401), np.linspace(lo[1], hi[1], 401)), -1).reshape(-1, 2)
ys = np.array([nnet_eval(small_w, small_b, small_mean, small_range, x)[0] for x in grid])
top = float(ys.max())
top_x = grid[int(ys.argmax())]


def write_vnnlib(name, lo, hi, out_count, body, comment):
    lines = [f"; {comment}"]
    for i in range(len(lo)):
        lines.append(f"(declare-const X_{i} Real)")
    for j in range(out_count):
        lines.append(f"(declare-const Y_{j} Real)")
    for i in range(len(lo)):
        lines.append(f"(assert (>= X_{i} {fmt(lo[i])}))")
        lines.append(f"(assert (<= X_{i} {fmt(hi[i])}))")
    lines.extend(body)
    with open(path(name), "w") as f:
        f.write("\n".join(lines) + "\n")


write_vnnlib("small_true.vnnlib", lo, hi, 2, [f"(assert (>= Y_0 {fmt(top + 0.5)}))"],
             "violation y0 >= max + 0.5 is unreachable")
write_vnnlib("small_false.vnnlib", lo, hi, 2, [f"(assert (>= Y_0 {fmt(top - 0.5)}))"],
             "violation y0 >= max - 0.5 is reachable")
expected["small_property"] = {"box_lower": lo.tolist(), "box_upper": hi.tolist(), "y0_max": top,
                              "argmax_input": top_x.tolist()}

# ------------------------------------------------- ACAS-Xu-shaped surrogate
# Same interface as the public ACAS-Xu networks: 5 inputs, six hidden layers
# of 50 ReLUs, 5 outputs and the published normalization constants.

acas_sizes = [5] + [50] * 6 + [5]
acas_w = [rng.normal(0, np.sqrt(2.0 / acas_sizes[i]), (acas_sizes[i + 1], acas_sizes[i])) for i in range(7)]
acas_b = [rng.normal(0, 0.05, acas_sizes[i + 1]) for i in range(7)]
acas_min = np.array([0.0, -3.141593, -3.141593, 100.0, 0.0])
acas_max = np.array([60760.0, 3.141593, 3.141593, 1200.0, 1200.0])
acas_mean = np.array([19791.091, 0.0, 0.0, 650.0, 600.0, 7.5188840201005975])
acas_range = np.array([60261.0, 6.28318530718, 6.28318530718, 1100.0, 1200.0, 373.94992])
p1_lo = np.array([55947.691, -3.141592, -3.141592, 1145.0, 0.0])
p1_hi = np.array([60760.0, 3.141592, 3.141592, 1200.0, 60.0])
n_lo = (p1_lo - acas_mean[:5]) / acas_range[:5]
n_hi = (p1_hi - acas_mean[:5]) / acas_range[:5]


def acas_norm(x):
    h = x
    for i in range(6):
        h = np.maximum(acas_w[i] @ h + acas_b[i], 0.0)
    return acas_w[6] @ h + acas_b[6]


def deepz_upper(l, u):
    """DeepZ upper bound of normalized output 0 over [l, u], plus input masses."""
    c = (l + u) / 2
    g = np.diag((u - l) / 2)
    for i in range(7):
        c = acas_w[i] @ c + acas_b[i]
        g = acas_w[i] @ g
        if i < 6:
            r = np.abs(g).sum(1)
            low, up = c - r, c + r
            extra = []
            for j in range(len(c)):
                if up[j] <= 0:
                    c[j] = 0.0
                    g[j] = 0.0
                elif low[j] < 0:
                    lam = up[j] / (up[j] - low[j])
                    mu = -lam * low[j] / 2
                    c[j] = lam * c[j] + mu
                    g[j] = lam * g[j]
                    e = np.zeros(len(c))
                    e[j] = mu
                    extra.append(e)
            if extra:
                g = np.hstack([g, np.array(extra).T])
    return c[0] + np.abs(g[0]).sum(), np.abs(g[:, :5]).sum(0)


def deepz_prove(t, limit=100000):
    stack = [(n_lo.copy(), n_hi.copy())]
    count = 0
    while stack:
        l, u = stack.pop()
        count += 1
        if count > limit:
            return None
        ub, mass = deepz_upper(l, u)
        # Margin for the floating point of this check.
        if ub <= t - 1e-9:
            continue
        m = (l + u) / 2
        if acas_norm(m)[0] > t:
            return False
        d = int(np.argmax(mass * (u - l)))
        a, b = u.copy(), l.copy()
        a[d] = m[d]
        b[d] = m[d]
        stack.append((l, a))
        stack.append((b, u))
    return count


samples = rng.uniform(n_lo, n_hi, (100000, 5))
sample_max = max(acas_norm(x)[0] for x in samples)
# Place the threshold 0.1 (normalized) above the sampled maximum, then shift
# output 0 so that threshold is the COC advisory score 1500.
coc = (1500.0 - acas_mean[5]) / acas_range[5]
acas_b[6][0] += coc - (sample_max + 0.1)
boxes = deepz_prove(coc)
assert boxes, "surrogate property could not be proven"
write_nnet("acas_surrogate.nnet", acas_w, acas_b, acas_min, acas_max, acas_mean, acas_range,
           "synthetic ACAS-Xu-shaped network (random weights), 5-50x6-5")
write_vnnlib("acas_prop1.vnnlib", p1_lo, p1_hi, 5, ["(assert (>= Y_0 1500.0))"],
             "property 1 (raw units): clear-of-conflict score stays below 1500 for a distant slow intruder")
pts = rng.uniform(p1_lo, p1_hi, (5, 5))
expected["acas_surrogate.nnet"] = [
    {"input": x.tolist(), "output": nnet_eval(acas_w, acas_b, acas_mean, acas_range, x).tolist()} for x in pts
]
expected["acas_prop1"] = {"deepz_boxes": boxes, "sampled_max_raw": float((coc - 0.1) * acas_range[5] + acas_mean[5])}

# ---------------------------------------------------------------- ONNX


def tensor(name, arr):
    return numpy_helper.from_array(np.asarray(arr, dtype=np.float32), name)


def save_model(name, nodes, inputs, outputs, inits, samples_shape, opset=13):
    graph = helper.make_graph(nodes, name, inputs, outputs, inits)
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", opset)])
    model.ir_version = 8
    onnx.checker.check_model(model)
    onnx.save(model, path(name))
    ref = ReferenceEvaluator(model)
    runs = []
    for _ in range(4):
        x = rng.uniform(-1, 1, samples_shape).astype(np.float32)
        y = ref.run(None, {inputs[0].name: x})[0]
        runs.append({"input": x.reshape(-1).astype(float).tolist(), "output": y.reshape(-1).astype(float).tolist()})
    expected[name] = runs


def vi(name, shape):
    return helper.make_tensor_value_info(name, TensorProto.FLOAT, shape)


# Gemm / Relu MLP with a dynamic batch axis.
save_model(
    "mlp.onnx",
    [
        helper.make_node("Gemm", ["x", "w1", "b1"], ["h"], transB=1),
        helper.make_node("Relu", ["h"], ["r"]),
        helper.make_node("Gemm", ["r", "w2", "b2"], ["y"], transB=1),
    ],
    [vi("x", ["batch", 3])],
    [vi("y", ["batch", 2])],
    [tensor("w1", rng.normal(0, 1, (4, 3))), tensor("b1", rng.normal(0, 0.3, 4)),
     tensor("w2", rng.normal(0, 1, (2, 4))), tensor("b2", rng.normal(0, 0.3, 2))],
    (1, 3),
)

# Convolution, max pooling, flatten, dense.
save_model(
    "conv.onnx",
    [
        helper.make_node("Conv", ["x", "k", "kb"], ["c"], kernel_shape=[3, 3], pads=[1, 1, 1, 1], strides=[1, 1]),
        helper.make_node("Relu", ["c"], ["r"]),
        helper.make_node("MaxPool", ["r"], ["p"], kernel_shape=[2, 2], strides=[2, 2]),
        helper.make_node("Flatten", ["p"], ["f"], axis=1),
        helper.make_node("Gemm", ["f", "w", "b"], ["y"], transB=1),
    ],
    [vi("x", [1, 1, 6, 6])],
    [vi("y", [1, 3])],
    [tensor("k", rng.normal(0, 1, (2, 1, 3, 3))), tensor("kb", rng.normal(0, 0.2, 2)),
     tensor("w", rng.normal(0, 0.5, (3, 18))), tensor("b", rng.normal(0, 0.2, 3))],
    (1, 1, 6, 6),
)

# Elementwise arithmetic, reshape/transpose and concat with a constant.
save_model(
    "ops.onnx",
    [
        helper.make_node("MatMul", ["x", "m"], ["a"]),
        helper.make_node("Add", ["a", "c1"], ["b"]),
        helper.make_node("Sub", ["c2", "b"], ["s"]),
        helper.make_node("Mul", ["s", "c3"], ["t"]),
        helper.make_node("Div", ["t", "c4"], ["u"]),
        helper.make_node("Sigmoid", ["u"], ["v"]),
        helper.make_node("Identity", ["v"], ["w"]),
        helper.make_node("Reshape", ["w", "shape"], ["r"]),
        helper.make_node("Transpose", ["r"], ["tr"], perm=[0, 2, 1]),
        helper.make_node("Flatten", ["tr"], ["f"], axis=1),
        helper.make_node("Concat", ["f", "extra"], ["cat"], axis=1),
        helper.make_node("Tanh", ["cat"], ["y"]),
    ],
    [vi("x", [1, 4])],
    [vi("y", [1, 6])],
    [tensor("m", rng.normal(0, 1, (4, 4))), tensor("c1", rng.normal(0, 1, 4)), tensor("c2", rng.normal(0, 1, 4)),
     tensor("c3", rng.uniform(0.5, 2, 4)), tensor("c4", rng.uniform(0.5, 2, 4)),
     numpy_helper.from_array(np.array([1, 2, 2], dtype=np.int64), "shape"),
     tensor("extra", rng.normal(0, 1, (1, 2)))],
    (1, 4),
)

# Residual block: two dynamic operands into Add.
save_model(
    "residual.onnx",
    [
        helper.make_node("Gemm", ["x", "w1", "b1"], ["h"], transB=1),
        helper.make_node("Relu", ["h"], ["r"]),
        helper.make_node("Gemm", ["r", "w2", "b2"], ["g"], transB=1),
        helper.make_node("Add", ["x", "g"], ["y"]),
    ],
    [vi("x", [1, 3])],
    [vi("y", [1, 3])],
    [tensor("w1", rng.normal(0, 1, (5, 3))), tensor("b1", rng.normal(0, 0.3, 5)),
     tensor("w2", rng.normal(0, 1, (3, 5))), tensor("b2", rng.normal(0, 0.3, 3))],
    (1, 3),
)

# An operator outside the supported set.
save_model(
    "unsupported.onnx",
    [helper.make_node("Erf", ["x"], ["y"])],
    [vi("x", [1, 2])],
    [vi("y", [1, 2])],
    [],
    (1, 2),
)

# ---------------------------------------------------------------- JSON graph

jw1 = rng.normal(0, 1, (4, 3))
jb1 = rng.normal(0, 0.3, 4)
jw2 = rng.normal(0, 1, (3, 4))
graph = {
    "format": "zonoreach-graph",
    "version": 1,
    "input": {"name": "x", "shape": [3]},
    "layers": [
        {"name": "fc1", "kind": "affine", "weights": jw1.tolist(), "bias": jb1.tolist()},
        {"name": "act", "kind": "relu"},
        {"name": "fc2", "kind": "affine", "weights": jw2.tolist(), "bias": [0.0, 0.0, 0.0]},
        {"name": "skip", "kind": "add", "inputs": ["x", "fc2"]},
        {"name": "both", "kind": "concat", "inputs": ["skip", "x"], "axis": 0},
        {"name": "squash", "kind": "sigmoid"},
    ],
}
with open(path("residual.json"), "w") as f:
    json.dump(graph, f, indent=2)
    f.write("\n")


def json_eval(x):
    h = np.maximum(jw1 @ x + jb1, 0)
    s = x + jw2 @ h
    return 1 / (1 + np.exp(-np.concatenate([s, x])))


expected["residual.json"] = [{"input": x.tolist(), "output": json_eval(x).tolist()}
                             for x in rng.uniform(-1, 1, (4, 3))]

# ---------------------------------------------------------------- textual property

center = rng.uniform(-0.5, 0.5, 3)
with open(path("center.txt"), "w") as f:
    f.write(", ".join(fmt(v) for v in center) + "\n")
with open(path("robust.prop"), "w") as f:
    f.write("# local robustness of mlp.onnx around center.txt\n")
    f.write('ball("center.txt", 0.01)\n')
    f.write("outputs 2\n")
    f.write("prove argmax == LABEL\n")

mlp = onnx.load(path("mlp.onnx"))
label = int(np.argmax(ReferenceEvaluator(mlp).run(None, {"x": center.astype(np.float32)[None]})[0]))
text = open(path("robust.prop")).read().replace("LABEL", str(label))
open(path("robust.prop"), "w").write(text)
expected["robust.prop"] = {"center": center.tolist(), "label": label}

with open(path("expected.json"), "w") as f:
    json.dump(expected, f, indent=1)
    f.write("\n")
print("surrogate proven with", boxes, "DeepZ boxes; fixtures written")
