"""Train and export the reference fixtures (NNWF models + datasets).

Usage: python3 tools/export_reference.py --mnist-csv <mnist_5k.csv.gz> --out fixtures

The MNIST source is the 5000-sample subset bundled with the `mlxtend` wheel
(mlxtend/data/data/mnist_5k.csv.gz). Output is deterministic for a fixed seed.
"""

import argparse
import gzip
import json
import os

import numpy as np
import torch
from torch import nn


def write_dataset(path, images, labels, num_classes, normalization):
    os.makedirs(path, exist_ok=True)
    images = np.ascontiguousarray(images, dtype="<f4")
    images.tofile(os.path.join(path, "images.bin"))
    np.asarray(labels, dtype=np.uint8).tofile(os.path.join(path, "labels.bin"))
    meta = {
        "count": int(images.shape[0]),
        "sample_shape": list(images.shape[1:]),
        "num_classes": num_classes,
        "normalization": normalization,
    }
    with open(os.path.join(path, "dataset.json"), "w") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")


def forward_f64(weights, x):
    h = x.astype(np.float64)
    for i, w in enumerate(weights):
        h = h @ w.astype(np.float64)
        if i + 1 < len(weights):
            h = np.maximum(h, 0.0)
    return h


def export_mlp(out, model_id, dims, weights, test_x, test_y, seed, epochs):
    os.makedirs(out, exist_ok=True)
    layers = []
    for i, w in enumerate(weights):
        name = f"dense{i + 1}.bin"
        np.ascontiguousarray(w, dtype="<f4").tofile(os.path.join(out, name))
        layers.append({"kind": "dense", "in_features": dims[i],
                       "out_features": dims[i + 1], "weights": name})
        if i + 1 < len(weights):
            layers.append({"kind": "relu"})
    preds = forward_f64(weights, test_x).argmax(axis=1)
    acc = float((preds == test_y).mean())
    manifest = {
        "format": "nnwf",
        "version": 1,
        "model_id": model_id,
        "input_shape": [dims[0]],
        "num_classes": dims[-1],
        "layers": layers,
        "recorded": {
            "split": "test",
            "test_accuracy": acc,
            "predictions": [int(p) for p in preds],
            "seed": seed,
            "epochs": epochs,
        },
    }
    with open(os.path.join(out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return acc


def train(dims, x, y, seed, epochs, lr, batch):
    torch.manual_seed(seed)
    mods = []
    for i in range(len(dims) - 1):
        lin = nn.Linear(dims[i], dims[i + 1], bias=False)
        nn.init.kaiming_normal_(lin.weight, nonlinearity="relu")
        mods.append(lin)
        if i + 2 < len(dims):
            mods.append(nn.ReLU())
    net = nn.Sequential(*mods)
    opt = torch.optim.SGD(net.parameters(), lr=lr)
    xt = torch.tensor(x, dtype=torch.float32)
    yt = torch.tensor(y, dtype=torch.long)
    gen = torch.Generator().manual_seed(seed)
    for epoch in range(epochs):
        if epoch == int(epochs * 0.75):
            for g in opt.param_groups:
                g["lr"] = lr * 0.1
        perm = torch.randperm(len(xt), generator=gen)
        for i in range(0, len(xt), batch):
            idx = perm[i:i + batch]
            opt.zero_grad()
            loss = nn.functional.cross_entropy(net(xt[idx]), yt[idx])
            loss.backward()
            opt.step()
    # Dense weights are stored D x G (y = x W).
    return [m.weight.detach().numpy().T.astype(np.float32)
            for m in net if isinstance(m, nn.Linear)]


def mnist(args):
    with gzip.open(args.mnist_csv, "rt") as f:
        raw = np.loadtxt(f, delimiter=",")
    x = (raw[:, :-1] / 255.0).astype(np.float32)
    y = raw[:, -1].astype(np.int64)
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(x))
    x, y = x[order], y[order]
    tr, va = 3000, 4000
    dims = [784, 512, 256, 128, 64, 32, 10]
    weights = train(dims, x[:tr], y[:tr], args.seed, args.epochs, 0.05, 32)
    root = os.path.join(args.out, "mnist-mlp6")
    norm = "pixel / 255"
    write_dataset(os.path.join(root, "data", "train"), x[:tr], y[:tr], 10, norm)
    write_dataset(os.path.join(root, "data", "val"), x[tr:va], y[tr:va], 10, norm)
    write_dataset(os.path.join(root, "data", "test"), x[va:], y[va:], 10, norm)
    acc = export_mlp(os.path.join(root, "model"), "mnist-mlp6", dims, weights,
                     x[va:], y[va:], args.seed, args.epochs)
    print(f"mnist-mlp6 test accuracy {acc:.4f}")


def toy(args):
    rng = np.random.default_rng(args.seed)
    n, dim = 4000, 8
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    y = rng.integers(0, 2, size=n)
    x = rng.normal(size=(n, dim)) + np.outer(2.0 * y - 1.0, 2.6 * direction)
    x = x.astype(np.float32)
    dims = [dim, 16, 2]
    weights = train(dims, x[:2000], y[:2000], args.seed, 30, 0.05, 32)
    root = os.path.join(args.out, "toy-2layer")
    norm = "none"
    write_dataset(os.path.join(root, "data", "train"), x[:2000], y[:2000], 2, norm)
    write_dataset(os.path.join(root, "data", "val"), x[2000:3000], y[2000:3000], 2, norm)
    write_dataset(os.path.join(root, "data", "test"), x[3000:], y[3000:], 2, norm)
    acc = export_mlp(os.path.join(root, "model"), "toy-2layer", dims, weights,
                     x[3000:], y[3000:], args.seed, 30)
    print(f"toy-2layer test accuracy {acc:.4f}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mnist-csv", required=True)
    ap.add_argument("--out", default="fixtures")
    ap.add_argument("--seed", type=int, default=1234)
    ap.add_argument("--epochs", type=int, default=40)
    args = ap.parse_args()
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    toy(args)
    mnist(args)


if __name__ == "__main__":
    main()
