"""Straight-through-estimator training for the quantized networks.

Latent float weights live in [-1, 1]; the forward pass quantizes them (and
all hidden activations) with exactly the same trit functions inference
uses, so there is no train/infer skew.  Gradients cross each quantizer via
the straight-through estimator: identity inside the clip range |x| <= 1,
zero outside.  Pre-activations are scaled by the same sqrt(fan-in) factor
the inference engine applies, which is what keeps a useful fraction of
units inside the STE pass-band without any batch normalization.

The output layer is a bank of sigmoids; the loss is categorical
cross-entropy on the sigmoid outputs normalized to a distribution (the
usual probability-input cross entropy; no softmax anywhere).

Optimizer: Adam, defaults lr 1e-3, batch 64.  Minibatch order and init come
from one seeded generator, and all reductions are plain numpy sums, so a
run is reproducible end to end.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import pad_to_32
from .errors import ConfigError, TrainingDiverged
from .network import Activation, Conv2D, Dense, MaxPool2D, im2col, \
    thermometric_trits
from .quant import act_binary, act_ternary, quantize_weights


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_r: float = 0.5   # ternary weight-quantization dead band
    val_fraction: float = 0.1
    seed: int = 0


@dataclass
class TrainResult:
    net: object
    loss_curve: list = field(default_factory=list)  # (epoch, train, val)
    initial_val_loss: float = float("nan")

    def write_loss_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            w.writerow([0, "", repr(self.initial_val_loss)])
            for epoch, tr, va in self.loss_curve:
                w.writerow([epoch, repr(tr), repr(va)])


def _encode_batch(images):
    """uint8 images -> (B, C, 32, 32) +/-1 trits, flattened per sample."""
    padded = pad_to_32(images)
    out = np.empty((padded.shape[0], 8, 32, 32), dtype=np.int8)
    for i in range(padded.shape[0]):
        out[i] = thermometric_trits(padded[i])
    return out


class _Adam:
    def __init__(self, shapes, cfg):
        self.m = [np.zeros(s, dtype=np.float64) for s in shapes]
        self.v = [np.zeros(s, dtype=np.float64) for s in shapes]
        self.t = 0
        self.cfg = cfg

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p -= c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            np.clip(p, -1.0, 1.0, out=p)


class Trainer:
    """Backprop engine for one architecture (conv/pool/dense/activation)."""

    def __init__(self, net_template, cfg=None):
        self.cfg = cfg or TrainConfig()
        self.net = net_template
        self.precision = net_template.precision
        net_template.validate_chain()
        self.rng = np.random.default_rng(self.cfg.seed)
        self._build_plans()
        self.params = [
            self.rng.uniform(-0.9, 0.9, size=self._weight_shape(i))
            for i in self.net.parametric_indices()
        ]
        self.opt = _Adam([p.shape for p in self.params], self.cfg)

    # -- architecture plumbing ------------------------------------------------

    def _weight_shape(self, li):
        layer = self.net.layers[li]
        shape = self._shapes[li]
        if isinstance(layer, Conv2D):
            return (layer.out_channels, shape[0], layer.kernel, layer.kernel)
        return (int(np.prod(shape)), layer.out_units)

    def _build_plans(self):
        """Per-layer input shapes and gather indices for conv lowering."""
        shape = tuple(self.net.input_shape)
        self._shapes = {}
        self._gather = {}
        for i, layer in enumerate(self.net.layers):
            self._shapes[i] = shape
            if isinstance(layer, Conv2D):
                flat_ids = np.arange(int(np.prod(shape))).reshape(shape)
                idx, (oh, ow) = im2col(flat_ids, layer.kernel, layer.stride)
                self._gather[i] = (idx, oh, ow)
                shape = (layer.out_channels, oh, ow)
            elif isinstance(layer, MaxPool2D):
                shape = (shape[0], shape[1] // layer.size, shape[2] // layer.size)
            elif isinstance(layer, Dense):
                shape = (layer.out_units,)

    def quantized_weights(self):
        """Current latent weights quantized to TernaryTensors."""
        return [quantize_weights(p, self.precision, self.cfg.weight_r)
                for p in self.params]

    def network(self):
        """NetworkDescription carrying the current quantized weights."""
        weights = [None] * len(self.net.layers)
        for w, li in zip(self.quantized_weights(), self.net.parametric_indices()):
            weights[li] = w
        return type(self.net)(self.precision, self.net.input_shape,
                              list(self.net.layers), weights)

    # -- forward / backward ----------------------------------------------------

    def _quant_act(self, u, layer, surrogate):
        if surrogate:
            return np.clip(u, -1.0, 1.0)
        if layer.kind == "binary":
            return act_binary(u).astype(np.float64)
        return act_ternary(u, layer.r).astype(np.float64)

    def _quant_weight(self, p, surrogate):
        if surrogate:
            return np.clip(p, -1.0, 1.0)
        return quantize_weights(p, self.precision, self.cfg.weight_r) \
            .data.astype(np.float64)

    def loss_and_grads(self, x_trits, labels, surrogate=False):
        """Mean loss and latent-weight gradients for one encoded batch.

        surrogate=True swaps every quantizer for its clipped-identity
        backward surrogate in the forward pass too, giving a differentiable
        network whose analytic gradients can be checked against finite
        differences.
        """
        for k, p in enumerate(self.params):
            if not np.all(np.isfinite(p)):
                raise TrainingDiverged(
                    f"latent weights of parametric layer {k} became non-finite")
        B = x_trits.shape[0]
        y = np.asarray(labels)
        val = x_trits.reshape(B, -1).astype(np.float64)
        stack = []      # per-layer backward records
        pidx = 0
        pre = None
        for i, layer in enumerate(self.net.layers):
            if isinstance(layer, Conv2D):
                idx, oh, ow = self._gather[i]
                patches = val[:, idx.ravel()].reshape(B * idx.shape[0], idx.shape[1])
                wq = self._quant_weight(self.params[pidx], surrogate)
                wmat = wq.reshape(wq.shape[0], -1).T
                pre = patches @ wmat
                stack.append(("conv", i, pidx, patches, wmat, (oh, ow)))
                pidx += 1
            elif isinstance(layer, Dense):
                wq = self._quant_weight(self.params[pidx], surrogate)
                pre = val @ wq
                stack.append(("dense", i, pidx, val, wq, None))
                pidx += 1
            elif isinstance(layer, Activation):
                scale = self.net._scales[i]
                u = pre / scale
                if layer.kind == "sigmoid_output":
                    z = u
                    p = 1.0 / (1.0 + np.exp(-np.clip(z, -60, 60)))
                    s = p.sum(axis=1, keepdims=True)
                    phat = p / s
                    eps = 1e-12
                    losses = -np.log(phat[np.arange(B), y] + eps)
                    loss = float(losses.mean())
                    if not np.isfinite(loss):
                        raise TrainingDiverged(f"loss became {loss}")
                    # d loss / d z for the normalized-sigmoid cross entropy
                    dz = p * (1.0 - p) / s
                    dz[np.arange(B), y] -= (1.0 - p[np.arange(B), y])
                    dz /= B
                    dpre = dz / scale
                    grads = self._backward(stack, dpre, B)
                    return loss, grads
                a = self._quant_act(u, layer, surrogate)
                mask = (np.abs(u) <= 1.0).astype(np.float64)
                stack.append(("act", i, None, mask, scale, None))
                ishape = self._shapes[i]
                if len(ishape) == 3:
                    # pre is (B*P, O); restore (B, O, oh, ow)
                    prev = stack[-2]
                    oh, ow = prev[5]
                    val = a.reshape(B, oh, ow, -1).transpose(0, 3, 1, 2) \
                        .reshape(B, -1)
                    stack[-1] = ("act", i, None, mask, scale, (oh, ow))
                else:
                    val = a
            elif isinstance(layer, MaxPool2D):
                c, h, w = self._shapes[i]
                s = layer.size
                x4 = val.reshape(B, c, h // s, s, w // s, s)
                mx = x4.max(axis=(3, 5))
                ties = (x4 == mx[:, :, :, None, :, None]).astype(np.float64)
                ties /= ties.sum(axis=(3, 5), keepdims=True)
                stack.append(("pool", i, None, ties, (c, h, w, s), None))
                val = mx.reshape(B, -1)
        raise ConfigError("network must end in a sigmoid_output activation")

    def _backward(self, stack, dpre, B):
        grads = [None] * len(self.params)
        dval = None  # gradient wrt the flattened layer input
        for kind, i, pidx, a1, a2, a3 in reversed(stack):
            if kind == "dense":
                flat, wq = a1, a2
                grads[pidx] = flat.T @ dpre
                dval = dpre @ wq.T
                dpre = None
            elif kind == "conv":
                patches, wmat, (oh, ow) = a1, a2, a3
                gw_mat = patches.T @ dpre          # (K, O)
                grads[pidx] = gw_mat.T.reshape(self.params[pidx].shape)
                dcol = dpre @ wmat.T               # (B*P, K)
                idx, _, _ = self._gather[i]
                n_in = int(np.prod(self._shapes[i]))
                dval = np.empty((B, n_in))
                dc = dcol.reshape(B, -1)
                flat_idx = idx.ravel()
                for b in range(B):
                    dval[b] = np.bincount(flat_idx, weights=dc[b],
                                          minlength=n_in)
                dpre = None
            elif kind == "act":
                mask, scale = a1, a2
                if a3 is not None:
                    oh, ow = a3
                    # dval is (B, O*oh*ow) in (O, oh, ow) order; undo to (B*P, O)
                    o = mask.shape[1]
                    dact = dval.reshape(B, o, oh, ow).transpose(0, 2, 3, 1) \
                        .reshape(B * oh * ow, o)
                else:
                    dact = dval
                dpre = dact * mask / scale
                dval = None
            elif kind == "pool":
                ties, (c, h, w, s) = a1, a2
                dmx = dval.reshape(B, c, h // s, 1, w // s, 1)
                dval = (ties * dmx).reshape(B, c * h * w)
        # STE through the weight quantizers: identity inside |latent| <= 1
        for k, p in enumerate(self.params):
            grads[k] = grads[k] * (np.abs(p) <= 1.0)
        return grads

    # -- training loop ---------------------------------------------------------

    def evaluate_loss(self, images, labels, batch_size=256):
        total, count = 0.0, 0
        for lo in range(0, images.shape[0], batch_size):
            hi = min(lo + batch_size, images.shape[0])
            x = _encode_batch(images[lo:hi])
            loss, _ = self.loss_and_grads(x, labels[lo:hi])
            total += loss * (hi - lo)
            count += hi - lo
        return total / max(count, 1)

    def fit(self, images, labels, epochs=None, log_fn=None):
        cfg = self.cfg
        epochs = cfg.epochs if epochs is None else epochs
        n = images.shape[0]
        n_val = int(round(n * cfg.val_fraction))
        order = self.rng.permutation(n)
        val_ids = order[:n_val]
        train_ids = order[n_val:]
        result = TrainResult(net=None)
        result.initial_val_loss = self.evaluate_loss(images[val_ids],
                                                     labels[val_ids]) \
            if n_val else float("nan")
        for epoch in range(1, epochs + 1):
            perm = self.rng.permutation(train_ids.shape[0])
            ids = train_ids[perm]
            running, seen = 0.0, 0
            for lo in range(0, ids.shape[0], cfg.batch_size):
                batch = ids[lo:lo + cfg.batch_size]
                x = _encode_batch(images[batch])
                loss, grads = self.loss_and_grads(x, labels[batch])
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"epoch {epoch}, batch at {lo}: loss={loss}")
                self.opt.step(self.params, grads)
                running += loss * batch.shape[0]
                seen += batch.shape[0]
            train_loss = running / max(seen, 1)
            val_loss = self.evaluate_loss(images[val_ids], labels[val_ids]) \
                if n_val else float("nan")
            result.loss_curve.append((epoch, train_loss, val_loss))
            if log_fn:
                log_fn(f"epoch {epoch:3d}  train {train_loss:.4f}  "
                       f"val {val_loss:.4f}")
        result.net = self.network()
        return result


def train(net_template, images, labels, cfg=None, log_fn=None):
    """Train the architecture on (images, labels); returns a TrainResult."""
    trainer = Trainer(net_template, cfg)
    return trainer.fit(images, labels, log_fn=log_fn)
