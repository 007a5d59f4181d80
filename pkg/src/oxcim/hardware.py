"""Mapping trained networks onto crossbar tiles and the analog forward pass.

Every lowered weight matrix is partitioned into row x col blocks no larger
than the configured tile size.  Each block becomes one CrossbarTile whose
cells get a frozen device-to-device conductance draw at mapping time.
During inference the partial differential currents of row-split tiles are
summed digitally before the activation; column splits are concatenated.

Imbalance reference columns
---------------------------
Cell conductances are strictly positive, so the raw two-phase differential
current carries an input-dependent offset on top of the wanted dot
product: with an affine map G(w) = a*w + b,

    delta_c = v_read * (a * popcount_c + b * (n_pos - n_neg)).

The offset term is of the same order as the popcount for any unbalanced
input, which makes raw columns useless as signed dot products on real
data.  Each tile therefore carries two reference columns, programmed
all-(+1) and all-(-1); the average of their differential currents equals
the offset term (their a-parts cancel, their b-parts match the data
columns), including its sampled device variability.  Subtracting that
common-mode reference per tile recovers

    delta_c - delta_ref = v_read * a * popcount_c        (at zero noise)

exactly for affine maps, which is what the activation stage consumes.
Mapping with ``imbalance_reference=False`` keeps the raw biased behavior
for sensitivity studies.

The per-layer gain converts the comparator output (uA) into the same
activation units the digital path uses:

    gain_uA = v_read * a * sqrt(fan_in) * 1e6,  a = (G(+1) - G(-1)) / 2

so one popcount unit corresponds to v_read * a of differential current and
the ternary dead band r keeps its meaning across HRS/LRS configs.  For the
output layer the scaled value feeds the sigmoid neuron directly as its
input current in uA (one activation unit = 1 uA); the neuron is strictly
monotone, so class prediction is an argmax over its output voltages with
ties broken by the lowest class index.

READ events are keyed by (image ordinal, patch, phase), which makes scores
bit-identical no matter how evaluation is ordered or parallelized.
"""

from dataclasses import dataclass, field

import numpy as np

from .crossbar import ActivationMode, CrossbarTile, SenseChain, SenseResult, \
    sense_to_activation
from .errors import ConfigError, ShapeError
from .network import Activation, Conv2D, Dense, MaxPool2D, conv_weight_matrix, \
    im2col

DEFAULT_MAX_TILE = (64, 64)


@dataclass(frozen=True)
class TilePlacement:
    """One tile plus where its block sits in the lowered weight matrix."""

    tile: CrossbarTile
    row_start: int
    col_start: int
    n_data_cols: int  # trailing tile columns beyond this are references


@dataclass
class LayerMapping:
    layer_index: int
    rows: int
    cols: int
    gain_uA: float
    placements: list = field(default_factory=list)


@dataclass
class TiledNetwork:
    net: object
    config: object
    max_tile: tuple
    chain: SenseChain
    mappings: dict  # layer_index -> LayerMapping

    def all_cells(self):
        """Yield (trit grid, conductance grid) of the weight-bearing cells.

        Reference columns are excluded: they are periphery, not weights.
        """
        for m in self.mappings.values():
            for p in m.placements:
                yield (p.tile.cell_state[:, :p.n_data_cols],
                       p.tile.cell_g[:, :p.n_data_cols])


def _block_starts(total, block):
    return list(range(0, total, block))


def map_network_to_tiles(net, config, max_tile=DEFAULT_MAX_TILE, chain=None,
                         imbalance_reference=True):
    """Program every lowered weight matrix onto crossbar tiles.

    Deterministic: array ids are assigned in (layer, row block, col block)
    order and all conductance draws are keyed from them, so the same
    (network, config) always produces identical tiles.  With
    imbalance_reference (the default) every tile gets two extra reference
    columns; physical tile widths still respect max_tile.
    """
    config.require_states(net.precision)
    max_r, max_c = max_tile
    n_ref = 2 if imbalance_reference else 0
    if max_r < 1 or max_c < 1 + n_ref:
        raise ConfigError(f"max tile {max_tile} cannot hold data plus "
                          f"{n_ref} reference columns")
    net.require_weights()
    net.validate_chain()
    a = config.conductance_slope()
    mappings = {}
    array_id = 1
    for li in net.parametric_indices():
        layer = net.layers[li]
        w = net.weights[li]
        if isinstance(layer, Conv2D):
            wmat = conv_weight_matrix(w.data)
        else:
            wmat = w.data
        rows, cols = wmat.shape
        scale = net.scale_for(li + 1)  # the activation right after this layer
        mapping = LayerMapping(
            layer_index=li, rows=rows, cols=cols,
            gain_uA=config.v_read * a * scale * 1e6,
        )
        for r0 in _block_starts(rows, max_r):
            for c0 in _block_starts(cols, max_c - n_ref):
                block = wmat[r0:r0 + max_r, c0:c0 + max_c - n_ref]
                if n_ref:
                    refs = np.empty((block.shape[0], 2), dtype=np.int8)
                    refs[:, 0] = 1
                    refs[:, 1] = -1
                    grid = np.concatenate([block, refs], axis=1)
                else:
                    grid = block
                tile = CrossbarTile(config, grid, array_id=array_id)
                mapping.placements.append(
                    TilePlacement(tile, r0, c0, block.shape[1]))
                array_id += 1
        mappings[li] = mapping
    return TiledNetwork(net=net, config=config, max_tile=tuple(max_tile),
                        chain=chain or SenseChain(), mappings=mappings)


def _layer_delta(tiled, mapping, patches, read_pairs):
    """Differential currents (P, cols) for one lowered layer.

    Row-split partial deltas are summed digitally; each tile's comparator
    offset applies to its own partial result, and each tile's reference
    columns (when present) are averaged and subtracted from its data
    columns before the digital sum.
    """
    P = patches.shape[0]
    if patches.shape[1] != mapping.rows:
        raise ShapeError(f"patch width {patches.shape[1]} != layer rows "
                         f"{mapping.rows}")
    delta = np.zeros((P, mapping.cols), dtype=np.float64)
    off = tiled.chain.comparator_offset_uA
    for pl in mapping.placements:
        t = pl.tile
        xs = patches[:, pl.row_start:pl.row_start + t.rows]
        i_pos, i_neg = t.vmm_batch(xs, read_pairs)
        d = i_pos - i_neg
        if pl.n_data_cols < t.cols:
            ref = 0.5 * (d[:, pl.n_data_cols] + d[:, pl.n_data_cols + 1])
            d = d[:, :pl.n_data_cols] - ref[:, None]
        delta[:, pl.col_start:pl.col_start + pl.n_data_cols] += d + off
    return delta


def forward_hardware(tiled, x, image_ordinal=0):
    """Analog-simulated forward pass; returns the 10 neuron voltages.

    Same layer walk as forward_ideal, but every conv/dense matmul runs as
    two-phase READs on the mapped tiles.  image_ordinal namespaces the READ
    ids so distinct images never share cycle-to-cycle noise.
    """
    net = tiled.net
    arr = np.asarray(x.data if hasattr(x, "data") else x, dtype=np.int8)
    if tuple(arr.shape) != tuple(net.input_shape):
        raise ShapeError(f"input shape {arr.shape} != {net.input_shape}")
    from .network import maxpool  # shared pooling helper

    val = arr
    delta = None
    pre_spatial = None
    gain = None
    for i, layer in enumerate(net.layers):
        if isinstance(layer, Conv2D):
            patches, (oh, ow) = im2col(val, layer.kernel, layer.stride)
            m = tiled.mappings[i]
            pairs = np.uint64(image_ordinal) * np.uint64(patches.shape[0]) \
                + np.arange(patches.shape[0], dtype=np.uint64)
            delta = _layer_delta(tiled, m, patches, pairs)
            gain = m.gain_uA
            pre_spatial = (oh, ow)
        elif isinstance(layer, Dense):
            m = tiled.mappings[i]
            flat = val.reshape(1, -1)
            pairs = np.asarray([image_ordinal], dtype=np.uint64)
            delta = _layer_delta(tiled, m, flat, pairs)
            gain = m.gain_uA
            pre_spatial = None
        elif isinstance(layer, Activation):
            if layer.kind == "sigmoid_output":
                res = SenseResult(i_pos_uA=delta.ravel(),
                                  i_neg_uA=np.zeros(delta.size))
                # comparator offsets were already applied per tile
                return sense_to_activation(res, ActivationMode.OUTPUT_SIGMOID,
                                           gain_uA=gain,
                                           chain=SenseChain(0.0, tiled.chain.neuron))
            mode = ActivationMode.HIDDEN_BINARY if layer.kind == "binary" \
                else ActivationMode.HIDDEN_TERNARY
            res = SenseResult(i_pos_uA=delta, i_neg_uA=np.zeros_like(delta))
            act = sense_to_activation(res, mode, r=layer.r, gain_uA=gain,
                                      chain=SenseChain(0.0, tiled.chain.neuron))
            if pre_spatial is not None:
                oh, ow = pre_spatial
                val = act.reshape(oh, ow, -1).transpose(2, 0, 1)
            else:
                val = act.ravel()
            delta = None
        elif isinstance(layer, MaxPool2D):
            val = maxpool(val, layer.size)
    raise ConfigError("network ended without a sigmoid_output activation")


def predict_hardware(tiled, x, image_ordinal=0):
    return int(np.argmax(forward_hardware(tiled, x, image_ordinal)))
