"""Brute-force complexity counter working from the JSON form of an architecture.

Deliberately shares no code with the library: it re-derives every output
shape from the layer dictionaries and counts multiply-adds and parameters
by direct enumeration of the weights involved.
"""


def _out_extent(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


def walk(doc):
    """Return a list of ``(label, multiply_adds, params)`` rows for ``doc``.

    ``doc`` is ``{"name", "input_shape": [C, H, W], "layers": [...]}``.
    """
    shape = list(doc["input_shape"])
    history = []
    rows = []
    for idx, layer in enumerate(doc["layers"]):
        kind = layer["kind"]
        kernel = layer.get("kernel", 1)
        stride = layer.get("stride", 1)
        pad = layer.get("pad", 0)
        if kind == "conv":
            c_in, h, w = shape
            c_out = layer["channels"]
            ho, wo = _out_extent(h, kernel, stride, pad), _out_extent(w, kernel, stride, pad)
            # one multiply-add per (output pixel, output channel, input channel, kernel tap)
            macs = 0
            for _ in range(ho * wo):
                macs += c_out * c_in * kernel * kernel
            rows.append((f"{idx}:conv", macs, c_out * c_in * kernel * kernel))
            shape = [c_out, ho, wo]
        elif kind == "bn":
            rows.append((f"{idx}:bn", 0, 2 * shape[0]))
        elif kind == "act":
            pass
        elif kind == "pool":
            if layer.get("op") == "global-avg":
                shape = [shape[0]]
            else:
                c, h, w = shape
                shape = [c, _out_extent(h, kernel, stride, pad), _out_extent(w, kernel, stride, pad)]
        elif kind == "dense":
            d = 1
            for v in shape:
                d *= v
            k = layer["channels"]
            rows.append((f"{idx}:dense", d * k, d * k + k))
            shape = [k]
        elif kind == "residual-add":
            src = layer["residual_source"]
            src_shape = list(doc["input_shape"]) if src == -1 else history[src]
            if src_shape != shape:
                c_in, sh, sw = src_shape
                c_out, h, w = shape
                stride = next(s for s in range(1, sh + 1)
                              if (sh - 1) // s + 1 == h and (sw - 1) // s + 1 == w)
                assert stride >= 1
                rows.append((f"{idx}:residual-add.adapter", c_in * c_out * h * w, c_in * c_out + 2 * c_out))
        else:
            raise ValueError(kind)
        history.append(list(shape))
    return rows


def totals(doc):
    rows = walk(doc)
    return sum(r[1] for r in rows), sum(r[2] for r in rows)
