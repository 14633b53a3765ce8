"""Independent double-loop route scan over two architecture documents."""
from fractions import Fraction


def conv_table(doc):
    """``[(ordinal, (H, W), S)]`` for each conv, recomputed from scratch."""
    h, w = doc["input_shape"][1:]
    jump, field = 1, 0
    out = []
    for layer in doc["layers"]:
        kind = layer["kind"]
        k, s, p = layer.get("kernel", 1), layer.get("stride", 1), layer.get("pad", 0)
        if kind == "conv" or (kind == "pool" and layer.get("op") == "max"):
            h = (h + 2 * p - k) // s + 1
            w = (w + 2 * p - k) // s + 1
            field = field + jump * (k - 1)
            jump = jump * s
            if kind == "conv":
                out.append((len(out) + 1, (h, w), field))
    return out


def admissible_pairs(teacher_doc, student_doc, beta):
    b = Fraction(str(beta))
    pairs = set()
    for i, t_hw, s_i in conv_table(teacher_doc):
        for j, s_hw, s_j in conv_table(student_doc):
            if t_hw != s_hw:
                continue
            lo = (1 - b) * s_i
            hi = (1 + b) * s_i
            if lo <= s_j and s_j <= hi:
                pairs.add((i, j))
    return pairs
