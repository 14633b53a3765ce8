"""How much cheaper are the slim students?

Walks through the bottleneck blocks used to slim a network down, then
prints parameter and multiply-add totals for every preset.  Nothing is
trained; this runs in about a second.

    python demos/01_slim_students.py
"""
from kpnet.graph import PRESET_NAMES, count_complexity, preset, small_cnn
from kpnet.graph.blocks import BottleneckSpec, bottleneck_arch, bottleneck_cost, reduction_ratio
from kpnet.graph.arch import conv
from kpnet.graph import Architecture


def main():
    print("A 3x3 conv from 64 to 64 channels on an 8x8 map, against its two bottleneck replacements.\n")
    standard = count_complexity(Architecture("std", (64, 8, 8), (conv(64, 3),))).total_multiply_adds
    print(f"  standard conv          {standard:>10,d} multiply-adds")
    for variant in "AB":
        spec = BottleneckSpec(variant, 64, 32, 64, 3)
        exact, approx = reduction_ratio(spec)
        cost = bottleneck_cost(spec, 8, 8)
        assert cost == count_complexity(bottleneck_arch(spec, 8, 8)).total_multiply_adds
        print(f"  type {variant}, squeeze to 32  {cost:>10,d} multiply-adds  "
              f"ratio {float(exact):.5f} (rule of thumb {approx})")

    print("\nThe desk-scale teacher and the student presets on 28x28 single-channel input:\n")
    teacher = count_complexity(small_cnn())
    print(f"  {'network':<10} {'convs':>5} {'params':>10} {'multiply-adds':>15}  {'vs teacher':>10}")
    print(f"  {'small-cnn':<10} {small_cnn().depth():>5} {teacher.total_params:>10,d} "
          f"{teacher.total_multiply_adds:>15,d}  {1:>10.2f}")
    for name in PRESET_NAMES:
        arch = preset(name)
        rep = count_complexity(arch)
        print(f"  {name:<10} {arch.depth():>5} {rep.total_params:>10,d} {rep.total_multiply_adds:>15,d}  "
              f"{rep.total_multiply_adds / teacher.total_multiply_adds:>10.2f}")
    print("\nPer-layer detail is one command away: kpnet complexity --arch 26--")


if __name__ == "__main__":
    main()
