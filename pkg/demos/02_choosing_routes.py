"""Which teacher layer should guide which student layer?

Lists receptive fields for the teacher and a slim student, shows which
(knowledge, injection) pairs survive the spatial and receptive-field
filters, and how the tolerance widens the candidate set.  No training.

    python demos/02_choosing_routes.py
"""
from kpnet.graph import preset, small_cnn
from kpnet.graph.complexity import conv_receptive_fields
from kpnet.routes import enumerate_routes


def main():
    teacher, student = small_cnn(), preset("26--")
    t_rf, s_rf = conv_receptive_fields(teacher), conv_receptive_fields(student)
    print("teacher conv receptive fields:", t_rf)
    print("student conv receptive fields (first ten):", dict(list(s_rf.items())[:10]), "...\n")

    for beta in (0.0, 0.1, 0.2, 0.5):
        routes = enumerate_routes(teacher, student, beta)
        labels = ", ".join(f"{r.label}({r.teacher_rf}->{r.student_rf})" for r in routes)
        print(f"tolerance {beta:.1f}: {len(routes):2d} route(s)  {labels}")

    print("\nEach route becomes one candidate in the pruning race; the one with the lowest")
    print("validation loss survives.  Try: kpnet routes --teacher small-cnn --arch 26-- --beta 0.2")


if __name__ == "__main__":
    main()
