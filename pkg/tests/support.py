"""Small architectures, datasets and candidates shared by the test modules."""
import numpy as np

from kpnet.data import Dataset
from kpnet.graph import Architecture
from kpnet.graph.arch import act, bn, conv, dense, global_avgpool, maxpool, residual_add
from kpnet.kpn import make_candidate
from kpnet.model import Network
from kpnet.routes import enumerate_routes


def tiny_teacher(input_shape=(1, 8, 8), classes=3) -> Architecture:
    return Architecture("tiny-teacher", input_shape, (
        conv(4, 3), bn(), act(),
        conv(6, 3, 2), bn(), act(),
        conv(8, 3), bn(), act(),
        global_avgpool(), dense(classes),
    ))


def tiny_student(input_shape=(1, 8, 8), classes=3, width=3) -> Architecture:
    """Residual student with one channel-changing (adapter) shortcut."""
    return Architecture("tiny-student", input_shape, (
        conv(width, 3), bn(), act(),                      # 0-2
        conv(width, 3), bn(), residual_add(2), act(),     # 3-6
        conv(width + 2, 3, 2), bn(), act(),               # 7-9
        conv(width + 2, 3), bn(), residual_add(6), act(),  # 10-13, adapter 3 -> 5, stride 2
        global_avgpool(), dense(classes),
    ))


def plain_cnn(input_shape=(1, 8, 8), classes=3) -> Architecture:
    return Architecture("plain-cnn", input_shape, (
        conv(4, 3), bn(), act(), maxpool(2), conv(6, 3), bn(), act(), global_avgpool(), dense(classes),
    ))


def tiny_dataset(n=60, classes=3, shape=(1, 8, 8), seed=0) -> Dataset:
    """Class-separable images: each class lights a different horizontal band."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    images = rng.normal(0, 0.3, size=(n, *shape)).astype(np.float32)
    band = shape[1] // classes
    for i, y in enumerate(labels):
        images[i, :, y * band : (y + 1) * band, :] += 1.5
    return Dataset(images, labels.astype(np.int64), classes)


def random_candidate(seed: int, dtype=np.float64):
    """A freshly initialized KPN on the tiny pair with a randomly picked route."""
    rng = np.random.default_rng(seed)
    t_arch, s_arch = tiny_teacher(), tiny_student(width=int(rng.integers(2, 5)))
    routes = enumerate_routes(t_arch, s_arch, beta=1.0)
    route = routes[int(rng.integers(len(routes)))]
    teacher = Network(t_arch, seed=seed + 100, dtype=dtype).freeze()
    student = Network(s_arch, seed=seed, dtype=dtype)
    c = make_candidate(teacher, student, route, seed=seed)
    return teacher, c


def random_batch(seed: int, n=6, shape=(1, 8, 8), classes=3, dtype=np.float64):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, *shape)).astype(dtype), rng.integers(0, classes, n)


def random_conv_arch(rng: np.random.Generator, name: str, input_hw=32, max_convs=12) -> Architecture:
    """Random conv / max-pool stack (with bn and activations) that keeps a positive spatial size."""
    layers = []
    h = input_hw
    for _ in range(int(rng.integers(1, max_convs + 1))):
        k = int(rng.choice([1, 3, 5]))
        s = int(rng.choice([1, 1, 2]))
        if (h + 2 * (k // 2) - k) // s + 1 < 1:
            s = 1
        layers += [conv(int(rng.integers(1, 9)), k, s), bn(), act()]
        h = (h + 2 * (k // 2) - k) // s + 1
        if h >= 4 and rng.random() < 0.2:
            layers.append(maxpool(2))
            h //= 2
    return Architecture(name, (1, input_hw, input_hw), tuple(layers))
