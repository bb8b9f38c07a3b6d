import pytest

from frustum_forge.synth import SynthSpec, gen_scene


@pytest.fixture(scope="session")
def synth_pair():
    return gen_scene(SynthSpec(seed=42))


@pytest.fixture(scope="session")
def sparse_pair():
    # a handful of small objects, no clutter
    spec = SynthSpec(n_objects={2: (2, 2), 3: (1, 1), 4: (1, 1)}, clutter_points=0, seed=5)
    return gen_scene(spec)
