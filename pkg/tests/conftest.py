import hypothesis
import numpy as np

np.seterr(all="raise", under="ignore")

hypothesis.settings.register_profile(
    "default", deadline=None, max_examples=50, derandomize=True)
hypothesis.settings.register_profile(
    "thorough", deadline=None, max_examples=300)
hypothesis.settings.load_profile("default")
