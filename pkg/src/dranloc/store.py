"""Per-image features: alignment pyramid, hypercolumn source maps, global descriptor.

Directory layout (one file set per image name)::

    <root>/<name>.fpyr       alignment pyramid (strides 1/4/16 by convention)
    <root>/<name>.hyp.fpyr   maps concatenated into the hypercolumn
    <root>/<name>.gdsc       global descriptor
"""

import os
import threading

from .feature import build_hypercolumn, load_pyramid, save_pyramid
from .retrieval import load_descriptor, save_descriptor


def keyframe_name(kf_id):
    return f"kf_{int(kf_id):04d}"


def query_name(q_id):
    return f"q_{int(q_id):04d}"


class FeatureStore:
    def __init__(self, root=None):
        self.root = root
        self._pyr, self._hyp_maps, self._desc, self._hyp = {}, {}, {}, {}
        self._lock = threading.Lock()

    def _path(self, name, suffix):
        return os.path.join(self.root, name + suffix)

    def _get(self, cache, name, suffix, loader):
        if name in cache:
            return cache[name]
        if self.root is None:
            raise KeyError(f"no features for image {name!r}")
        path = self._path(name, suffix)
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing feature file: {path}")
        value = loader(path)
        with self._lock:
            cache.setdefault(name, value)
        return cache[name]

    def pyramid(self, name):
        return self._get(self._pyr, name, ".fpyr", load_pyramid)

    def hyper_maps(self, name):
        return self._get(self._hyp_maps, name, ".hyp.fpyr", load_pyramid)

    def descriptor(self, name):
        return self._get(self._desc, name, ".gdsc", load_descriptor)

    def hypercolumn(self, name):
        if name not in self._hyp:
            hyp = build_hypercolumn([f for f, _ in self.hyper_maps(name).levels])
            with self._lock:
                self._hyp.setdefault(name, hyp)
        return self._hyp[name]

    def put(self, name, pyramid=None, hyper_maps=None, descriptor=None):
        if pyramid is not None:
            self._pyr[name] = pyramid
        if hyper_maps is not None:
            self._hyp_maps[name] = hyper_maps
            self._hyp.pop(name, None)
        if descriptor is not None:
            self._desc[name] = descriptor

    def names(self):
        return sorted(set(self._pyr) | set(self._hyp_maps) | set(self._desc))

    def save(self, root):
        os.makedirs(root, exist_ok=True)
        for name in sorted(self._pyr):
            save_pyramid(self._pyr[name], os.path.join(root, name + ".fpyr"))
        for name in sorted(self._hyp_maps):
            save_pyramid(self._hyp_maps[name], os.path.join(root, name + ".hyp.fpyr"))
        for name in sorted(self._desc):
            save_descriptor(self._desc[name], os.path.join(root, name + ".gdsc"))
