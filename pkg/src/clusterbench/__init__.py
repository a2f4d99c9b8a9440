"""Feature-space clustering engine and benchmark toolkit.

Submodules:

* ``feature_store``: bit-exact binary matrices, labels, manifests
* ``semantic_tree``: class hierarchy with coarsening and leaf/ancestor queries
* ``benchmarks``: imbalance / granularity / model-based benchmark families
* ``label_refine``: zero-shot relabeling over precomputed similarities
* ``neighbors``: exact blocked top-k nearest-neighbor mining
* ``kmeans``: spherical k-means with unit-norm centroids
* ``heads``: TEMI / SCANv2 self-distillation clustering heads, linear probe
* ``metrics``: Hungarian-matched accuracies, NMI, ECE, validity indices
* ``cli``: pipeline orchestration and fixture synthesis
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    assignment,
    benchmarks,
    feature_store,
    heads,
    kmeans,
    label_refine,
    metrics,
    neighbors,
    semantic_tree,
    synth,
)
