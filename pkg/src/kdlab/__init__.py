"""kdlab: a desk-scale knowledge-distillation laboratory.

Trains a miniature transformer teacher, scores every attention head and
FFN neuron by an interpolated expressiveness + student-friendliness
score, sparsifies the lowest-scoring units, and re-distills a rewound
student from the sparse teacher.
"""

__version__ = "0.1.0"

from kdlab.backend import BACKEND_NAME

__all__ = ["BACKEND_NAME", "__version__"]
