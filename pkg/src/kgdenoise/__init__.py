"""Link prediction on noisy knowledge graphs.

The pipeline couples two views of each candidate link: a reliability-weighted
local subgraph around the endpoint pair, and a semantic subgraph collected
along relation-class paths after smoothing the raw relation vocabulary.
A contrastive term ties the two views together during training.
"""

__version__ = "0.1.0"
