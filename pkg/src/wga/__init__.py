"""World-grounded image synthesis agent: research-then-generate orchestration,
training-data construction, packing and attention masks, and benchmark
scoring."""

__version__ = "0.1.0"
