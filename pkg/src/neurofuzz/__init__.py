"""Generation-based HTML fuzzing with recurrent character models.

A grammar produces a corpus of single-line HTML tags, stacked LSTM/GRU
networks (plain numpy) learn it, sampled tags are packed into test cases, and
drcov coverage of those cases is compared against dataset and mutation
baselines.
"""

__version__ = "0.1.0"
