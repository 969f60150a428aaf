"""Few-shot claim verification from seq2seq convergence dynamics.

Pipeline: train small encoder-decoder models on unlabeled claim-evidence
pairs in both directions, snapshot generated mutations at every epoch, turn
each (claim, evidence, mutation) triple into sentence-embedding similarity
scores, concatenate them per instance, and fit a logistic classifier on a
handful of labeled examples. Includes the SEED baseline and the evaluation
harness.
"""

__version__ = "0.1.0"
