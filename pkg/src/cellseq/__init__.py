"""cellseq: cell-sequence trajectory prediction toolkit.

Pipeline: raw (x, y, t) traces -> radius-bounded cell map -> token
sequences -> recurrent generators (baseline, and attention-conditioned on
the pre-trip traffic state) -> BLEU/METEOR prefix-split evaluation.
"""

__version__ = "0.1.0"
