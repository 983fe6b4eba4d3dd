"""Weak-supervision pipeline for social-history text classification.

LLM (or mock) annotation with contrastive few-shot prompts, a from-scratch
gradient-boosted tree classifier trained on the weak labels, and agreement /
discrimination / cost reporting.
"""

__version__ = "0.1.0"
