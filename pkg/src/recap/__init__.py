"""Video captioning with feature-reconstruction regularization.

An attention LSTM decoder over precomputed frame features, three
reconstructor variants that reproduce video features from the decoder's
hidden states, caption metrics (BLEU-4, ROUGE-L, CIDEr), and staged
cross-entropy / self-critical training, all on a small self-contained
reverse-mode autodiff core.
"""

__version__ = "0.1.0"
