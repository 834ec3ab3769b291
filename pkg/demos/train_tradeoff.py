"""Train the head on a synthetic corpus and watch the margin and cycle accuracy.

Videos differ in a 16-dimensional subspace while frame-to-frame noise is
isotropic, so the useful directions are the ones the regularizer keeps and
the cycle loss can align.

Run: python3 demos/train_tradeoff.py   (about 15 s)
"""

import numpy as np

from cosettle.data import SyntheticModelSpec, generate_corpus
from cosettle.trainer import TrainConfig, train


def main():
    inter = np.diag([4.0] * 16 + [0.1] * 48)
    corpus = generate_corpus(SyntheticModelSpec(dim=64, n_h=7, n_w=7, frames_per_video=8, videos=200,
                                                intra_cov=4.0, inter_cov=inter, seed=0))
    _, history = train(corpus, TrainConfig(epochs=5, lam=1.0, alpha=0.25, base_lr=0.1, batch_size=4))
    print("epoch  d_inter  d_intra  margin  cyc_acc")
    for snap in history.epochs:
        print(f"{snap['epoch']:5d}  {snap['d_inter']:.4f}   {snap['d_intra']:.4f}   "
              f"{snap['margin']:.4f}  {snap['cyc_acc']:.4f}")


if __name__ == "__main__":
    main()
