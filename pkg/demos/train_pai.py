"""
Paired-association training, including the transfer trick for chains.

Stage 1 trains direct recall (study A:B pairs, then answer "what went
with A?"). The loss sits near chance for a while, then drops sharply
once the read head locks on; expect the jump somewhere past update
3000 with the defaults.

Stage 2 (--chain3) continues from the stage-1 weights on 3-step chains
(A:B in one list, B:C in another; query A, answer C). Training chains
from scratch stalls at chance, but warm-starting from direct recall
transfers, which is the interesting result. The full stage 2 takes
around 25 minutes, so it is off by default.

Run with  python3 demos/train_pai.py            (stage 1 only, ~1 min)
          python3 demos/train_pai.py --chain3   (both stages)
"""
import argparse

from chunkmem.training import RunConfig, evaluate, train

BASE = dict(task="pai", n_pairs=8, item_dim=32, model="hcam", d_model=64,
            n_layers=2, n_heads=4, chunk_size=8, top_k=2, local_window=16,
            batch=32, eval_episodes=200, dtype="float32")


def show(row):
    print(f"step {row.step:5d}  train_loss {row.train_loss:.4f}  "
          f"eval_acc {row.eval_acc:.3f}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=6000)
    ap.add_argument("--chain3", action="store_true",
                    help="continue onto 3-step chains after direct recall")
    args = ap.parse_args()

    print("stage 1: direct recall (chain length 1)")
    rc1 = RunConfig(chain_length=1, lr=1e-3, steps=args.steps, seed=0,
                    eval_every=500, target_accuracy=0.97, **BASE)
    model, rows = train(rc1, progress=show)
    print(f"stage 1 finished at step {rows[-1].step}, "
          f"eval_acc {rows[-1].eval_acc:.3f}")

    if not args.chain3:
        return

    print("\nstage 2: 3-step chains, warm-started from stage 1")
    # Smaller learning rate on purpose: fine-tuning fast wipes out the
    # transferred read behaviour and the model falls back to chance.
    rc3 = RunConfig(chain_length=3, lr=2e-4, steps=24000, seed=1,
                    eval_every=2000, **BASE)
    model, _ = train(rc3, init_model=model, progress=show)
    final = evaluate(model, rc3, n_episodes=1000)
    print(f"\nchain-3 accuracy over 1000 episodes: {final:.3f} "
          f"(chance 0.50)")


if __name__ == "__main__":
    main()
