"""Per-region style transfer, interpolation and ResBlk crossover on a trained model.

    python demos/region_editing.py --checkpoint runs/demo/checkpoint.ckpt

Without --checkpoint a model is trained briefly first (--steps).
For each edit the script reports how much every region of the output changed.
"""

import argparse

import numpy as np

from sean import Tensor, no_grad
from sean.networks import crossover_forward
from sean.regions import assemble_styles, blend_styles
from sean.training import TrainConfig, gen_synthetic_dataset, load_state, stack_samples, train

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--checkpoint")
parser.add_argument("--steps", type=int, default=200)
args = parser.parse_args()

data = gen_synthetic_dataset(16, 3, 32, seed=0)
if args.checkpoint:
    model = load_state(args.checkpoint).model
else:
    model = train(TrainConfig(steps=args.steps, seed=0), data).state.model
# eval mode uses the running statistics, so one sample's output depends only on its own codes
model.eval()

images, masks = stack_samples(data[:3])
labels = masks[2:3]
s, dim = model.cfg.generator.num_labels, model.cfg.generator.style_dim


def region_change(out, base):
    diff = np.abs(out - base).max(axis=1)[0]
    return "  ".join(f"region {j}: {diff[labels[0] == j].max():.3f}" for j in range(s))


with no_grad():
    st_a = model.encode(Tensor(images[:1]), masks[:1])
    st_b = model.encode(Tensor(images[1:2]), masks[1:2])
    base = model.generator(st_a, labels).data

    # swap one region's code at a time; the change concentrates in that region
    for j in range(s):
        sources = {k: (st_b if k == j else st_a) for k in range(s)}
        out = model.generator(assemble_styles(sources, s, dim), labels).data
        print(f"style of region {j} from B   -> {region_change(out, base)}")

    # interpolating every region moves smoothly from A's reconstruction to B's styles
    end = model.generator(st_b, labels).data
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        out = model.generator(blend_styles(st_a, st_b, t), labels).data
        print(f"t = {t:.2f}  mean |out - A| {np.abs(out - base).mean():.4f}  mean |out - B| {np.abs(out - end).mean():.4f}")

    # crossover: early ResBlks set coarse layout, later ones fine appearance
    n = model.cfg.generator.style_blocks
    for k in range(n + 1):
        sel = "A" * k + "B" * (n - k)
        out = crossover_forward(model.generator, st_a, st_b, sel, labels).data
        print(f"crossover {sel}  mean |out - A| {np.abs(out - base).mean():.4f}")
