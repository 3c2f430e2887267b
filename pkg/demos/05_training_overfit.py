"""Short single-pair training run showing the loss curve trending down.

Uses a reduced geometry (48x48, 2 blocks, 32 dims) and a livelier learning
rate so 80 steps finish in about a minute on a laptop core; the acceptance
suite runs the full-size 200-step check at the stock recipe (lr 1e-4).
"""

from pathlib import Path

from ivfuse.dataset import ImagePair, overfit_pair
from ivfuse.losses import LossWeights
from ivfuse.model import ModelConfig
from ivfuse.providers import HashTextEncoder
from ivfuse.sig import MaskSemantics, TextDescription, embed_text
from ivfuse.training import TrainConfig, train

out_dir = Path(__file__).parent / "out" / "overfit"
vis, ir, rect = overfit_pair((48, 48))
pair = ImagePair("overfit", vis, ir)
mask = MaskSemantics(rect.indicator(48, 48))
text = embed_text(TextDescription.from_text("a car in the dark"), HashTextEncoder(32))

config = TrainConfig(
    epochs=80, batch_size=8, crop=48, lr=1e-3, seed=0,
    weights=LossWeights(),
    model=ModelConfig(patch=4, dim=32, heads=4, text_dim=32, depth=2,
                      base_grid=(12, 12)),
)
result = train(config, [pair], {"overfit": (mask, text)}, out_dir)

print("step  total     ssim    grad    int     color")
for rec in result.history[:: max(1, len(result.history) // 10)]:
    print(f"{rec['step']:4d}  {rec['total']:.4f}  {rec['l_ssim']:.4f}  "
          f"{rec['l_grad']:.4f}  {rec['l_int']:.4f}  {rec['l_color']:.4f}")
first, last = result.history[0]["total"], result.history[-1]["total"]
print(f"\nloss {first:.4f} -> {last:.4f}  ({first / last:.1f}x reduction)")
print("checkpoint:", result.checkpoint_path)
print("history   :", out_dir / "loss_history.csv")
