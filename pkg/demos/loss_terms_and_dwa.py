"""The composite loss on one batch, and how dynamic weight averaging reacts.

Evaluates every loss component for an untrained generator, then feeds a made-up
loss history into the DWA scheduler to show the weights shifting toward the
component that stopped improving.

    python3 demos/loss_terms_and_dwa.py
"""
import torch

from tdsr.dwa import DwaState, record_epoch, update_weights
from tdsr.fixtures import generate_page, make_pair
from tdsr.generator import GeneratorConfig, build_generator, to_signed
from tdsr.losses import COMPONENTS, compute_losses, total_loss
from tdsr.supervisors import surrogate_bundle


def main():
    torch.manual_seed(0)
    bundle = surrogate_bundle(0)
    model = build_generator(GeneratorConfig.desk(), seed=0)
    pair = make_pair(generate_page(3, size=128), (0, 0))
    lr = torch.from_numpy(pair.lr).float()[None]
    hr = torch.from_numpy(pair.hr).float()[None]

    with torch.no_grad():
        losses = compute_losses(model(to_signed(lr)), hr, lr, bundle, COMPONENTS, k_top=32)
    for name, value in losses.floats().items():
        print(f"  {name:<10} {value:.5f}")
    print(f"  total (unit weights) {float(total_loss(losses, dict.fromkeys(COMPONENTS, 1.0))):.5f}")

    state = DwaState(("mse", "ctpn_deep", "hue"), temperature=2.0)
    history = [{"mse": 1.0, "ctpn_deep": 1.0, "hue": 1.0},
               {"mse": 0.5, "ctpn_deep": 0.9, "hue": 1.0}]
    for t, means in enumerate(history):
        print(f"epoch {t}: weights {update_weights(state, t)}")
        record_epoch(state, means)
    lam = update_weights(state, 2)
    print("epoch 2: " + ", ".join(f"{k}={v:.3f}" for k, v in lam.items()))
    print("the stalled hue term gets the largest weight; the weights sum to", round(sum(lam.values()), 12))


if __name__ == "__main__":
    main()
