"""Walk through the network's feature pyramids and operating modes.

Run: python demos/03_model_anatomy.py
"""
import torch

from cmfnet.model import CMFNet, ModelConfig, count_params

cfg = ModelConfig(base_channels=32, cascade_levels=3)
model = CMFNet(cfg).eval()
ms, pan = torch.rand(1, 4, 64, 64), torch.rand(1, 1, 256, 256)

with torch.no_grad():
    f = model.features(ms, pan)

# The MS encoder climbs from the MS grid up to full resolution, halving
# channels at each step; the PAN encoder goes the other way.
for name in ("S", "P", "E"):
    print(name, [tuple(x.shape[1:]) for x in f[name]])
print("decoder output", tuple(f["F_o"].shape[1:]))
print("parameters:", count_params(cfg))

# Fewer cascade levels drop the coarse stages of both the fusion encoder and the PAN encoder.
for levels in (1, 2, 3):
    print(f"L={levels}: {count_params(ModelConfig(32, levels)):,} parameters")

# The ablation modes blank one input. Changing the blanked input leaves the output unchanged.
sr = CMFNet(ModelConfig(base_channels=8, mode="sr_no_pan")).eval()
with torch.no_grad():
    same = torch.equal(sr(ms, pan), sr(ms, torch.rand_like(pan)))
print("sr_no_pan ignores PAN:", same)
