"""One set of weights, two depths: build, switch, count."""

import torch

from dynet import build_model, count_params, estimate_flops, switch_variant
from dynet.analysis import compare_variants, format_reports, reported_reductions

model = build_model("L", seed=0)  # default width 48, reuse [4, 6, 6, 8]

# unique params are what is stored; unrolled is what an untied net of equal depth would store
print("L unique / unrolled:", count_params(model))

switch_variant(model, "S")  # reuse [2, 3, 3, 4], nothing is copied
print("S unique / unrolled:", count_params(model))

# cost at the usual 224x224 reference size
reports = compare_variants(model, ["L", "S"], 224, 224)
print(format_reports(reports))
print("S/L FLOPs:", reports[1].flops / reports[0].flops)
print("reported reductions vs PromptIR:", reported_reductions())

# a per-component breakdown shows where the savings come from
_, levels = estimate_flops(model, 224, 224, breakdown=True)
for name, flops in sorted(levels.items(), key=lambda kv: -kv[1])[:5]:
    print(f"{name:12s} {flops / 1e9:7.2f} GFLOPs")

# both depths run on the same tensor
x = torch.rand(1, 3, 64, 64)
with torch.no_grad():
    ys = model(x)
    switch_variant(model, "L")
    yl = model(x)
print("max |L - S| on a random input:", float((yl - ys).abs().max()))
