"""Print numerical trdeg ladders next to the predicted tier sizes for a few models."""
from orbitrecovery.algebra import trdeg_ladder
from orbitrecovery.models import make_model

MODELS = [
    make_model("mra", 6),
    make_model("mra_projected", 4),
    make_model("cryo", 2, (2, 2, 2)),
    make_model("cryo_projected", 1, (4, 4)),
    make_model("procrustes", m=5),
    make_model("sphere", 10),
]

if __name__ == "__main__":
    for model in MODELS:
        rep = trdeg_ladder(model)
        print(f"{model.kind:15s} d={model.d:4d} ranks={rep.ranks} predicted={rep.predicted} "
              f"min gap={min(rep.cut_ratios):.2e}")
