"""Track z_ref(t) = 0.2 t with the coupled system for shrinking windows and several epsilons."""

from pathlib import Path

from avgctl.model import load_scenario, scenario_from_dict
from avgctl.track import build_reference, synthesize

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
base = load_scenario(SCENARIOS / "sin_flat.json")

print("window sweep at eps = 1")
for S in (0.4, 0.2, 0.1, 0.05):
    _, _, rep = synthesize(base, build_reference(base, S), S=S)
    print(f"  S={S:<5} N={rep.N:<3} sup_error={rep.sup_error:.5f} bound={rep.bound_paper:.4f} pass={rep.passed}")

print("epsilon sweep at eps * S = 0.05")
for eps in (0.1, 1.0, 10.0):
    d = base.to_dict()
    d["epsilon"], d["S"] = eps, 0.05 / eps
    sc = scenario_from_dict(d, base_dir=SCENARIOS)
    _, _, rep = synthesize(sc, build_reference(sc), S=sc.S)
    print(f"  eps={eps:<5} sup_error={rep.sup_error:.5f}")
