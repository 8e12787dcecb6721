# Four nodes, one of them (D) tries to spend the same coins three ways.
# The honest nodes exchange their pools with the oral-messages protocol
# and build the same block without any of D's versions.
from qsb.netsim import run
from qsb.scenario import load_scenario

scenario = load_scenario("fig2")
report = run(scenario)

block = report["blocks"][0]
print(f"block {block['height']} built in {block['rounds']} rounds")
for t in block["txns"]:
    print(f"  included  {t['label']:<8} {t['sender']} -> {t['receiver']}  {t['amount']}")
for t in block["rejected"]:
    print(f"  rejected  {t['label']:<8} {t['sender']} -> {t['receiver']}  {t['amount']}  ({t['reason']})")
print("slots with no consistent value:", block["inconsistent_slots"])

# every honest node holds a bit-identical block
for name, h in sorted(block["block_hash"].items()):
    print(f"  {name}: {h[:24]}...")

# key spent by one node on one link direction
d = report["keys"]["directions"][0]
print(f"{'->'.join(d['link'])}: {d['bits_by_kind']['txn']} bits for its transaction frame, "
      f"{d['bits_by_kind']['consensus']} bits for the consensus instance")
