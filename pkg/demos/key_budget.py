# How much key the protocol burns at 10 transactions per minute, and what
# happens when a slow QKD link cannot keep up.
from qsb.netsim import run
from qsb.scenario import load_scenario

report = run(load_scenario("throughput_10pm"))
keys = report["keys"]
print(f"{keys['window_s']:.0f} s simulated, {keys['consumed_total']} key bits consumed in total")
avg = keys["averages"]
print(f"  per link    {avg['per_link_bps']:.2f} bit/s")
print(f"  per node    {avg['per_node_bps']:.2f} bit/s")
print(f"  network     {avg['network_bps']:.2f} bit/s")

for d in keys["directions"]:
    kind = "classical" if d["classical"] else "quantum"
    print(f"  {'->'.join(d['link']):<5} {kind:<9} rate {d['key_rate_bps']:>5} bit/s  "
          f"consumed {d['consumed_total']:>5}  refilled {d['refilled_total']:>6}")

# starve the A-B link: demand well above the 20 bit/s it supplies
starved = run(load_scenario("key_starvation"))
print("\nkey starvation run")
print("  deferred sends:", starved["traffic"]["deferred_sends"])
for d in starved["keys"]["directions"]:
    if d["key_rate_bps"] == 20:
        print(f"  {'->'.join(d['link'])}: exhausted {d['exhaustions']} times, depth now {d['depth']}")
print("  bits drawn per frame:", starved["traffic"]["key_bits_per_frame"])
print("  invariants hold:", starved.ok)
