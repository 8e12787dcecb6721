# Interactive consistency with seven nodes, two of which lie while relaying.
# Every honest node ends with the same vector, and honest slots are correct.
from qsb.consensus import DEFAULT, LocalTransport, interactive_consistency

nodes = range(7)
values = {i: f"value-of-{i}".encode() for i in nodes}


def liar(rnd, path, dst, value):
    # relays garbage to even-numbered nodes, the truth to odd ones
    if rnd > 1 and dst % 2 == 0:
        return b"lie"
    return value


def two_faced(rnd, path, dst, value):
    # tells half the network one private value and half another
    if rnd == 1:
        return b"heads" if dst < 3 else b"tails"
    return value


transport = LocalTransport({5: liar, 6: two_faced})
outcome = interactive_consistency(nodes, values, m=2, transport=transport)

honest = [0, 1, 2, 3, 4]
for i in honest:
    row = ["DEFAULT" if v is DEFAULT else v.decode() for v in outcome.vectors[i].slots]
    print(i, row)

print("identical across honest nodes:", len({outcome.vectors[i].slots for i in honest}) == 1)
print(f"{outcome.rounds} rounds, {outcome.messages} relay messages in {outcome.batches} batches")
