# Authenticating a message with a Toeplitz hash and a one-time pad,
# then watching a tampered copy and a blind forgery fail.
import numpy as np

from qsb.auth import Tag, ToeplitzParams, make_tag, toeplitz_matvec, verify_tag
from qsb.bits import bits_to_str, bytes_to_bits

rng = np.random.default_rng(0)
params = ToeplitzParams(l_h=40, l_M=1024)

# S is shared once and reused; r must be fresh for every message
S = rng.integers(0, 2, params.generator_bits, dtype=np.uint8)
r = rng.integers(0, 2, params.l_h, dtype=np.uint8)

message = bytes_to_bits(b"pay B 10 coins")
tag = make_tag(S, r, message, params)
print("tag      ", bits_to_str(tag.bits))
print("verifies ", verify_tag(S, r, message, tag, params))

tampered = bytes_to_bits(b"pay B 90 coins")
print("tampered ", verify_tag(S, r, tampered, tag, params))

# the hash is linear over GF(2): h(M1 ^ M2) = h(M1) ^ h(M2)
other = bytes_to_bits(b"pay C 20 coins")
lhs = toeplitz_matvec(S, message ^ other, params)
rhs = toeplitz_matvec(S, message, params) ^ toeplitz_matvec(S, other, params)
print("linear   ", np.array_equal(lhs, rhs))

# a forger who does not know r succeeds with probability 2^-l_h per try
small = ToeplitzParams(l_h=8, l_M=64)
S8 = rng.integers(0, 2, small.generator_bits, dtype=np.uint8)
M8 = rng.integers(0, 2, small.l_M, dtype=np.uint8)
trials = 20_000
hits = sum(
    verify_tag(S8, rng.integers(0, 2, 8, dtype=np.uint8), M8, Tag(rng.integers(0, 2, 8, dtype=np.uint8)), small)
    for _ in range(trials)
)
print(f"forgeries accepted at l_h=8: {hits}/{trials} = {hits / trials:.5f} (2^-8 = {2**-8:.5f})")
