"""Regenerate toeplitz_vectors.json from the plain double-loop oracle.

The oracle builds the matrix from its first column and first row and
multiplies bit by bit; it shares no code with the package.
"""
import json
import random
from pathlib import Path


def oracle_digest(seed_bits, pad, msg):
    d, n = len(pad), len(msg)
    first_col = seed_bits[n - 1 :]  # T[i][0]
    first_row = seed_bits[: n][::-1]  # T[0][j]
    out = []
    for i in range(d):
        acc = 0
        for j in range(n):
            t = first_col[i - j] if i >= j else first_row[j - i]
            acc ^= t & msg[j]
        out.append(acc ^ pad[i])
    return out


def to_str(bits):
    return "".join(map(str, bits))


def main():
    rnd = random.Random(20240611)
    vectors = []
    for d, n in [(1, 1), (4, 1), (1, 5), (8, 8), (16, 37), (32, 100), (128, 256), (128, 1000)]:
        seed = [rnd.randrange(2) for _ in range(d + n - 1)]
        pad = [rnd.randrange(2) for _ in range(d)]
        msg = [rnd.randrange(2) for _ in range(n)]
        vectors.append({"digest_len": d, "msg_len": n, "seed": to_str(seed), "pad": to_str(pad),
                        "msg": to_str(msg), "digest": to_str(oracle_digest(seed, pad, msg))})
    Path(__file__).with_name("toeplitz_vectors.json").write_text(json.dumps(vectors, indent=1) + "\n")


if __name__ == "__main__":
    main()
