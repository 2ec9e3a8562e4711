"""Regenerate the parity-check files shipped in src/airsum/data.

wifi_n1296_r12.pcm: the rate-1/2, Z=54 quasi-cyclic code of the 802.11n
family (N=1296).  tree_n13.pcm: a small code whose Tanner graph is a tree,
on which belief propagation is exact.
"""

from pathlib import Path

from airsum.ldpc import ParityCheckMatrix

WIFI_1296_R12 = """
40 - - - 22 - 49 23 43 - - - 1 0 - - - - - - - - - -
50 1 - - 48 35 - - 13 - 30 - - 0 0 - - - - - - - - -
39 50 - - 4 - 2 - - - - 49 - - 0 0 - - - - - - - -
33 - - 38 37 - - 4 1 - - - - - - 0 0 - - - - - - -
45 - - - 0 22 - - 20 42 - - - - - - 0 0 - - - - - -
51 - - 48 35 - - - 44 - 18 - - - - - - 0 0 - - - - -
47 11 - - - 17 - - 51 - - - 0 - - - - - 0 0 - - - -
5 - 25 - 6 - 45 - 13 40 - - - - - - - - - 0 0 - - -
33 - - 34 24 - - - 23 - - 46 - - - - - - - - 0 0 - -
1 - 27 - 1 - - - 38 - 44 - - - - - - - - - - 0 0 -
- 18 - - 23 - - 8 0 35 - - - - - - - - - - - - 0 0
49 - 17 - 30 - - - 34 - - 19 1 - - - - - - - - - - 0
"""

TREE_13 = ((0, 1, 2, 3), (3, 4, 5), (2, 6, 7), (5, 8, 9), (7, 10), (9, 11, 12))


def parse_base(text: str) -> list[list[int]]:
    return [[-1 if x == "-" else int(x) for x in line.split()] for line in text.strip().splitlines()]


def main() -> None:
    out = Path(__file__).resolve().parents[1] / "src" / "airsum" / "data"
    out.mkdir(parents=True, exist_ok=True)
    wifi = ParityCheckMatrix.from_qc(parse_base(WIFI_1296_R12), 54)
    wifi.save(out / "wifi_n1296_r12.pcm")
    tree = ParityCheckMatrix(13, TREE_13)
    tree.save(out / "tree_n13.pcm")
    for name, h in (("wifi", wifi), ("tree", tree)):
        print(f"{name}: N={h.n} K={h.k} checks={h.m} edges={sum(map(len, h.checks))}")


if __name__ == "__main__":
    main()
