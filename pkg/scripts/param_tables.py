"""Print the layer tables of all three architectures next to the published rows."""
import argparse

from dtb.nn.architectures import PAPER_TABLES, Architecture, build_architecture


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("arch", nargs="*", default=[a.value for a in Architecture])
    args = ap.parse_args()
    for name in args.arch:
        g = build_architecture(name)
        print(f"\n{name}")
        print(f"{'layer':<18} {'output':<18} {'params':>9}   published")
        for (lab, dims, n), want in zip(g.summary(), PAPER_TABLES[Architecture(name)]):
            mark = "ok" if (lab, dims, n) == want else f"MISMATCH {want}"
            print(f"{lab:<18} {dims:<18} {n:>9,}   {mark}")
        print(f"{'total':<37} {g.param_count()[0]:>9,}")


if __name__ == "__main__":
    main()
