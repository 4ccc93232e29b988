"""Parameter counts for the dilation settings studied, at any channel width.

    python scripts/param_table.py
    python scripts/param_table.py --channels 16,32,64,128,128,128,128 --gru-hidden 128
"""

import argparse
from dataclasses import replace

from dfdsed.config import PRESETS
from dfdsed.model import ModelConfig, config_param_count, freq_dilations

PAIR_ROWS = {
    "fdy (K=4)": ((1, 1),) * 4,
    "one freq-dilated kernel": ((1, 1),) * 3 + ((1, 2),),
    "one time-dilated kernel": ((1, 1),) * 3 + ((2, 1),),
    "one of each": ((1, 1), (1, 1), (1, 2), (2, 1)),
    "fdy (K=5)": ((1, 1),) * 5,
    "K=5, one freq-dilated": ((1, 1),) * 4 + ((1, 2),),
    "K=5, one time-dilated": ((1, 1),) * 4 + ((2, 1),),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--channels", help="seven comma-separated conv widths")
    ap.add_argument("--gru-hidden", type=int)
    args = ap.parse_args()

    base = ModelConfig()
    if args.channels:
        base = replace(base, channels=tuple(int(c) for c in args.channels.split(",")))
    if args.gru_hidden:
        base = replace(base, gru_hidden=args.gru_hidden)

    rows = [(name, base.with_dilations(pairs)) for name, pairs in PAIR_ROWS.items()]
    rows += [(f"freq dilations {','.join(map(str, d))} ({name})", base.with_dilations(freq_dilations(d)))
             for name, d in PRESETS.items()]
    width = max(len(name) for name, _ in rows)
    print(f"{'configuration':<{width}}  {'params':>10}")
    for name, cfg in rows:
        print(f"{name:<{width}}  {config_param_count(cfg):>10,d}")


if __name__ == "__main__":
    main()
