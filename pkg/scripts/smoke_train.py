#!/usr/bin/env python3
"""Train a small recognizer end to end on synthetic data.

Defaults reproduce the learning smoke test: None-VGG-None-CTC at channel
scale 1/8 on 2,000 rendered 1-5 character strings, early-stopping once the
200-sample validation accuracy reaches 90%. Takes roughly ten minutes on a
desktop CPU.

Usage:
    python3 scripts/smoke_train.py [--pipeline CRNN] [--out runs/smoke]
"""

import sys

from strforge.cli import main

if __name__ == "__main__":
    argv = sys.argv[1:]
    defaults = {
        "--pipeline": "None-VGG-None-CTC",
        "--scale": "0.125",
        "--iters": "3000",
        "--val-every": "100",
        "--stop-accuracy": "90",
        "--train-size": "2000",
        "--val-size": "200",
        "--max-len": "5",
        "--out": "runs/smoke",
    }
    for flag, value in defaults.items():
        if flag not in argv:
            argv += [flag, value]
    sys.exit(main(["train"] + argv))
