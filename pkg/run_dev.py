#!/usr/bin/env python3
"""
Development runner - use this to test locally.
Usage: python run_dev.py

Generates a small synthetic corpus and runs a short pretraining on it.
"""

import os
import sys

from thermask.cli import main

RUN_DIR = os.path.join("runs", "dev")

if __name__ == "__main__":
    corpus = os.path.join(RUN_DIR, "corpus")
    code = main(["synth", "--out", corpus, "--n", "16", "--size", "64"])
    if code == 0:
        config_path = os.path.join(RUN_DIR, "pretrain.conf")
        with open(config_path, "w", encoding="utf-8") as f:
            f.write("corpus = corpus\nbatch_size = 4\nepochs = 2\nwarmup_epochs = 1\n"
                    "base_lr = 0.002\ncheckpoint_every = 1\n")
        code = main(["pretrain", "--config", config_path, "--out", os.path.join(RUN_DIR, "out")])
    sys.exit(code)
