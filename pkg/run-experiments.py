#!/usr/bin/env python3
"""Experiment runner for the contrastive-variational SSL toolkit.

Thin wrapper around the package command-line interface.

Usage:
    ./run-experiments.py sweep --axis optimizer configs/blobs.conf --seeds 0,1,2,3,4 --out results/optimizer
    ./run-experiments.py ablate configs/blobs.conf --seeds 0,1,2,3,4 --out results/ablation
    ./run-experiments.py gradcheck
"""

import sys

from contrastive_variational_ssl.cli import main

if __name__ == "__main__":
    sys.exit(main())
