#!/usr/bin/env python3
"""
Launcher for the transport map learner.

    python run_otm.py train experiments/configs/ring.yaml
    python run_otm.py verify
"""

import sys
import os

# Add current directory to path to ensure imports work
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from experiments.experiment_runner import main

if __name__ == "__main__":
    sys.exit(main())
