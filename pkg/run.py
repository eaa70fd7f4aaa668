"""
Main script to run the poseforge command line.
"""
from src.main import main

if __name__ == "__main__":
    # e.g. python run.py gen-data --out runs/demo
    main()
