"""Allow `python -m dynamic_hat <subcommand> ...`."""
from dynamic_hat.cli import main

if __name__ == "__main__":
    main()
