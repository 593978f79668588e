import sys

from cpheno.cli import main

if __name__ == "__main__":
    sys.exit(main())
    # python main.py run -c cpheno/data/toy_config.yaml
